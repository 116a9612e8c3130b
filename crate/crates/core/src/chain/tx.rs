use serde::{Deserialize, Serialize};

use super::script::SpendCondition;
use crate::crypto::{hex_bytes, sha256, KeyPair, Preimage, PublicKey, Signature};
use crate::wire::{DecodeError, Reader, Writer};
use crate::Amount;

hex_bytes!(
    /// SHA-256 of the witness-free transaction encoding.
    Txid,
    32
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

impl std::fmt::Display for OutPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Output {
    pub value: Amount,
    pub condition: SpendCondition,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub signatures: Vec<(PublicKey, Signature)>,
    pub preimages: Vec<Preimage>,
}

impl Witness {
    /// Adds or replaces the signature for `public`.
    pub fn put_signature(&mut self, public: PublicKey, sig: Signature) {
        self.signatures.retain(|(pk, _)| *pk != public);
        self.signatures.push((public, sig));
        self.signatures.sort_by_key(|a| a.0);
    }

    pub fn signature_of(&self, public: &PublicKey) -> Option<&Signature> {
        self.signatures.iter().find(|(pk, _)| pk == public).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Input {
    pub prevout: OutPoint,
    #[serde(default)]
    pub witness: Witness,
}

impl Input {
    pub fn unsigned(prevout: OutPoint) -> Self {
        Input { prevout, witness: Witness::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
    /// Distinguishes otherwise identical input-less allocation transactions.
    #[serde(default)]
    pub locktime: u64,
}

impl Transaction {
    pub fn new(inputs: Vec<OutPoint>, outputs: Vec<Output>) -> Self {
        Transaction { inputs: inputs.into_iter().map(Input::unsigned).collect(), outputs, locktime: 0 }
    }

    pub fn txid(&self) -> Txid {
        let mut w = Writer::new();
        self.encode_body(&mut w);
        Txid(sha256(&w.finish()))
    }

    pub fn outpoint(&self, vout: u32) -> OutPoint {
        OutPoint { txid: self.txid(), vout }
    }

    pub fn total_output(&self) -> Amount {
        self.outputs.iter().map(|o| o.value).sum()
    }

    /// A signature by `key` over the txid, the message every input commits to.
    pub fn signature(&self, key: &KeyPair) -> Signature {
        key.sign(&self.txid().0)
    }

    pub fn sign_input(&mut self, index: usize, key: &KeyPair) {
        let sig = self.signature(key);
        self.inputs[index].witness.put_signature(key.public, sig);
    }

    pub fn sign_all_inputs(&mut self, key: &KeyPair) {
        let sig = self.signature(key);
        for input in &mut self.inputs {
            input.witness.put_signature(key.public, sig);
        }
    }

    pub fn add_signature(&mut self, index: usize, public: PublicKey, sig: Signature) {
        self.inputs[index].witness.put_signature(public, sig);
    }

    pub fn strip_witnesses(&self) -> Transaction {
        let mut tx = self.clone();
        for input in &mut tx.inputs {
            input.witness = Witness::default();
        }
        tx
    }

    fn encode_body(&self, w: &mut Writer) {
        w.u64(self.locktime).u32(self.inputs.len() as u32);
        for input in &self.inputs {
            w.raw(&input.prevout.txid.0).u32(input.prevout.vout);
        }
        w.u32(self.outputs.len() as u32);
        for out in &self.outputs {
            w.u64(out.value.as_sat());
            out.condition.encode(w);
        }
    }

    /// Full encoding including witnesses, used when a transaction travels in
    /// a protocol message.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_body(&mut w);
        for input in &self.inputs {
            w.u32(input.witness.signatures.len() as u32);
            for (pk, sig) in &input.witness.signatures {
                w.raw(&pk.0).raw(&sig.0);
            }
            w.u32(input.witness.preimages.len() as u32);
            for p in &input.witness.preimages {
                w.raw(&p.0);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Self::decode(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let bounded = |n: u32, r: &Reader<'_>, min: usize| {
            if (n as usize).saturating_mul(min) > r.remaining() {
                Err(DecodeError::Truncated)
            } else {
                Ok(n as usize)
            }
        };
        let locktime = r.u64()?;
        let n_in = r.u32()?;
        let n_in = bounded(n_in, r, 36)?;
        let mut inputs = Vec::with_capacity(n_in);
        for _ in 0..n_in {
            let txid = Txid(r.array()?);
            let vout = r.u32()?;
            inputs.push(Input::unsigned(OutPoint { txid, vout }));
        }
        let n_out = r.u32()?;
        let n_out = bounded(n_out, r, 9)?;
        let mut outputs = Vec::with_capacity(n_out);
        for _ in 0..n_out {
            let value = Amount::from_sat(r.u64()?);
            let condition = SpendCondition::decode(r)?;
            outputs.push(Output { value, condition });
        }
        for input in &mut inputs {
            let n_sig = r.u32()?;
            for _ in 0..bounded(n_sig, r, 96)? {
                let pk = PublicKey(r.array()?);
                let sig = Signature(r.array()?);
                input.witness.signatures.push((pk, sig));
            }
            let n_pre = r.u32()?;
            for _ in 0..bounded(n_pre, r, 32)? {
                input.witness.preimages.push(Preimage(r.array()?));
            }
        }
        Ok(Transaction { inputs, outputs, locktime })
    }
}
