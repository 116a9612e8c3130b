//! Deterministic mock blockchain.
//!
//! UTXO set, FIFO mempool and block heights, with spends judged by
//! [`SpendCondition`] predicates instead of Script. Mining is instantaneous
//! and never reorganises.
//!
//! Snapshots ([`Chain::dump_json`]) have this schema:
//!
//! ```text
//! { "params":  { "onchain_fee": sat, "confirmation_depth": blocks },
//!   "height":  u64,
//!   "blocks":  [ { "height": u64, "txs": [Transaction] } ],   // blocks[0] = genesis allocations
//!   "mempool": [Transaction],
//!   "utxos":   [ { "outpoint": {"txid": hex, "vout": u32}, "value": sat,
//!                  "condition": SpendCondition, "height": u64 } ] }
//! ```
//!
//! Loading replays `blocks` and `mempool`; `utxos` is derived data kept for
//! readers of the file.

pub mod script;
pub mod tx;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use script::{ScriptError, SpendCondition, SpendContext, Violation};
pub use tx::{Input, OutPoint, Output, Transaction, Txid, Witness};

use crate::crypto::{default_scheme, PublicKey, SchemeRef};
use crate::Amount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Fee every artifact-built transaction pays.
    pub onchain_fee: Amount,
    /// Confirmations required before a funding output counts as locked.
    pub confirmation_depth: u32,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams { onchain_fee: Amount::from_sat(10_000), confirmation_depth: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("outpoint {0} is spent or never existed")]
    DoubleSpend(OutPoint),
    #[error("input {input} witness invalid: {violation}")]
    InvalidWitness { input: usize, violation: Violation },
    #[error("outputs {outputs} exceed inputs {inputs}")]
    NegativeFee { inputs: Amount, outputs: Amount },
    #[error("malformed transaction: {0}")]
    Malformed(String),
    #[error("must mine at least one block")]
    ZeroBlocks,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utxo {
    pub output: Output,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<Transaction>,
}

/// One `submit_tx` attempt and its verdict, kept for instrumentation.
#[derive(Debug, Clone)]
pub struct Submission {
    pub tx: Transaction,
    pub result: Result<Txid, ChainError>,
    pub height: u64,
}

#[derive(Debug, Clone)]
pub struct Chain {
    params: ChainParams,
    blocks: Vec<Block>,
    utxos: BTreeMap<OutPoint, Utxo>,
    confirmed: BTreeMap<Txid, u64>,
    spent_by: BTreeMap<OutPoint, Txid>,
    mempool: Vec<Transaction>,
    submissions: Vec<Submission>,
    scheme: SchemeRef,
}

impl Chain {
    pub fn new(params: ChainParams) -> Self {
        Self::with_scheme(params, default_scheme())
    }

    pub fn with_scheme(params: ChainParams, scheme: SchemeRef) -> Self {
        Chain {
            params,
            blocks: vec![Block { height: 0, txs: vec![] }],
            utxos: BTreeMap::new(),
            confirmed: BTreeMap::new(),
            spent_by: BTreeMap::new(),
            mempool: Vec::new(),
            submissions: Vec::new(),
            scheme,
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn height(&self) -> u64 {
        (self.blocks.len() - 1) as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    /// Mints a single-key output at the current height, bypassing validation.
    pub fn allocate(&mut self, owner: PublicKey, value: Amount) -> OutPoint {
        let tip = self.blocks.last_mut().expect("genesis block always present");
        let tx = Transaction {
            inputs: vec![],
            outputs: vec![Output { value, condition: SpendCondition::single(owner) }],
            locktime: tip.height << 32 | tip.txs.len() as u64,
        };
        tip.txs.push(tx.clone());
        let height = tip.height;
        self.apply(&tx, height);
        tx.outpoint(0)
    }

    fn check_structure(&self, tx: &Transaction) -> Result<(), ChainError> {
        if tx.inputs.is_empty() {
            return Err(ChainError::Malformed("no inputs".into()));
        }
        if tx.outputs.is_empty() {
            return Err(ChainError::Malformed("no outputs".into()));
        }
        for (i, out) in tx.outputs.iter().enumerate() {
            if out.value.is_zero() {
                return Err(ChainError::Malformed(format!("output {i} has zero value")));
            }
            out.condition.check_well_formed().map_err(|e| ChainError::Malformed(format!("output {i}: {e}")))?;
        }
        let mut prevouts: Vec<_> = tx.inputs.iter().map(|i| i.prevout).collect();
        prevouts.sort();
        if prevouts.windows(2).any(|w| w[0] == w[1]) {
            return Err(ChainError::Malformed("duplicate input".into()));
        }
        Ok(())
    }

    /// Pure check that every input of `tx` is satisfied if included in a
    /// block at `at_height`.
    pub fn validate_spend(&self, tx: &Transaction, at_height: u64) -> Result<(), ChainError> {
        let txid = tx.txid();
        let mut inputs_total = Amount::ZERO;
        for (index, input) in tx.inputs.iter().enumerate() {
            let utxo = self.utxos.get(&input.prevout).ok_or(ChainError::DoubleSpend(input.prevout))?;
            inputs_total += utxo.output.value;
            let ctx = SpendContext {
                sighash: &txid.0,
                witness: &input.witness,
                at_height,
                confirmed_height: utxo.height,
                scheme: self.scheme.as_ref(),
            };
            utxo.output
                .condition
                .evaluate(&ctx)
                .map_err(|violation| ChainError::InvalidWitness { input: index, violation })?;
        }
        let outputs = tx.total_output();
        if outputs > inputs_total {
            return Err(ChainError::NegativeFee { inputs: inputs_total, outputs });
        }
        Ok(())
    }

    /// Queues `tx` for the next block after checking it would be valid there.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Txid, ChainError> {
        let result = self.try_submit(&tx);
        self.submissions.push(Submission { tx, result: result.clone(), height: self.height() });
        result
    }

    fn try_submit(&mut self, tx: &Transaction) -> Result<Txid, ChainError> {
        self.check_structure(tx)?;
        for input in &tx.inputs {
            let reserved = self.mempool.iter().any(|m| m.inputs.iter().any(|i| i.prevout == input.prevout));
            if reserved || !self.utxos.contains_key(&input.prevout) {
                return Err(ChainError::DoubleSpend(input.prevout));
            }
        }
        self.validate_spend(tx, self.height() + 1)?;
        self.mempool.push(tx.clone());
        Ok(tx.txid())
    }

    /// Mines `n` blocks. The first one confirms the mempool in submission
    /// order; transactions that became invalid are dropped.
    pub fn mine_block(&mut self, n: u64) -> Result<u64, ChainError> {
        if n == 0 {
            return Err(ChainError::ZeroBlocks);
        }
        for _ in 0..n {
            let height = self.height() + 1;
            let mut included = Vec::new();
            for tx in std::mem::take(&mut self.mempool) {
                if self.validate_spend(&tx, height).is_ok() {
                    self.apply(&tx, height);
                    included.push(tx);
                }
            }
            self.blocks.push(Block { height, txs: included });
        }
        Ok(self.height())
    }

    fn apply(&mut self, tx: &Transaction, height: u64) {
        let txid = tx.txid();
        for input in &tx.inputs {
            self.utxos.remove(&input.prevout);
            self.spent_by.insert(input.prevout, txid);
        }
        for (vout, output) in tx.outputs.iter().enumerate() {
            self.utxos.insert(OutPoint { txid, vout: vout as u32 }, Utxo { output: output.clone(), height });
        }
        self.confirmed.insert(txid, height);
    }

    /// Blocks on top of (and including) the one that confirmed `txid`.
    pub fn confirmations(&self, txid: &Txid) -> Option<u64> {
        self.confirmed.get(txid).map(|h| self.height() - h + 1)
    }

    pub fn confirmation_height(&self, txid: &Txid) -> Option<u64> {
        self.confirmed.get(txid).copied()
    }

    pub fn utxo(&self, outpoint: &OutPoint) -> Option<&Utxo> {
        self.utxos.get(outpoint)
    }

    pub fn spent_by(&self, outpoint: &OutPoint) -> Option<&Txid> {
        self.spent_by.get(outpoint)
    }

    pub fn is_confirmed(&self, txid: &Txid) -> bool {
        self.confirmed.contains_key(txid)
    }

    /// Confirmed transactions in blocks strictly above `height`, in order.
    pub fn txs_above(&self, height: u64) -> impl Iterator<Item = (u64, &Transaction)> {
        self.blocks.iter().filter(move |b| b.height > height).flat_map(|b| b.txs.iter().map(move |tx| (b.height, tx)))
    }

    pub fn find_tx(&self, txid: &Txid) -> Option<&Transaction> {
        let height = *self.confirmed.get(txid)?;
        self.blocks[height as usize].txs.iter().find(|tx| tx.txid() == *txid)
    }

    /// Total of unspent outputs payable to `owner` alone.
    pub fn balance(&self, owner: &PublicKey) -> Amount {
        self.utxos.values().filter(|u| u.output.condition.single_key() == Some(owner)).map(|u| u.output.value).sum()
    }

    pub fn utxos_for(&self, owner: &PublicKey) -> Vec<(OutPoint, Utxo)> {
        self.utxos
            .iter()
            .filter(|(_, u)| u.output.condition.single_key() == Some(owner))
            .map(|(op, u)| (*op, u.clone()))
            .collect()
    }

    pub fn dump_json(&self) -> String {
        let snapshot = Snapshot {
            params: self.params,
            height: self.height(),
            blocks: self.blocks.clone(),
            mempool: self.mempool.clone(),
            utxos: self
                .utxos
                .iter()
                .map(|(op, u)| SnapshotUtxo {
                    outpoint: *op,
                    value: u.output.value,
                    condition: u.output.condition.clone(),
                    height: u.height,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&snapshot).expect("chain snapshot serializes")
    }

    pub fn load_json(json: &str) -> Result<Self, ChainError> {
        let snap: Snapshot = serde_json::from_str(json).map_err(|e| ChainError::Snapshot(e.to_string()))?;
        let mut chain = Chain::new(snap.params);
        for block in &snap.blocks {
            if block.height != chain.height() && block.height != chain.height() + 1 {
                return Err(ChainError::Snapshot(format!("block height {} out of sequence", block.height)));
            }
            if block.height > chain.height() {
                chain.blocks.push(Block { height: block.height, txs: vec![] });
            }
            for tx in &block.txs {
                if !tx.inputs.is_empty() {
                    chain.validate_spend(tx, block.height)?;
                }
                chain.blocks.last_mut().expect("non-empty").txs.push(tx.clone());
                chain.apply(tx, block.height);
            }
        }
        for tx in snap.mempool {
            chain.try_submit(&tx)?;
        }
        if chain.height() != snap.height {
            return Err(ChainError::Snapshot("height does not match blocks".into()));
        }
        Ok(chain)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    params: ChainParams,
    height: u64,
    blocks: Vec<Block>,
    mempool: Vec<Transaction>,
    utxos: Vec<SnapshotUtxo>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotUtxo {
    outpoint: OutPoint,
    value: Amount,
    condition: SpendCondition,
    height: u64,
}
