//! Protocol message catalog and its binary encoding.
//!
//! Every message is `[type:1][channel_id:8]` followed by its fields in the
//! order listed on each variant, each field prefixed by a big-endian u16
//! length. Inside a field, integers are big-endian and lists are a u16 count
//! followed by u16-length-prefixed items. Device-facing messages are further
//! sealed in an [`Envelope`](crate::crypto::Envelope).

use crate::chain::{Transaction, Txid};
use crate::crypto::{hex_bytes, PaymentHash, Preimage, PublicKey, SecretKey, Signature};
use crate::wire::{DecodeError, Reader, Writer};
use crate::Amount;

hex_bytes!(
    /// First 8 bytes of the funding txid; all zero before funding exists.
    ChannelId,
    8
);

impl ChannelId {
    pub const UNSET: ChannelId = ChannelId([0; 8]);

    pub fn from_funding(txid: &Txid) -> Self {
        let mut id = [0u8; 8];
        id.copy_from_slice(&txid.0[..8]);
        ChannelId(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    // Device <-> gateway, always enveloped.
    OpenChannelRequest {
        capacity: Amount,
    },
    OpenChannelAccepted,
    OpenChannelRejected {
        reason: String,
    },
    FundingSignature {
        unsigned_funding_tx: Transaction,
    },
    FundingSigned {
        signed_funding_tx: Transaction,
    },
    ChannelOpened {
        channel_id: ChannelId,
    },
    SendPayment {
        amount: Amount,
        destination: String,
    },
    RequestSignTx {
        txs: Vec<Transaction>,
    },
    SignedTx {
        txs: Vec<Transaction>,
    },
    PaymentSuccess,
    PaymentFailure {
        reason: String,
    },
    CloseChannelRequest,
    ChannelClosed,

    // Gateway <-> bridge.
    OpenChannel {
        capacity: Amount,
        iot_pub: PublicKey,
        gateway_pub: PublicKey,
        to_self_delay: u32,
        htlc_timeout: u64,
        fee_percent: u32,
        first_points: [PublicKey; 2],
    },
    AcceptChannel {
        bridge_pub: PublicKey,
        first_points: [PublicKey; 2],
    },
    FundingCreated {
        txid: Txid,
        vout: u32,
        signature: Signature,
    },
    FundingSignedPeer {
        signature: Signature,
    },
    FundingLocked,
    UpdateAddHtlc {
        id: u64,
        value: Amount,
        fee: Amount,
        payment_hash: PaymentHash,
        expiry: u64,
    },
    CommitmentSigned {
        signatures: Vec<(PublicKey, Signature)>,
    },
    RevokeAndAck {
        state_index: u64,
        secret: SecretKey,
        next_point: PublicKey,
    },
    UpdateFulfillHtlc {
        id: u64,
        preimage: Preimage,
    },
    UpdateFailHtlc {
        id: u64,
        reason: String,
    },
    Shutdown,
    ClosingSigned {
        signatures: Vec<(PublicKey, Signature)>,
    },

    // Either link.
    Error {
        reason: String,
    },
}

/// A message together with the channel it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub channel_id: ChannelId,
    pub body: ProtocolMessage,
}

impl ProtocolMessage {
    pub fn type_code(&self) -> u8 {
        use ProtocolMessage::*;
        match self {
            OpenChannelRequest { .. } => 0x01,
            OpenChannelAccepted => 0x02,
            OpenChannelRejected { .. } => 0x03,
            FundingSignature { .. } => 0x04,
            FundingSigned { .. } => 0x05,
            ChannelOpened { .. } => 0x06,
            SendPayment { .. } => 0x07,
            RequestSignTx { .. } => 0x08,
            SignedTx { .. } => 0x09,
            PaymentSuccess => 0x0a,
            PaymentFailure { .. } => 0x0b,
            CloseChannelRequest => 0x0c,
            ChannelClosed => 0x0d,
            OpenChannel { .. } => 0x20,
            AcceptChannel { .. } => 0x21,
            FundingCreated { .. } => 0x22,
            FundingSignedPeer { .. } => 0x23,
            FundingLocked => 0x24,
            UpdateAddHtlc { .. } => 0x25,
            CommitmentSigned { .. } => 0x26,
            RevokeAndAck { .. } => 0x27,
            UpdateFulfillHtlc { .. } => 0x28,
            UpdateFailHtlc { .. } => 0x29,
            Shutdown => 0x2a,
            ClosingSigned { .. } => 0x2b,
            Error { .. } => 0x7f,
        }
    }

    /// Name used in transcripts.
    pub fn name(&self) -> &'static str {
        use ProtocolMessage::*;
        match self {
            OpenChannelRequest { .. } => "OpenChannelRequest",
            OpenChannelAccepted => "OpenChannelAccepted",
            OpenChannelRejected { .. } => "OpenChannelRejected",
            FundingSignature { .. } => "FundingSignature",
            FundingSigned { .. } => "FundingSigned",
            ChannelOpened { .. } => "ChannelOpened",
            SendPayment { .. } => "SendPayment",
            RequestSignTx { .. } => "RequestSignTx",
            SignedTx { .. } => "SignedTx",
            PaymentSuccess => "PaymentSuccess",
            PaymentFailure { .. } => "PaymentFailure",
            CloseChannelRequest => "CloseChannelRequest",
            ChannelClosed => "ChannelClosed",
            OpenChannel { .. } => "open_channel",
            AcceptChannel { .. } => "accept_channel",
            FundingCreated { .. } => "funding_created",
            FundingSignedPeer { .. } => "funding_signed",
            FundingLocked => "funding_locked",
            UpdateAddHtlc { .. } => "update_add_htlc",
            CommitmentSigned { .. } => "commitment_signed",
            RevokeAndAck { .. } => "revoke_and_ack",
            UpdateFulfillHtlc { .. } => "update_fulfill_htlc",
            UpdateFailHtlc { .. } => "update_fail_htlc",
            Shutdown => "shutdown",
            ClosingSigned { .. } => "closing_signed",
            Error { .. } => "error",
        }
    }

    pub fn is_device_facing(&self) -> bool {
        self.type_code() < 0x20
    }
}

fn field(w: &mut Writer, f: impl FnOnce(&mut Writer)) {
    let mut inner = Writer::new();
    f(&mut inner);
    w.var(&inner.finish());
}

fn txs_field(w: &mut Writer, txs: &[Transaction]) {
    field(w, |f| {
        f.u16(txs.len() as u16);
        for tx in txs {
            f.var(&tx.to_bytes());
        }
    });
}

fn sigs_field(w: &mut Writer, sigs: &[(PublicKey, Signature)]) {
    field(w, |f| {
        f.u16(sigs.len() as u16);
        for (pk, sig) in sigs {
            f.raw(&pk.0).raw(&sig.0);
        }
    });
}

impl Message {
    pub fn new(channel_id: ChannelId, body: ProtocolMessage) -> Self {
        Message { channel_id, body }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        use ProtocolMessage::*;
        let mut w = Writer::new();
        w.u8(self.body.type_code()).raw(&self.channel_id.0);
        match &self.body {
            OpenChannelRequest { capacity } => field(&mut w, |f| {
                f.u64(capacity.as_sat());
            }),
            OpenChannelRejected { reason } | PaymentFailure { reason } | Error { reason } => {
                w.var(reason.as_bytes());
            }
            FundingSignature { unsigned_funding_tx: tx } | FundingSigned { signed_funding_tx: tx } => {
                w.var(&tx.to_bytes());
            }
            ChannelOpened { channel_id } => {
                w.var(&channel_id.0);
            }
            SendPayment { amount, destination } => {
                field(&mut w, |f| {
                    f.u64(amount.as_sat());
                });
                w.var(destination.as_bytes());
            }
            RequestSignTx { txs } | SignedTx { txs } => txs_field(&mut w, txs),
            OpenChannelAccepted | PaymentSuccess | CloseChannelRequest | ChannelClosed | FundingLocked | Shutdown => {}
            OpenChannel { capacity, iot_pub, gateway_pub, to_self_delay, htlc_timeout, fee_percent, first_points } => {
                field(&mut w, |f| {
                    f.u64(capacity.as_sat());
                });
                w.var(&iot_pub.0).var(&gateway_pub.0);
                field(&mut w, |f| {
                    f.u32(*to_self_delay);
                });
                field(&mut w, |f| {
                    f.u64(*htlc_timeout);
                });
                field(&mut w, |f| {
                    f.u32(*fee_percent);
                });
                field(&mut w, |f| {
                    f.raw(&first_points[0].0).raw(&first_points[1].0);
                });
            }
            AcceptChannel { bridge_pub, first_points } => {
                w.var(&bridge_pub.0);
                field(&mut w, |f| {
                    f.raw(&first_points[0].0).raw(&first_points[1].0);
                });
            }
            FundingCreated { txid, vout, signature } => {
                w.var(&txid.0);
                field(&mut w, |f| {
                    f.u32(*vout);
                });
                w.var(&signature.0);
            }
            FundingSignedPeer { signature } => {
                w.var(&signature.0);
            }
            UpdateAddHtlc { id, value, fee, payment_hash, expiry } => {
                for n in [*id, value.as_sat(), fee.as_sat()] {
                    field(&mut w, |f| {
                        f.u64(n);
                    });
                }
                w.var(&payment_hash.0);
                field(&mut w, |f| {
                    f.u64(*expiry);
                });
            }
            CommitmentSigned { signatures } | ClosingSigned { signatures } => sigs_field(&mut w, signatures),
            RevokeAndAck { state_index, secret, next_point } => {
                field(&mut w, |f| {
                    f.u64(*state_index);
                });
                w.var(&secret.0).var(&next_point.0);
            }
            UpdateFulfillHtlc { id, preimage } => {
                field(&mut w, |f| {
                    f.u64(*id);
                });
                w.var(&preimage.0);
            }
            UpdateFailHtlc { id, reason } => {
                field(&mut w, |f| {
                    f.u64(*id);
                });
                w.var(reason.as_bytes());
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        use ProtocolMessage::*;
        let mut r = Reader::new(bytes);
        let code = r.u8()?;
        let channel_id = ChannelId(r.array()?);
        let body = match code {
            0x01 => OpenChannelRequest { capacity: Amount::from_sat(u64_field(&mut r)?) },
            0x02 => OpenChannelAccepted,
            0x03 => OpenChannelRejected { reason: string_field(&mut r)? },
            0x04 => FundingSignature { unsigned_funding_tx: Transaction::from_bytes(r.var()?)? },
            0x05 => FundingSigned { signed_funding_tx: Transaction::from_bytes(r.var()?)? },
            0x06 => ChannelOpened { channel_id: ChannelId(r.var_array()?) },
            0x07 => SendPayment { amount: Amount::from_sat(u64_field(&mut r)?), destination: string_field(&mut r)? },
            0x08 => RequestSignTx { txs: txs_from(&mut r)? },
            0x09 => SignedTx { txs: txs_from(&mut r)? },
            0x0a => PaymentSuccess,
            0x0b => PaymentFailure { reason: string_field(&mut r)? },
            0x0c => CloseChannelRequest,
            0x0d => ChannelClosed,
            0x20 => {
                let capacity = Amount::from_sat(u64_field(&mut r)?);
                let iot_pub = PublicKey(r.var_array()?);
                let gateway_pub = PublicKey(r.var_array()?);
                let to_self_delay = u32_field(&mut r)?;
                let htlc_timeout = u64_field(&mut r)?;
                let fee_percent = u32_field(&mut r)?;
                let first_points = points_from(&mut r)?;
                OpenChannel { capacity, iot_pub, gateway_pub, to_self_delay, htlc_timeout, fee_percent, first_points }
            }
            0x21 => AcceptChannel { bridge_pub: PublicKey(r.var_array()?), first_points: points_from(&mut r)? },
            0x22 => FundingCreated {
                txid: Txid(r.var_array()?),
                vout: u32_field(&mut r)?,
                signature: Signature(r.var_array()?),
            },
            0x23 => FundingSignedPeer { signature: Signature(r.var_array()?) },
            0x24 => FundingLocked,
            0x25 => UpdateAddHtlc {
                id: u64_field(&mut r)?,
                value: Amount::from_sat(u64_field(&mut r)?),
                fee: Amount::from_sat(u64_field(&mut r)?),
                payment_hash: PaymentHash(r.var_array()?),
                expiry: u64_field(&mut r)?,
            },
            0x26 => CommitmentSigned { signatures: sigs_from(&mut r)? },
            0x27 => RevokeAndAck {
                state_index: u64_field(&mut r)?,
                secret: SecretKey(r.var_array()?),
                next_point: PublicKey(r.var_array()?),
            },
            0x28 => UpdateFulfillHtlc { id: u64_field(&mut r)?, preimage: Preimage(r.var_array()?) },
            0x29 => UpdateFailHtlc { id: u64_field(&mut r)?, reason: string_field(&mut r)? },
            0x2a => Shutdown,
            0x2b => ClosingSigned { signatures: sigs_from(&mut r)? },
            0x7f => Error { reason: string_field(&mut r)? },
            other => return Err(DecodeError::Invalid { what: "message type", value: u64::from(other) }),
        };
        r.finish()?;
        Ok(Message { channel_id, body })
    }
}

fn sub<'a>(r: &mut Reader<'a>) -> Result<Reader<'a>, DecodeError> {
    Ok(Reader::new(r.var()?))
}

fn u64_field(r: &mut Reader<'_>) -> Result<u64, DecodeError> {
    let mut f = sub(r)?;
    let v = f.u64()?;
    f.finish()?;
    Ok(v)
}

fn u32_field(r: &mut Reader<'_>) -> Result<u32, DecodeError> {
    let mut f = sub(r)?;
    let v = f.u32()?;
    f.finish()?;
    Ok(v)
}

fn string_field(r: &mut Reader<'_>) -> Result<String, DecodeError> {
    String::from_utf8(r.var()?.to_vec()).map_err(|_| DecodeError::Invalid { what: "utf-8 string", value: 0 })
}

fn points_from(r: &mut Reader<'_>) -> Result<[PublicKey; 2], DecodeError> {
    let mut f = sub(r)?;
    let pts = [PublicKey(f.array()?), PublicKey(f.array()?)];
    f.finish()?;
    Ok(pts)
}

fn txs_from(r: &mut Reader<'_>) -> Result<Vec<Transaction>, DecodeError> {
    let mut f = sub(r)?;
    let n = f.u16()?;
    let mut txs = Vec::new();
    for _ in 0..n {
        txs.push(Transaction::from_bytes(f.var()?)?);
    }
    f.finish()?;
    Ok(txs)
}

fn sigs_from(r: &mut Reader<'_>) -> Result<Vec<(PublicKey, Signature)>, DecodeError> {
    let mut f = sub(r)?;
    let n = f.u16()?;
    let mut sigs = Vec::new();
    for _ in 0..n {
        sigs.push((PublicKey(f.array()?), Signature(f.array()?)));
    }
    f.finish()?;
    Ok(sigs)
}
