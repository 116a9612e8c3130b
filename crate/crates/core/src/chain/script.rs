//! Predicate-based spend conditions standing in for Bitcoin Script.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tx::Witness;
use crate::crypto::{PaymentHash, PublicKey, SignatureScheme};
use crate::wire::{DecodeError, Reader, Writer};

pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendCondition {
    /// At least `threshold` of `pubkeys` sign the spending txid.
    MultiSig { threshold: u8, pubkeys: Vec<PublicKey> },
    /// `inner` holds and the spent output is at least `blocks` deep.
    RelativeTimelock { blocks: u32, inner: Box<SpendCondition> },
    /// `inner` holds and the spending block is at or above `height`.
    AbsoluteTimelock { height: u64, inner: Box<SpendCondition> },
    /// `inner` holds and the witness reveals a preimage of `hash`.
    HashLock { hash: PaymentHash, inner: Box<SpendCondition> },
    /// Exactly one branch holds.
    Or(Vec<SpendCondition>),
    /// Signatures under both the revealed per-state revocation key and the
    /// claimant's own key. Requiring the claimant keeps the broadcaster, who
    /// generated the revocation key, from using this branch itself.
    RevocationKey { revocation: PublicKey, claimant: PublicKey },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("multisig threshold {threshold} invalid for {keys} keys")]
    BadThreshold { threshold: u8, keys: usize },
    #[error("Or needs at least two branches")]
    DegenerateOr,
    #[error("nesting depth {0} exceeds {MAX_DEPTH}")]
    TooDeep(usize),
}

/// Why a witness fails to satisfy a condition.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("relative timelock needs {required} blocks, only {elapsed} elapsed")]
    TimelockNotElapsed { required: u32, elapsed: u64 },
    #[error("spendable from height {height}, attempted at {at}")]
    HeightNotReached { height: u64, at: u64 },
    #[error("{have} of {need} required signatures")]
    ThresholdNotMet { have: usize, need: usize },
    #[error("no revealed preimage matches the hash lock")]
    BadPreimage,
    #[error("missing or invalid revocation signature")]
    BadRevocationSig,
    #[error("{0} branches satisfied; exactly one allowed")]
    AmbiguousBranch(usize),
}

impl Violation {
    /// How close the witness came to satisfying the branch. `Or` reports the
    /// failing branch that got furthest, e.g. a correctly signed but premature
    /// timelock spend rather than the missing revocation signature next to it.
    fn progress(&self) -> u8 {
        match self {
            Violation::TimelockNotElapsed { .. } | Violation::HeightNotReached { .. } => 3,
            Violation::BadPreimage => 2,
            Violation::AmbiguousBranch(_) => 2,
            Violation::ThresholdNotMet { have, .. } if *have > 0 => 1,
            Violation::ThresholdNotMet { .. } | Violation::BadRevocationSig => 0,
        }
    }
}

/// Everything a condition may look at when judging a spend.
pub struct SpendContext<'a> {
    /// Message the signatures commit to (the spending txid).
    pub sighash: &'a [u8],
    pub witness: &'a Witness,
    /// Height of the block the spend would be included in.
    pub at_height: u64,
    /// Height at which the spent output was confirmed.
    pub confirmed_height: u64,
    pub scheme: &'a dyn SignatureScheme,
}

impl SpendContext<'_> {
    fn signed_by(&self, key: &PublicKey) -> bool {
        self.witness.signatures.iter().any(|(pk, sig)| pk == key && self.scheme.verify(self.sighash, sig, key))
    }
}

impl SpendCondition {
    pub fn single(key: PublicKey) -> Self {
        SpendCondition::MultiSig { threshold: 1, pubkeys: vec![key] }
    }

    pub fn multisig(threshold: u8, pubkeys: Vec<PublicKey>) -> Self {
        SpendCondition::MultiSig { threshold, pubkeys }
    }

    pub fn after_blocks(blocks: u32, inner: SpendCondition) -> Self {
        SpendCondition::RelativeTimelock { blocks, inner: Box::new(inner) }
    }

    pub fn after_height(height: u64, inner: SpendCondition) -> Self {
        SpendCondition::AbsoluteTimelock { height, inner: Box::new(inner) }
    }

    pub fn hash_locked(hash: PaymentHash, inner: SpendCondition) -> Self {
        SpendCondition::HashLock { hash, inner: Box::new(inner) }
    }

    pub fn depth(&self) -> usize {
        match self {
            SpendCondition::MultiSig { .. } | SpendCondition::RevocationKey { .. } => 1,
            SpendCondition::RelativeTimelock { inner, .. }
            | SpendCondition::AbsoluteTimelock { inner, .. }
            | SpendCondition::HashLock { inner, .. } => 1 + inner.depth(),
            SpendCondition::Or(branches) => 1 + branches.iter().map(SpendCondition::depth).max().unwrap_or(0),
        }
    }

    pub fn check_well_formed(&self) -> Result<(), ScriptError> {
        let depth = self.depth();
        if depth > MAX_DEPTH {
            return Err(ScriptError::TooDeep(depth));
        }
        self.check_nodes()
    }

    fn check_nodes(&self) -> Result<(), ScriptError> {
        match self {
            SpendCondition::MultiSig { threshold, pubkeys } => {
                if *threshold == 0 || *threshold as usize > pubkeys.len() {
                    return Err(ScriptError::BadThreshold { threshold: *threshold, keys: pubkeys.len() });
                }
                Ok(())
            }
            SpendCondition::RevocationKey { .. } => Ok(()),
            SpendCondition::RelativeTimelock { inner, .. }
            | SpendCondition::AbsoluteTimelock { inner, .. }
            | SpendCondition::HashLock { inner, .. } => inner.check_nodes(),
            SpendCondition::Or(branches) => {
                if branches.len() < 2 {
                    return Err(ScriptError::DegenerateOr);
                }
                branches.iter().try_for_each(SpendCondition::check_nodes)
            }
        }
    }

    pub fn evaluate(&self, ctx: &SpendContext<'_>) -> Result<(), Violation> {
        match self {
            SpendCondition::MultiSig { threshold, pubkeys } => {
                let mut distinct: Vec<&PublicKey> = pubkeys.iter().collect();
                distinct.sort();
                distinct.dedup();
                let have = distinct.into_iter().filter(|k| ctx.signed_by(k)).count();
                let need = *threshold as usize;
                if have >= need {
                    Ok(())
                } else {
                    Err(Violation::ThresholdNotMet { have, need })
                }
            }
            SpendCondition::RelativeTimelock { blocks, inner } => {
                inner.evaluate(ctx)?;
                let elapsed = ctx.at_height.saturating_sub(ctx.confirmed_height);
                if elapsed >= u64::from(*blocks) {
                    Ok(())
                } else {
                    Err(Violation::TimelockNotElapsed { required: *blocks, elapsed })
                }
            }
            SpendCondition::AbsoluteTimelock { height, inner } => {
                inner.evaluate(ctx)?;
                if ctx.at_height >= *height {
                    Ok(())
                } else {
                    Err(Violation::HeightNotReached { height: *height, at: ctx.at_height })
                }
            }
            SpendCondition::HashLock { hash, inner } => {
                if !ctx.witness.preimages.iter().any(|p| p.hash() == *hash) {
                    return Err(Violation::BadPreimage);
                }
                inner.evaluate(ctx)
            }
            SpendCondition::Or(branches) => {
                let results: Vec<_> = branches.iter().map(|b| b.evaluate(ctx)).collect();
                let satisfied = results.iter().filter(|r| r.is_ok()).count();
                match satisfied {
                    1 => Ok(()),
                    0 => Err(results
                        .into_iter()
                        .filter_map(Result::err)
                        .reduce(|best, e| if e.progress() > best.progress() { e } else { best })
                        .expect("Or has at least two branches")),
                    n => Err(Violation::AmbiguousBranch(n)),
                }
            }
            SpendCondition::RevocationKey { revocation, claimant } => {
                if ctx.signed_by(revocation) && ctx.signed_by(claimant) {
                    Ok(())
                } else {
                    Err(Violation::BadRevocationSig)
                }
            }
        }
    }

    /// Whether some branch is a revocation path under `revocation`.
    pub fn has_revocation_key(&self, revocation: &PublicKey) -> bool {
        match self {
            SpendCondition::RevocationKey { revocation: r, .. } => r == revocation,
            SpendCondition::MultiSig { .. } => false,
            SpendCondition::RelativeTimelock { inner, .. }
            | SpendCondition::AbsoluteTimelock { inner, .. }
            | SpendCondition::HashLock { inner, .. } => inner.has_revocation_key(revocation),
            SpendCondition::Or(branches) => branches.iter().any(|b| b.has_revocation_key(revocation)),
        }
    }

    /// The key if this is a plain single-signature condition.
    pub fn single_key(&self) -> Option<&PublicKey> {
        match self {
            SpendCondition::MultiSig { threshold: 1, pubkeys } if pubkeys.len() == 1 => pubkeys.first(),
            _ => None,
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        match self {
            SpendCondition::MultiSig { threshold, pubkeys } => {
                w.u8(0).u8(*threshold).u8(pubkeys.len() as u8);
                for k in pubkeys {
                    w.raw(&k.0);
                }
            }
            SpendCondition::RelativeTimelock { blocks, inner } => {
                w.u8(1).u32(*blocks);
                inner.encode(w);
            }
            SpendCondition::AbsoluteTimelock { height, inner } => {
                w.u8(2).u64(*height);
                inner.encode(w);
            }
            SpendCondition::HashLock { hash, inner } => {
                w.u8(3).raw(&hash.0);
                inner.encode(w);
            }
            SpendCondition::Or(branches) => {
                w.u8(4).u8(branches.len() as u8);
                for b in branches {
                    b.encode(w);
                }
            }
            SpendCondition::RevocationKey { revocation, claimant } => {
                w.u8(5).raw(&revocation.0).raw(&claimant.0);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Self::decode_at(r, 1)
    }

    fn decode_at(r: &mut Reader<'_>, depth: usize) -> Result<Self, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::Invalid { what: "condition depth", value: depth as u64 });
        }
        let tag = r.u8()?;
        Ok(match tag {
            0 => {
                let threshold = r.u8()?;
                let n = r.u8()?;
                let pubkeys = (0..n).map(|_| r.array().map(PublicKey)).collect::<Result<_, _>>()?;
                SpendCondition::MultiSig { threshold, pubkeys }
            }
            1 => {
                let blocks = r.u32()?;
                SpendCondition::after_blocks(blocks, Self::decode_at(r, depth + 1)?)
            }
            2 => {
                let height = r.u64()?;
                SpendCondition::after_height(height, Self::decode_at(r, depth + 1)?)
            }
            3 => {
                let hash = PaymentHash(r.array()?);
                SpendCondition::hash_locked(hash, Self::decode_at(r, depth + 1)?)
            }
            4 => {
                let n = r.u8()?;
                let branches = (0..n).map(|_| Self::decode_at(r, depth + 1)).collect::<Result<_, _>>()?;
                SpendCondition::Or(branches)
            }
            5 => SpendCondition::RevocationKey { revocation: PublicKey(r.array()?), claimant: PublicKey(r.array()?) },
            other => return Err(DecodeError::Invalid { what: "condition tag", value: other.into() }),
        })
    }
}
