use std::collections::BTreeMap;

use crate::chain::{Chain, ChainError, OutPoint, Transaction, Txid};
use crate::channel::{build_confiscation, Channel, Side};
use crate::crypto::KeyPair;

/// Pre-signed justice transactions for one channel, keyed by the txid of the
/// revoked commitment they punish. The tower never holds a private key.
#[derive(Debug, Clone, Default)]
pub struct WatchedChannel {
    pub funding: Option<OutPoint>,
    justice: BTreeMap<Txid, Transaction>,
}

impl WatchedChannel {
    /// Hands over a justice tx for every revoked `cheater` commitment in
    /// `channel`, claimed by `claimant`.
    pub fn from_channel(channel: &Channel, cheater: Side, claimant: &KeyPair) -> Self {
        let fee = channel.params().onchain_fee;
        let justice = channel
            .states()
            .iter()
            .filter_map(|s| {
                let reveal = channel.revealed(cheater, s.state_index)?;
                let pair = channel.commitments(s.state_index).ok()?;
                let commitment = pair.get(cheater);
                let tx = build_confiscation(commitment, &reveal.keypair(), claimant, fee)?;
                Some((commitment.txid(), tx))
            })
            .collect();
        WatchedChannel { funding: Some(channel.funding()), justice }
    }

    pub fn len(&self) -> usize {
        self.justice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.justice.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TowerEvent {
    Submitted {
        commitment: Txid,
        justice: Txid,
    },
    /// The revoked commitment was seen but its outputs were already gone.
    TooLate {
        commitment: Txid,
        error: ChainError,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Watchtower {
    channels: Vec<WatchedChannel>,
    scanned_height: u64,
    pub log: Vec<TowerEvent>,
}

impl Watchtower {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn watch(&mut self, channel: WatchedChannel) {
        self.channels.push(channel);
    }

    /// Scans blocks mined since the last tick and submits a justice tx for
    /// every revoked commitment found. Returns what happened this tick.
    pub fn tick(&mut self, chain: &mut Chain) -> Vec<TowerEvent> {
        let found: Vec<(Txid, Transaction)> = chain
            .txs_above(self.scanned_height)
            .filter_map(|(_, tx)| {
                let txid = tx.txid();
                self.channels.iter().find_map(|c| c.justice.get(&txid)).map(|j| (txid, j.clone()))
            })
            .collect();
        self.scanned_height = chain.height();
        let events: Vec<TowerEvent> = found
            .into_iter()
            .map(|(commitment, justice)| match chain.submit_tx(justice) {
                Ok(justice) => TowerEvent::Submitted { commitment, justice },
                Err(error) => TowerEvent::TooLate { commitment, error },
            })
            .collect();
        self.log.extend(events.iter().cloned());
        events
    }

    pub fn submitted(&self) -> impl Iterator<Item = &Txid> {
        self.log.iter().filter_map(|e| match e {
            TowerEvent::Submitted { justice, .. } => Some(justice),
            TowerEvent::TooLate { .. } => None,
        })
    }
}
