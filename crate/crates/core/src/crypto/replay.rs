use std::collections::{HashSet, VecDeque};

use super::envelope::EnvelopeError;

pub const DEFAULT_REPLAY_CAPACITY: usize = 4096;

/// Bounded set of recently accepted envelope MACs.
///
/// Timestamps bound how long a captured envelope stays acceptable; this set
/// rejects re-delivery inside that window. Entries whose timestamp has left
/// the window are evicted first, then the oldest entry once `capacity` is hit.
#[derive(Debug, Clone)]
pub struct ReplayGuard {
    window_ms: u64,
    capacity: usize,
    order: VecDeque<(u64, [u8; 32])>,
    seen: HashSet<[u8; 32]>,
}

impl ReplayGuard {
    pub fn new(window_ms: u64, capacity: usize) -> Self {
        assert!(capacity > 0, "replay guard needs room for at least one entry");
        ReplayGuard { window_ms, capacity, order: VecDeque::new(), seen: HashSet::new() }
    }

    /// Records `(mac, timestamp)`; errors if the MAC was already accepted.
    pub fn check_and_insert(&mut self, mac: &[u8; 32], timestamp_ms: u64, now_ms: u64) -> Result<(), EnvelopeError> {
        self.evict_expired(now_ms);
        if self.seen.contains(mac) {
            return Err(EnvelopeError::Replayed);
        }
        if self.order.len() == self.capacity {
            if let Some((_, old)) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.order.push_back((timestamp_ms, *mac));
        self.seen.insert(*mac);
        Ok(())
    }

    fn evict_expired(&mut self, now_ms: u64) {
        let horizon = now_ms.saturating_sub(self.window_ms);
        // Insertion order tracks arrival, not timestamp; scan the whole queue.
        let seen = &mut self.seen;
        self.order.retain(|(ts, mac)| {
            let keep = *ts >= horizon;
            if !keep {
                seen.remove(mac);
            }
            keep
        });
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_within_window_rejected() {
        let mut g = ReplayGuard::new(30_000, 8);
        g.check_and_insert(&[1; 32], 1_000, 1_000).unwrap();
        assert_eq!(g.check_and_insert(&[1; 32], 1_000, 2_000), Err(EnvelopeError::Replayed));
        g.check_and_insert(&[2; 32], 1_000, 2_000).unwrap();
    }

    #[test]
    fn capacity_is_bounded() {
        let mut g = ReplayGuard::new(u64::MAX, 3);
        for i in 0..10u8 {
            g.check_and_insert(&[i; 32], 0, 0).unwrap();
        }
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn expired_entries_evicted() {
        let mut g = ReplayGuard::new(10, 8);
        g.check_and_insert(&[1; 32], 0, 0).unwrap();
        g.check_and_insert(&[2; 32], 100, 100).unwrap();
        assert_eq!(g.len(), 1);
    }
}
