//! Bounded FIFO experience replay.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::federation::Role;

pub const DEFAULT_CAPACITY: usize = 256;

/// One node's interaction in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub round: usize,
    pub node_id: usize,
    pub role: Role,
    /// Full contribution-weight vector applied in that round.
    pub weights: Vec<f64>,
    /// Weight this node applied (`weights[node_id]`).
    pub action: f64,
    /// Own validation loss under the aggregated model.
    pub loss: f64,
    /// Own validation loss had the node applied the DSWM choice instead.
    pub baseline_loss: f64,
    /// State summary the node decided on.
    pub state: Vec<f64>,
}

impl ReplayEntry {
    /// `baseline_loss - loss`; positive when the applied weight beat DSWM.
    pub fn advantage(&self) -> f64 {
        self.baseline_loss - self.loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<ReplayEntry>,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        ReplayBuffer::new(DEFAULT_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `entry`, evicting the oldest entry when full.
    pub fn push(&mut self, entry: ReplayEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    pub fn latest(&self) -> Option<&ReplayEntry> {
        self.entries.back()
    }

    /// Uniform sample without replacement; everything when `batch_size`
    /// exceeds the buffer. Empty buffer gives an empty sample.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<ReplayEntry> {
        if batch_size >= self.entries.len() {
            return self.entries.iter().cloned().collect();
        }
        let mut picked = index::sample(rng, self.entries.len(), batch_size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| self.entries[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn entry(round: usize) -> ReplayEntry {
        ReplayEntry {
            round,
            node_id: 0,
            role: Role::Leader,
            weights: vec![1.0, 0.5],
            action: 1.0,
            loss: 0.3,
            baseline_loss: 0.3,
            state: vec![0.0; 7],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(256);
        for r in 0..300 {
            b.push(entry(r));
        }
        assert_eq!(b.len(), 256);
        assert_eq!(b.iter().next().unwrap().round, 44);
        assert_eq!(b.latest().unwrap().round, 299);
    }

    #[test]
    fn sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(16);
        assert!(b.sample(8, &mut rng).is_empty());
        for r in 0..5 {
            b.push(entry(r));
        }
        assert_eq!(b.sample(8, &mut rng).len(), 5);
        for r in 5..16 {
            b.push(entry(r));
        }
        let s = b.sample(8, &mut rng);
        assert_eq!(s.len(), 8);
        let mut rounds: Vec<usize> = s.iter().map(|e| e.round).collect();
        rounds.dedup();
        assert_eq!(rounds.len(), 8, "sampled without replacement");
        assert!(s.iter().all(|e| b.iter().any(|x| x == e)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_exceeds_capacity(cap in 1usize..40, pushes in 0usize..120) {
                let mut b = ReplayBuffer::new(cap);
                for r in 0..pushes {
                    b.push(entry(r));
                    prop_assert!(b.len() <= cap);
                }
                let rounds: Vec<usize> = b.iter().map(|e| e.round).collect();
                let start = pushes.saturating_sub(cap);
                prop_assert_eq!(rounds, (start..pushes).collect::<Vec<_>>());
            }
        }
    }
}
