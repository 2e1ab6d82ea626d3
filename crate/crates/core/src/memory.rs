//! Experience replay.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::TransitionRecord;
use crate::RandomSource;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// Bounded FIFO of transitions, sampled uniformly with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<TransitionRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends `record`, evicting the oldest one when full.
    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    /// Indices of `batch_size` uniform draws with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut RandomSource) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Ok(Vec::new());
        }
        if self.records.is_empty() {
            return Err(Error::NotReady { have: 0, need: 1 });
        }
        let n = self.records.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn get(&self, index: usize) -> Option<&TransitionRecord> {
        self.records.get(index)
    }

    pub fn sample(&self, batch_size: usize, rng: &mut RandomSource) -> Result<Vec<TransitionRecord>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.records[i].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActionId, Executed, Slate, StateId};
    use rand::SeedableRng;

    fn rec(tag: usize) -> TransitionRecord {
        TransitionRecord {
            state: StateId::new(tag),
            slate: Slate::single(ActionId(0)),
            executed: Executed::Fail,
            reward: tag as f64,
            next_state: StateId::END,
            terminal: true,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(rec(0));
        assert_eq!(b.len(), 1);
        b.push(rec(1));
        b.push(rec(2));
        let tags: Vec<f64> = b.iter().map(|r| r.reward).collect();
        assert_eq!(tags, vec![1.0, 2.0]);
    }

    #[test]
    fn size_stays_bounded() {
        let mut b = ReplayBuffer::new(10_000).unwrap();
        for i in 0..100_000 {
            b.push(rec(i));
        }
        assert_eq!(b.len(), 10_000);
        assert_eq!(b.iter().next().unwrap().reward, 90_000.0);
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = RandomSource::seed_from_u64(1);
        let mut b = ReplayBuffer::new(4).unwrap();
        assert!(matches!(b.sample(3, &mut rng), Err(Error::NotReady { .. })));
        assert!(b.sample(0, &mut rng).unwrap().is_empty());
        b.push(rec(7));
        assert_eq!(b.sample(5, &mut rng).unwrap(), vec![rec(7); 5]);
        assert!(ReplayBuffer::new(0).is_err());
    }
}
