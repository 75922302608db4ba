use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Action;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Transition<S> {
    pub obs: [S; 4],
    pub action: Action,
    /// Reward divided by the control interval.
    pub reward: S,
    pub next_obs: [S; 4],
    /// The episode ended in cure; truncation is not terminal.
    pub terminal: bool,
}

/// Fixed-capacity ring; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` entries drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(ReplayBuffer::<u32>::new(0).is_err());
    }

    #[test]
    fn sampling_covers_contents() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        assert!(buf.sample(4, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
        for k in 0..8 {
            buf.push(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let drawn = buf.sample(500, &mut rng);
        assert_eq!(drawn.len(), 500);
        for k in 3..8 {
            assert!(drawn.contains(&&k));
        }
        assert!(drawn.iter().all(|v| **v >= 3));
    }

    proptest! {
        #[test]
        fn eviction_is_fifo(capacity in 1usize..40, inserts in 0usize..200) {
            let mut buf = ReplayBuffer::new(capacity).unwrap();
            for k in 0..inserts {
                buf.push(k);
            }
            prop_assert_eq!(buf.len(), inserts.min(capacity));
            let kept: Vec<usize> = buf.iter().copied().collect();
            let want: Vec<usize> = (inserts.saturating_sub(capacity)..inserts).collect();
            prop_assert_eq!(kept, want);
        }
    }
}
