use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ObsBundle;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: ObsBundle,
    pub action: usize,
    pub reward: f32,
    pub next_obs: ObsBundle,
    pub done: bool,
}

/// FIFO experience store with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<X> {
    items: VecDeque<X>,
    capacity: usize,
}

impl<X> ReplayBuffer<X> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        })
    }

    pub fn push(&mut self, item: X) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&X> {
        self.items.get(i)
    }

    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Contract("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<&X>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn evicts_oldest_at_capacity() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.push(1);
        buf.push(2);
        buf.push(3);
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(0), Some(&2));
        assert_eq!(buf.get(1), Some(&3));
    }

    #[test]
    fn samples_with_replacement() {
        let mut buf = ReplayBuffer::new(8).unwrap();
        buf.push(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(buf.sample(4, &mut rng).unwrap(), vec![&7; 4]);
    }

    #[test]
    fn fixed_rng_gives_fixed_indices() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        (0..100).for_each(|i| buf.push(i));
        let a = buf.sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_zero_capacity_are_errors() {
        assert!(ReplayBuffer::<u8>::new(0).is_err());
        let buf = ReplayBuffer::<u8>::new(3).unwrap();
        assert!(matches!(
            buf.sample(1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Contract(_))
        ));
    }
}
