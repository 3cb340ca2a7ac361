use std::collections::VecDeque;

use rand::seq::index::sample;

use crate::error::{ensure, Result};
use crate::rng::SeededRng;

/// One stored interaction, observations already in learner feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// FIFO ring of transitions with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
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

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.entries.get(i)
    }

    /// `batch` distinct transitions chosen uniformly.
    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<&Transition>> {
        ensure(batch >= 1 && batch <= self.entries.len(), || {
            format!("cannot sample {batch} transitions from {}", self.entries.len())
        })?;
        Ok(sample(rng, self.entries.len(), batch)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }
}
