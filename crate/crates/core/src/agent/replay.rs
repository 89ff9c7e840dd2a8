//! Whole-episode experience replay.

use std::collections::VecDeque;

use rand::Rng;

/// One recorded decision.
///
/// The reward is not stored: it is rebuilt at update time from the raw
/// feature cost and the misclassification loss, so that stored episodes
/// always reflect the current Lagrange multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Encoded observation `[x̄, m]`.
    pub obs: Vec<f64>,
    /// Legal-action mask at this state.
    pub legal: Vec<bool>,
    pub action: usize,
    /// Raw feature cost (0 for classification).
    pub cost: f64,
    /// Misclassification loss (0 for feature actions).
    pub loss: f64,
    /// Probability of `action` under the behavior policy when sampled.
    pub mu: f64,
}

impl Transition {
    pub fn reward(&self, cost_scale: f64) -> f64 {
        -cost_scale * self.cost - self.loss
    }
}

/// A complete trajectory; the last transition is the classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// FIFO store of episodes with a fixed capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            transitions: 0,
        }
    }

    pub fn push(&mut self, episode: Episode) {
        debug_assert!(!episode.is_empty());
        if self.episodes.len() == self.capacity {
            let old = self.episodes.pop_front().unwrap();
            self.transitions -= old.len();
        }
        self.transitions += episode.len();
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn get(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// Uniformly drawn episodes (with replacement) until at least
    /// `min_transitions` transitions are collected.
    pub fn sample<R: Rng>(&self, min_transitions: usize, rng: &mut R) -> Vec<&Episode> {
        let mut out = Vec::new();
        if self.episodes.is_empty() {
            return out;
        }
        let mut total = 0;
        while total < min_transitions.max(1) {
            let e = &self.episodes[rng.gen_range(0..self.episodes.len())];
            total += e.len();
            out.push(e);
        }
        out
    }
}
