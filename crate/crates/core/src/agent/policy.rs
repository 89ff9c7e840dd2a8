//! Behavior and target policies over legal actions, and their schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index of the largest legal value; ties go to the lowest index.
pub fn greedy_action(q: &[f64], legal: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(legal).enumerate() {
        if ok && best.map_or(true, |b| v > q[b]) {
            best = Some(a);
        }
    }
    best
}

/// ε-greedy over legal actions. Returns the action and the probability the
/// policy assigned to it.
///
/// # Panics
/// If no action is legal. Classification is always legal in the MDP, so
/// this signals a corrupted mask.
pub fn behavior_policy<R: Rng>(q: &[f64], legal: &[bool], epsilon: f64, rng: &mut R) -> (usize, f64) {
    let greedy = greedy_action(q, legal).expect("at least one legal action");
    let n_legal = legal.iter().filter(|l| **l).count();
    let action = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let k = rng.gen_range(0..n_legal);
        legal
            .iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .nth(k)
            .map(|(a, _)| a)
            .unwrap()
    } else {
        greedy
    };
    let mut mu = epsilon / n_legal as f64;
    if action == greedy {
        mu += 1.0 - epsilon;
    }
    (action, mu)
}

/// η-greedy distribution: `η` spread uniformly over legal actions, the rest
/// on the greedy one. Zero on illegal actions.
pub fn target_policy_probs(q: &[f64], legal: &[bool], eta: f64) -> Vec<f64> {
    let mut probs = vec![0.0; q.len()];
    target_policy_into(q, legal, eta, &mut probs);
    probs
}

pub fn target_policy_into(q: &[f64], legal: &[bool], eta: f64, probs: &mut [f64]) {
    let greedy = greedy_action(q, legal).expect("at least one legal action");
    let n_legal = legal.iter().filter(|l| **l).count() as f64;
    for (p, &ok) in probs.iter_mut().zip(legal) {
        *p = if ok { eta / n_legal } else { 0.0 };
    }
    probs[greedy] += 1.0 - eta;
}

/// Linear interpolation from `start` to `end` over `steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LinearSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        let t = step as f64 / self.steps as f64;
        self.start + (self.end - self.start) * t
    }
}
