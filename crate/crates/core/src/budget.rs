//! Lagrange multiplier control for the average-budget target.
//!
//! `lambda` follows projected gradient ascent with momentum on
//! `E[z(x)] - b`, estimated from a window of recently completed training
//! episodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Number of recent episode costs in the estimator.
    pub window: usize,
    /// Number of recent updates inspected by the oscillation detector.
    pub oscillation_window: usize,
}

impl Default for LagrangeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum: 0.9,
            window: 1000,
            oscillation_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub velocity: f64,
    pub lr: f64,
    pub momentum: f64,
    pub target: f64,
    /// Mean feature cost; gradients and steps are expressed in these units.
    pub cost_unit: f64,
    window: VecDeque<f64>,
    window_cap: usize,
    signs: VecDeque<bool>,
    sign_cap: usize,
    updates: u64,
}

impl LagrangeState {
    pub fn new(target: f64, cfg: &LagrangeConfig, cost_unit: f64) -> Self {
        assert!(cost_unit > 0.0, "cost unit must be positive");
        Self {
            lambda: 0.0,
            velocity: 0.0,
            lr: cfg.lr,
            momentum: cfg.momentum,
            target,
            cost_unit,
            window: VecDeque::with_capacity(cfg.window),
            window_cap: cfg.window.max(1),
            signs: VecDeque::with_capacity(cfg.oscillation_window),
            sign_cap: cfg.oscillation_window.max(2),
            updates: 0,
        }
    }

    /// Adds the raw cost of a completed episode to the estimator window.
    pub fn record_cost(&mut self, cost: f64) {
        if self.window.len() == self.window_cap {
            self.window.pop_front();
        }
        self.window.push_back(cost);
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn mean_cost(&self) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window.iter().sum::<f64>() / self.window.len() as f64)
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One ascent step; `lr_factor` scales the base learning rate (schedule).
    /// Returns the gradient estimate, or `None` when no episode finished yet.
    pub fn lambda_step(&mut self, lr_factor: f64) -> Option<f64> {
        let Some(mean) = self.mean_cost() else {
            log::warn!("lambda update skipped: no completed episodes in window");
            return None;
        };
        let grad = (mean - self.target) / self.cost_unit;
        self.velocity = self.momentum * self.velocity + grad;
        self.lambda = (self.lambda + self.lr * lr_factor * self.velocity / self.cost_unit).max(0.0);
        if grad != 0.0 {
            if self.signs.len() == self.sign_cap {
                self.signs.pop_front();
            }
            self.signs.push_back(grad > 0.0);
        }
        self.updates += 1;
        Some(grad)
    }

    /// Sign changes of the gradient over the recent update window.
    pub fn sign_changes(&self) -> usize {
        self.signs
            .iter()
            .zip(self.signs.iter().skip(1))
            .filter(|(a, b)| a != b)
            .count()
    }

    /// True once the recent window is full and contains at least
    /// `min_changes` sign flips.
    pub fn oscillating(&self, min_changes: usize) -> bool {
        self.signs.len() == self.sign_cap && self.sign_changes() >= min_changes
    }
}

/// Validation summary of a training snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub step: u64,
    pub val_cost: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// False when no snapshot met the budget and the cheapest one was taken.
    pub feasible: bool,
}

/// Most accurate snapshot with validation cost `<= b`; among equally accurate
/// ones the latest. Falls back to the cheapest snapshot when none is feasible.
pub fn select_feasible_best(snapshots: &[SnapshotSummary], b: f64) -> Option<Selection> {
    let best = snapshots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.val_cost <= b)
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, a)) if a > s.val_accuracy => acc,
            _ => Some((i, s.val_accuracy)),
        });
    if let Some((index, _)) = best {
        return Some(Selection { index, feasible: true });
    }
    let cheapest = snapshots
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_cost.total_cmp(&b.1.val_cost))?
        .0;
    log::warn!("no snapshot meets budget {b}; using the cheapest one");
    Some(Selection {
        index: cheapest,
        feasible: false,
    })
}
