//! Greedy policy evaluation over a split.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::policy::greedy_action;
use super::AgentError;
use crate::data::Dataset;
use crate::env::{ActionId, BudgetSpec, EnvState, Mdp};
use crate::net::QNetwork;

/// Aggregate results of one pass over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean raw feature cost per sample.
    pub mean_cost: f64,
    pub accuracy: f64,
    /// Largest per-sample cost.
    pub max_cost: f64,
    /// Mean of `-loss - lambda * cost` (cost term only in fixed-lambda mode).
    pub mean_reward: f64,
    pub mean_features: f64,
    pub n_samples: usize,
}

const CHUNK: usize = 4096;

/// Runs the greedy policy of `net` on every row once. Legality follows
/// test-time rules: the budget applies, missing-data restrictions do not.
pub fn evaluate(net: &QNetwork, data: &Dataset, rows: &[usize], budget: BudgetSpec) -> Result<Evaluation, AgentError> {
    if rows.is_empty() {
        return Err(AgentError::EmptySplit);
    }
    let mdp = Mdp::new(data, budget, false)?;
    let lambda = match budget {
        BudgetSpec::LambdaFixed { lambda } => lambda,
        _ => 0.0,
    };
    let n = data.n_features();
    let mut total_cost = 0.0;
    let mut max_cost: f64 = 0.0;
    let mut correct = 0usize;
    let mut total_reward = 0.0;
    let mut total_features = 0usize;

    for chunk in rows.chunks(CHUNK) {
        let mut states: Vec<EnvState> = chunk.iter().map(|&r| EnvState::new(r, n)).collect();
        let mut active: Vec<usize> = (0..states.len()).collect();
        let mut legal = vec![true; mdp.n_actions()];
        while !active.is_empty() {
            let mut obs = Array2::zeros((active.len(), 2 * n));
            for (b, &i) in active.iter().enumerate() {
                let o = mdp.observe(&states[i]);
                for f in 0..n {
                    obs[[b, f]] = o.values[f];
                    obs[[b, n + f]] = if o.mask[f] { 1.0 } else { 0.0 };
                }
            }
            let q = net.forward(obs.view())?;
            let mut still = Vec::with_capacity(active.len());
            for (b, &i) in active.iter().enumerate() {
                mdp.legal_into(&states[i], &mut legal);
                let a = greedy_action(q.row(b).as_slice().unwrap(), &legal).expect("classification is legal");
                let result = mdp.step(&mut states[i], ActionId(a), 0.0)?;
                if result.is_terminal() {
                    let s = &states[i];
                    total_cost += s.spent;
                    max_cost = max_cost.max(s.spent);
                    total_features += s.n_acquired();
                    if a - n == data.label(s.sample) {
                        correct += 1;
                    }
                    total_reward += -result.loss - lambda * s.spent;
                } else {
                    still.push(i);
                }
            }
            active = still;
        }
    }
    let m = rows.len() as f64;
    Ok(Evaluation {
        mean_cost: total_cost / m,
        accuracy: correct as f64 / m,
        max_cost,
        mean_reward: total_reward / m,
        mean_features: total_features as f64 / m,
        n_samples: rows.len(),
    })
}
