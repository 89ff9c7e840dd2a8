//! Exact solver for tiny discrete instances.
//!
//! Every belief state is identified by the acquired features and their
//! observed values; its posterior is the empirical class distribution of the
//! rows consistent with the observation. Backward induction over these states
//! gives the optimal expected reward over the given rows, and any
//! deterministic policy can be scored exactly by replaying it on every row.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::greedy_action;
use crate::data::Dataset;
use crate::env::{ActionId, BudgetSpec, EnvError, EnvState, LossMatrix, Mdp, Observation};
use crate::net::{NetError, QNetwork};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("unsupported budget mode `{0}` (the oracle solves fixed-lambda and hard budgets)")]
    Unsupported(&'static str),
    #[error("no rows to solve over")]
    Empty,
    #[error("observation not in the policy table")]
    UnknownState,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Size limits checked before solving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_features: usize,
    pub max_values: usize,
    pub max_rows: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_features: 12,
            max_values: 3,
            max_rows: 10_000,
        }
    }
}

/// Distinct values of each feature over the solved rows.
#[derive(Debug, Clone)]
struct Levels {
    levels: Vec<Vec<f64>>,
}

impl Levels {
    fn of(data: &Dataset, rows: &[usize], limits: &Limits) -> Result<Self> {
        let n = data.n_features();
        if n > limits.max_features {
            return Err(OracleError::TooLarge(format!("{n} features (limit {})", limits.max_features)));
        }
        if rows.len() > limits.max_rows {
            return Err(OracleError::TooLarge(format!("{} rows (limit {})", rows.len(), limits.max_rows)));
        }
        let mut levels = vec![Vec::<f64>::new(); n];
        for &r in rows {
            for (f, &v) in data.row(r).iter().enumerate() {
                if !levels[f].contains(&v) {
                    levels[f].push(v);
                    if levels[f].len() > limits.max_values {
                        return Err(OracleError::TooLarge(format!(
                            "feature {f} takes more than {} distinct values",
                            limits.max_values
                        )));
                    }
                }
            }
        }
        levels.iter_mut().for_each(|l| l.sort_by(f64::total_cmp));
        Ok(Self { levels })
    }

    fn index(&self, f: usize, v: f64) -> Option<usize> {
        self.levels[f].iter().position(|&l| l == v)
    }

    /// Two bits per feature: 0 unobserved, otherwise level index + 1.
    fn key(&self, obs: &Observation) -> Option<u32> {
        let mut key = 0u32;
        for f in 0..obs.mask.len() {
            if obs.mask[f] {
                key |= ((self.index(f, obs.values[f])? + 1) as u32) << (2 * f);
            }
        }
        Some(key)
    }
}

fn observed(key: u32, f: usize) -> bool {
    (key >> (2 * f)) & 3 != 0
}

/// Optimal action and value of one belief state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDecision {
    pub action: usize,
    pub value: f64,
}

/// Exportable optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Observed value per feature, `None` where not acquired.
    pub observed: Vec<Option<f64>>,
    pub action: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Optimal expected reward per sample.
    pub value: f64,
    table: HashMap<u32, NodeDecision>,
    levels: Levels,
    n_features: usize,
}

impl Solution {
    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn decision(&self, obs: &Observation) -> Option<NodeDecision> {
        self.levels.key(obs).and_then(|k| self.table.get(&k).copied())
    }

    /// All solved states, sorted by number of acquired features then key.
    pub fn entries(&self) -> Vec<PolicyEntry> {
        let mut keys: Vec<u32> = self.table.keys().copied().collect();
        keys.sort_by_key(|&k| ((0..self.n_features).filter(|&f| observed(k, f)).count(), k));
        keys.into_iter()
            .map(|k| {
                let d = self.table[&k];
                PolicyEntry {
                    observed: (0..self.n_features)
                        .map(|f| {
                            let code = (k >> (2 * f)) & 3;
                            (code != 0).then(|| self.levels.levels[f][code as usize - 1])
                        })
                        .collect(),
                    action: d.action,
                    value: d.value,
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "n_features": self.n_features,
            "states": self.entries(),
        })
    }
}

struct Solver<'a> {
    data: &'a Dataset,
    levels: &'a Levels,
    loss: &'a LossMatrix,
    lambda: f64,
    hard: Option<f64>,
    memo: HashMap<u32, NodeDecision>,
}

impl Solver<'_> {
    fn solve(&mut self, key: u32, spent: f64, rows: &[usize]) -> f64 {
        if let Some(d) = self.memo.get(&key) {
            return d.value;
        }
        let n = self.data.n_features();
        let m = rows.len() as f64;
        let mut counts = vec![0usize; self.data.n_classes()];
        rows.iter().for_each(|&r| counts[self.data.label(r)] += 1);
        let mut best = NodeDecision {
            action: n,
            value: f64::NEG_INFINITY,
        };
        for c in 0..counts.len() {
            let expected_loss: f64 = counts.iter().enumerate().map(|(y, &k)| k as f64 * self.loss.get(c, y)).sum::<f64>() / m;
            if -expected_loss > best.value {
                best = NodeDecision {
                    action: n + c,
                    value: -expected_loss,
                };
            }
        }
        for f in 0..n {
            if observed(key, f) {
                continue;
            }
            let cost = self.data.costs()[f];
            if let Some(b) = self.hard {
                if spent + cost > b {
                    continue;
                }
            }
            let mut parts = vec![Vec::new(); self.levels.levels[f].len()];
            for &r in rows {
                parts[self.levels.index(f, self.data.row(r)[f]).expect("level of a solved row")].push(r);
            }
            let mut value = -self.lambda * cost;
            for (v, part) in parts.iter().enumerate() {
                if !part.is_empty() {
                    let child = key | (((v + 1) as u32) << (2 * f));
                    value += part.len() as f64 / m * self.solve(child, spent + cost, part);
                }
            }
            if value > best.value {
                best = NodeDecision { action: f, value };
            }
        }
        self.memo.insert(key, best);
        best.value
    }
}

fn objective(budget: BudgetSpec) -> Result<(f64, Option<f64>)> {
    budget.validate()?;
    match budget {
        BudgetSpec::LambdaFixed { lambda } => Ok((lambda, None)),
        BudgetSpec::Hard { b } => Ok((0.0, Some(b))),
        BudgetSpec::AverageTarget { .. } => Err(OracleError::Unsupported(budget.mode_name())),
    }
}

/// Optimal expected reward over `rows` with the binary loss. Equal values
/// prefer classification, then the lowest action index.
pub fn solve_exact(data: &Dataset, rows: &[usize], budget: BudgetSpec) -> Result<Solution> {
    solve_with(data, rows, budget, &LossMatrix::binary(data.n_classes()), &Limits::default())
}

pub fn solve_with(data: &Dataset, rows: &[usize], budget: BudgetSpec, loss: &LossMatrix, limits: &Limits) -> Result<Solution> {
    let (lambda, hard) = objective(budget)?;
    if rows.is_empty() {
        return Err(OracleError::Empty);
    }
    let levels = Levels::of(data, rows, limits)?;
    let mut solver = Solver {
        data,
        levels: &levels,
        loss,
        lambda,
        hard,
        memo: HashMap::new(),
    };
    let value = solver.solve(0, 0.0, rows);
    Ok(Solution {
        value,
        table: solver.memo,
        n_features: data.n_features(),
        levels,
    })
}

/// A deterministic policy over observations.
pub trait Policy {
    fn act(&self, obs: &Observation, legal: &[bool]) -> Result<usize>;
}

impl<F: Fn(&Observation, &[bool]) -> usize> Policy for F {
    fn act(&self, obs: &Observation, legal: &[bool]) -> Result<usize> {
        Ok(self(obs, legal))
    }
}

/// Greedy policy of a Q-network over legal actions.
pub struct GreedyNetPolicy<'a>(pub &'a QNetwork);

impl Policy for GreedyNetPolicy<'_> {
    fn act(&self, obs: &Observation, legal: &[bool]) -> Result<usize> {
        let q = self.0.forward_row(&obs.encode())?;
        Ok(greedy_action(&q, legal).expect("classification is always legal"))
    }
}

impl Policy for Solution {
    fn act(&self, obs: &Observation, _legal: &[bool]) -> Result<usize> {
        self.decision(obs).map(|d| d.action).ok_or(OracleError::UnknownState)
    }
}

/// Exact score of a deterministic policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    /// Expected reward per sample.
    pub reward: f64,
    pub mean_cost: f64,
    pub accuracy: f64,
}

/// Plays `policy` once on every row under test-time legality.
pub fn policy_value(policy: &dyn Policy, data: &Dataset, rows: &[usize], budget: BudgetSpec) -> Result<PolicyValue> {
    let (lambda, _) = objective(budget)?;
    if rows.is_empty() {
        return Err(OracleError::Empty);
    }
    let limits = Limits::default();
    if data.n_features() > limits.max_features || rows.len() > limits.max_rows {
        return Err(OracleError::TooLarge(format!(
            "{} features, {} rows",
            data.n_features(),
            rows.len()
        )));
    }
    let mdp = Mdp::new(data, budget, false)?;
    let n = data.n_features();
    let (mut reward, mut cost, mut correct) = (0.0, 0.0, 0usize);
    for &r in rows {
        let mut state = EnvState::new(r, n);
        loop {
            let legal = mdp.legal_actions(&state);
            let a = policy.act(&mdp.observe(&state), &legal)?;
            let step = mdp.step(&mut state, ActionId(a), 0.0)?;
            if step.is_terminal() {
                reward -= step.loss + lambda * state.spent;
                cost += state.spent;
                correct += usize::from(a - n == data.label(r));
                break;
            }
        }
    }
    let m = rows.len() as f64;
    Ok(PolicyValue {
        reward: reward / m,
        mean_cost: cost / m,
        accuracy: correct as f64 / m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RawTable, SplitFractions};
    use approx::assert_abs_diff_eq;

    /// One binary feature equal to the label, split evenly.
    fn copy_label() -> Dataset {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let raw = RawTable {
            feature_names: vec!["f".into()],
            values: labels.iter().map(|&y| Some(y as f64)).collect(),
            labels: labels.iter().map(|y| y.to_string()).collect(),
        };
        Dataset::from_raw("copy", raw, None, SplitFractions::new(1.0, 0.0, 0.0), 0).unwrap()
    }

    #[test]
    fn acquire_when_cheap_guess_when_expensive() {
        let d = copy_label();
        let rows = d.split.train.clone();
        let s = solve_exact(&d, &rows, BudgetSpec::LambdaFixed { lambda: 0.4 }).unwrap();
        assert_abs_diff_eq!(s.value, -0.4, epsilon = 1e-12);
        assert_eq!(s.table[&0].action, 0);
        let s = solve_exact(&d, &rows, BudgetSpec::LambdaFixed { lambda: 0.6 }).unwrap();
        assert_abs_diff_eq!(s.value, -0.5, epsilon = 1e-12);
        assert_eq!(s.table[&0].action, 1, "ties and prior guess go to the first class");
    }

    #[test]
    fn zero_hard_budget_is_the_prior() {
        let d = copy_label();
        let rows = d.split.train.clone();
        let s = solve_exact(&d, &rows, BudgetSpec::Hard { b: 0.0 }).unwrap();
        assert_abs_diff_eq!(s.value, -(1.0 - d.majority_rate(&rows)), epsilon = 1e-12);
    }

    #[test]
    fn optimal_table_scores_its_own_value() {
        let d = copy_label();
        let rows = d.split.train.clone();
        for lambda in [0.0, 0.3, 0.7] {
            let budget = BudgetSpec::LambdaFixed { lambda };
            let s = solve_exact(&d, &rows, budget).unwrap();
            let v = policy_value(&s, &d, &rows, budget).unwrap();
            assert_abs_diff_eq!(v.reward, s.value, epsilon = 1e-12);
        }
        let majority = |_: &Observation, _: &[bool]| 1usize;
        let v = policy_value(&majority, &d, &rows, BudgetSpec::LambdaFixed { lambda: 0.1 }).unwrap();
        assert_abs_diff_eq!(v.reward, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn size_and_mode_errors() {
        let d = copy_label();
        let rows = d.split.train.clone();
        assert!(matches!(
            solve_exact(&d, &rows, BudgetSpec::AverageTarget { b: 1.0 }),
            Err(OracleError::Unsupported(_))
        ));
        let tight = Limits {
            max_rows: 10,
            ..Limits::default()
        };
        let loss = LossMatrix::binary(2);
        assert!(matches!(
            solve_with(&d, &rows, BudgetSpec::Hard { b: 1.0 }, &loss, &tight),
            Err(OracleError::TooLarge(_))
        ));
        assert!(matches!(solve_exact(&d, &[], BudgetSpec::Hard { b: 1.0 }), Err(OracleError::Empty)));
    }

    #[test]
    fn table_exports_to_json() {
        let d = copy_label();
        let s = solve_exact(&d, &d.split.train.clone(), BudgetSpec::LambdaFixed { lambda: 0.1 }).unwrap();
        let json = s.to_json();
        assert_eq!(json["states"].as_array().unwrap().len(), s.n_states());
        assert_eq!(json["states"][0]["observed"][0], serde_json::Value::Null);
    }
}
