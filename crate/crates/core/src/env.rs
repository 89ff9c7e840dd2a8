//! The feature-acquisition MDP.
//!
//! A state is a hidden sample plus the set of features acquired so far. The
//! agent sees only `(x̄, m)`: acquired values and the acquisition mask. Actions
//! `0..n` acquire a feature, actions `n..n + classes` classify and terminate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} is not legal in the current state")]
    IllegalAction { action: usize },
    #[error("episode is not terminated")]
    Unterminated,
    #[error("no active episode; call reset first")]
    NotStarted,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("empty sample split")]
    EmptySplit,
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// How feature costs enter the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BudgetSpec {
    /// Reward `-lambda * c(f)` per acquired feature.
    LambdaFixed { lambda: f64 },
    /// Average per-sample cost target `b`; lambda is learned.
    AverageTarget { b: f64 },
    /// Per-sample cost never exceeds `b`; features are free otherwise.
    Hard { b: f64 },
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            BudgetSpec::LambdaFixed { lambda } => ("lambda", lambda),
            BudgetSpec::AverageTarget { b } | BudgetSpec::Hard { b } => ("b", b),
        };
        if !v.is_finite() || v < 0.0 {
            return Err(EnvError::InvalidBudget(format!("{name} must be a non-negative number, got {v}")));
        }
        Ok(())
    }

    pub fn hard_limit(&self) -> Option<f64> {
        match *self {
            BudgetSpec::Hard { b } => Some(b),
            _ => None,
        }
    }

    /// The swept parameter (lambda or b), used to label runs.
    pub fn parameter(&self) -> f64 {
        match *self {
            BudgetSpec::LambdaFixed { lambda } => lambda,
            BudgetSpec::AverageTarget { b } | BudgetSpec::Hard { b } => b,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            BudgetSpec::LambdaFixed { .. } => "lambda_fixed",
            BudgetSpec::AverageTarget { .. } => "average_target",
            BudgetSpec::Hard { .. } => "hard",
        }
    }

    /// Multiplier applied to feature costs in the reward. `controller` is the
    /// current Lagrange multiplier, only used in average-target mode.
    pub fn cost_scale(&self, controller: f64) -> f64 {
        match *self {
            BudgetSpec::LambdaFixed { lambda } => lambda,
            BudgetSpec::AverageTarget { .. } => controller,
            BudgetSpec::Hard { .. } => 0.0,
        }
    }
}

/// Index into the action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Feature(usize),
    Classify(usize),
}

impl ActionId {
    pub fn kind(self, n_features: usize) -> ActionKind {
        if self.0 < n_features {
            ActionKind::Feature(self.0)
        } else {
            ActionKind::Classify(self.0 - n_features)
        }
    }

    pub fn classify(class: usize, n_features: usize) -> Self {
        ActionId(n_features + class)
    }
}

/// Misclassification loss `loss[predicted][true]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    n_classes: usize,
    values: Vec<f64>,
}

impl LossMatrix {
    /// 0 when correct, 1 otherwise.
    pub fn binary(n_classes: usize) -> Self {
        let values = (0..n_classes * n_classes)
            .map(|i| if i / n_classes == i % n_classes { 0.0 } else { 1.0 })
            .collect();
        Self { n_classes, values }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n || r.iter().any(|v| !v.is_finite() || *v < 0.0)) {
            return None;
        }
        Some(Self {
            n_classes: n,
            values: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, predicted: usize, truth: usize) -> f64 {
        self.values[predicted * self.n_classes + truth]
    }
}

/// Hidden environment state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub sample: usize,
    pub acquired: Vec<bool>,
    /// Raw cost of the acquired set.
    pub spent: f64,
}

impl EnvState {
    pub fn new(sample: usize, n_features: usize) -> Self {
        Self {
            sample,
            acquired: vec![false; n_features],
            spent: 0.0,
        }
    }

    pub fn n_acquired(&self) -> usize {
        self.acquired.iter().filter(|a| **a).count()
    }
}

/// Agent-visible view of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Observation {
    pub fn of(data: &Dataset, state: &EnvState) -> Self {
        let row = data.row(state.sample);
        let values = row
            .iter()
            .zip(&state.acquired)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect();
        Self {
            values,
            mask: state.acquired.clone(),
        }
    }

    /// Network input: `x̄` followed by `m` as 0/1.
    pub fn encode_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.values);
        out.extend(self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.values.len());
        self.encode_into(&mut out);
        out
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    /// Raw cost of the acquired feature (0 for classification).
    pub cost: f64,
    /// Misclassification loss (0 for feature actions).
    pub loss: f64,
    /// `None` when the episode terminated.
    pub observation: Option<Observation>,
}

impl StepResult {
    pub fn is_terminal(&self) -> bool {
        self.observation.is_none()
    }
}

/// Static definition of the decision problem over a dataset.
#[derive(Debug, Clone)]
pub struct Mdp<'a> {
    pub data: &'a Dataset,
    pub budget: BudgetSpec,
    pub loss: LossMatrix,
    /// In training, features absent from the sample cannot be acquired.
    pub training: bool,
}

impl<'a> Mdp<'a> {
    pub fn new(data: &'a Dataset, budget: BudgetSpec, training: bool) -> Result<Self> {
        budget.validate()?;
        Ok(Self {
            data,
            budget,
            loss: LossMatrix::binary(data.n_classes()),
            training,
        })
    }

    pub fn with_loss(mut self, loss: LossMatrix) -> Self {
        assert_eq!(loss.n_classes(), self.data.n_classes(), "loss matrix size");
        self.loss = loss;
        self
    }

    pub fn n_features(&self) -> usize {
        self.data.n_features()
    }

    pub fn n_actions(&self) -> usize {
        self.data.n_actions()
    }

    /// Legality mask over the whole action space. Classification is always
    /// legal.
    pub fn legal_actions(&self, state: &EnvState) -> Vec<bool> {
        let mut legal = vec![true; self.n_actions()];
        self.legal_into(state, &mut legal);
        legal
    }

    pub fn legal_into(&self, state: &EnvState, legal: &mut [bool]) {
        let costs = self.data.costs();
        let limit = self.budget.hard_limit();
        for f in 0..self.n_features() {
            legal[f] = !state.acquired[f]
                && limit.map_or(true, |b| state.spent + costs[f] <= b)
                && (!self.training || self.data.is_present(state.sample, f));
        }
        for l in &mut legal[self.n_features()..] {
            *l = true;
        }
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        Observation::of(self.data, state)
    }

    /// Applies `action`; `controller` is the current Lagrange multiplier.
    pub fn step(&self, state: &mut EnvState, action: ActionId, controller: f64) -> Result<StepResult> {
        if action.0 >= self.n_actions() || !self.legal_actions(state)[action.0] {
            return Err(EnvError::IllegalAction { action: action.0 });
        }
        match action.kind(self.n_features()) {
            ActionKind::Classify(class) => {
                let loss = self.loss.get(class, self.data.label(state.sample));
                Ok(StepResult {
                    reward: -loss,
                    cost: 0.0,
                    loss,
                    observation: None,
                })
            }
            ActionKind::Feature(f) => {
                let cost = self.data.costs()[f];
                state.acquired[f] = true;
                state.spent += cost;
                Ok(StepResult {
                    reward: -self.budget.cost_scale(controller) * cost,
                    cost,
                    loss: 0.0,
                    observation: Some(self.observe(state)),
                })
            }
        }
    }
}

/// How an environment draws its next sample.
#[derive(Debug, Clone)]
pub enum SampleOrder {
    /// Uniformly at random with replacement.
    Random(ChaCha8Rng),
    /// Walk the rows in order, wrapping around.
    Sequential { cursor: usize },
}

/// An episodic environment over one split.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    mdp: Mdp<'a>,
    rows: &'a [usize],
    order: SampleOrder,
    lambda: f64,
    state: Option<EnvState>,
    epochs: usize,
}

impl<'a> Env<'a> {
    pub fn new(mdp: Mdp<'a>, rows: &'a [usize], order: SampleOrder) -> Result<Self> {
        if rows.is_empty() {
            return Err(EnvError::EmptySplit);
        }
        Ok(Self {
            mdp,
            rows,
            order,
            lambda: 0.0,
            state: None,
            epochs: 0,
        })
    }

    pub fn training(mdp: Mdp<'a>, rows: &'a [usize], seed: u64) -> Result<Self> {
        Self::new(mdp, rows, SampleOrder::Random(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn sequential(mdp: Mdp<'a>, rows: &'a [usize]) -> Result<Self> {
        Self::new(mdp, rows, SampleOrder::Sequential { cursor: 0 })
    }

    pub fn mdp(&self) -> &Mdp<'a> {
        &self.mdp
    }

    /// Sets the controller multiplier used in average-target mode.
    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Completed passes over the rows (sequential order only).
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Starts a new episode with nothing acquired.
    pub fn reset(&mut self) -> Observation {
        let sample = match &mut self.order {
            SampleOrder::Random(rng) => self.rows[rng.gen_range(0..self.rows.len())],
            SampleOrder::Sequential { cursor } => {
                let s = self.rows[*cursor];
                *cursor += 1;
                if *cursor == self.rows.len() {
                    *cursor = 0;
                    self.epochs += 1;
                }
                s
            }
        };
        let state = EnvState::new(sample, self.mdp.n_features());
        let obs = self.mdp.observe(&state);
        self.state = Some(state);
        obs
    }

    pub fn legal_actions(&self) -> Result<Vec<bool>> {
        self.state
            .as_ref()
            .map(|s| self.mdp.legal_actions(s))
            .ok_or(EnvError::NotStarted)
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult> {
        let state = self.state.as_mut().ok_or(EnvError::NotStarted)?;
        let result = self.mdp.step(state, action, self.lambda)?;
        if result.is_terminal() {
            self.state = None;
        }
        Ok(result)
    }
}

/// Actions taken in one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub actions: Vec<ActionId>,
    pub terminated: bool,
}

/// Total raw cost of the features acquired in a finished episode.
pub fn episode_cost(trace: &Trace, costs: &[f64]) -> Result<f64> {
    if !trace.terminated {
        return Err(EnvError::Unterminated);
    }
    Ok(trace
        .actions
        .iter()
        .filter(|a| a.0 < costs.len())
        .map(|a| costs[a.0])
        .sum())
}
