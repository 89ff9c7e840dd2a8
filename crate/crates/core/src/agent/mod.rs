//! Double dueling DQN with Retrace targets, trained on whole episodes.
//!
//! One learner owns the online network, the target network and the
//! optimizer. Every training step advances all environments by one action
//! with the ε-greedy behavior policy, updates the Lagrange multiplier in
//! average-target mode, then performs one gradient step on a batch of replayed
//! episodes followed by a soft target update.

pub mod evaluate;
pub mod policy;
pub mod pretrain;
pub mod replay;
pub mod retrace;

use std::collections::VecDeque;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{LagrangeConfig, LagrangeState, SnapshotSummary};
use crate::checkpoint::{Checkpoint, RngState};
use crate::data::{Dataset, SplitKind};
use crate::env::{ActionId, BudgetSpec, Env, EnvError, LossMatrix, Mdp};
use crate::net::{clip_and_step, l2_norm, soft_update, AdamState, Architecture, LrSchedule, NetError, QNetwork};

pub use evaluate::{evaluate, Evaluation};
pub use policy::{behavior_policy, greedy_action, target_policy_probs, LinearSchedule};
pub use pretrain::{sample_mask, train_classifier, ClassifierTraining, MaskSource};
pub use replay::{Episode, ReplayBuffer, Transition};
pub use retrace::{retrace_targets, RetraceParams, RetraceStep};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("empty sample split")]
    EmptySplit,
    #[error("corrupt transition: {0}")]
    CorruptTransition(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("observer failed: {0}")]
    Observer(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Training hyperparameters. Derived quantities (step counts, schedule
/// lengths) are stored resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub ep_len: u64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub n_envs: usize,
    pub max_steps: u64,
    pub gamma: f64,
    pub retrace_lambda: f64,
    /// Target network update factor.
    pub rho: f64,
    /// Minimum transitions per batch; whole episodes are sampled.
    pub batch_size: usize,
    /// Episodes held in replay.
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eta_start: f64,
    pub eta_end: f64,
    pub eps_steps: u64,
    pub lr_pretrain: f64,
    pub lr_start: f64,
    pub lr_min: f64,
    pub lr_scale: f64,
    pub lr_period: u64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub grad_clip: f64,
    /// Replay fill (fraction of capacity) by a random agent before learning.
    pub warmup_fraction: f64,
    /// Validation snapshot period in steps.
    pub eval_every: u64,
    pub clip_targets: bool,
    pub lagrange: LagrangeConfig,
    /// Decay the lambda learning rate with the network's schedule.
    pub lambda_lr_decay: bool,
    /// Stop early once the lambda gradient changed sign this many times
    /// within the detector window (average-target mode only).
    pub stop_on_oscillation: Option<usize>,
}

impl TrainConfig {
    /// Defaults with every ep_len-derived value resolved.
    pub fn for_ep_len(ep_len: u64, hidden_width: usize) -> Self {
        let ep_len = ep_len.max(1);
        Self {
            seed: 0,
            ep_len,
            hidden_width,
            hidden_layers: 3,
            n_envs: 1000,
            max_steps: 100 * ep_len,
            gamma: 1.0,
            retrace_lambda: 1.0,
            rho: 0.1,
            batch_size: 128,
            replay_capacity: 40_000,
            eps_start: 1.0,
            eps_end: 0.1,
            eta_start: 0.5,
            eta_end: 0.0,
            eps_steps: 2 * ep_len,
            lr_pretrain: 1e-3,
            lr_start: 5e-4,
            lr_min: 5e-7,
            lr_scale: 0.5,
            // ten halvings take lr_start to lr_min by the end of max_steps
            lr_period: 10 * ep_len,
            pretrain_steps: (ep_len / 2) as usize,
            pretrain_batch: 128,
            grad_clip: 1.0,
            warmup_fraction: 0.01,
            eval_every: (ep_len / 10).max(1),
            clip_targets: true,
            lagrange: LagrangeConfig::default(),
            lambda_lr_decay: true,
            stop_on_oscillation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errors.push(msg.to_string());
            }
        };
        need(self.hidden_width > 0, "hidden_width must be positive");
        need(self.n_envs > 0, "n_envs must be positive");
        need(self.batch_size > 0, "batch_size must be positive");
        need(self.replay_capacity > 0, "replay_capacity must be positive");
        need(self.rho > 0.0 && self.rho <= 1.0, "rho must be in (0, 1]");
        need((0.0..=1.0).contains(&self.gamma), "gamma must be in [0, 1]");
        need((0.0..=1.0).contains(&self.retrace_lambda), "retrace_lambda must be in [0, 1]");
        for (v, name) in [
            (self.eps_start, "eps_start"),
            (self.eps_end, "eps_end"),
            (self.eta_start, "eta_start"),
            (self.eta_end, "eta_end"),
        ] {
            need((0.0..=1.0).contains(&v), &format!("{name} must be in [0, 1]"));
        }
        need(self.lr_start > 0.0 && self.lr_min > 0.0, "learning rates must be positive");
        need(self.lr_scale > 0.0 && self.lr_scale <= 1.0, "lr_scale must be in (0, 1]");
        need(self.lr_period > 0, "lr_period must be positive");
        need(self.grad_clip > 0.0, "grad_clip must be positive");
        need(self.eval_every > 0, "eval_every must be positive");
        need(
            (0.0..=1.0).contains(&self.warmup_fraction),
            "warmup_fraction must be in [0, 1]",
        );
        need(self.lagrange.lr > 0.0, "lagrange.lr must be positive");
        need(
            (0.0..1.0).contains(&self.lagrange.momentum),
            "lagrange.momentum must be in [0, 1)",
        );
        if errors.is_empty() {
            Ok(())
        } else {
            Err(AgentError::InvalidConfig(errors.join("; ")))
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            start: self.lr_start,
            min: self.lr_min,
            scale: self.lr_scale,
            period: self.lr_period,
        }
    }

    pub fn epsilon(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.eps_start,
            end: self.eps_end,
            steps: self.eps_steps,
        }
    }

    pub fn eta(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.eta_start,
            end: self.eta_end,
            steps: self.eps_steps,
        }
    }

    pub fn retrace(&self) -> RetraceParams {
        RetraceParams {
            gamma: self.gamma,
            trace_lambda: self.retrace_lambda,
            clip: self.clip_targets,
        }
    }

    pub fn architecture(&self, data: &Dataset) -> Architecture {
        Architecture {
            n_inputs: 2 * data.n_features(),
            hidden: vec![self.hidden_width; self.hidden_layers],
            n_actions: data.n_actions(),
        }
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub lambda: f64,
    pub train_cost: f64,
    pub val_cost: f64,
    pub val_accuracy: f64,
    pub loss: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub lr: f64,
}

/// Hook called at every validation snapshot. `selected` is true when this
/// snapshot is now the run's best model under the selection rule.
pub trait TrainObserver {
    fn on_snapshot(&mut self, _row: &MetricsRow, _trainer: &Trainer<'_>, _selected: bool) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// The model kept as "best on validation".
#[derive(Debug, Clone)]
pub struct SelectedModel {
    pub net: QNetwork,
    pub summary: SnapshotSummary,
    /// False in average-target mode when no snapshot met the budget.
    pub feasible: bool,
}

/// Incremental version of the per-mode selection rule:
/// - average target: most accurate snapshot within budget, else cheapest;
/// - hard budget: most accurate;
/// - fixed lambda: highest `accuracy - lambda * cost`.
///
/// Ties go to the later snapshot.
#[derive(Debug, Clone)]
struct BestTracker {
    budget: BudgetSpec,
    best: Option<(f64, SelectedModel)>,
    cheapest: Option<SelectedModel>,
}

impl BestTracker {
    fn new(budget: BudgetSpec) -> Self {
        Self {
            budget,
            best: None,
            cheapest: None,
        }
    }

    /// Returns true when the snapshot becomes the current selection.
    fn offer(&mut self, summary: SnapshotSummary, net: &QNetwork) -> bool {
        let (feasible, score) = match self.budget {
            BudgetSpec::AverageTarget { b } => (summary.val_cost <= b, summary.val_accuracy),
            BudgetSpec::Hard { .. } => (true, summary.val_accuracy),
            BudgetSpec::LambdaFixed { lambda } => (true, summary.val_accuracy - lambda * summary.val_cost),
        };
        let model = || SelectedModel {
            net: net.clone(),
            summary,
            feasible: true,
        };
        let mut selected = false;
        if feasible && self.best.as_ref().map_or(true, |(s, _)| score >= *s) {
            self.best = Some((score, model()));
            selected = true;
        }
        if self.cheapest.as_ref().map_or(true, |c| summary.val_cost < c.summary.val_cost) {
            self.cheapest = Some(SelectedModel {
                feasible: false,
                ..model()
            });
            selected |= self.best.is_none();
        }
        selected
    }

    fn into_selected(self) -> Option<SelectedModel> {
        self.best.map(|(_, m)| m).or(self.cheapest)
    }
}

/// Everything produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_net: QNetwork,
    pub best: SelectedModel,
    pub metrics: Vec<MetricsRow>,
    pub snapshots: Vec<SnapshotSummary>,
    pub steps: u64,
    pub lambda: f64,
    pub stopped_on_oscillation: bool,
    pub checkpoint: Checkpoint,
}

/// Training state of one run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    budget: BudgetSpec,
    online: QNetwork,
    target: QNetwork,
    adam: AdamState,
    replay: ReplayBuffer,
    lagrange: Option<LagrangeState>,
    rng: ChaCha8Rng,
    envs: Vec<Env<'a>>,
    pending: Vec<Vec<Transition>>,
    current: Vec<Vec<f64>>,
    recent_costs: VecDeque<f64>,
    step: u64,
    last_loss: f64,
}

/// Mean feature cost, or 1 when every feature is free.
fn cost_unit(data: &Dataset) -> f64 {
    let c = data.mean_cost();
    if c > 0.0 {
        c
    } else {
        1.0
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Trainer<'a> {
    /// Initializes the networks, pretrains the classifier outputs, and fills
    /// the replay buffer with a random agent.
    pub fn new(cfg: TrainConfig, data: &'a Dataset, budget: BudgetSpec) -> Result<Self> {
        cfg.validate()?;
        budget.validate()?;
        let rows = data.rows(SplitKind::Train);
        if rows.is_empty() {
            return Err(AgentError::EmptySplit);
        }
        let mut init_rng = stream_rng(cfg.seed, 1);
        let mut online = QNetwork::new(cfg.architecture(data), &mut init_rng);
        let loss = LossMatrix::binary(data.n_classes());
        let pretrain = ClassifierTraining {
            steps: cfg.pretrain_steps,
            batch_size: cfg.pretrain_batch,
            lr: cfg.lr_pretrain,
            grad_clip: cfg.grad_clip,
            respect_missing: true,
        };
        train_classifier(&mut online, data, rows, &loss, &MaskSource::Random, &pretrain, &mut init_rng)?;
        let target = online.clone();

        let mdp = Mdp::new(data, budget, true)?;
        let mut envs = Vec::with_capacity(cfg.n_envs);
        let mut current = Vec::with_capacity(cfg.n_envs);
        for i in 0..cfg.n_envs {
            let mut env = Env::training(mdp.clone(), rows, cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64))?;
            current.push(env.reset().encode());
            envs.push(env);
        }
        let lagrange = match budget {
            BudgetSpec::AverageTarget { b } => Some(LagrangeState::new(b, &cfg.lagrange, cost_unit(data))),
            _ => None,
        };
        let mut trainer = Self {
            adam: AdamState::new(online.n_params()),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng: stream_rng(cfg.seed, 2),
            pending: vec![Vec::new(); cfg.n_envs],
            recent_costs: VecDeque::new(),
            step: 0,
            last_loss: 0.0,
            cfg,
            data,
            budget,
            online,
            target,
            lagrange,
            envs,
            current,
        };
        trainer.warm_up()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lambda(&self) -> f64 {
        match (&self.lagrange, self.budget) {
            (Some(l), _) => l.lambda,
            (None, BudgetSpec::LambdaFixed { lambda }) => lambda,
            _ => 0.0,
        }
    }

    pub fn lagrange(&self) -> Option<&LagrangeState> {
        self.lagrange.as_ref()
    }

    fn warm_up(&mut self) -> Result<()> {
        let episodes = ((self.cfg.warmup_fraction * self.cfg.replay_capacity as f64).ceil() as usize)
            .clamp(1, self.cfg.replay_capacity);
        while self.replay.len() < episodes || self.replay.transitions() < self.cfg.batch_size.min(self.max_transitions()) {
            self.act(1.0)?;
        }
        Ok(())
    }

    fn max_transitions(&self) -> usize {
        self.cfg.replay_capacity * (self.data.n_features() + 1)
    }

    /// Advances every environment by one ε-greedy action.
    fn act(&mut self, epsilon: f64) -> Result<()> {
        let width = 2 * self.data.n_features();
        let mut obs = Array2::zeros((self.envs.len(), width));
        for (i, o) in self.current.iter().enumerate() {
            obs.row_mut(i).as_slice_mut().unwrap().copy_from_slice(o);
        }
        let q = if epsilon >= 1.0 {
            Array2::zeros((self.envs.len(), self.data.n_actions()))
        } else {
            self.online.forward(obs.view())?
        };
        for (i, env) in self.envs.iter_mut().enumerate() {
            let legal = env.legal_actions()?;
            let (a, mu) = behavior_policy(q.row(i).as_slice().unwrap(), &legal, epsilon, &mut self.rng);
            let result = env.step(ActionId(a))?;
            let obs = std::mem::take(&mut self.current[i]);
            self.pending[i].push(Transition {
                obs,
                legal,
                action: a,
                cost: result.cost,
                loss: result.loss,
                mu,
            });
            match result.observation {
                Some(next) => self.current[i] = next.encode(),
                None => {
                    let episode = Episode {
                        steps: std::mem::take(&mut self.pending[i]),
                    };
                    let cost = episode.cost();
                    if let Some(l) = self.lagrange.as_mut() {
                        l.record_cost(cost);
                    }
                    if self.recent_costs.len() == 1000 {
                        self.recent_costs.pop_front();
                    }
                    self.recent_costs.push_back(cost);
                    self.replay.push(episode);
                    self.current[i] = env.reset().encode();
                }
            }
        }
        Ok(())
    }

    /// Mean cost of recently completed training episodes.
    pub fn train_cost(&self) -> f64 {
        if self.recent_costs.is_empty() {
            0.0
        } else {
            self.recent_costs.iter().sum::<f64>() / self.recent_costs.len() as f64
        }
    }

    /// One gradient step on a replayed batch. Returns the batch loss.
    fn learn(&mut self, eta: f64, lr: f64) -> Result<f64> {
        let n = self.data.n_features();
        let n_actions = self.data.n_actions();
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng);
        let total: usize = batch.iter().map(|e| e.len()).sum();
        let mut obs = Array2::zeros((total, 2 * n));
        let mut actions = Vec::with_capacity(total);
        let mut row = 0;
        for e in &batch {
            for t in &e.steps {
                obs.row_mut(row).as_slice_mut().unwrap().copy_from_slice(&t.obs);
                actions.push(t.action);
                row += 1;
            }
        }
        let cache = self.online.forward_cached(obs.view())?;
        let q_target = self.target.forward(obs.view())?;
        let scale = self.budget.cost_scale(self.lagrange.as_ref().map_or(0.0, |l| l.lambda));
        let mut pi = vec![0.0; total * n_actions];
        let mut row = 0;
        for e in &batch {
            for t in &e.steps {
                policy::target_policy_into(
                    cache.q.row(row).as_slice().unwrap(),
                    &t.legal,
                    eta,
                    &mut pi[row * n_actions..(row + 1) * n_actions],
                );
                row += 1;
            }
        }
        let mut targets = Vec::with_capacity(total);
        let mut start = 0;
        let params = self.cfg.retrace();
        for e in &batch {
            let steps: Vec<RetraceStep<'_>> = e
                .steps
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let r = start + k;
                    RetraceStep {
                        reward: t.reward(scale),
                        action: t.action,
                        mu: t.mu,
                        pi: &pi[r * n_actions..(r + 1) * n_actions],
                        q_target: q_target.row(r).to_slice().unwrap(),
                    }
                })
                .collect();
            targets.extend(retrace_targets(&steps, params)?);
            start += e.len();
        }
        let (loss, mut grad) = self.online.backward(&cache, &actions, &targets)?;
        if !loss.is_finite() {
            return Err(AgentError::Diverged {
                step: self.step,
                detail: format!(
                    "loss {loss}, lambda {}, gradient norm {}, batch of {total} transitions",
                    self.lambda(),
                    l2_norm(&grad)
                ),
            });
        }
        clip_and_step(&mut self.adam, self.online.params_mut(), &mut grad, self.cfg.grad_clip, lr).map_err(|e| {
            match e {
                NetError::NonFiniteGradient { index, step } => AgentError::Diverged {
                    step: self.step,
                    detail: format!("non-finite gradient at parameter {index} (optimizer step {step}), loss {loss}"),
                },
                other => other.into(),
            }
        })?;
        soft_update(&mut self.target, &self.online, self.cfg.rho)?;
        Ok(loss)
    }

    /// One full training step: act, update lambda, learn.
    pub fn train_step(&mut self) -> Result<f64> {
        let epsilon = self.cfg.epsilon().at(self.step);
        let eta = self.cfg.eta().at(self.step);
        let schedule = self.cfg.lr_schedule();
        let lr = schedule.at(self.step);
        self.act(epsilon)?;
        if let Some(l) = self.lagrange.as_mut() {
            l.lambda_step(if self.cfg.lambda_lr_decay { schedule.relative(self.step) } else { 1.0 });
            let lambda = l.lambda;
            self.envs.iter_mut().for_each(|e| e.set_lambda(lambda));
        }
        self.last_loss = self.learn(eta, lr)?;
        self.step += 1;
        Ok(self.last_loss)
    }

    /// Greedy evaluation of the online network on the validation split.
    pub fn validate(&self) -> Result<Evaluation> {
        let rows = self.data.rows(SplitKind::Val);
        let rows = if rows.is_empty() { self.data.rows(SplitKind::Train) } else { rows };
        evaluate(&self.online, self.data, rows, self.budget)
    }

    fn metrics_row(&self, val: &Evaluation) -> MetricsRow {
        MetricsRow {
            step: self.step,
            lambda: self.lambda(),
            train_cost: self.train_cost(),
            val_cost: val.mean_cost,
            val_accuracy: val.accuracy,
            loss: self.last_loss,
            epsilon: self.cfg.epsilon().at(self.step),
            eta: self.cfg.eta().at(self.step),
            lr: self.cfg.lr_schedule().at(self.step),
        }
    }

    /// Serializable state of the run.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.online.architecture().clone(),
            online: self.online.params().to_vec(),
            target: self.target.params().to_vec(),
            adam: self.adam.clone(),
            step: self.step,
            lambda: self.lambda(),
            lagrange: self.lagrange.clone(),
            rng: RngState::capture(&self.rng),
            meta: serde_json::json!({
                "budget": self.budget,
                "config": self.cfg,
            }),
        }
    }

    /// Trains until `max_steps` (or the oscillation stop), taking a
    /// validation snapshot every `eval_every` steps and at the end.
    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
        let mut tracker = BestTracker::new(self.budget);
        let mut metrics = Vec::new();
        let mut snapshots = Vec::new();
        let mut stopped = false;
        while self.step < self.cfg.max_steps {
            self.train_step()?;
            let last = self.step == self.cfg.max_steps;
            if let (Some(k), Some(l)) = (self.cfg.stop_on_oscillation, &self.lagrange) {
                if self.step >= self.cfg.eps_steps && l.oscillating(k) {
                    stopped = true;
                }
            }
            if self.step % self.cfg.eval_every == 0 || last || stopped {
                let val = self.validate()?;
                let row = self.metrics_row(&val);
                let summary = SnapshotSummary {
                    step: self.step,
                    val_cost: val.mean_cost,
                    val_accuracy: val.accuracy,
                };
                let selected = tracker.offer(summary, &self.online);
                snapshots.push(summary);
                observer.on_snapshot(&row, &self, selected)?;
                metrics.push(row);
            }
            if stopped {
                log::info!("lambda oscillation detected at step {}; stopping", self.step);
                break;
            }
        }
        if snapshots.is_empty() {
            let val = self.validate()?;
            let summary = SnapshotSummary {
                step: self.step,
                val_cost: val.mean_cost,
                val_accuracy: val.accuracy,
            };
            tracker.offer(summary, &self.online);
            snapshots.push(summary);
            metrics.push(self.metrics_row(&val));
        }
        let best = tracker.into_selected().expect("at least one snapshot");
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(),
            final_net: self.online,
            best,
            metrics,
            snapshots,
            steps: self.step,
            lambda: self.lagrange.as_ref().map_or(self.budget.cost_scale(0.0), |l| l.lambda),
            stopped_on_oscillation: stopped,
        })
    }
}

/// Convenience wrapper: build a trainer and run it.
pub fn train(cfg: TrainConfig, data: &Dataset, budget: BudgetSpec) -> Result<TrainOutcome> {
    Trainer::new(cfg, data, budget)?.run(&mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::select_feasible_best;
    use crate::data::{make_synthetic, LabelRule, SyntheticSpec};

    fn small_config(seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_ep_len(200, 16);
        cfg.seed = seed;
        cfg.n_envs = 8;
        cfg.max_steps = 60;
        cfg.eval_every = 20;
        cfg.replay_capacity = 500;
        cfg.batch_size = 32;
        cfg.pretrain_steps = 20;
        cfg
    }

    #[test]
    fn config_validation_lists_errors() {
        let mut cfg = TrainConfig::for_ep_len(100, 8);
        cfg.rho = 0.0;
        cfg.n_envs = 0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("rho") && err.contains("n_envs"), "{err}");
    }

    #[test]
    fn derived_defaults() {
        let cfg = TrainConfig::for_ep_len(1000, 128);
        assert_eq!(cfg.max_steps, 100_000);
        assert_eq!(cfg.eps_steps, 2000);
        assert_eq!(cfg.lr_period, 10_000);
        assert_eq!(cfg.pretrain_steps, 500);
        assert_eq!(cfg.rho, 0.1);
        assert_eq!(cfg.n_envs, 1000);
        assert_eq!(cfg.replay_capacity, 40_000);
    }

    #[test]
    fn warm_up_fills_replay_with_legal_actions() {
        let data = make_synthetic(&SyntheticSpec::two_informative(4, 300, LabelRule::And), 0).unwrap();
        let mut cfg = small_config(0);
        cfg.warmup_fraction = 0.2;
        let trainer = Trainer::new(cfg, &data, BudgetSpec::Hard { b: 2.0 }).unwrap();
        assert!(trainer.replay().len() >= 100);
        for i in 0..trainer.replay().len() {
            let e = trainer.replay().get(i);
            assert!(e.cost() <= 2.0);
            for t in &e.steps {
                assert!(t.legal[t.action]);
                assert!(t.mu > 0.0);
            }
            // exactly one classification, at the end
            let classify: Vec<bool> = e.steps.iter().map(|t| t.action >= 4).collect();
            assert_eq!(classify.iter().filter(|c| **c).count(), 1);
            assert!(classify[classify.len() - 1]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = make_synthetic(&SyntheticSpec::two_informative(4, 300, LabelRule::And), 0).unwrap();
        let run = || train(small_config(5), &data, BudgetSpec::LambdaFixed { lambda: 0.05 }).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.final_net.params(), b.final_net.params());
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn hard_zero_budget_never_acquires() {
        let data = make_synthetic(&SyntheticSpec::two_informative(4, 300, LabelRule::And), 0).unwrap();
        let out = train(small_config(1), &data, BudgetSpec::Hard { b: 0.0 }).unwrap();
        let ev = evaluate(&out.final_net, &data, &data.split.test, BudgetSpec::Hard { b: 0.0 }).unwrap();
        assert_eq!(ev.max_cost, 0.0);
        assert!(out.metrics.iter().all(|m| m.train_cost == 0.0));
    }

    #[test]
    fn average_target_moves_lambda() {
        let data = make_synthetic(&SyntheticSpec::gaussian_votes(4, 300, 0.5), 0).unwrap();
        let out = train(small_config(2), &data, BudgetSpec::AverageTarget { b: 0.5 }).unwrap();
        assert!(out.lambda > 0.0);
        assert_eq!(out.metrics.len(), 3);
    }

    #[test]
    fn tracker_matches_feasible_best_rule() {
        let net = QNetwork::zeros(Architecture::for_problem(1, 2, 1));
        let summaries = [(1.0, 0.7), (2.5, 0.9), (1.8, 0.8), (1.9, 0.8), (0.5, 0.6)];
        let snaps: Vec<SnapshotSummary> = summaries
            .iter()
            .enumerate()
            .map(|(i, &(c, a))| SnapshotSummary {
                step: i as u64,
                val_cost: c,
                val_accuracy: a,
            })
            .collect();
        for b in [0.1, 1.0, 2.0, 3.0] {
            let mut t = BestTracker::new(BudgetSpec::AverageTarget { b });
            snaps.iter().for_each(|s| {
                t.offer(*s, &net);
            });
            let got = t.into_selected().unwrap();
            let want = select_feasible_best(&snaps, b).unwrap();
            assert_eq!(got.summary, snaps[want.index]);
            assert_eq!(got.feasible, want.feasible);
        }
    }

    #[test]
    fn untrained_net_is_near_chance() {
        let data = make_synthetic(&SyntheticSpec::gaussian_votes(6, 2000, 0.3), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::new(Architecture::for_problem(6, 2, 32), &mut rng);
        let ev = evaluate(&net, &data, &data.split.test, BudgetSpec::LambdaFixed { lambda: 0.0 }).unwrap();
        assert!((ev.accuracy - 0.5).abs() < 0.15, "{}", ev.accuracy);
        let again = evaluate(&net, &data, &data.split.test, BudgetSpec::LambdaFixed { lambda: 0.0 }).unwrap();
        assert_eq!(ev, again);
    }
}
