//! Subcommand implementations.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/config.json        resolved configuration
//! <run>/dataset.json       dataset snapshot (normalized, split, corrupted)
//! <run>/metrics.csv        one row per validation snapshot
//! <run>/checkpoints/latest.ckpt, best.ckpt, final.ckpt
//! <run>/report.json        RunReport
//! ```
//!
//! `metrics.csv` columns (schema [`METRICS_SCHEMA_VERSION`]):
//! `step,lambda,train_cost,val_cost,val_accuracy,loss,epsilon,eta,lr`.

use std::fs;
use std::path::{Path, PathBuf};

use cwcf::agent::{evaluate, AgentError, Evaluation, MetricsRow, TrainObserver, Trainer};
use cwcf::checkpoint::{Checkpoint, CheckpointError};
use cwcf::data::{load_dataset, make_synthetic, DataError, Dataset, SplitKind};
use cwcf::env::BudgetSpec;
use cwcf::evalx::{baseline_curve, prior_accuracy, rfe_order, CurveReport, EvalError, EvalPoint};
use cwcf::oracle::{policy_value, solve_exact, OracleError, PolicyValue};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{with_parameter, ConfigError, ResolvedConfig};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const RUN_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("run directory {0} already holds a run")]
    RunExists(String),
    #[error("{0}")]
    Usage(String),
    #[error("all {0} sweep runs failed")]
    SweepFailed(usize),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Builds the dataset described by `cfg`, including MCAR corruption.
pub fn load_data(cfg: &ResolvedConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let seed = d.split_seed.unwrap_or(cfg.seed);
    let mut data = match (&d.path, &d.synthetic) {
        (Some(path), _) => load_dataset(path, d.costs.as_deref(), d.split, seed)?,
        (_, Some(spec)) => make_synthetic(spec, seed)?,
        _ => return Err(ConfigError::Key {
            key: "dataset".into(),
            message: "needs `path` or `synthetic`".into(),
        }
        .into()),
    };
    if let Some(name) = &d.name {
        data.name = name.clone();
    }
    if d.missing_rate > 0.0 {
        data = data.mcar_drop(d.missing_rate, seed, d.missing_in_val)?;
    }
    if d.impute_only {
        data = data.mean_imputed();
    }
    Ok(data)
}

/// Greedy evaluation of one model on validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub step: u64,
    pub val: Evaluation,
    pub test: Evaluation,
}

/// Summary written to `report.json` by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run_id: String,
    pub dataset: String,
    pub budget: BudgetSpec,
    pub steps: u64,
    pub final_lambda: f64,
    pub stopped_on_oscillation: bool,
    /// False when an average-target run never met its budget on validation.
    pub feasible: bool,
    pub best: SplitScores,
    pub last: SplitScores,
    pub prior_val_accuracy: f64,
    pub prior_test_accuracy: f64,
    pub max_cost: f64,
}

impl RunReport {
    /// The selected model as a (validation, test) curve point.
    pub fn points(&self) -> (EvalPoint, EvalPoint) {
        let p = |split, e: &Evaluation| EvalPoint {
            cost: e.mean_cost,
            accuracy: e.accuracy,
            split,
            run_id: self.run_id.clone(),
            parameter: self.budget.parameter(),
        };
        (p(SplitKind::Val, &self.best.val), p(SplitKind::Test, &self.best.test))
    }
}

struct RunObserver {
    metrics: csv::Writer<fs::File>,
    metrics_path: PathBuf,
    ckpt_dir: PathBuf,
}

impl RunObserver {
    fn save(&self, ckpt: &Checkpoint, name: &str) -> std::result::Result<(), CheckpointError> {
        let tmp = self.ckpt_dir.join(format!("{name}.tmp"));
        ckpt.save(&tmp)?;
        fs::rename(&tmp, self.ckpt_dir.join(name)).map_err(CheckpointError::from)
    }
}

impl TrainObserver for RunObserver {
    fn on_snapshot(&mut self, row: &MetricsRow, trainer: &Trainer<'_>, selected: bool) -> cwcf::agent::Result<()> {
        let fail = |e: String| AgentError::Observer(e);
        self.metrics
            .serialize(row)
            .and_then(|_| self.metrics.flush().map_err(csv::Error::from))
            .map_err(|e| fail(format!("{}: {e}", self.metrics_path.display())))?;
        let ckpt = trainer.checkpoint();
        self.save(&ckpt, "latest.ckpt").map_err(|e| fail(e.to_string()))?;
        if selected {
            self.save(&ckpt, "best.ckpt").map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }
}

fn run_id_for(cfg: &ResolvedConfig) -> String {
    format!(
        "{}-{}-{}-s{}",
        cfg.dataset.name.as_deref().unwrap_or("data"),
        cfg.budget.mode_name(),
        cfg.budget.parameter(),
        cfg.seed
    )
}

fn scores(net: &cwcf::net::QNetwork, data: &Dataset, budget: BudgetSpec, step: u64) -> Result<SplitScores> {
    Ok(SplitScores {
        step,
        val: evaluate(net, data, data.rows(SplitKind::Val), budget)?,
        test: evaluate(net, data, data.rows(SplitKind::Test), budget)?,
    })
}

/// `train`: one run into `run_dir` (default `<output_dir>/<run id>`).
pub fn train(cfg: &ResolvedConfig, run_dir: Option<&Path>) -> Result<(PathBuf, RunReport)> {
    let data = load_data(cfg)?;
    train_on(cfg, &data, run_dir)
}

fn train_on(cfg: &ResolvedConfig, data: &Dataset, run_dir: Option<&Path>) -> Result<(PathBuf, RunReport)> {
    let run_id = run_id_for(cfg);
    let dir = run_dir.map_or_else(|| cfg.output_dir.join(&run_id), Path::to_path_buf);
    if dir.join("config.json").exists() {
        return Err(CliError::RunExists(dir.display().to_string()));
    }
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    write_json(&dir.join("config.json"), cfg)?;
    data.save(&dir.join("dataset.json"))?;

    let metrics_path = dir.join("metrics.csv");
    let metrics = csv::Writer::from_path(&metrics_path).map_err(|e| CliError::Format {
        path: metrics_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut observer = RunObserver {
        metrics,
        metrics_path,
        ckpt_dir,
    };
    log::info!("run {run_id}: {} steps", cfg.train.max_steps);
    let trainer = Trainer::new(cfg.train.clone(), data, cfg.budget)?;
    let outcome = trainer.run(&mut observer)?;
    observer.save(&outcome.checkpoint, "final.ckpt")?;

    let report = RunReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        run_id,
        dataset: data.name.clone(),
        budget: cfg.budget,
        steps: outcome.steps,
        final_lambda: outcome.lambda,
        stopped_on_oscillation: outcome.stopped_on_oscillation,
        feasible: outcome.best.feasible,
        best: scores(&outcome.best.net, data, cfg.budget, outcome.best.summary.step)?,
        last: scores(&outcome.final_net, data, cfg.budget, outcome.steps)?,
        prior_val_accuracy: prior_accuracy(data, data.rows(SplitKind::Val)),
        prior_test_accuracy: prior_accuracy(data, data.rows(SplitKind::Test)),
        max_cost: data.total_cost(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok((dir, report))
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub run_id: String,
    pub checkpoint: String,
    pub step: u64,
    pub split: SplitKind,
    pub budget: BudgetSpec,
    pub cost: f64,
    pub accuracy: f64,
    pub max_sample_cost: f64,
    pub mean_reward: f64,
    pub mean_features: f64,
    pub n_samples: usize,
}

/// `eval`: greedy evaluation of a stored checkpoint (`best`, `final`,
/// `latest` or a file path) using only the run directory.
pub fn eval(run_dir: &Path, checkpoint: &str, split: SplitKind) -> Result<EvalReport> {
    let cfg: ResolvedConfig = read_json(&run_dir.join("config.json"))?;
    let data = Dataset::load_snapshot(&run_dir.join("dataset.json"))?;
    let path = match checkpoint {
        "best" | "final" | "latest" => run_dir.join("checkpoints").join(format!("{checkpoint}.ckpt")),
        other => PathBuf::from(other),
    };
    let ckpt = Checkpoint::load(&path)?;
    let net = ckpt.online_net()?;
    let e = evaluate(&net, &data, data.rows(split), cfg.budget)?;
    Ok(EvalReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        run_id: run_id_for(&cfg),
        checkpoint: checkpoint.to_string(),
        step: ckpt.step,
        split,
        budget: cfg.budget,
        cost: e.mean_cost,
        accuracy: e.accuracy,
        max_sample_cost: e.max_cost,
        mean_reward: e.mean_reward,
        mean_features: e.mean_features,
        n_samples: e.n_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run_id: String,
    pub error: String,
}

/// Output of `sweep` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub runs: Vec<PathBuf>,
    pub failed: Vec<FailedRun>,
    pub curve: CurveReport,
}

/// `sweep`: one run per (budget parameter, seed), then the combined curve.
/// The dataset (split and corruption) is shared by every run. Failed runs
/// are recorded and the curve is built from the rest.
pub fn sweep(cfg: &ResolvedConfig, values: &[f64], seeds: &[u64]) -> Result<(PathBuf, SweepReport)> {
    if values.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("sweep grid is empty: give parameter values and seeds".into()));
    }
    for &v in values {
        with_parameter(cfg.budget, v)
            .validate()
            .map_err(|e| CliError::Usage(format!("sweep value {v}: {e}")))?;
    }
    let data = load_data(cfg)?;
    let sweep_dir = cfg.output_dir.join(format!(
        "sweep-{}-{}",
        data.name,
        cfg.budget.mode_name()
    ));
    fs::create_dir_all(&sweep_dir).map_err(io_err(&sweep_dir))?;
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    let mut pairs = Vec::new();
    for &v in values {
        for &seed in seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.budget = with_parameter(cfg.budget, v);
            run_cfg.seed = seed;
            run_cfg.train.seed = seed;
            run_cfg.sweep = None;
            let run_id = run_id_for(&run_cfg);
            match train_on(&run_cfg, &data, Some(&sweep_dir.join(&run_id))) {
                Ok((dir, report)) => {
                    pairs.push(report.points());
                    runs.push(dir);
                }
                Err(e) => {
                    log::warn!("run {run_id} failed: {e}");
                    failed.push(FailedRun {
                        run_id,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::SweepFailed(failed.len()));
    }
    let report = SweepReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        runs,
        failed,
        curve: CurveReport::new("rl", &data, &pairs)?,
    };
    let path = sweep_dir.join("sweep.json");
    write_json(&path, &report)?;
    Ok((path, report))
}

/// `report`: combined curve over finished run directories.
pub fn report(run_dirs: &[PathBuf]) -> Result<SweepReport> {
    let first = run_dirs
        .first()
        .ok_or_else(|| CliError::Usage("no run directories given".into()))?;
    let data = Dataset::load_snapshot(&first.join("dataset.json"))?;
    let mut pairs = Vec::new();
    for dir in run_dirs {
        let r: RunReport = read_json(&dir.join("report.json"))?;
        if r.dataset != data.name {
            return Err(CliError::Usage(format!(
                "{} uses dataset `{}`, expected `{}`",
                dir.display(),
                r.dataset,
                data.name
            )));
        }
        pairs.push(r.points());
    }
    Ok(SweepReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        runs: run_dirs.to_vec(),
        failed: Vec::new(),
        curve: CurveReport::new("rl", &data, &pairs)?,
    })
}

/// Output of `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub order: Vec<usize>,
    pub curve: CurveReport,
}

/// `baseline`: RFE order and one classifier per budget prefix.
pub fn baseline(cfg: &ResolvedConfig, budgets: &[f64]) -> Result<(PathBuf, BaselineReport)> {
    if budgets.is_empty() {
        return Err(CliError::Usage("no budgets given".into()));
    }
    let data = load_data(cfg)?;
    let order = rfe_order(&data, cfg.baseline.ridge_alpha)?;
    let pairs = baseline_curve(&data, &order, budgets, &cfg.baseline)?;
    let report = BaselineReport {
        curve: CurveReport::new("baseline", &data, &pairs)?,
        order,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let path = cfg.output_dir.join(format!("baseline-{}.json", data.name));
    write_json(&path, &report)?;
    Ok((path, report))
}

/// Output of `oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dataset: String,
    pub budget: BudgetSpec,
    pub split: SplitKind,
    /// Optimal expected reward per sample.
    pub value: f64,
    pub n_states: usize,
    pub optimal_policy: PolicyValue,
    pub policy: serde_json::Value,
}

/// `oracle`: exact optimum over the rows of `split`.
pub fn oracle(cfg: &ResolvedConfig, split: SplitKind) -> Result<OracleReport> {
    let data = load_data(cfg)?;
    let rows = data.rows(split);
    let solution = solve_exact(&data, rows, cfg.budget)?;
    Ok(OracleReport {
        dataset: data.name.clone(),
        budget: cfg.budget,
        split,
        value: solution.value,
        n_states: solution.n_states(),
        optimal_policy: policy_value(&solution, &data, rows, cfg.budget)?,
        policy: solution.to_json(),
    })
}
