//! Run configuration.
//!
//! A run is described by a TOML file plus `key=value` overrides. Resolution
//! fills every default, computes the derived schedule values and freezes the
//! result into a [`ResolvedConfig`], which is what run directories store.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs"
//! scale = "desk"
//!
//! [dataset]
//! path = "data/miniboone.csv"
//! costs = "data/miniboone-costs.csv"
//!
//! [budget]
//! mode = "lambda_fixed"
//! lambda = 0.001
//!
//! [train]
//! lr_start = 5e-4
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use cwcf::agent::TrainConfig;
use cwcf::data::{SplitFractions, SyntheticSpec};
use cwcf::env::BudgetSpec;
use cwcf::evalx::BaselineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

/// Version of the resolved snapshot layout.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("`{key}`: {message}")]
    Key { key: String, message: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
}

impl ConfigError {
    fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Key {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Compute scale of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Full defaults (1000 parallel environments).
    #[default]
    Full,
    /// 32 parallel environments, batch 128; schedules unchanged.
    Desk,
}

/// Where the samples come from and how they are corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Preset name; defaults to the file stem or generator name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub costs: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub split: SplitFractions,
    /// Seed of the split, generator and corruption; defaults to the run seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
    /// MCAR rate applied to the training (and validation) split.
    #[serde(default)]
    pub missing_rate: f64,
    /// Also corrupt the validation split.
    #[serde(default)]
    pub missing_in_val: bool,
    /// Train on mean-imputed values with every feature acquirable.
    #[serde(default)]
    pub impute_only: bool,
}

/// Grid of a sweep: budget parameters times seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    scale: Scale,
    dataset: Option<DatasetConfig>,
    budget: Option<toml::Table>,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    baseline: toml::Table,
    #[serde(default)]
    sweep: Option<SweepConfig>,
}

/// Fully resolved run description; stored as `config.json` in run directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scale: Scale,
    pub dataset: DatasetConfig,
    pub budget: BudgetSpec,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub sweep: Option<SweepConfig>,
}

/// Layer width and ep_len of the named datasets.
pub fn dataset_preset(name: &str) -> Option<(usize, u64)> {
    match name {
        "miniboone" => Some((128, 1_000)),
        "diabetes" => Some((128, 100)),
        "forest" => Some((256, 10_000)),
        _ => None,
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(text.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(text.to_string()));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    let mut path = String::new();
    for p in parts {
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(p);
        cur = match cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::key(path, "not a table")),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads `path`, applies `overrides` and resolves. Relative dataset paths
/// are taken relative to the config file.
pub fn load(path: &Path, overrides: &[String]) -> Result<ResolvedConfig> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_str(&text, overrides, base)
}

/// Resolves config text. Pure: equal inputs give equal snapshots.
pub fn resolve_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<ResolvedConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        apply_override(&mut table, &k, v)?;
    }
    let raw: RawConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    resolve(raw, base_dir)
}

fn resolve(raw: RawConfig, base_dir: &Path) -> Result<ResolvedConfig> {
    let seed = raw
        .seed
        .ok_or_else(|| ConfigError::key("seed", "required; every run must be reproducible"))?;
    let mut dataset = raw
        .dataset
        .ok_or_else(|| ConfigError::key("dataset", "missing section"))?;
    resolve_dataset(&mut dataset, seed, base_dir)?;
    let budget = resolve_budget(raw.budget)?;

    let name = dataset.name.clone().unwrap_or_default();
    let preset = dataset_preset(&name);
    let mut overrides = raw.train;
    let ep_len = match overrides.remove("ep_len") {
        Some(v) => positive_int(&v, "train.ep_len")?,
        None => preset
            .map(|p| p.1)
            .ok_or_else(|| ConfigError::key("train.ep_len", format!("required for dataset `{name}` (no preset)")))?,
    };
    let width = match overrides.remove("hidden_width") {
        Some(v) => positive_int(&v, "train.hidden_width")? as usize,
        None => preset.map(|p| p.0).ok_or_else(|| {
            ConfigError::key("train.hidden_width", format!("required for dataset `{name}` (no preset)"))
        })?,
    };
    if overrides.contains_key("seed") {
        return Err(ConfigError::key("train.seed", "set the top-level `seed` instead"));
    }
    let mut train = TrainConfig::for_ep_len(ep_len, width);
    train.seed = seed;
    if raw.scale == Scale::Desk {
        train.n_envs = 32;
        train.batch_size = 128;
    }
    let train: TrainConfig = merge("train", &train, overrides)?;
    train
        .validate()
        .map_err(|e| ConfigError::key("train", e.to_string()))?;

    let baseline_overrides = raw.baseline;
    if baseline_overrides.contains_key("seed") {
        return Err(ConfigError::key("baseline.seed", "set the top-level `seed` instead"));
    }
    let baseline: BaselineConfig = merge(
        "baseline",
        &BaselineConfig {
            seed,
            ..BaselineConfig::default()
        },
        baseline_overrides,
    )?;

    let output_dir = raw.output_dir.unwrap_or_else(|| PathBuf::from("runs"));
    Ok(ResolvedConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        seed,
        output_dir: absolutize(base_dir, &output_dir),
        scale: raw.scale,
        dataset,
        budget,
        train,
        baseline,
        sweep: raw.sweep,
    })
}

fn resolve_dataset(d: &mut DatasetConfig, seed: u64, base_dir: &Path) -> Result<()> {
    match (&d.path, &d.synthetic) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::key("dataset", "give either `path` or `synthetic`, not both"))
        }
        (None, None) => return Err(ConfigError::key("dataset", "needs `path` or `synthetic`")),
        _ => {}
    }
    if d.synthetic.is_some() && d.costs.is_some() {
        return Err(ConfigError::key("dataset.costs", "synthetic costs go in `dataset.synthetic.costs`"));
    }
    if !(0.0..=1.0).contains(&d.missing_rate) {
        return Err(ConfigError::key("dataset.missing_rate", "must lie in [0, 1]"));
    }
    let s = d.split;
    if [s.train, s.val, s.test].iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(ConfigError::key("dataset.split", "fractions must be positive"));
    }
    d.path = d.path.as_ref().map(|p| absolutize(base_dir, p));
    d.costs = d.costs.as_ref().map(|p| absolutize(base_dir, p));
    if let Some(spec) = &mut d.synthetic {
        spec.split = d.split;
    }
    if d.name.is_none() {
        d.name = Some(match (&d.path, &d.synthetic) {
            (Some(p), _) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            (_, Some(spec)) => spec.generator.clone(),
            _ => unreachable!(),
        });
    }
    d.split_seed.get_or_insert(seed);
    Ok(())
}

fn resolve_budget(table: Option<toml::Table>) -> Result<BudgetSpec> {
    let table = table.ok_or_else(|| ConfigError::key("budget", "missing section"))?;
    let mode = table
        .get("mode")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ConfigError::key("budget.mode", "required: lambda_fixed, average_target or hard"))?;
    let param = match mode {
        "lambda_fixed" => "lambda",
        "average_target" | "hard" => "b",
        other => return Err(ConfigError::key("budget.mode", format!("unknown mode `{other}`"))),
    };
    for k in table.keys() {
        if k != "mode" && k != param {
            return Err(ConfigError::key(format!("budget.{k}"), format!("not a parameter of mode `{mode}`")));
        }
    }
    let value = match table.get(param) {
        Some(toml::Value::Float(f)) => *f,
        Some(toml::Value::Integer(i)) => *i as f64,
        Some(_) => return Err(ConfigError::key(format!("budget.{param}"), "must be a number")),
        None => return Err(ConfigError::key(format!("budget.{param}"), "required")),
    };
    let spec = budget_with(mode, value);
    spec.validate()
        .map_err(|e| ConfigError::key(format!("budget.{param}"), e.to_string()))?;
    Ok(spec)
}

fn budget_with(mode: &str, value: f64) -> BudgetSpec {
    match mode {
        "lambda_fixed" => BudgetSpec::LambdaFixed { lambda: value },
        "average_target" => BudgetSpec::AverageTarget { b: value },
        _ => BudgetSpec::Hard { b: value },
    }
}

/// Same mode as `spec` with its parameter replaced.
pub fn with_parameter(spec: BudgetSpec, value: f64) -> BudgetSpec {
    budget_with(spec.mode_name(), value)
}

fn positive_int(v: &toml::Value, key: &str) -> Result<u64> {
    match v.as_integer() {
        Some(i) if i > 0 => Ok(i as u64),
        _ => Err(ConfigError::key(key, "must be a positive integer")),
    }
}

/// Overlays `overrides` on the JSON form of `defaults`, rejecting unknown keys.
fn merge<T>(section: &str, defaults: &T, overrides: toml::Table) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut json = serde_json::to_value(defaults).map_err(|e| ConfigError::key(section, e.to_string()))?;
    overlay(section, &mut json, overrides)?;
    serde_json::from_value(json).map_err(|e| ConfigError::key(section, e.to_string()))
}

fn overlay(path: &str, target: &mut Json, overrides: toml::Table) -> Result<()> {
    let obj = target
        .as_object_mut()
        .ok_or_else(|| ConfigError::key(path, "not a table"))?;
    for (k, v) in overrides {
        let key = format!("{path}.{k}");
        let slot = obj
            .get_mut(&k)
            .ok_or_else(|| ConfigError::key(&key, "unknown key"))?;
        match v {
            toml::Value::Table(t) if slot.is_object() => overlay(&key, slot, t)?,
            other => {
                let new = serde_json::to_value(&other).map_err(|e| ConfigError::key(&key, e.to_string()))?;
                if !compatible(slot, &new) {
                    return Err(ConfigError::key(&key, format!("expected {}, got {new}", kind(slot))));
                }
                *slot = new;
            }
        }
    }
    Ok(())
}

fn compatible(old: &Json, new: &Json) -> bool {
    match (old, new) {
        (Json::Null, _) => true,
        (Json::Number(o), Json::Number(n)) => !(o.is_u64() && !n.is_u64()) && !(o.is_i64() && n.is_f64()),
        (Json::Bool(_), Json::Bool(_)) | (Json::String(_), Json::String(_)) | (Json::Array(_), Json::Array(_)) => true,
        _ => false,
    }
}

fn kind(v: &Json) -> &'static str {
    match v {
        Json::Number(n) if n.is_u64() || n.is_i64() => "an integer",
        Json::Number(_) => "a number",
        Json::Bool(_) => "a boolean",
        Json::String(_) => "a string",
        Json::Array(_) => "an array",
        Json::Object(_) => "a table",
        Json::Null => "a value",
    }
}

fn absolutize(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
