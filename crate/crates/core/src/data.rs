//! Dataset ingestion, normalization, splitting and MCAR corruption.
//!
//! Feature values are stored already normalized with statistics computed on
//! the train split. Absent entries (`present == false`) hold 0, which after
//! normalization is the same as mean imputation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format tag written into dataset snapshots.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}, line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("empty train split")]
    EmptyTrainSplit,
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Relative sizes of the train/validation/test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    fn normalized(&self) -> Result<(f64, f64)> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DataError::Invalid(format!(
                "split fractions must be non-negative, got {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(DataError::Invalid("split fractions sum to zero".into()));
        }
        Ok((self.train / total, self.val / total))
    }
}

/// Which partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" | "validation" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(DataError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        })
    }
}

/// Sample indices of each partition, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn rows(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    /// Stratified split: each class is shuffled and cut by the fractions.
    pub fn stratified(labels: &[usize], n_classes: usize, fr: SplitFractions, seed: u64) -> Result<Self> {
        let (p_train, p_val) = fr.normalized()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = Split::default();
        for class in 0..n_classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_train = ((p_train * n as f64).round() as usize).min(n);
            let n_val = ((p_val * n as f64).round() as usize).min(n - n_train);
            split.train.extend_from_slice(&idx[..n_train]);
            split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
            split.test.extend_from_slice(&idx[n_train + n_val..]);
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

/// Per-feature normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Normalization {
    /// Mean and population std over the present entries of `rows`.
    /// Constant (or entirely absent) columns get std 1.
    pub fn fit(values: &[f64], present: &[bool], n_features: usize, rows: &[usize]) -> Self {
        let mut means = vec![0.0; n_features];
        let mut stds = vec![1.0; n_features];
        for f in 0..n_features {
            let col: Vec<f64> = rows
                .iter()
                .filter(|&&r| present[r * n_features + f])
                .map(|&r| values[r * n_features + f])
                .collect();
            if col.is_empty() {
                continue;
            }
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            means[f] = mean;
            stds[f] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { means, stds }
    }

    fn apply(&self, values: &mut [f64], present: &[bool], n_features: usize) {
        for (i, v) in values.iter_mut().enumerate() {
            let f = i % n_features;
            *v = if present[i] {
                (*v - self.means[f]) / self.stds[f]
            } else {
                0.0
            };
        }
    }
}

/// Unnormalized tabular input.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    /// Row-major, `None` marks an absent value.
    pub values: Vec<Option<f64>>,
    pub labels: Vec<String>,
}

/// A normalized classification dataset with per-feature costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    n_features: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    costs: Vec<f64>,
    present: Vec<bool>,
    pub stats: Normalization,
    pub split: Split,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    dataset: Dataset,
}

impl Dataset {
    /// Normalizes `raw` with train-split statistics and attaches costs.
    pub fn from_raw(
        name: &str,
        raw: RawTable,
        costs: Option<Vec<f64>>,
        fractions: SplitFractions,
        seed: u64,
    ) -> Result<Self> {
        let n_features = raw.feature_names.len();
        if n_features == 0 {
            return Err(DataError::Invalid("no feature columns".into()));
        }
        let n_samples = raw.labels.len();
        if raw.values.len() != n_samples * n_features {
            return Err(DataError::Invalid("value matrix shape does not match labels".into()));
        }
        let costs = costs.unwrap_or_else(|| vec![1.0; n_features]);
        validate_costs(&raw.feature_names, &costs)?;

        let (class_names, labels) = index_labels(&raw.labels);
        let n_classes = class_names.len();
        if n_classes == 0 {
            return Err(DataError::Invalid("dataset has no samples".into()));
        }
        let split = Split::stratified(&labels, n_classes, fractions, seed)?;
        if split.train.is_empty() {
            return Err(DataError::EmptyTrainSplit);
        }

        let present: Vec<bool> = raw.values.iter().map(|v| v.is_some()).collect();
        let mut features: Vec<f64> = raw.values.iter().map(|v| v.unwrap_or(0.0)).collect();
        let stats = Normalization::fit(&features, &present, n_features, &split.train);
        stats.apply(&mut features, &present, n_features);

        Ok(Self {
            name: name.to_string(),
            feature_names: raw.feature_names,
            class_names,
            n_features,
            features,
            labels,
            costs,
            present,
            stats,
            split,
            seed,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_features + self.n_classes()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn present_row(&self, i: usize) -> &[bool] {
        &self.present[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn is_present(&self, i: usize, f: usize) -> bool {
        self.present[i * self.n_features + f]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// c(F): cost of acquiring every feature.
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    pub fn mean_cost(&self) -> f64 {
        self.total_cost() / self.n_features as f64
    }

    pub fn rows(&self, kind: SplitKind) -> &[usize] {
        self.split.rows(kind)
    }

    /// Frequency of the most common class among `rows`.
    pub fn majority_rate(&self, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let counts = self.class_counts(rows);
        *counts.iter().max().unwrap() as f64 / rows.len() as f64
    }

    pub fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for &r in rows {
            counts[self.labels[r]] += 1;
        }
        counts
    }

    /// Fraction of absent entries among `rows`.
    pub fn missing_fraction(&self, rows: &[usize]) -> f64 {
        let total = rows.len() * self.n_features;
        if total == 0 {
            return 0.0;
        }
        let missing: usize = rows
            .iter()
            .map(|&r| self.present_row(r).iter().filter(|p| !**p).count())
            .sum();
        missing as f64 / total as f64
    }

    /// Re-applies normalization with the given statistics to the stored values.
    pub fn normalize_with(&self, stats: &Normalization) -> Dataset {
        let mut out = self.clone();
        stats.apply(&mut out.features, &out.present, out.n_features);
        out
    }

    /// Statistics of the stored (already normalized) train split.
    pub fn train_statistics(&self) -> Normalization {
        Normalization::fit(&self.features, &self.present, self.n_features, &self.split.train)
    }

    /// Marks each train entry (and val entries when `include_val`) absent
    /// independently with probability `rate`. Test rows stay complete.
    pub fn mcar_drop(&self, rate: f64, seed: u64, include_val: bool) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
            return Err(DataError::Invalid(format!("missing rate {rate} outside [0, 1]")));
        }
        let mut out = self.clone();
        if rate == 0.0 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = self.split.train.clone();
        if include_val {
            rows.extend_from_slice(&self.split.val);
        }
        for r in rows {
            for f in 0..self.n_features {
                if rng.gen::<f64>() < rate {
                    let k = r * self.n_features + f;
                    out.present[k] = false;
                    out.features[k] = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Copy with every entry marked present; absent values keep their
    /// imputed 0.
    pub fn mean_imputed(&self) -> Dataset {
        let mut out = self.clone();
        out.present.iter_mut().for_each(|p| *p = true);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            dataset: self.clone(),
        };
        let text = serde_json::to_string(&snap).map_err(|e| DataError::Snapshot(e.to_string()))?;
        fs::write(path, text).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_snapshot(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| DataError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(DataError::Snapshot(format!(
                "unsupported snapshot version {}",
                snap.version
            )));
        }
        Ok(snap.dataset)
    }
}

fn validate_costs(names: &[String], costs: &[f64]) -> Result<()> {
    if costs.len() != names.len() {
        return Err(DataError::Invalid(format!(
            "{} costs for {} features",
            costs.len(),
            names.len()
        )));
    }
    for (name, &c) in names.iter().zip(costs) {
        if !(c > 0.0) || !c.is_finite() {
            return Err(DataError::Invalid(format!("cost of `{name}` must be positive, got {c}")));
        }
    }
    Ok(())
}

/// Maps label strings to class indices, numerically ordered when every label
/// is an integer.
fn index_labels(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let distinct: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let mut names: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    if names.iter().all(|l| l.parse::<i64>().is_ok()) {
        names.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    let idx = labels
        .iter()
        .map(|l| names.iter().position(|n| n == l).unwrap())
        .collect();
    (names, idx)
}

/// Reads a CSV with a header row and a `label` column. Empty cells are absent.
pub fn read_csv(path: &Path) -> Result<RawTable> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&file, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&file, e))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| DataError::Parse {
            file: file.clone(),
            line: 1,
            msg: "no `label` column in header".into(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_col)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(&file, e))?;
        if record.len() != headers.len() {
            return Err(DataError::Parse {
                file,
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_col {
                if cell.is_empty() {
                    return Err(DataError::Parse {
                        file,
                        line,
                        msg: "empty label".into(),
                    });
                }
                labels.push(cell.to_string());
            } else if cell.is_empty() {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                    file: file.clone(),
                    line,
                    msg: format!("column `{}`: cannot parse `{cell}` as a number", &headers[j]),
                })?;
                values.push(Some(v));
            }
        }
    }
    Ok(RawTable {
        feature_names,
        values,
        labels,
    })
}

fn csv_error(file: &str, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: file.to_string(),
            source,
        },
        kind => DataError::Parse {
            file: file.to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a two-column `feature,cost` CSV; a header row is optional.
pub fn read_costs(path: &Path, feature_names: &[String]) -> Result<Vec<f64>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&file, e))?;
    let mut costs: Vec<Option<f64>> = vec![None; feature_names.len()];
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| csv_error(&file, e))?;
        if record.len() != 2 {
            return Err(DataError::Parse {
                file,
                line,
                msg: "expected `feature,cost`".into(),
            });
        }
        let cost: f64 = match record[1].parse() {
            Ok(c) => c,
            Err(_) if line == 1 => continue,
            Err(_) => {
                return Err(DataError::Parse {
                    file,
                    line,
                    msg: format!("cannot parse cost `{}`", &record[1]),
                })
            }
        };
        let f = feature_names
            .iter()
            .position(|n| n == &record[0])
            .ok_or_else(|| DataError::Invalid(format!("unknown feature `{}` in cost file", &record[0])))?;
        if !(cost > 0.0) {
            return Err(DataError::Invalid(format!(
                "cost of `{}` must be positive, got {cost}",
                &record[0]
            )));
        }
        costs[f] = Some(cost);
    }
    costs
        .into_iter()
        .zip(feature_names)
        .map(|(c, n)| c.ok_or_else(|| DataError::Invalid(format!("no cost for feature `{n}`"))))
        .collect()
}

/// Loads a CSV dataset (uniform cost 1 when no cost file is given).
pub fn load_dataset(
    data_path: &Path,
    costs_path: Option<&Path>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Dataset> {
    let raw = read_csv(data_path)?;
    let costs = costs_path
        .map(|p| read_costs(p, &raw.feature_names))
        .transpose()?;
    let name = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_raw(&name, raw, costs, fractions, seed)
}

/// Label rule of the `two-informative` generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    #[default]
    And,
    Xor,
}

/// Parameters of a synthetic dataset.
///
/// Generators:
/// - `two-informative`: binary features; the label is `rule(x0, x1)`, every
///   other feature is independent noise.
/// - `gaussian-votes`: balanced binary label; feature `i` is
///   `signal * (2y - 1) + N(0, 1)`, so each acquired feature adds evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: String,
    pub n_features: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub rule: LabelRule,
    #[serde(default = "default_signal")]
    pub signal: f64,
    #[serde(default)]
    pub costs: Option<Vec<f64>>,
    #[serde(default)]
    pub split: SplitFractions,
}

fn default_signal() -> f64 {
    0.6
}

impl SyntheticSpec {
    pub fn two_informative(n_features: usize, n_samples: usize, rule: LabelRule) -> Self {
        Self {
            generator: "two-informative".into(),
            n_features,
            n_samples,
            rule,
            signal: default_signal(),
            costs: None,
            split: SplitFractions::default(),
        }
    }

    pub fn gaussian_votes(n_features: usize, n_samples: usize, signal: f64) -> Self {
        Self {
            generator: "gaussian-votes".into(),
            n_features,
            n_samples,
            rule: LabelRule::default(),
            signal,
            costs: None,
            split: SplitFractions::default(),
        }
    }
}

/// Generates a synthetic dataset; identical `(spec, seed)` give identical data.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let n = spec.n_features;
    if n == 0 || spec.n_samples == 0 {
        return Err(DataError::Invalid("synthetic dataset needs features and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    match spec.generator.as_str() {
        "two-informative" => {
            if n < 2 {
                return Err(DataError::Invalid("two-informative needs at least 2 features".into()));
            }
            for _ in 0..spec.n_samples {
                let bits: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
                let y = match spec.rule {
                    LabelRule::And => bits[0] && bits[1],
                    LabelRule::Xor => bits[0] ^ bits[1],
                };
                values.extend(bits.iter().map(|&b| Some(if b { 1.0 } else { 0.0 })));
                labels.push(if y { "1" } else { "0" }.to_string());
            }
        }
        "gaussian-votes" => {
            for _ in 0..spec.n_samples {
                let y = rng.gen::<bool>();
                let sign = if y { 1.0 } else { -1.0 };
                for _ in 0..n {
                    let noise: f64 = rng.sample(StandardNormal);
                    values.push(Some(spec.signal * sign + noise));
                }
                labels.push(if y { "1" } else { "0" }.to_string());
            }
        }
        other => return Err(DataError::UnknownGenerator(other.to_string())),
    }
    let raw = RawTable {
        feature_names: (0..n).map(|i| format!("f{i}")).collect(),
        values,
        labels,
    };
    Dataset::from_raw(&spec.generator, raw, spec.costs.clone(), spec.split, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn three_sample_column_normalizes_with_population_std() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,label\n1,0\n2,1\n3,0\n");
        let d = load_dataset(&p, None, SplitFractions::new(1.0, 0.0, 0.0), 0).unwrap();
        let expected = (1.5f64).sqrt();
        assert!((d.row(0)[0] + expected).abs() < 1e-12);
        assert!(d.row(1)[0].abs() < 1e-12);
        assert!((d.row(2)[0] - expected).abs() < 1e-12);
        assert!((d.row(2)[0] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn uniform_costs_without_cost_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = (0..50).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",");
        body.push_str(",label\n");
        for r in 0..20 {
            let row: Vec<String> = (0..50).map(|i| ((r * 7 + i) % 5).to_string()).collect();
            body.push_str(&format!("{},{}\n", row.join(","), r % 2));
        }
        let p = write(&dir, "miniboone.csv", &body);
        let d = load_dataset(&p, None, SplitFractions::default(), 1).unwrap();
        assert_eq!(d.n_features(), 50);
        assert_eq!(d.n_classes(), 2);
        assert!(d.costs().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn all_test_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,label\n1,0\n2,1\n3,0\n");
        let err = load_dataset(&p, None, SplitFractions::new(0.0, 0.0, 1.0), 0).unwrap_err();
        assert_eq!(err.to_string(), "empty train split");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,label\n1,2,0\n1,x,1\n");
        match load_dataset(&p, None, SplitFractions::default(), 0).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn cost_file_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n");
        let good = write(&dir, "c.csv", "feature,cost\na,0.5\nb,2\n");
        let d = load_dataset(&p, Some(&good), SplitFractions::new(1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(d.costs(), &[0.5, 2.0]);
        let neg = write(&dir, "neg.csv", "a,0\nb,1\n");
        assert!(matches!(
            load_dataset(&p, Some(&neg), SplitFractions::default(), 0),
            Err(DataError::Invalid(_))
        ));
        let unknown = write(&dir, "u.csv", "a,1\nzz,1\n");
        let err = load_dataset(&p, Some(&unknown), SplitFractions::default(), 0).unwrap_err();
        assert!(err.to_string().contains("unknown feature `zz`"));
    }

    #[test]
    fn empty_cells_are_absent_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,label\n1,,0\n3,4,1\n5,6,0\n");
        let d = load_dataset(&p, None, SplitFractions::new(1.0, 0.0, 0.0), 0).unwrap();
        assert!(!d.is_present(0, 1));
        assert_eq!(d.row(0)[1], 0.0);
        // b statistics over the two present values {4, 6}
        assert!((d.stats.means[1] - 5.0).abs() < 1e-12);
        assert!((d.stats.stds[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn train_columns_are_standardized() {
        let d = make_synthetic(&SyntheticSpec::gaussian_votes(5, 2000, 0.6), 3).unwrap();
        let stats = d.train_statistics();
        for f in 0..5 {
            assert!(stats.means[f].abs() < 1e-6);
            assert!((stats.stds[f] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let d = make_synthetic(&SyntheticSpec::two_informative(6, 1001, LabelRule::And), 9).unwrap();
        let mut all: Vec<usize> = d.split.train.iter().chain(&d.split.val).chain(&d.split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1001).collect::<Vec<_>>());
    }

    #[test]
    fn two_informative_and_label() {
        let d = make_synthetic(&SyntheticSpec::two_informative(6, 500, LabelRule::And), 4).unwrap();
        for i in 0..d.n_samples() {
            let x0 = d.row(i)[0] > 0.0;
            let x1 = d.row(i)[1] > 0.0;
            assert_eq!(d.label(i) == 1, x0 && x1);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::two_informative(6, 300, LabelRule::Xor);
        assert_eq!(make_synthetic(&spec, 5).unwrap(), make_synthetic(&spec, 5).unwrap());
        assert_ne!(make_synthetic(&spec, 5).unwrap(), make_synthetic(&spec, 6).unwrap());
    }

    #[test]
    fn unknown_generator() {
        let mut spec = SyntheticSpec::two_informative(6, 10, LabelRule::And);
        spec.generator = "spiral".into();
        assert!(matches!(make_synthetic(&spec, 0), Err(DataError::UnknownGenerator(_))));
    }

    #[test]
    fn mcar_rate_zero_is_identity_and_bad_rate_errors() {
        let d = make_synthetic(&SyntheticSpec::gaussian_votes(4, 200, 0.5), 1).unwrap();
        assert_eq!(d.mcar_drop(0.0, 3, true).unwrap(), d);
        assert!(d.mcar_drop(1.5, 3, true).is_err());
        assert!(d.mcar_drop(-0.1, 3, true).is_err());
    }

    #[test]
    fn mcar_rate_concentrates_and_spares_test() {
        let mut spec = SyntheticSpec::gaussian_votes(50, 45_000, 0.5);
        spec.split = SplitFractions::new(1.0, 0.0, 0.0);
        let d = make_synthetic(&spec, 2).unwrap();
        let m = d.mcar_drop(0.5, 11, false).unwrap();
        let frac = m.missing_fraction(&m.split.train);
        assert!((frac - 0.5).abs() < 0.005, "missing fraction {frac}");
        // per-feature marginals within 3 sigma of the binomial, with the
        // threshold widened so that the 3-sigma false-alarm rate (0.27%)
        // holds for the whole family of 50 features rather than for each one
        let n = m.split.train.len() as f64;
        let sigma = (0.25 / n).sqrt();
        let z = 4.0;
        for f in 0..50 {
            let miss = m.split.train.iter().filter(|&&r| !m.is_present(r, f)).count() as f64 / n;
            assert!((miss - 0.5).abs() <= z * sigma, "feature {f}: {miss}");
        }

        let d = make_synthetic(&SyntheticSpec::gaussian_votes(5, 1000, 0.5), 2).unwrap();
        let m = d.mcar_drop(0.75, 1, true).unwrap();
        assert_eq!(m.missing_fraction(&m.split.test), 0.0);
        for &r in &m.split.train {
            for f in 0..5 {
                if !m.is_present(r, f) {
                    assert_eq!(m.row(r)[f], 0.0);
                }
            }
        }
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let d = make_synthetic(&SyntheticSpec::gaussian_votes(7, 300, 0.4), 8)
            .unwrap()
            .mcar_drop(0.3, 2, true)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        d.save(&p).unwrap();
        assert_eq!(Dataset::load_snapshot(&p).unwrap(), d);
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let d = make_synthetic(&SyntheticSpec::two_informative(4, 4000, LabelRule::And), 1).unwrap();
        let all = d.majority_rate(&(0..d.n_samples()).collect::<Vec<_>>());
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            assert!((d.majority_rate(d.rows(kind)) - all).abs() < 0.01);
        }
    }
}
