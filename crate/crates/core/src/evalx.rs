//! Cost–accuracy trade-off curves, the normalized-area metric, and the
//! fixed-order baseline (recursive feature elimination with ridge, then one
//! classifier per prefix of the ranking).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::pretrain::masked_accuracy;
use crate::agent::{train_classifier, AgentError, ClassifierTraining, MaskSource};
use crate::data::{Dataset, SplitKind};
use crate::env::LossMatrix;
use crate::net::{Architecture, QNetwork};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no points given")]
    Empty,
    #[error("accuracy {0} outside [0, 1]")]
    Accuracy(f64),
    #[error("cost {cost} outside [0, {max_cost}]")]
    Cost { cost: f64, max_cost: f64 },
    #[error("max cost must be positive, got {0}")]
    MaxCost(f64),
    #[error("ridge: {0}")]
    Ridge(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One model measured on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub cost: f64,
    pub accuracy: f64,
    pub split: SplitKind,
    pub run_id: String,
    /// Budget parameter the model was trained with (lambda or b).
    pub parameter: f64,
}

/// Validation-selected trade-off curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    /// Indices of hull members in the input, by increasing validation cost.
    pub members: Vec<usize>,
    pub val: Vec<EvalPoint>,
    /// Test-split points paired with `val`.
    pub test: Vec<EvalPoint>,
}

/// Indices of the upper-left convex hull of `(cost, accuracy)` points:
/// sorted by cost, strictly increasing accuracy, strictly concave. Points on
/// a hull segment are not members.
pub fn upper_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(i.cmp(&j))
    });
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<usize> = Vec::new();
    for &i in &order {
        if let Some(&last) = hull.last() {
            if points[last] == points[i] {
                continue;
            }
        }
        while hull.len() >= 2 && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) >= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    // drop the same-cost, lower-accuracy tail and anything past the peak
    let Some(peak) = hull
        .iter()
        .enumerate()
        .max_by(|(ia, &a), (ib, &b)| points[a].1.total_cmp(&points[b].1).then(ib.cmp(ia)))
        .map(|(k, _)| k)
    else {
        return hull;
    };
    hull.truncate(peak + 1);
    hull
}

/// Hull on validation points; the reported curve pairs each member with its
/// test point. Test values play no part in the selection.
pub fn build_curve(pairs: &[(EvalPoint, EvalPoint)]) -> Result<TradeoffCurve> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let val: Vec<(f64, f64)> = pairs.iter().map(|(v, _)| (v.cost, v.accuracy)).collect();
    let members = upper_hull(&val);
    Ok(TradeoffCurve {
        val: members.iter().map(|&i| pairs[i].0.clone()).collect(),
        test: members.iter().map(|&i| pairs[i].1.clone()).collect(),
        members,
    })
}

/// Area under the curve through `points`, anchored at `(0, prior)` and
/// extended horizontally to `max_cost`, divided by the plane's area
/// `max_cost * 1`.
///
/// The curve is the upper concave envelope of the anchor, the points and
/// the horizontal extension, so adding a point can never shrink the area.
/// For points already forming a concave increasing curve above the anchor
/// this is the plain trapezoid rule.
pub fn normalized_area(points: &[(f64, f64)], prior: f64, max_cost: f64) -> Result<f64> {
    if !(max_cost > 0.0) || !max_cost.is_finite() {
        return Err(EvalError::MaxCost(max_cost));
    }
    for &(c, a) in points.iter().chain(std::iter::once(&(0.0, prior))) {
        if !(0.0..=1.0).contains(&a) {
            return Err(EvalError::Accuracy(a));
        }
        if !(0.0..=max_cost * (1.0 + 1e-12)).contains(&c) {
            return Err(EvalError::Cost { cost: c, max_cost });
        }
    }
    let mut all: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    all.push((0.0, prior));
    all.extend(points.iter().map(|&(c, a)| (c.min(max_cost), a)));
    let best = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    all.push((max_cost, best));
    let hull = upper_hull(&all);
    let mut curve: Vec<(f64, f64)> = hull.iter().map(|&i| all[i]).collect();
    // the hull starts at the cheapest point, which is at cost 0
    if curve.last().map_or(true, |p| p.0 < max_cost) {
        curve.push((max_cost, best));
    }
    let area: f64 = curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    Ok((area / max_cost).clamp(0.0, 1.0))
}

/// Accuracy on `rows` of always predicting the majority class of the
/// training split.
pub fn prior_accuracy(data: &Dataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let counts = data.class_counts(data.rows(SplitKind::Train));
    let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    rows.iter().filter(|&&r| data.label(r) == majority).count() as f64 / rows.len() as f64
}

/// One-vs-rest linear model fitted to ±1 targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// `coef[k][j]`: class `k`, feature `j` of the fitted subset.
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl RidgeModel {
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.intercept)
            .map(|(w, b)| b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let d = self.decision(x);
        (0..d.len()).fold(0, |best, k| if d[k] > d[best] { k } else { best })
    }

    /// L2 norm of each feature's coefficients across classes.
    pub fn feature_norms(&self) -> Vec<f64> {
        let d = self.coef.first().map_or(0, |c| c.len());
        (0..d)
            .map(|j| self.coef.iter().map(|c| c[j] * c[j]).sum::<f64>().sqrt())
            .collect()
    }
}

/// Closed-form ridge: solves `(XᵀX + αI) w = Xᵀy` per class with targets
/// `+1` for the class and `-1` otherwise. With `fit_intercept`, `X` and `y`
/// are centered first and the intercept is left unpenalized.
pub fn ridge_fit(x: &DMatrix<f64>, labels: &[usize], n_classes: usize, alpha: f64, fit_intercept: bool) -> Result<RidgeModel> {
    if x.nrows() != labels.len() {
        return Err(EvalError::Ridge(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(EvalError::Ridge("empty design matrix".into()));
    }
    if !(alpha > 0.0) {
        return Err(EvalError::Ridge(format!("alpha must be positive, got {alpha}")));
    }
    let (m, d) = x.shape();
    let mut xc = x.clone();
    let mut col_means = vec![0.0; d];
    if fit_intercept {
        for j in 0..d {
            col_means[j] = xc.column(j).mean();
            xc.column_mut(j).add_scalar_mut(-col_means[j]);
        }
    }
    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| EvalError::Ridge("normal equations not positive definite".into()))?;
    let mut coef = Vec::with_capacity(n_classes);
    let mut intercept = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let y = DVector::from_iterator(m, labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }));
        let y_mean = if fit_intercept { y.mean() } else { 0.0 };
        let yc = y.add_scalar(-y_mean);
        let w = chol.solve(&(xc.transpose() * yc));
        let b = y_mean - w.iter().zip(&col_means).map(|(w, m)| w * m).sum::<f64>();
        coef.push(w.iter().copied().collect());
        intercept.push(b);
    }
    Ok(RidgeModel { coef, intercept })
}

fn design_matrix(data: &Dataset, rows: &[usize], features: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), features.len(), |i, j| data.row(rows[i])[features[j]])
}

/// Feature ranking, most important first. Each round fits ridge on the
/// remaining features of the training split and eliminates the feature with
/// the smallest coefficient norm; on equal norms the higher index goes
/// first, so lower indices rank higher.
pub fn rfe_order(data: &Dataset, alpha: f64) -> Result<Vec<usize>> {
    let rows = data.rows(SplitKind::Train);
    let mut remaining: Vec<usize> = (0..data.n_features()).collect();
    let mut eliminated = Vec::with_capacity(remaining.len());
    let labels: Vec<usize> = rows.iter().map(|&r| data.label(r)).collect();
    while remaining.len() > 1 {
        let model = ridge_fit(&design_matrix(data, rows, &remaining), &labels, data.n_classes(), alpha, true)?;
        let norms = model.feature_norms();
        let mut worst = 0;
        for k in 1..remaining.len() {
            if norms[k] < norms[worst] || (norms[k] == norms[worst] && remaining[k] > remaining[worst]) {
                worst = k;
            }
        }
        eliminated.push(remaining.remove(worst));
    }
    eliminated.extend(remaining);
    eliminated.reverse();
    Ok(eliminated)
}

/// Settings of the per-prefix classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hidden_width: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub ridge_alpha: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            steps: 2000,
            batch_size: 128,
            lr: 1e-3,
            grad_clip: 1.0,
            seed: 0,
            ridge_alpha: 1.0,
        }
    }
}

/// Longest prefix of `order` whose cumulative cost fits `budget`.
pub fn prefix_for_budget(costs: &[f64], order: &[usize], budget: f64) -> usize {
    let mut spent = 0.0;
    for (k, &f) in order.iter().enumerate() {
        spent += costs[f];
        if spent > budget + 1e-12 {
            return k;
        }
    }
    order.len()
}

/// One classifier per distinct prefix implied by `budgets`, each seeing a
/// fixed mask of its prefix. Returns `(val, test)` points; the empty
/// prefix is the majority-class predictor.
pub fn baseline_curve(
    data: &Dataset,
    order: &[usize],
    budgets: &[f64],
    cfg: &BaselineConfig,
) -> Result<Vec<(EvalPoint, EvalPoint)>> {
    if budgets.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = data.n_features();
    let mut prefixes: Vec<usize> = budgets.iter().map(|&b| prefix_for_budget(data.costs(), order, b)).collect();
    prefixes.sort_unstable();
    prefixes.dedup();
    let val_rows = data.rows(SplitKind::Val);
    let test_rows = data.rows(SplitKind::Test);
    let loss = LossMatrix::binary(data.n_classes());
    let mut out = Vec::with_capacity(prefixes.len());
    for k in prefixes {
        let mut mask = vec![false; n];
        order[..k].iter().for_each(|&f| mask[f] = true);
        let cost: f64 = order[..k].iter().map(|&f| data.costs()[f]).sum();
        let (val_acc, test_acc) = if k == 0 {
            (prior_accuracy(data, val_rows), prior_accuracy(data, test_rows))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
            let mut net = QNetwork::new(Architecture::for_problem(n, data.n_classes(), cfg.hidden_width), &mut rng);
            let training = ClassifierTraining {
                steps: cfg.steps,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                grad_clip: cfg.grad_clip,
                respect_missing: true,
            };
            let rows = data.rows(SplitKind::Train);
            train_classifier(&mut net, data, rows, &loss, &MaskSource::Fixed(mask.clone()), &training, &mut rng)?;
            (
                masked_accuracy(&net, data, val_rows, &mask)?,
                masked_accuracy(&net, data, test_rows, &mask)?,
            )
        };
        let point = |split, accuracy| EvalPoint {
            cost,
            accuracy,
            split,
            run_id: format!("prefix-{k}"),
            parameter: cost,
        };
        out.push((point(SplitKind::Val, val_acc), point(SplitKind::Test, test_acc)));
    }
    Ok(out)
}

/// One entry of a curve report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub run_id: String,
    pub parameter: f64,
    pub val_cost: f64,
    pub val_accuracy: f64,
    pub test_cost: f64,
    pub test_accuracy: f64,
    pub on_hull: bool,
}

/// Plot-ready summary shared by RL sweeps and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub schema_version: u32,
    pub kind: String,
    pub dataset: String,
    pub points: Vec<ReportPoint>,
    pub prior_val_accuracy: f64,
    pub prior_test_accuracy: f64,
    /// Cost axis length: the total cost of all features.
    pub max_cost: f64,
    pub val_area: f64,
    pub test_area: f64,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl CurveReport {
    pub fn new(kind: &str, data: &Dataset, pairs: &[(EvalPoint, EvalPoint)]) -> Result<Self> {
        let curve = build_curve(pairs)?;
        let max_cost = data.total_cost();
        let prior_val = prior_accuracy(data, data.rows(SplitKind::Val));
        let prior_test = prior_accuracy(data, data.rows(SplitKind::Test));
        let xy = |ps: &[EvalPoint]| ps.iter().map(|p| (p.cost, p.accuracy)).collect::<Vec<_>>();
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            kind: kind.to_string(),
            dataset: data.name.clone(),
            points: pairs
                .iter()
                .enumerate()
                .map(|(i, (v, t))| ReportPoint {
                    run_id: v.run_id.clone(),
                    parameter: v.parameter,
                    val_cost: v.cost,
                    val_accuracy: v.accuracy,
                    test_cost: t.cost,
                    test_accuracy: t.accuracy,
                    on_hull: curve.members.contains(&i),
                })
                .collect(),
            prior_val_accuracy: prior_val,
            prior_test_accuracy: prior_test,
            max_cost,
            val_area: normalized_area(&xy(&curve.val), prior_val, max_cost)?,
            test_area: normalized_area(&xy(&curve.test), prior_test, max_cost)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(cost: f64, accuracy: f64, split: SplitKind) -> EvalPoint {
        EvalPoint {
            cost,
            accuracy,
            split,
            run_id: String::new(),
            parameter: 0.0,
        }
    }

    #[test]
    fn area_examples() {
        assert_abs_diff_eq!(normalized_area(&[(0.0, 1.0)], 1.0, 5.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalized_area(&[], 0.5, 5.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(normalized_area(&[(0.0, 0.5), (4.0, 1.0)], 0.5, 4.0).unwrap(), 0.75, epsilon = 1e-12);
        // concave curve: plain trapezoids, then the horizontal tail
        let a = normalized_area(&[(1.0, 0.8), (2.0, 0.9)], 0.6, 4.0).unwrap();
        let want = (1.0 * (0.6 + 0.8) / 2.0 + 1.0 * (0.8 + 0.9) / 2.0 + 2.0 * 0.9) / 4.0;
        assert_abs_diff_eq!(a, want, epsilon = 1e-12);
    }

    #[test]
    fn area_rejects_bad_inputs() {
        assert!(matches!(normalized_area(&[(1.0, 1.2)], 0.5, 2.0), Err(EvalError::Accuracy(_))));
        assert!(matches!(normalized_area(&[(3.0, 0.7)], 0.5, 2.0), Err(EvalError::Cost { .. })));
        assert!(matches!(normalized_area(&[], 0.5, 0.0), Err(EvalError::MaxCost(_))));
    }

    #[test]
    fn hull_examples() {
        assert_eq!(upper_hull(&[(1.0, 0.5)]), vec![0]);
        // (2, 0.6) is dominated by (1, 0.7)
        assert_eq!(upper_hull(&[(1.0, 0.7), (2.0, 0.6), (3.0, 0.9)]), vec![0, 2]);
        // collinear middle point is not a member
        assert_eq!(upper_hull(&[(0.0, 0.5), (1.0, 0.6), (2.0, 0.7)]), vec![0, 2]);
        // same cost: the more accurate one
        assert_eq!(upper_hull(&[(1.0, 0.6), (1.0, 0.8)]), vec![1]);
    }

    #[test]
    fn curve_pairs_test_points_of_validation_hull() {
        let pairs = vec![
            (pt(1.0, 0.7, SplitKind::Val), pt(1.1, 0.2, SplitKind::Test)),
            (pt(2.0, 0.6, SplitKind::Val), pt(2.1, 0.99, SplitKind::Test)),
            (pt(3.0, 0.9, SplitKind::Val), pt(3.1, 0.85, SplitKind::Test)),
        ];
        let c = build_curve(&pairs).unwrap();
        assert_eq!(c.members, vec![0, 2]);
        assert_eq!(c.test[1].accuracy, 0.85);
        assert!(matches!(build_curve(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn ridge_matches_hand_solved_normal_equations() {
        // X = [[1,0],[0,1],[1,1]], y = [+1,-1,+1] for class 0, alpha = 1
        // XᵀX + I = [[3,1],[1,3]], Xᵀy = [2, 0] → w = [0.75, -0.25]
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let m = ridge_fit(&x, &[0, 1, 0], 2, 1.0, false).unwrap();
        assert_abs_diff_eq!(m.coef[0][0], 0.75, epsilon = 1e-10);
        assert_abs_diff_eq!(m.coef[0][1], -0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(m.coef[1][0], -0.75, epsilon = 1e-10);
        assert_eq!(m.intercept, vec![0.0, 0.0]);
    }

    #[test]
    fn ridge_shrinks_to_zero_and_keeps_sign() {
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, -2.0, 1.0, 2.0]);
        let labels = [0, 0, 1, 1];
        let m = ridge_fit(&x, &labels, 2, 1e-3, true).unwrap();
        assert!(m.coef[1][0] > 0.0 && m.coef[0][0] < 0.0);
        assert_eq!(m.predict(&[1.5]), 1);
        let big = ridge_fit(&x, &labels, 2, 1e12, true).unwrap();
        assert!(big.coef[1][0].abs() < 1e-10);
        assert!(ridge_fit(&x, &labels, 2, 0.0, true).is_err());
    }

    #[test]
    fn prefix_by_cumulative_cost() {
        let costs = [1.0, 2.0, 0.5];
        let order = [2, 0, 1];
        assert_eq!(prefix_for_budget(&costs, &order, 0.0), 0);
        assert_eq!(prefix_for_budget(&costs, &order, 1.4), 1);
        assert_eq!(prefix_for_budget(&costs, &order, 1.5), 2);
        assert_eq!(prefix_for_budget(&costs, &order, 10.0), 3);
    }
}
