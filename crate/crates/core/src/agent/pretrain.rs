//! Supervised training of the classification outputs on randomly masked
//! samples.

use ndarray::Array2;
use rand::Rng;

use super::AgentError;
use crate::data::Dataset;
use crate::env::LossMatrix;
use crate::net::{clip_and_step, AdamState, QNetwork};

/// Random acquisition mask: `p = u³` with `u ~ U(0, 1)`, then each feature
/// observed independently with probability `p`. `E[p] = 1/4`, which biases
/// the sampled states toward few observed features.
pub fn sample_mask<R: Rng>(n_features: usize, rng: &mut R) -> Vec<bool> {
    let u: f64 = rng.gen();
    let p = u * u * u;
    (0..n_features).map(|_| rng.gen::<f64>() < p).collect()
}

/// Where masks for classifier training come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// `sample_mask` per sample.
    Random,
    /// The same features for every sample.
    Fixed(Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTraining {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Features absent from a sample stay unobserved.
    pub respect_missing: bool,
}

/// Regresses the classification outputs toward the terminal rewards
/// `-loss(class, y)`; feature-action outputs receive no gradient.
/// Returns the loss of the final batch.
pub fn train_classifier<R: Rng>(
    net: &mut QNetwork,
    data: &Dataset,
    rows: &[usize],
    loss: &LossMatrix,
    masks: &MaskSource,
    cfg: &ClassifierTraining,
    rng: &mut R,
) -> Result<f64, AgentError> {
    if rows.is_empty() {
        return Err(AgentError::EmptySplit);
    }
    let n = data.n_features();
    let n_classes = data.n_classes();
    let mut adam = AdamState::new(net.n_params());
    let mut last_loss = 0.0;
    let mut obs = Array2::zeros((cfg.batch_size, 2 * n));
    let mut labels = vec![0usize; cfg.batch_size];
    for _ in 0..cfg.steps {
        for (b, label) in labels.iter_mut().enumerate() {
            let r = rows[rng.gen_range(0..rows.len())];
            let mask = match masks {
                MaskSource::Random => sample_mask(n, rng),
                MaskSource::Fixed(m) => m.clone(),
            };
            let x = data.row(r);
            for f in 0..n {
                let seen = mask[f] && (!cfg.respect_missing || data.is_present(r, f));
                obs[[b, f]] = if seen { x[f] } else { 0.0 };
                obs[[b, n + f]] = if seen { 1.0 } else { 0.0 };
            }
            *label = data.label(r);
        }
        let cache = net.forward_cached(obs.view())?;
        let mut d_q = Array2::zeros(cache.q.dim());
        let mut total = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            for c in 0..n_classes {
                let diff = cache.q[[b, n + c]] + loss.get(c, y);
                total += diff * diff;
                d_q[[b, n + c]] = 2.0 * diff;
            }
        }
        if !total.is_finite() {
            return Err(AgentError::Diverged {
                step: 0,
                detail: format!("classifier loss {total}"),
            });
        }
        let mut grad = net.backward_output(&cache, &d_q)?;
        clip_and_step(&mut adam, net.params_mut(), &mut grad, cfg.grad_clip, cfg.lr)?;
        last_loss = total;
    }
    Ok(last_loss)
}

/// Class predicted from the classification outputs alone.
pub fn predict_class(q: &[f64], n_features: usize) -> usize {
    let cls = &q[n_features..];
    let mut best = 0;
    for (c, &v) in cls.iter().enumerate() {
        if v > cls[best] {
            best = c;
        }
    }
    best
}

/// Accuracy of `predict_class` on `rows` with a fixed mask.
pub fn masked_accuracy(net: &QNetwork, data: &Dataset, rows: &[usize], mask: &[bool]) -> Result<f64, AgentError> {
    if rows.is_empty() {
        return Err(AgentError::EmptySplit);
    }
    let n = data.n_features();
    let mut obs = Array2::zeros((rows.len(), 2 * n));
    for (b, &r) in rows.iter().enumerate() {
        let x = data.row(r);
        for f in 0..n {
            if mask[f] {
                obs[[b, f]] = x[f];
                obs[[b, n + f]] = 1.0;
            }
        }
    }
    let q = net.forward(obs.view())?;
    let correct = rows
        .iter()
        .enumerate()
        .filter(|(b, &r)| predict_class(q.row(*b).as_slice().unwrap(), n) == data.label(r))
        .count();
    Ok(correct as f64 / rows.len() as f64)
}
