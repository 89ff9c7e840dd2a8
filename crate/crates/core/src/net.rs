//! Dueling Q-network with hand-written backpropagation, Adam, gradient-norm
//! clipping and soft target updates.
//!
//! All parameters live in one flat `Vec<f64>`; each dense layer stores its
//! weight matrix (`out x in`, row-major) followed by its bias.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient entry at parameter {index} (optimizer step {step})")]
    NonFiniteGradient { index: usize, step: u64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Layer sizes of a dueling network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_inputs: usize,
    pub hidden: Vec<usize>,
    pub n_actions: usize,
}

impl Architecture {
    /// Input `2n` (masked values and mask), three hidden layers of `width`,
    /// one output per action.
    pub fn for_problem(n_features: usize, n_classes: usize, width: usize) -> Self {
        Self {
            n_inputs: 2 * n_features,
            hidden: vec![width; 3],
            n_actions: n_features + n_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.n_out, self.n_in), &params[self.offset..self.offset + self.n_out * self.n_in])
            .expect("layer layout")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.n_out * self.n_in;
        ArrayView1::from(&params[start..start + self.n_out])
    }

    fn forward(&self, params: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(params).t());
        z += &self.bias(params);
        z
    }

    /// Accumulates dW and db into `grad`; returns dX.
    fn backward(&self, params: &[f64], x: &ArrayView2<f64>, dz: &Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let dw = dz.t().dot(x);
        let db = dz.sum_axis(Axis(0));
        let w_end = self.offset + self.n_out * self.n_in;
        for (g, d) in grad[self.offset..w_end].iter_mut().zip(dw.iter()) {
            *g += d;
        }
        for (g, d) in grad[w_end..w_end + self.n_out].iter_mut().zip(db.iter()) {
            *g += d;
        }
        dz.dot(&self.weight(params))
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[i]` is the output of
    /// hidden layer `i - 1` after ReLU.
    activations: Vec<Array2<f64>>,
    pub q: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.q.nrows()
    }
}

/// Multiplier on the Glorot range of the value and advantage heads.
pub const HEAD_INIT_SCALE: f64 = 0.1;

/// Q-network: ReLU trunk, then value and advantage heads combined as
/// `Q = V + A - mean(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    trunk: Vec<Dense>,
    value: Dense,
    advantage: Dense,
    params: Vec<f64>,
}

impl QNetwork {
    /// Zero-initialized network.
    pub fn zeros(arch: Architecture) -> Self {
        let mut offset = 0;
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut n_in = arch.n_inputs;
        for &h in &arch.hidden {
            let layer = Dense { n_in, n_out: h, offset };
            offset += layer.len();
            trunk.push(layer);
            n_in = h;
        }
        let value = Dense { n_in, n_out: 1, offset };
        offset += value.len();
        let advantage = Dense {
            n_in,
            n_out: arch.n_actions,
            offset,
        };
        offset += advantage.len();
        Self {
            arch,
            trunk,
            value,
            advantage,
            params: vec![0.0; offset],
        }
    }

    /// Glorot-uniform weights, zero biases. The two output heads are scaled
    /// down by [`HEAD_INIT_SCALE`] so that initial Q-values sit close to 0.
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        let layers: Vec<Dense> = net.layers().collect();
        let n_trunk = net.trunk.len();
        for (i, layer) in layers.into_iter().enumerate() {
            let scale = if i < n_trunk { 1.0 } else { HEAD_INIT_SCALE };
            let limit = scale * (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut net.params[layer.offset..layer.offset + layer.n_in * layer.n_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        net
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch);
        if params.len() != net.params.len() {
            return Err(NetError::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    fn layers(&self) -> impl Iterator<Item = Dense> + '_ {
        self.trunk
            .iter()
            .copied()
            .chain([self.value, self.advantage])
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_actions(&self) -> usize {
        self.arch.n_actions
    }

    fn check_width(&self, obs: &ArrayView2<f64>) -> Result<()> {
        if obs.ncols() != self.arch.n_inputs {
            return Err(NetError::Shape(format!(
                "observation width {} but network expects {}",
                obs.ncols(),
                self.arch.n_inputs
            )));
        }
        Ok(())
    }

    /// Trunk output and the two heads, before the dueling combination.
    fn heads(&self, obs: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>, Array2<f64>) {
        let mut activations = vec![obs.to_owned()];
        for layer in &self.trunk {
            let mut h = layer.forward(&self.params, &activations.last().unwrap().view());
            h.mapv_inplace(|v| v.max(0.0));
            activations.push(h);
        }
        let last = activations.last().unwrap().view();
        let v = self.value.forward(&self.params, &last);
        let a = self.advantage.forward(&self.params, &last);
        (activations, v, a)
    }

    /// State value `V` and raw advantages `A` for a batch.
    pub fn value_and_advantage(&self, obs: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_width(&obs)?;
        let (_, v, a) = self.heads(obs);
        Ok((v.column(0).to_owned(), a))
    }

    pub fn forward_cached(&self, obs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_width(&obs)?;
        let (activations, v, a) = self.heads(obs);
        Ok(ForwardCache {
            activations,
            q: combine_dueling(&v.column(0), &a),
        })
    }

    /// Q-values `[B x |A|]` for a batch of encoded observations.
    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(obs)?.q)
    }

    pub fn forward_row(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
        Ok(self.forward(view)?.row(0).to_vec())
    }

    /// Gradient of a loss given `dL/dQ` for every output of the cached pass.
    pub fn backward_output(&self, cache: &ForwardCache, d_q: &Array2<f64>) -> Result<Vec<f64>> {
        if d_q.dim() != cache.q.dim() {
            return Err(NetError::Shape(format!(
                "output gradient {:?} vs outputs {:?}",
                d_q.dim(),
                cache.q.dim()
            )));
        }
        let n_actions = self.arch.n_actions as f64;
        // dQ_a/dV = 1 and dQ_a/dA_k = [a = k] - 1/|A|
        let d_v = d_q.sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_a = d_q - &(d_v.clone() / n_actions);

        let mut grad = vec![0.0; self.params.len()];
        let last = cache.activations.last().unwrap().view();
        let mut d_h = self.value.backward(&self.params, &last, &d_v, &mut grad);
        d_h += &self.advantage.backward(&self.params, &last, &d_a, &mut grad);

        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.activations[i + 1];
            let mut d_z = d_h;
            d_z.zip_mut_with(out, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            d_h = layer.backward(&self.params, &cache.activations[i].view(), &d_z, &mut grad);
        }
        Ok(grad)
    }

    /// Summed squared error `sum_i (q_i - Q(s_i, a_i))^2` and its gradient.
    /// Targets are treated as constants.
    pub fn backward(&self, cache: &ForwardCache, actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let b = cache.batch_size();
        if actions.len() != b || targets.len() != b {
            return Err(NetError::Shape(format!(
                "batch of {b} with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        let mut d_q = Array2::zeros(cache.q.dim());
        let mut loss = 0.0;
        for (i, (&a, &t)) in actions.iter().zip(targets).enumerate() {
            if a >= self.arch.n_actions {
                return Err(NetError::Shape(format!("action {a} out of range")));
            }
            let diff = cache.q[[i, a]] - t;
            loss += diff * diff;
            d_q[[i, a]] = 2.0 * diff;
        }
        Ok((loss, self.backward_output(cache, &d_q)?))
    }
}

/// `Q = V + A - mean_a A`, row-wise.
pub fn combine_dueling(v: &ArrayView1<f64>, a: &Array2<f64>) -> Array2<f64> {
    let mean = a.mean_axis(Axis(1)).expect("advantage has at least one action");
    let shift = (v - &mean).insert_axis(Axis(1));
    a + &shift
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NetError::Shape(format!(
                "optimizer holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grad` to `max_norm` when its norm is larger, then takes one
/// Adam step. Returns the gradient norm before clipping.
pub fn clip_and_step(adam: &mut AdamState, params: &mut [f64], grad: &mut [f64], max_norm: f64, lr: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(NetError::Invalid(format!("max_norm must be positive, got {max_norm}")));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(NetError::NonFiniteGradient {
            index,
            step: adam.step + 1,
        });
    }
    let norm = l2_norm(grad);
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    adam.update(params, grad, lr)?;
    Ok(norm)
}

/// `target := (1 - rho) * target + rho * online`.
pub fn soft_update(target: &mut QNetwork, online: &QNetwork, rho: f64) -> Result<()> {
    if target.arch != online.arch {
        return Err(NetError::Shape("target and online architectures differ".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(NetError::Invalid(format!("rho must be in (0, 1], got {rho}")));
    }
    for (t, &o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - rho) * *t + rho * o;
    }
    Ok(())
}

/// Exponential step decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub min: f64,
    pub scale: f64,
    pub period: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            start: 5e-4,
            min: 5e-7,
            scale: 0.5,
            period: 1000,
        }
    }
}

impl LrSchedule {
    /// `max(min, start * scale^(step / period))`.
    pub fn at(&self, step: u64) -> f64 {
        let k = (step / self.period.max(1)).min(i32::MAX as u64) as i32;
        (self.start * self.scale.powi(k)).max(self.min)
    }

    /// Decay factor relative to `start`, used to scale other learning rates
    /// along the same schedule.
    pub fn relative(&self, step: u64) -> f64 {
        self.at(step) / self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dueling_combination_examples() {
        let q = combine_dueling(&array![0.0].view(), &array![[1.0, 2.0, 3.0]]);
        assert_eq!(q, array![[-1.0, 0.0, 1.0]]);
        let q = combine_dueling(&array![5.0].view(), &array![[7.5, 7.5, 7.5]]);
        assert_eq!(q, array![[5.0, 5.0, 5.0]]);
    }

    #[test]
    fn output_width_matches_action_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::new(Architecture::for_problem(5, 3, 16), &mut rng);
        let obs = Array2::from_elem((4, 10), 0.3);
        assert_eq!(net.forward(obs.view()).unwrap().dim(), (4, 8));
        let bad = Array2::zeros((4, 9));
        assert!(matches!(net.forward(bad.view()), Err(NetError::Shape(_))));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(Architecture::for_problem(3, 2, 8), &mut rng);
        let obs = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j) as f64).sin());
        let cache = net.forward_cached(obs.view()).unwrap();
        let actions = [0, 4, 2];
        let targets: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| cache.q[[i, a]]).collect();
        let (loss, grad) = net.backward(&cache, &actions, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_heads_gradient_matches_closed_form() {
        // No hidden layers: Q_a = v.x + bv + (A x + bA)_a - mean(A x + bA)
        let arch = Architecture {
            n_inputs: 3,
            hidden: vec![],
            n_actions: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNetwork::new(arch, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let obs = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let cache = net.forward_cached(obs.view()).unwrap();
        let target = -0.7;
        let (_, grad) = net.backward(&cache, &[1], &[target]).unwrap();
        let g = 2.0 * (cache.q[[0, 1]] - target);
        // value head weights then bias
        for j in 0..3 {
            assert!((grad[j] - g * x[j]).abs() < 1e-12);
        }
        assert!((grad[3] - g).abs() < 1e-12);
        // advantage rows: factor ([a = k] - 1/2)
        let adv = 4;
        for k in 0..2 {
            let factor = if k == 1 { 0.5 } else { -0.5 };
            for j in 0..3 {
                assert!((grad[adv + k * 3 + j] - g * factor * x[j]).abs() < 1e-12);
            }
            assert!((grad[adv + 6 + k] - g * factor).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_threshold() {
        let mut adam = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let mut g = vec![0.3, 0.4];
        assert_eq!(clip_and_step(&mut adam, &mut p, &mut g, 1.0, 1e-3).unwrap(), 0.5);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![0.0, 4.0];
        clip_and_step(&mut adam, &mut p, &mut g, 1.0, 1e-3).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut adam = AdamState::new(3);
        let mut p = vec![0.0; 3];
        let mut g = vec![0.0, f64::NAN, 1.0];
        assert_eq!(
            clip_and_step(&mut adam, &mut p, &mut g, 1.0, 1e-3),
            Err(NetError::NonFiniteGradient { index: 1, step: 1 })
        );
    }

    #[test]
    fn adam_minimizes_square() {
        let mut adam = AdamState::new(1);
        let mut w = vec![1.0];
        for _ in 0..100 {
            let g = vec![2.0 * w[0]];
            adam.update(&mut w, &g, 0.1).unwrap();
        }
        assert!(w[0].abs() < 0.01, "w = {}", w[0]);
    }

    #[test]
    fn soft_update_blends() {
        let arch = Architecture::for_problem(2, 2, 4);
        let mut target = QNetwork::zeros(arch.clone());
        let mut online = QNetwork::zeros(arch);
        online.params_mut().iter_mut().for_each(|p| *p = 1.0);
        soft_update(&mut target, &online, 0.1).unwrap();
        assert!(target.params().iter().all(|&p| (p - 0.1).abs() < 1e-15));
        for k in 2..=20 {
            soft_update(&mut target, &online, 0.1).unwrap();
            let expected = 1.0 - 0.9f64.powi(k);
            assert!(target.params().iter().all(|&p| (p - expected).abs() < 1e-12));
        }
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
        assert!(soft_update(&mut target, &online, 0.0).is_err());
        let other = QNetwork::zeros(Architecture::for_problem(3, 2, 4));
        assert!(soft_update(&mut target, &other, 0.5).is_err());
    }

    #[test]
    fn lr_schedule_values() {
        let s = LrSchedule {
            period: 100,
            ..LrSchedule::default()
        };
        assert_eq!(s.at(0), 5e-4);
        assert_eq!(s.at(99), 5e-4);
        assert_eq!(s.at(100), 2.5e-4);
        assert_eq!(s.at(1_000_000), 5e-7);
    }
}
