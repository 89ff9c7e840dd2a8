//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use cwcf::agent::{behavior_policy, target_policy_probs, RetraceParams, RetraceStep};
use cwcf::net::{Architecture, QNetwork};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Owned data behind a `RetraceStep`.
#[derive(Debug, Clone)]
pub struct OwnedStep {
    pub reward: f64,
    pub action: usize,
    pub mu: f64,
    pub pi: Vec<f64>,
    pub q: Vec<f64>,
}

impl OwnedStep {
    pub fn view(&self) -> RetraceStep<'_> {
        RetraceStep {
            reward: self.reward,
            action: self.action,
            mu: self.mu,
            pi: &self.pi,
            q_target: &self.q,
        }
    }
}

/// Random episode: random legal sets, ε-greedy behavior, η-greedy target,
/// random target-network values and non-positive rewards.
pub fn random_episode(rng: &mut ChaCha8Rng, n_actions: usize, len: usize) -> Vec<OwnedStep> {
    (0..len)
        .map(|_| {
            let mut legal: Vec<bool> = (0..n_actions).map(|_| rng.gen_bool(0.7)).collect();
            let forced = rng.gen_range(0..n_actions);
            legal[forced] = true;
            let q_online: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(-1.0..0.2)).collect();
            let eps = rng.gen_range(0.0..1.0);
            let (action, mu) = behavior_policy(&q_online, &legal, eps, rng);
            let pi = target_policy_probs(&q_online, &legal, rng.gen_range(0.0..1.0));
            OwnedStep {
                reward: -rng.gen_range(0.0..1.0),
                action,
                mu,
                pi,
                q: (0..n_actions).map(|_| rng.gen_range(-1.5..0.5)).collect(),
            }
        })
        .collect()
}

/// Target of step `t` by direct recursion on the definition.
pub fn retrace_recursive(ep: &[OwnedStep], t: usize, p: RetraceParams) -> f64 {
    let clip = |q: f64| if p.clip { q.min(0.0) } else { q };
    if t + 1 == ep.len() {
        return clip(ep[t].reward);
    }
    let next = &ep[t + 1];
    let expected: f64 = next.pi.iter().zip(&next.q).map(|(a, b)| a * b).sum();
    let c = p.trace_lambda * (next.pi[next.action] / next.mu).min(1.0);
    clip(ep[t].reward + p.gamma * (expected + c * (retrace_recursive(ep, t + 1, p) - next.q[next.action])))
}

/// Unclipped target as a forward sum of discounted, trace-weighted TD
/// errors: `q_t = Q(s_t, a_t) + Σ_k γ^(k-t) (Π_{i=t+1..k} c_i) δ_k`.
pub fn retrace_sum_form(ep: &[OwnedStep], t: usize, p: RetraceParams) -> f64 {
    let trace = |i: usize| p.trace_lambda * (ep[i].pi[ep[i].action] / ep[i].mu).min(1.0);
    let mut total = ep[t].q[ep[t].action];
    let mut weight = 1.0;
    for k in t..ep.len() {
        if k > t {
            weight *= p.gamma * trace(k);
        }
        let next_value = if k + 1 < ep.len() {
            ep[k + 1].pi.iter().zip(&ep[k + 1].q).map(|(a, b)| a * b).sum::<f64>()
        } else {
            0.0
        };
        let delta = ep[k].reward + p.gamma * next_value - ep[k].q[ep[k].action];
        total += weight * delta;
    }
    total
}

/// Random dueling net with `2n <= 8` inputs and hidden widths `<= 16`.
pub fn random_net(rng: &mut ChaCha8Rng) -> (QNetwork, usize) {
    let n = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=3);
    let depth = rng.gen_range(1..=3);
    let arch = Architecture {
        n_inputs: 2 * n,
        hidden: (0..depth).map(|_| rng.gen_range(1..=16)).collect(),
        n_actions: n + classes,
    };
    let mut net = QNetwork::new(arch, rng);
    // non-zero biases so every parameter path is exercised
    let len = net.n_params();
    for i in 0..len {
        net.params_mut()[i] += rng.gen_range(-0.1..0.1);
    }
    (net, n)
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, n_actions: usize, batch: usize) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
    let mut obs = Array2::zeros((batch, 2 * n));
    for b in 0..batch {
        for f in 0..n {
            if rng.gen_bool(0.6) {
                obs[[b, f]] = rng.gen_range(-2.0..2.0);
                obs[[b, n + f]] = 1.0;
            }
        }
    }
    let actions = (0..batch).map(|_| rng.gen_range(0..n_actions)).collect();
    let targets = (0..batch).map(|_| rng.gen_range(-1.0..0.0)).collect();
    (obs, actions, targets)
}

fn batch_loss(net: &QNetwork, obs: &Array2<f64>, actions: &[usize], targets: &[f64]) -> f64 {
    let q = net.forward(obs.view()).unwrap();
    actions
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(b, (&a, &t))| (t - q[[b, a]]).powi(2))
        .sum()
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every parameter.
pub fn max_gradient_error(net: &QNetwork, obs: &Array2<f64>, actions: &[usize], targets: &[f64], h: f64) -> f64 {
    let cache = net.forward_cached(obs.view()).unwrap();
    let (_, grad) = net.backward(&cache, actions, targets).unwrap();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.n_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = batch_loss(&probe, obs, actions, targets);
        probe.params_mut()[i] = orig - h;
        let down = batch_loss(&probe, obs, actions, targets);
        probe.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
