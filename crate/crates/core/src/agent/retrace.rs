//! Retrace targets with double-Q evaluation, computed in one backward sweep.
//!
//! For an episode `(s_0, a_0, r_0, ..., s_T, a_T, r_T)` ending in the
//! terminal state,
//!
//! ```text
//! q_T = r_T
//! q_t = r_t + γ Σ_a π(a|s_{t+1}) Qφ(s_{t+1}, a)
//!           + γ c_{t+1} (q_{t+1} - Qφ(s_{t+1}, a_{t+1}))
//! c_t = λ_r min(1, π(a_t|s_t) / μ(a_t|s_t))
//! ```
//!
//! where π is derived from the online network and Qφ is the target network.
//! Each `q_t` is clipped to at most 0 before being propagated, since all
//! rewards are non-positive.

use super::AgentError;

/// Per-step inputs of the sweep.
#[derive(Debug, Clone, Copy)]
pub struct RetraceStep<'a> {
    pub reward: f64,
    pub action: usize,
    /// Behavior probability of `action`.
    pub mu: f64,
    /// Target policy at this state (zero on illegal actions).
    pub pi: &'a [f64],
    /// Target-network values at this state.
    pub q_target: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetraceParams {
    pub gamma: f64,
    pub trace_lambda: f64,
    /// Clip targets to `<= 0`.
    pub clip: bool,
}

impl Default for RetraceParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            trace_lambda: 1.0,
            clip: true,
        }
    }
}

/// Truncated importance weight `λ_r min(1, π(a|s) / μ(a|s))`.
pub fn trace_coefficient(step: &RetraceStep<'_>, trace_lambda: f64) -> f64 {
    trace_lambda * (step.pi[step.action] / step.mu).min(1.0)
}

/// `Σ_a π(a|s) Qφ(s, a)`, skipping zero-probability actions.
pub fn expected_value(pi: &[f64], q: &[f64]) -> f64 {
    pi.iter().zip(q).filter(|(p, _)| **p > 0.0).map(|(p, v)| p * v).sum()
}

/// One target per step, `O(len)`.
pub fn retrace_targets(episode: &[RetraceStep<'_>], params: RetraceParams) -> Result<Vec<f64>, AgentError> {
    if let Some(t) = episode.iter().position(|s| !(s.mu > 0.0)) {
        return Err(AgentError::CorruptTransition(format!(
            "behavior probability {} at step {t}",
            episode[t].mu
        )));
    }
    let clip = |q: f64| if params.clip { q.min(0.0) } else { q };
    let mut targets = vec![0.0; episode.len()];
    let Some(last) = episode.len().checked_sub(1) else {
        return Ok(targets);
    };
    targets[last] = clip(episode[last].reward);
    for t in (0..last).rev() {
        let next = &episode[t + 1];
        let c = trace_coefficient(next, params.trace_lambda);
        let bootstrap = expected_value(next.pi, next.q_target) + c * (targets[t + 1] - next.q_target[next.action]);
        targets[t] = clip(episode[t].reward + params.gamma * bootstrap);
    }
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_is_the_reward() {
        let pi = [0.0, 1.0];
        let q = [0.3, 0.2];
        let ep = [RetraceStep {
            reward: -1.0,
            action: 1,
            mu: 0.5,
            pi: &pi,
            q_target: &q,
        }];
        assert_eq!(retrace_targets(&ep, RetraceParams::default()).unwrap(), vec![-1.0]);
    }

    #[test]
    fn on_policy_greedy_recovers_the_return() {
        let pi0 = [1.0, 0.0, 0.0];
        let pi1 = [0.0, 0.0, 1.0];
        let q0 = [0.4, -0.3, 0.1];
        let q1 = [0.0, 0.7, -0.2];
        let ep = [
            RetraceStep {
                reward: -0.1,
                action: 0,
                mu: 1.0,
                pi: &pi0,
                q_target: &q0,
            },
            RetraceStep {
                reward: -1.0,
                action: 2,
                mu: 1.0,
                pi: &pi1,
                q_target: &q1,
            },
        ];
        let q = retrace_targets(&ep, RetraceParams::default()).unwrap();
        assert_eq!(q, vec![-1.1, -1.0]);
    }

    #[test]
    fn zero_behavior_probability_is_corruption() {
        let pi = [1.0];
        let q = [0.0];
        let ep = [RetraceStep {
            reward: 0.0,
            action: 0,
            mu: 0.0,
            pi: &pi,
            q_target: &q,
        }];
        assert!(matches!(
            retrace_targets(&ep, RetraceParams::default()),
            Err(AgentError::CorruptTransition(_))
        ));
    }

    #[test]
    fn targets_are_clipped() {
        let pi = [0.5, 0.5];
        let q = [2.0, 3.0];
        let ep = [
            RetraceStep {
                reward: 0.0,
                action: 0,
                mu: 0.5,
                pi: &pi,
                q_target: &q,
            },
            RetraceStep {
                reward: 0.0,
                action: 1,
                mu: 0.1,
                pi: &pi,
                q_target: &q,
            },
        ];
        let q = retrace_targets(&ep, RetraceParams::default()).unwrap();
        assert!(q.iter().all(|&v| v <= 0.0));
    }
}
