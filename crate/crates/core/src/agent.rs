//! Advantage actor-critic learner.
//!
//! Both networks take the flattened 8-channel state tensor through two
//! softplus hidden layers; the actor head emits one logit per node, the
//! critic head a single value. Updates are momentum gradient steps on the TD-advantage
//! objectives at the tuned learning rates, with global-norm clipping, and
//! every gradient is checkable against central finite differences.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::math;
use crate::nn::{clip_global_norm, CacheSet, Grads, Mlp, Momentum, TraceInput};

/// Hidden layer widths shared by actor and critic.
pub const HIDDEN_WIDTHS: [usize; 2] = [256, 128];
/// Gradient clipping threshold (global norm) applied before every update.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Learning hyperparameters; defaults follow the tuned reference values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Actor learning rate.
    pub alpha_actor: f64,
    /// Critic learning rate.
    pub alpha_critic: f64,
    /// Reward discount factor.
    pub gamma: f64,
    /// Transitions per update cycle.
    pub batch_size: usize,
    /// Inner passes over one batch per update cycle.
    pub update_time: usize,
    /// Training episodes per agent.
    pub episodes: usize,
    /// Number of cooperating agents.
    pub n_agents: usize,
    /// Episode step cap as a multiple of the node count.
    pub step_cap_mult: usize,
    /// Root seed; all randomness derives from it.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha_actor: 1e-3,
            alpha_critic: 3e-3,
            gamma: 0.9,
            batch_size: 32,
            update_time: 10,
            episodes: 1000,
            n_agents: 3,
            step_cap_mult: 4,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn step_cap(&self, n_nodes: usize) -> usize {
        self.step_cap_mult * n_nodes
    }
}

/// A state snapshot as the networks see it: the shared static channels plus
/// the indices of the sparse tree-channel ones.
#[derive(Debug, Clone)]
pub struct StateInput {
    pub static_x: Arc<Vec<f64>>,
    pub ones: Vec<usize>,
}

impl StateInput {
    /// Builds the network input for an environment state. `static_x` is the
    /// flattened 7-channel snapshot padded with the zero tree block.
    pub fn from_state(static_x: Arc<Vec<f64>>, state: &EnvState, n: usize) -> Self {
        let base = 7 * n * n;
        let ones = state.tree_channel_ones(n).into_iter().map(|i| base + i).collect();
        StateInput { static_x, ones }
    }

    pub fn dim(&self) -> usize {
        self.static_x.len()
    }

    /// Materializes the dense input vector.
    pub fn densify(&self) -> Vec<f64> {
        let mut x = self.static_x.as_ref().clone();
        for &i in &self.ones {
            x[i] += 1.0;
        }
        x
    }

    fn trace_input(&self) -> TraceInput {
        TraceInput::Composite { static_x: self.static_x.clone(), ones: self.ones.clone() }
    }
}

/// One transition record; the buffer holding these is cleared after each
/// update cycle.
#[derive(Debug, Clone)]
pub struct Experience {
    pub state: StateInput,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateInput,
    pub done: bool,
}

/// Learner errors.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentError {
    ShapeMismatch { expected: usize, got: usize },
    /// A gradient went non-finite; carries the offending norm.
    NonFiniteGradient { norm: f64 },
    EmptyBatch,
}

impl fmt::Display for AgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentError::ShapeMismatch { expected, got } => {
                write!(f, "input has dimension {got}, network expects {expected}")
            }
            AgentError::NonFiniteGradient { norm } => {
                write!(f, "non-finite gradient (norm {norm})")
            }
            AgentError::EmptyBatch => write!(f, "update requested on an empty batch"),
        }
    }
}

impl core::error::Error for AgentError {}

/// The actor/critic parameter pair of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2c {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl A2c {
    /// Fresh networks for an `n_nodes` topology: Glorot hidden layers and a
    /// zeroed head, so the initial policy is uniform and the initial value 0.
    pub fn new(n_nodes: usize, rng: &mut impl Rng) -> Self {
        let input = 8 * n_nodes * n_nodes;
        let mut actor =
            Mlp::glorot(&[input, HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], n_nodes], rng);
        actor.zero_final_layer();
        let mut critic = Mlp::glorot(&[input, HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], 1], rng);
        critic.zero_final_layer();
        A2c { actor, critic }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| math::exp(z - top)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Policy distribution over next-hop actions.
pub fn policy_forward(
    actor: &Mlp,
    caches: &mut CacheSet,
    s: &StateInput,
) -> Result<Vec<f64>, AgentError> {
    check_dim(actor, s)?;
    let cache = caches.cache(actor, &s.static_x);
    Ok(softmax(&actor.forward_cached(cache, &s.ones)))
}

/// State value estimate.
pub fn value_forward(
    critic: &Mlp,
    caches: &mut CacheSet,
    s: &StateInput,
) -> Result<f64, AgentError> {
    check_dim(critic, s)?;
    let cache = caches.cache(critic, &s.static_x);
    Ok(critic.forward_cached(cache, &s.ones)[0])
}

fn check_dim(net: &Mlp, s: &StateInput) -> Result<(), AgentError> {
    if net.input_dim() != s.dim() {
        return Err(AgentError::ShapeMismatch { expected: net.input_dim(), got: s.dim() });
    }
    Ok(())
}

/// Samples an action index from a categorical distribution.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let roll: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if roll < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Policy entropy, `-sum p ln p`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum::<f64>()
}

/// TD targets and advantages for a batch under the current critic.
///
/// Per sample: `target = r + gamma * V(s') * (1 - done)` and
/// `advantage = target - V(s)`; terminal states bootstrap nothing.
pub fn td_advantage(
    batch: &[Experience],
    critic: &Mlp,
    caches: &mut CacheSet,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut targets = Vec::with_capacity(batch.len());
    let mut advantages = Vec::with_capacity(batch.len());
    for exp in batch {
        let v_s = value_forward(critic, caches, &exp.state)?;
        let v_next = if exp.done {
            0.0
        } else {
            value_forward(critic, caches, &exp.next_state)?
        };
        let target = exp.reward + gamma * v_next;
        targets.push(target);
        advantages.push(target - v_s);
    }
    Ok((targets, advantages))
}

/// Diagnostics of one parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub clipped: bool,
    /// Mean squared error (critic) or mean weighted log-likelihood (actor)
    /// before the step.
    pub objective: f64,
}

/// Analytic gradient of the critic loss, the mean squared TD error with the
/// targets held constant. Also returns the loss value.
pub fn critic_grad(
    critic: &Mlp,
    caches: &mut CacheSet,
    batch: &[Experience],
    targets: &[f64],
) -> Result<(Grads, f64), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let k = batch.len() as f64;
    let mut items = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for (exp, &target) in batch.iter().zip(targets) {
        check_dim(critic, &exp.state)?;
        let cache = caches.cache(critic, &exp.state.static_x);
        let trace = critic.forward_trace(exp.state.trace_input(), Some(cache));
        let v = trace.output()[0];
        let err = v - target;
        loss += err * err / k;
        items.push((trace, alloc::vec![2.0 * err / k]));
    }
    Ok((critic.backward_batch(&items), loss))
}

/// One descent step on the critic loss for a fixed batch and fixed targets:
/// the clipped gradient feeds the critic's momentum state.
pub fn critic_update(
    critic: &mut Mlp,
    opt: &mut Momentum,
    caches: &mut CacheSet,
    batch: &[Experience],
    targets: &[f64],
    alpha_critic: f64,
) -> Result<UpdateStats, AgentError> {
    let (mut grads, loss) = critic_grad(critic, caches, batch, targets)?;
    let grad_norm = grads.global_norm();
    if !grad_norm.is_finite() {
        return Err(AgentError::NonFiniteGradient { norm: grad_norm });
    }
    let clipped = clip_global_norm(&mut grads, GRAD_CLIP_NORM);
    if clipped {
        log::debug!("critic gradient clipped from norm {grad_norm}");
    }
    opt.step(critic, &grads, alpha_critic, -1.0);
    Ok(UpdateStats { grad_norm, clipped, objective: loss })
}

/// Analytic gradient of the actor objective, the mean advantage-weighted
/// log-likelihood of the taken actions, with advantages held constant.
/// Also returns the objective value.
pub fn actor_grad(
    actor: &Mlp,
    caches: &mut CacheSet,
    batch: &[Experience],
    advantages: &[f64],
) -> Result<(Grads, f64), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let k = batch.len() as f64;
    let mut items = Vec::with_capacity(batch.len());
    let mut objective = 0.0;
    for (exp, &adv) in batch.iter().zip(advantages) {
        check_dim(actor, &exp.state)?;
        let cache = caches.cache(actor, &exp.state.static_x);
        let trace = actor.forward_trace(exp.state.trace_input(), Some(cache));
        let probs = softmax(trace.output());
        objective += adv * math::ln(probs[exp.action].max(f64::MIN_POSITIVE)) / k;
        // d(adv * ln pi_a)/dlogit_j = adv * (1[j == a] - pi_j)
        let mut dout: Vec<f64> = probs.iter().map(|p| -adv * p / k).collect();
        dout[exp.action] += adv / k;
        items.push((trace, dout));
    }
    Ok((actor.backward_batch(&items), objective))
}

/// One ascent step on the actor objective: the clipped gradient feeds the
/// actor's momentum state.
pub fn actor_update(
    actor: &mut Mlp,
    opt: &mut Momentum,
    caches: &mut CacheSet,
    batch: &[Experience],
    advantages: &[f64],
    alpha_actor: f64,
) -> Result<UpdateStats, AgentError> {
    let (mut grads, objective) = actor_grad(actor, caches, batch, advantages)?;
    let grad_norm = grads.global_norm();
    if !grad_norm.is_finite() {
        return Err(AgentError::NonFiniteGradient { norm: grad_norm });
    }
    let clipped = clip_global_norm(&mut grads, GRAD_CLIP_NORM);
    if clipped {
        log::debug!("actor gradient clipped from norm {grad_norm}");
    }
    opt.step(actor, &grads, alpha_actor, 1.0);
    Ok(UpdateStats { grad_norm, clipped, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn input(values: &[f64]) -> StateInput {
        StateInput { static_x: Arc::new(values.to_vec()), ones: Vec::new() }
    }

    /// Identity critic on 1-dim input: V(x) = x.
    fn identity_critic() -> Mlp {
        let mut net = Mlp::glorot(&[1, 1], &mut rng(0));
        net.set_params(&[1.0, 0.0]);
        net
    }

    fn transition(s: f64, next: f64, reward: f64, done: bool) -> Experience {
        Experience {
            state: input(&[s]),
            action: 0,
            reward,
            next_state: input(&[next]),
            done,
        }
    }

    #[test]
    fn default_hyperparams_match_reference() {
        let h = Hyperparams::default();
        assert_eq!(h.alpha_actor, 1e-3);
        assert_eq!(h.alpha_critic, 3e-3);
        assert_eq!(h.gamma, 0.9);
        assert_eq!(h.batch_size, 32);
        assert_eq!(h.update_time, 10);
        assert_eq!(h.step_cap(14), 56);
    }

    #[test]
    fn fresh_policy_is_uniform_and_value_zero() {
        let n = 4;
        let a2c = A2c::new(n, &mut rng(1));
        let s = input(&alloc::vec![0.3; 8 * n * n]);
        let mut caches = CacheSet::new();
        let probs = policy_forward(&a2c.actor, &mut caches, &s).unwrap();
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((entropy(&probs) - math::ln(n as f64)).abs() < 1e-12);
        let mut vc = CacheSet::new();
        assert_eq!(value_forward(&a2c.critic, &mut vc, &s).unwrap(), 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|z| z + 7.5).collect();
        let p = softmax(&logits);
        let q = softmax(&shifted);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a2c = A2c::new(3, &mut rng(2));
        let bad = input(&[0.0; 5]);
        let mut caches = CacheSet::new();
        assert!(matches!(
            policy_forward(&a2c.actor, &mut caches, &bad),
            Err(AgentError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sampling_one_hot_and_determinism() {
        let mut r = rng(3);
        for _ in 0..20 {
            assert_eq!(sample_action(&[0.0, 0.0, 1.0, 0.0], &mut r), 2);
        }
        let seq1: Vec<usize> =
            (0..10).map(|_| sample_action(&[0.25; 4], &mut rng(7))).collect();
        let seq2: Vec<usize> =
            (0..10).map(|_| sample_action(&[0.25; 4], &mut rng(7))).collect();
        assert_eq!(seq1, seq2);
    }

    #[test]
    fn sampling_frequencies_track_uniform() {
        let n = 4;
        let draws = 100_000;
        let mut counts = [0usize; 4];
        let mut r = rng(11);
        for _ in 0..draws {
            counts[sample_action(&[1.0 / n as f64; 4], &mut r)] += 1;
        }
        // 3 sigma of a binomial around p = 1/4.
        let p = 1.0 / n as f64;
        let sigma = math::sqrt(p * (1.0 - p) / draws as f64);
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - p).abs() < 3.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn td_advantage_hand_cases() {
        let critic = identity_critic();
        let mut caches = CacheSet::new();
        // r = 1, gamma = 0.9, V(s') = 2, V(s) = 2.5 -> A = 0.3.
        let batch = [transition(2.5, 2.0, 1.0, false)];
        let (targets, advs) = td_advantage(&batch, &critic, &mut caches, 0.9).unwrap();
        assert!((targets[0] - 2.8).abs() < 1e-12);
        assert!((advs[0] - 0.3).abs() < 1e-12);

        // Terminal: bootstrap suppressed, A = r - V(s).
        let batch = [transition(2.5, 9.0, 1.0, true)];
        let (_, advs) = td_advantage(&batch, &critic, &mut caches, 0.9).unwrap();
        assert!((advs[0] - (1.0 - 2.5)).abs() < 1e-12);

        // Zero critic: A = r.
        let mut zero = identity_critic();
        zero.set_params(&[0.0, 0.0]);
        let mut zc = CacheSet::new();
        let batch = [transition(4.0, 2.0, 0.7, false)];
        let (_, advs) = td_advantage(&batch, &zero, &mut zc, 0.9).unwrap();
        assert!((advs[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn critic_update_is_a_no_op_on_zero_error() {
        let mut critic = identity_critic();
        let mut caches = CacheSet::new();
        // V(s) = 2.0 and target = 2.0: no error, no movement.
        let batch = [transition(2.0, 0.0, 2.0, true)];
        let before = critic.params();
        let mut opt = Momentum::new_like(&critic);
        let stats =
            critic_update(&mut critic, &mut opt, &mut caches, &batch, &[2.0], 0.01).unwrap();
        assert_eq!(critic.params(), before);
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn critic_descends_its_loss() {
        let mut critic = Mlp::glorot(&[3, 6, 1], &mut rng(21));
        let mut caches = CacheSet::new();
        let batch = [
            Experience {
                state: input(&[0.2, -0.4, 0.9]),
                action: 0,
                reward: 1.0,
                next_state: input(&[0.0, 0.0, 0.0]),
                done: true,
            },
            Experience {
                state: input(&[0.6, 0.1, -0.3]),
                action: 0,
                reward: -0.5,
                next_state: input(&[0.0, 0.0, 0.0]),
                done: true,
            },
        ];
        let (targets, _) = td_advantage(&batch, &critic, &mut caches, 0.9).unwrap();
        let (_, before) = critic_grad(&critic, &mut caches, &batch, &targets).unwrap();
        let mut opt = Momentum::new_like(&critic);
        critic_update(&mut critic, &mut opt, &mut caches, &batch, &targets, 1e-4).unwrap();
        let (_, after) = critic_grad(&critic, &mut caches, &batch, &targets).unwrap();
        assert!(after <= before, "loss rose from {before} to {after}");
    }

    #[test]
    fn actor_step_raises_probability_of_advantaged_action() {
        let mut actor = Mlp::glorot(&[4, 8, 3], &mut rng(22));
        let mut caches = CacheSet::new();
        let s = input(&[0.1, 0.9, -0.2, 0.4]);
        let batch = [Experience {
            state: s.clone(),
            action: 1,
            reward: 0.0,
            next_state: s.clone(),
            done: true,
        }];
        let before = policy_forward(&actor, &mut caches, &s).unwrap()[1];
        let mut opt = Momentum::new_like(&actor);
        actor_update(&mut actor, &mut opt, &mut caches, &batch, &[1.0], 1e-3).unwrap();
        let after = policy_forward(&actor, &mut caches, &s).unwrap()[1];
        assert!(after > before, "{after} !> {before}");

        // Zero advantage on a fresh optimizer must not move the parameters.
        let mut fresh = Momentum::new_like(&actor);
        let frozen = actor.params();
        actor_update(&mut actor, &mut fresh, &mut caches, &batch, &[0.0], 1e-3).unwrap();
        assert_eq!(actor.params(), frozen);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let critic = Mlp::glorot(&[5, 7, 4, 1], &mut rng(23));
        let mut caches = CacheSet::new();
        let xs = [
            alloc::vec![0.2, 0.8, -0.1, 0.5, 0.3],
            alloc::vec![-0.6, 0.4, 0.9, -0.2, 0.1],
            alloc::vec![0.05, -0.3, 0.7, 0.6, -0.8],
        ];
        let batch: Vec<Experience> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Experience {
                state: input(x),
                action: 0,
                reward: 0.4 * i as f64 - 0.3,
                next_state: input(x),
                done: i % 2 == 0,
            })
            .collect();
        let (targets, _) = td_advantage(&batch, &critic, &mut caches, 0.9).unwrap();
        let (grads, _) = critic_grad(&critic, &mut caches, &batch, &targets).unwrap();

        let k = batch.len() as f64;
        let loss = |net: &Mlp| {
            batch
                .iter()
                .zip(&targets)
                .map(|(e, t)| {
                    let v = net.forward(&e.state.densify())[0];
                    (v - t) * (v - t) / k
                })
                .sum::<f64>()
        };
        let worst = gradcheck(&critic, loss, &grads.to_flat(), 1e-5);
        assert!(worst < 1e-4, "critic gradcheck {worst}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let actor = Mlp::glorot(&[5, 7, 4, 3], &mut rng(24));
        let mut caches = CacheSet::new();
        let xs = [
            alloc::vec![0.2, 0.8, -0.1, 0.5, 0.3],
            alloc::vec![-0.6, 0.4, 0.9, -0.2, 0.1],
        ];
        let advantages = [0.8, -1.3];
        let batch: Vec<Experience> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Experience {
                state: input(x),
                action: i % 3,
                reward: 0.0,
                next_state: input(x),
                done: true,
            })
            .collect();
        let (grads, _) = actor_grad(&actor, &mut caches, &batch, &advantages).unwrap();

        let k = batch.len() as f64;
        let objective = |net: &Mlp| {
            batch
                .iter()
                .zip(advantages)
                .map(|(e, a)| {
                    let probs = softmax(&net.forward(&e.state.densify()));
                    a * math::ln(probs[e.action]) / k
                })
                .sum::<f64>()
        };
        let worst = gradcheck(&actor, objective, &grads.to_flat(), 1e-5);
        assert!(worst < 1e-4, "actor gradcheck {worst}");
    }

    #[test]
    fn target_detachment_ignores_next_state_path() {
        // Perturbing V(s') inputs must not change the critic gradient once
        // targets are fixed.
        let critic = Mlp::glorot(&[3, 5, 1], &mut rng(25));
        let mut caches = CacheSet::new();
        let mk = |next: &[f64]| {
            [Experience {
                state: input(&[0.4, -0.2, 0.8]),
                action: 0,
                reward: 1.0,
                next_state: input(next),
                done: false,
            }]
        };
        let batch_a = mk(&[0.0, 0.0, 0.0]);
        let batch_b = mk(&[9.0, -9.0, 9.0]);
        let targets = [1.7];
        let (ga, _) = critic_grad(&critic, &mut caches, &batch_a, &targets).unwrap();
        let (gb, _) = critic_grad(&critic, &mut caches, &batch_b, &targets).unwrap();
        assert_eq!(ga.to_flat(), gb.to_flat());
    }
}
