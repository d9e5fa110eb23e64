//! Multi-agent training orchestration.
//!
//! Destinations are split evenly among fully decentralized agents; each
//! agent runs its own environment and actor-critic updates over the shared
//! link-state snapshots, optionally warm-started from weights pretrained on
//! unicast episodes. After training every agent rolls out its policy
//! greedily and the per-destination routes merge into one multicast tree.
//!
//! Agents never share parameters or buffers, so training them sequentially
//! or on separate threads gives identical results for identical seeds; each
//! agent's RNG stream is seeded as `seed + agent_index`.

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    actor_update, critic_update, policy_forward, sample_action, td_advantage, A2c, AgentError,
    Experience, Hyperparams, StateInput,
};
use crate::env::{Env, EnvError, RewardWeights, StepKind};
use crate::multicast::{
    merge_paths, path_in_edges, MulticastError, MulticastRequest, MulticastTree, RoutePath,
};
use crate::nn::{CacheSet, Momentum};
use crate::steiner::{shortest_path, RouteError};
use crate::topology::{Channel, LinkMetrics, LinkStateMatrices, NormalizedMatrices, Topology};

/// One link-state snapshot with its normalized form, shareable across agents.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub raw: LinkStateMatrices,
    pub norm: Arc<NormalizedMatrices>,
}

impl Snapshot {
    pub fn new(raw: LinkStateMatrices) -> Self {
        let norm = Arc::new(crate::topology::normalize(&raw));
        Snapshot { raw, norm }
    }

    /// Flattened 8-channel static input: the seven normalized channels plus
    /// a zeroed tree block.
    pub fn static_input(&self) -> Vec<f64> {
        let n = self.norm.size();
        let mut x = self.norm.flatten_channels();
        x.resize(8 * n * n, 0.0);
        x
    }
}

/// One agent's slice of the multicast job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTask {
    pub agent_index: usize,
    pub src: usize,
    pub assigned_dsts: BTreeSet<usize>,
}

impl AgentTask {
    pub fn is_active(&self) -> bool {
        !self.assigned_dsts.is_empty()
    }
}

/// Splits the destination set randomly and evenly across `n_agents` tasks.
///
/// Subset sizes differ by at most one. Agents beyond the destination count
/// receive empty tasks and are skipped by the trainer.
pub fn partition_destinations(
    src: usize,
    dst_set: &BTreeSet<usize>,
    n_agents: usize,
    rng: &mut impl Rng,
) -> Vec<AgentTask> {
    assert!(n_agents >= 1, "need at least one agent");
    let mut shuffled: Vec<usize> = dst_set.iter().copied().collect();
    shuffled.shuffle(rng);
    let mut tasks: Vec<AgentTask> = (0..n_agents)
        .map(|agent_index| AgentTask { agent_index, src, assigned_dsts: BTreeSet::new() })
        .collect();
    for (i, dst) in shuffled.into_iter().enumerate() {
        tasks[i % n_agents].assigned_dsts.insert(dst);
    }
    if n_agents > dst_set.len() {
        log::warn!(
            "{} agents for {} destinations; {} agents idle",
            n_agents,
            dst_set.len(),
            n_agents - dst_set.len()
        );
    }
    tasks
}

/// Per-episode outcome tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub reward: f64,
    pub steps: usize,
    pub part: usize,
    pub hell: usize,
    pub loops: usize,
    /// Whether the episode reached END within the step cap.
    pub ended: bool,
}

/// Everything one agent produced during a run.
#[derive(Debug, Clone)]
pub struct AgentRecord {
    pub task: AgentTask,
    /// One entry per episode; all zeros for idle agents.
    pub episodes: Vec<EpisodeStats>,
    /// Trained networks; `None` for idle agents.
    pub a2c: Option<A2c>,
    /// Final greedy routes, one per assigned destination.
    pub paths: Vec<RoutePath>,
    /// Destinations the rollout could not reach, routed by min-delay instead.
    pub fallback_dsts: BTreeSet<usize>,
}

/// Result of a full multi-agent training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub agents: Vec<AgentRecord>,
    pub tree: MulticastTree,
    pub hyper: Hyperparams,
    pub weights: RewardWeights,
}

impl TrainingRun {
    /// Mean episode reward across active agents, one entry per episode.
    pub fn mean_reward_curve(&self) -> Vec<f64> {
        let active: Vec<&AgentRecord> =
            self.agents.iter().filter(|a| a.task.is_active()).collect();
        if active.is_empty() {
            return Vec::new();
        }
        let episodes = active[0].episodes.len();
        (0..episodes)
            .map(|e| {
                active.iter().map(|a| a.episodes[e].reward).sum::<f64>() / active.len() as f64
            })
            .collect()
    }

    /// Fraction of the given episode range where every active agent ended.
    pub fn end_rate(&self, range: core::ops::Range<usize>) -> f64 {
        let active: Vec<&AgentRecord> =
            self.agents.iter().filter(|a| a.task.is_active()).collect();
        if active.is_empty() || range.is_empty() {
            return 0.0;
        }
        let total = range.len();
        let ok = range
            .filter(|&e| active.iter().all(|a| a.episodes[e].ended))
            .count();
        ok as f64 / total as f64
    }
}

/// First episode whose trailing `window` mean reaches `threshold`.
pub fn episodes_to_reach(curve: &[f64], threshold: f64, window: usize) -> Option<usize> {
    if curve.len() < window || window == 0 {
        return None;
    }
    let mut sum: f64 = curve[..window].iter().sum();
    if sum / window as f64 >= threshold {
        return Some(window - 1);
    }
    for e in window..curve.len() {
        sum += curve[e] - curve[e - window];
        if sum / window as f64 >= threshold {
            return Some(e);
        }
    }
    None
}

/// Identifies what a set of pretrained weights was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub topology_hash: u64,
    pub traffic_hash: u64,
    pub episodes: usize,
}

/// Warm-start weights from unicast pretraining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainedWeights {
    pub a2c: A2c,
    pub provenance: Provenance,
}

/// Pretraining output: the transferable weights plus the run's own curve.
#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub weights: PretrainedWeights,
    pub episodes: Vec<EpisodeStats>,
}

/// Trainer-level errors.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    NoSnapshots,
    /// Warm-start weights do not fit the topology's input dimension.
    WarmStartShape { expected: usize, got: usize },
    Env(EnvError),
    Agent(AgentError),
    Multicast(MulticastError),
    Route(RouteError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::NoSnapshots => write!(f, "no link-state snapshots provided"),
            TrainError::WarmStartShape { expected, got } => {
                write!(f, "warm-start weights expect input {got}, topology needs {expected}")
            }
            TrainError::Env(e) => write!(f, "environment: {e}"),
            TrainError::Agent(e) => write!(f, "agent: {e}"),
            TrainError::Multicast(e) => write!(f, "multicast: {e}"),
            TrainError::Route(e) => write!(f, "routing: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<EnvError> for TrainError {
    fn from(e: EnvError) -> Self {
        TrainError::Env(e)
    }
}

impl From<AgentError> for TrainError {
    fn from(e: AgentError) -> Self {
        TrainError::Agent(e)
    }
}

impl From<MulticastError> for TrainError {
    fn from(e: MulticastError) -> Self {
        TrainError::Multicast(e)
    }
}

impl From<RouteError> for TrainError {
    fn from(e: RouteError) -> Self {
        TrainError::Route(e)
    }
}

/// One learner with its caches, optimizer states, buffer and RNG stream.
struct Driver {
    a2c: A2c,
    actor_opt: Momentum,
    critic_opt: Momentum,
    actor_caches: CacheSet,
    critic_caches: CacheSet,
    buffer: Vec<Experience>,
    rng: ChaCha8Rng,
    hyper: Hyperparams,
}

impl Driver {
    fn new(a2c: A2c, hyper: Hyperparams, rng: ChaCha8Rng) -> Self {
        let actor_opt = Momentum::new_like(&a2c.actor);
        let critic_opt = Momentum::new_like(&a2c.critic);
        Driver {
            a2c,
            actor_opt,
            critic_opt,
            actor_caches: CacheSet::new(),
            critic_caches: CacheSet::new(),
            buffer: Vec::new(),
            rng,
            hyper,
        }
    }

    /// Runs one episode with in-loop updates whenever the buffer fills.
    ///
    /// On-policy batch reuse: the full buffer is replayed `update_time`
    /// times (targets recomputed under the moving critic each pass), then
    /// cleared. Hitting the step cap truncates without a terminal flag so
    /// later updates still bootstrap through the final state.
    fn episode(
        &mut self,
        env: &Env,
        static_x: &Arc<Vec<f64>>,
        src: usize,
        dsts: &BTreeSet<usize>,
        cap: usize,
    ) -> Result<EpisodeStats, TrainError> {
        let n = env.node_count();
        let mut stats = EpisodeStats::default();
        let mut state = env.reset(src, dsts)?;
        let mut state_in = StateInput::from_state(static_x.clone(), &state, n);

        for _ in 0..cap {
            let probs = policy_forward(&self.a2c.actor, &mut self.actor_caches, &state_in)?;
            let action = sample_action(&probs, &mut self.rng);
            let outcome = env.step(&state, action)?;
            let next_in = StateInput::from_state(static_x.clone(), &outcome.next_state, n);
            let done = outcome.kind == StepKind::End;

            self.buffer.push(Experience {
                state: state_in,
                action,
                reward: outcome.reward,
                next_state: next_in.clone(),
                done,
            });
            stats.reward += outcome.reward;
            stats.steps += 1;
            match outcome.kind {
                StepKind::Part => stats.part += 1,
                StepKind::Hell => stats.hell += 1,
                StepKind::Loop => stats.loops += 1,
                StepKind::End => stats.part += 1,
            }

            if self.buffer.len() >= self.hyper.batch_size {
                self.update_cycle()?;
            }

            if done {
                stats.ended = true;
                return Ok(stats);
            }
            state = outcome.next_state;
            state_in = next_in;
        }
        Ok(stats)
    }

    fn update_cycle(&mut self) -> Result<(), TrainError> {
        for _ in 0..self.hyper.update_time {
            let (targets, advantages) = td_advantage(
                &self.buffer,
                &self.a2c.critic,
                &mut self.critic_caches,
                self.hyper.gamma,
            )?;
            critic_update(
                &mut self.a2c.critic,
                &mut self.critic_opt,
                &mut self.critic_caches,
                &self.buffer,
                &targets,
                self.hyper.alpha_critic,
            )?;
            actor_update(
                &mut self.a2c.actor,
                &mut self.actor_opt,
                &mut self.actor_caches,
                &self.buffer,
                &advantages,
                self.hyper.alpha_actor,
            )?;
        }
        self.buffer.clear();
        Ok(())
    }
}

/// Trains one agent on its task; fully independent of every other agent.
pub fn train_agent(
    topo: &Arc<Topology>,
    snapshots: &[Snapshot],
    statics: &[Arc<Vec<f64>>],
    task: &AgentTask,
    hyper: &Hyperparams,
    weights: &RewardWeights,
    warm: Option<&A2c>,
    seed: u64,
) -> Result<AgentRecord, TrainError> {
    if snapshots.is_empty() {
        return Err(TrainError::NoSnapshots);
    }
    let n = topo.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a2c = match warm {
        Some(w) => w.clone(),
        None => A2c::new(n, &mut rng),
    };
    check_warm_shape(&a2c, n)?;

    let cap = hyper.step_cap(n);
    let mut driver = Driver::new(a2c, *hyper, rng);
    let mut episodes = Vec::with_capacity(hyper.episodes);
    for ep in 0..hyper.episodes {
        let si = ep % snapshots.len();
        let env = Env::new(topo.clone(), snapshots[si].norm.clone(), *weights);
        let stats =
            driver.episode(&env, &statics[si], task.src, &task.assigned_dsts, cap)?;
        episodes.push(stats);
    }

    // Greedy deployment rollout on the last trained snapshot.
    let si = hyper.episodes.saturating_sub(1) % snapshots.len();
    let env = Env::new(topo.clone(), snapshots[si].norm.clone(), *weights);
    let (paths, fallback_dsts) = greedy_paths(
        &driver.a2c,
        &env,
        &statics[si],
        &snapshots[si].raw,
        task,
        cap,
    )?;

    Ok(AgentRecord {
        task: task.clone(),
        episodes,
        a2c: Some(driver.a2c),
        paths,
        fallback_dsts,
    })
}

fn check_warm_shape(a2c: &A2c, n: usize) -> Result<(), TrainError> {
    let expected = 8 * n * n;
    if a2c.actor.input_dim() != expected || a2c.critic.input_dim() != expected {
        return Err(TrainError::WarmStartShape { expected, got: a2c.actor.input_dim() });
    }
    Ok(())
}

/// Greedy rollout of a trained policy: at each step take the highest-
/// probability action among the currently valid ones (invalid and looping
/// picks are thereby skipped to the next best). Destinations still missing
/// when the walk stalls or the cap runs out fall back to min-delay routes.
fn greedy_paths(
    a2c: &A2c,
    env: &Env,
    static_x: &Arc<Vec<f64>>,
    raw: &LinkStateMatrices,
    task: &AgentTask,
    cap: usize,
) -> Result<(Vec<RoutePath>, BTreeSet<usize>), TrainError> {
    let topo = env.topology();
    let n = topo.node_count();
    let mut caches = CacheSet::new();
    let mut state = env.reset(task.src, &task.assigned_dsts)?;

    for _ in 0..cap {
        if state.is_terminal() {
            break;
        }
        let valid = env.valid_actions(&state)?;
        if valid.is_empty() {
            break;
        }
        let input = StateInput::from_state(static_x.clone(), &state, n);
        let probs = policy_forward(&a2c.actor, &mut caches, &input)?;
        // Ascending scan with strict improvement: ties go to the lowest id.
        let mut best = valid[0];
        let mut best_p = probs[valid[0]];
        for &a in &valid[1..] {
            if probs[a] > best_p {
                best_p = probs[a];
                best = a;
            }
        }
        state = env.step(&state, best)?.next_state;
    }

    let mut paths = Vec::new();
    let mut fallbacks = BTreeSet::new();
    for &dst in &task.assigned_dsts {
        match path_in_edges(state.tree_edges(), task.src, dst) {
            Some(nodes) => {
                paths.push(RoutePath::new(nodes, topo).expect("grown tree paths are valid"));
            }
            None => {
                // Min-delay unicast fallback, flagged for the run record.
                let weight = |u: usize, v: usize| {
                    raw.edge(Channel::Delay, u, v).unwrap_or(f64::INFINITY)
                };
                paths.push(shortest_path(topo, &weight, task.src, dst)?);
                fallbacks.insert(dst);
            }
        }
    }
    Ok((paths, fallbacks))
}

/// Rolls out every active agent on one snapshot and merges the routes.
///
/// Returns the merged tree plus any destinations that needed the min-delay
/// fallback.
pub fn rollout_merged_tree(
    agents: &[(&AgentTask, &A2c)],
    topo: &Arc<Topology>,
    snapshot: &Snapshot,
    weights: &RewardWeights,
    cap: usize,
) -> Result<(MulticastTree, BTreeSet<usize>), TrainError> {
    let env = Env::new(topo.clone(), snapshot.norm.clone(), *weights);
    let static_x = Arc::new(snapshot.static_input());
    let mut all_paths = Vec::new();
    let mut all_fallbacks = BTreeSet::new();
    for (task, a2c) in agents {
        if !task.is_active() {
            continue;
        }
        let (paths, fallbacks) =
            greedy_paths(a2c, &env, &static_x, &snapshot.raw, task, cap)?;
        all_paths.extend(paths);
        all_fallbacks.extend(fallbacks);
    }
    let tree = merge_agent_trees(&all_paths, &snapshot.raw)?;
    Ok((tree, all_fallbacks))
}

/// Merges every agent's routes into the final multicast tree.
pub fn merge_agent_trees(
    paths: &[RoutePath],
    m: &impl LinkMetrics,
) -> Result<MulticastTree, MulticastError> {
    merge_paths(paths, m)
}

/// Full decentralized training: partition, per-agent learning, rollout and
/// merge. Deterministic for a fixed config and seed.
pub fn train_madrl(
    topo: &Arc<Topology>,
    snapshots: &[Snapshot],
    request: &MulticastRequest,
    hyper: &Hyperparams,
    weights: &RewardWeights,
    warm: Option<&PretrainedWeights>,
) -> Result<TrainingRun, TrainError> {
    if snapshots.is_empty() {
        return Err(TrainError::NoSnapshots);
    }
    request.validate_in(topo).map_err(TrainError::Multicast)?;
    if let Some(w) = warm {
        check_warm_shape(&w.a2c, topo.node_count())?;
    }

    let mut partition_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let tasks =
        partition_destinations(request.src, &request.dst_set, hyper.n_agents, &mut partition_rng);
    let statics: Vec<Arc<Vec<f64>>> =
        snapshots.iter().map(|s| Arc::new(s.static_input())).collect();

    let mut agents = Vec::with_capacity(tasks.len());
    for task in &tasks {
        if !task.is_active() {
            agents.push(AgentRecord {
                task: task.clone(),
                episodes: vec![EpisodeStats::default(); hyper.episodes],
                a2c: None,
                paths: Vec::new(),
                fallback_dsts: BTreeSet::new(),
            });
            continue;
        }
        let seed = hyper.seed + task.agent_index as u64;
        let record = train_agent(
            topo,
            snapshots,
            &statics,
            task,
            hyper,
            weights,
            warm.map(|w| &w.a2c),
            seed,
        )?;
        agents.push(record);
    }

    let all_paths: Vec<RoutePath> =
        agents.iter().flat_map(|a| a.paths.iter().cloned()).collect();
    let si = hyper.episodes.saturating_sub(1) % snapshots.len();
    let tree = merge_agent_trees(&all_paths, &snapshots[si].raw)?;

    Ok(TrainingRun { agents, tree, hyper: *hyper, weights: *weights })
}

/// Pretrains one generic agent on uniformly sampled unicast episodes across
/// all ordered (src, dst) pairs and all snapshots.
pub fn pretrain_unicast(
    topo: &Arc<Topology>,
    snapshots: &[Snapshot],
    hyper: &Hyperparams,
    rng: &mut impl Rng,
) -> Result<PretrainRun, TrainError> {
    if snapshots.is_empty() {
        return Err(TrainError::NoSnapshots);
    }
    let n = topo.node_count();
    let cap = hyper.step_cap(n);
    let statics: Vec<Arc<Vec<f64>>> =
        snapshots.iter().map(|s| Arc::new(s.static_input())).collect();

    let a2c = A2c::new(n, rng);
    let driver_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut driver = Driver::new(a2c, *hyper, driver_rng);
    let weights = RewardWeights::default();

    let mut episodes = Vec::with_capacity(hyper.episodes);
    for _ in 0..hyper.episodes {
        let si = rng.gen_range(0..snapshots.len());
        let src = rng.gen_range(0..n);
        let mut dst = rng.gen_range(0..n - 1);
        if dst >= src {
            dst += 1;
        }
        let env = Env::new(topo.clone(), snapshots[si].norm.clone(), weights);
        let stats =
            driver.episode(&env, &statics[si], src, &BTreeSet::from([dst]), cap)?;
        if !stats.reward.is_finite() {
            return Err(TrainError::Agent(AgentError::NonFiniteGradient {
                norm: stats.reward,
            }));
        }
        episodes.push(stats);
    }

    Ok(PretrainRun {
        weights: PretrainedWeights {
            a2c: driver.a2c,
            provenance: Provenance {
                topology_hash: topology_hash(topo),
                traffic_hash: snapshots_hash(snapshots),
                episodes: hyper.episodes,
            },
        },
        episodes,
    })
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(FNV_OFFSET)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn write_f64(&mut self, v: f64) {
        self.write(&v.to_bits().to_le_bytes());
    }

    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }
}

/// Stable fingerprint of a topology's nodes and edges.
pub fn topology_hash(topo: &Topology) -> u64 {
    let mut h = Fnv::new();
    h.write_u64(topo.node_count() as u64);
    for node in topo.nodes() {
        h.write_u64(node.id as u64);
        h.write_f64(node.x);
        h.write_f64(node.y);
    }
    for link in topo.edges() {
        h.write_u64(link.u as u64);
        h.write_u64(link.v as u64);
        h.write_f64(link.bw_max);
    }
    h.0
}

/// Stable fingerprint of a snapshot series.
pub fn snapshots_hash(snapshots: &[Snapshot]) -> u64 {
    let mut h = Fnv::new();
    h.write_u64(snapshots.len() as u64);
    for snap in snapshots {
        let n = snap.raw.size();
        h.write_u64(n as u64);
        for ch in Channel::ALL {
            for ((i, j), v) in snap.raw.channel(ch).present() {
                h.write_u64(i as u64);
                h.write_u64(j as u64);
                h.write_f64(v);
            }
        }
    }
    h.0
}
