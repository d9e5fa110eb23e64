//! The per-agent routing environment.
//!
//! Each agent grows a partial multicast tree over the shared topology. The
//! state is the 8-channel tensor of the seven normalized traffic matrices
//! plus the 0/1 tree-progress matrix; an action is a node id; a step is one
//! of four outcomes: a productive attachment (PART), an invalid non-adjacent
//! pick (HELL), a pick already in the tree (LOOP), or completion (END).

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::multicast::{tree_metrics, MulticastTree, TreeMetrics};
use crate::topology::{Channel, EdgeMetrics, LinkMetrics, NormalizedMatrices, Topology};

/// Reward weighting: the seven channel factors plus the two fixed penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Factors for bw, delay, loss, used_bw, errors, drops, distance.
    pub beta: [f64; 7],
    /// Penalty for a non-adjacent action.
    pub r_hell: f64,
    /// Penalty for re-selecting a tree node.
    pub r_loop: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { beta: [0.7, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1], r_hell: -0.7, r_loop: -0.5 }
    }
}

impl RewardWeights {
    /// Weighted sum over normalized channel values: the bandwidth term is
    /// taken as-is, every cost channel as its complement.
    pub fn score(&self, values: [f64; 7]) -> f64 {
        let mut total = 0.0;
        for ch in Channel::ALL {
            let v = values[ch.index()];
            let term = if ch.is_cost() { 1.0 - v } else { v };
            total += self.beta[ch.index()] * term;
        }
        total
    }

    /// Maximum attainable score: the sum of all weights.
    pub fn max_score(&self) -> f64 {
        self.beta.iter().sum()
    }
}

/// Per-link attachment reward over normalized edge metrics.
pub fn reward_part(edge: &EdgeMetrics, weights: &RewardWeights) -> f64 {
    weights.score(edge.channel_values())
}

/// Terminal reward over normalized tree-level metrics.
pub fn reward_end(tree: &TreeMetrics, weights: &RewardWeights) -> f64 {
    weights.score(tree.channel_values())
}

/// One agent's view of its episode: the partial tree and what is left to do.
///
/// The full 8-channel tensor is materialized on demand by [`EnvState::to_input`];
/// the state itself stores only the tree support and bookkeeping sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    src: usize,
    /// The destinations this agent was assigned (fixed over the episode).
    dsts: BTreeSet<usize>,
    /// Nodes currently in the partial tree.
    head: BTreeSet<usize>,
    /// Assigned destinations not yet reached.
    remaining: BTreeSet<usize>,
    /// Support of the symmetric 0/1 tree-progress matrix, as (min, max) pairs.
    tree_edges: BTreeSet<(usize, usize)>,
    terminal: bool,
}

impl EnvState {
    pub fn src(&self) -> usize {
        self.src
    }

    pub fn assigned(&self) -> &BTreeSet<usize> {
        &self.dsts
    }

    pub fn head(&self) -> &BTreeSet<usize> {
        &self.head
    }

    pub fn remaining(&self) -> &BTreeSet<usize> {
        &self.remaining
    }

    pub fn tree_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.tree_edges
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Indices set to 1 inside the flattened n*n tree channel.
    pub fn tree_channel_ones(&self, n: usize) -> Vec<usize> {
        let mut ones = Vec::with_capacity(self.tree_edges.len() * 2);
        for &(u, v) in &self.tree_edges {
            ones.push(u * n + v);
            ones.push(v * n + u);
        }
        ones.sort_unstable();
        ones
    }

    /// Dense 8 * n * n state tensor: seven normalized channels then the tree
    /// channel.
    pub fn to_input(&self, norm: &NormalizedMatrices) -> Vec<f64> {
        let n = norm.size();
        let mut x = norm.flatten_channels();
        let base = x.len();
        x.resize(base + n * n, 0.0);
        for idx in self.tree_channel_ones(n) {
            x[base + idx] = 1.0;
        }
        x
    }
}

/// How one step turned out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Part,
    Hell,
    Loop,
    End,
}

/// Step result: the outcome class, its reward, and the successor state.
///
/// HELL and LOOP roll back, so `next_state` equals the input state there.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub kind: StepKind,
    pub reward: f64,
    pub next_state: EnvState,
}

/// Environment API errors (distinct from penalized in-episode outcomes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvError {
    UnknownNode { node: usize },
    EmptyAssignment,
    SrcAssignedToItself { src: usize },
    /// reset/step/valid_actions called with a terminal state.
    Terminal,
    /// Action id outside 0..n-1.
    ActionOutOfRange { action: usize },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::UnknownNode { node } => write!(f, "node {node} is not in the topology"),
            EnvError::EmptyAssignment => write!(f, "agent has no assigned destinations"),
            EnvError::SrcAssignedToItself { src } => {
                write!(f, "source {src} cannot be its own destination")
            }
            EnvError::Terminal => write!(f, "state is terminal"),
            EnvError::ActionOutOfRange { action } => {
                write!(f, "action {action} is outside the node range")
            }
        }
    }
}

impl core::error::Error for EnvError {}

/// Shared, read-only environment context for one snapshot.
#[derive(Debug, Clone)]
pub struct Env {
    topo: Arc<Topology>,
    norm: Arc<NormalizedMatrices>,
    weights: RewardWeights,
}

impl Env {
    pub fn new(topo: Arc<Topology>, norm: Arc<NormalizedMatrices>, weights: RewardWeights) -> Self {
        Env { topo, norm, weights }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn normalized(&self) -> &NormalizedMatrices {
        &self.norm
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.topo.node_count()
    }

    /// Fresh episode state: tree support empty, head set just the source.
    pub fn reset(&self, src: usize, dsts: &BTreeSet<usize>) -> Result<EnvState, EnvError> {
        if dsts.is_empty() {
            return Err(EnvError::EmptyAssignment);
        }
        if dsts.contains(&src) {
            return Err(EnvError::SrcAssignedToItself { src });
        }
        for &node in core::iter::once(&src).chain(dsts) {
            if !self.topo.contains_node(node) {
                return Err(EnvError::UnknownNode { node });
            }
        }
        Ok(EnvState {
            src,
            dsts: dsts.clone(),
            head: BTreeSet::from([src]),
            remaining: dsts.clone(),
            tree_edges: BTreeSet::new(),
            terminal: false,
        })
    }

    /// Nodes adjacent to the current partial tree and not yet inside it.
    pub fn valid_actions(&self, state: &EnvState) -> Result<Vec<usize>, EnvError> {
        if state.terminal {
            return Err(EnvError::Terminal);
        }
        let mut out: BTreeSet<usize> = BTreeSet::new();
        for &h in &state.head {
            for &v in self.topo.neighbors(h) {
                if !state.head.contains(&v) {
                    out.insert(v);
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Classifies and applies one action.
    ///
    /// Any node id is submittable: non-adjacent picks are HELL, picks already
    /// in the tree are LOOP (both penalized, state rolled back). A productive
    /// pick attaches via the head node whose link scores the highest
    /// attachment reward (ties to the lowest node id); reaching the last
    /// assigned destination replaces that reward with the tree-level one.
    pub fn step(&self, state: &EnvState, action: usize) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::Terminal);
        }
        if !self.topo.contains_node(action) {
            return Err(EnvError::ActionOutOfRange { action });
        }

        let mut anchors = state
            .head
            .iter()
            .copied()
            .filter(|&h| self.topo.has_edge(h, action));
        let Some(first_anchor) = anchors.next() else {
            return Ok(StepOutcome {
                kind: StepKind::Hell,
                reward: self.weights.r_hell,
                next_state: state.clone(),
            });
        };
        if state.head.contains(&action) {
            return Ok(StepOutcome {
                kind: StepKind::Loop,
                reward: self.weights.r_loop,
                next_state: state.clone(),
            });
        }

        // Attach through the best-scoring adjacent head node; iteration is
        // ascending, so strict improvement keeps the lowest id on ties.
        let mut best = first_anchor;
        let mut best_reward = self.attach_reward(first_anchor, action);
        for h in anchors {
            let r = self.attach_reward(h, action);
            if r > best_reward {
                best_reward = r;
                best = h;
            }
        }

        let mut next = state.clone();
        next.tree_edges.insert((best.min(action), best.max(action)));
        next.head.insert(action);
        next.remaining.remove(&action);

        if next.remaining.is_empty() {
            next.terminal = true;
            let reward = self.end_reward(&next);
            Ok(StepOutcome { kind: StepKind::End, reward, next_state: next })
        } else {
            Ok(StepOutcome { kind: StepKind::Part, reward: best_reward, next_state: next })
        }
    }

    fn attach_reward(&self, h: usize, action: usize) -> f64 {
        let em = self
            .norm
            .edge_metrics(h, action)
            .expect("adjacent nodes have normalized metrics");
        reward_part(&em, &self.weights)
    }

    /// Tree-level reward over the grown tree with exploration dead-ends
    /// stripped, evaluated on the normalized channels.
    fn end_reward(&self, state: &EnvState) -> f64 {
        let tree = state_tree(state).expect("completed episode state holds a multicast tree");
        let tm = tree_metrics(&tree, &*self.norm).expect("tree edges carry metrics");
        reward_end(&tm, &self.weights)
    }
}

/// The multicast tree described by a completed episode state: the grown tree
/// with non-terminal leaves pruned.
pub fn state_tree(state: &EnvState) -> Option<MulticastTree> {
    let mut edges = state.tree_edges.clone();
    let mut terminals = state.dsts.clone();
    terminals.insert(state.src);
    crate::multicast::prune_non_terminal_leaves(&mut edges, &terminals);
    MulticastTree::new(state.src, state.dsts.clone(), edges).ok()
}
