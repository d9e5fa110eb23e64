//! Path and multicast-tree mathematics.
//!
//! A multicast tree is assembled from unicast routes; this module carries the
//! per-path metric aggregation, the path/tree objectives, the path-union
//! merge with redundant-link removal, and the tree-level aggregates used for
//! terminal rewards and reports.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::env::RewardWeights;
use crate::topology::{Channel, LinkMetrics, Topology};

/// A multicast request: one source and a non-empty destination set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticastRequest {
    pub src: usize,
    pub dst_set: BTreeSet<usize>,
}

impl MulticastRequest {
    pub fn new(src: usize, dsts: impl IntoIterator<Item = usize>) -> Result<Self, MulticastError> {
        let dst_set: BTreeSet<usize> = dsts.into_iter().collect();
        if dst_set.is_empty() {
            return Err(MulticastError::EmptyDstSet);
        }
        if dst_set.contains(&src) {
            return Err(MulticastError::SrcInDstSet { src });
        }
        Ok(MulticastRequest { src, dst_set })
    }

    pub fn validate_in(&self, topo: &Topology) -> Result<(), MulticastError> {
        for &node in core::iter::once(&self.src).chain(&self.dst_set) {
            if !topo.contains_node(node) {
                return Err(MulticastError::UnknownNode { node });
            }
        }
        Ok(())
    }

    /// Terminals of the Steiner instance: the source plus every destination.
    pub fn terminals(&self) -> BTreeSet<usize> {
        let mut t = self.dst_set.clone();
        t.insert(self.src);
        t
    }
}

/// Errors across the multicast path/tree operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MulticastError {
    EmptyDstSet,
    SrcInDstSet { src: usize },
    UnknownNode { node: usize },
    /// Consecutive path nodes are not adjacent in the topology.
    NotAdjacent { u: usize, v: usize },
    RepeatedNode { node: usize },
    /// A path metric was requested for a path with no edges.
    EmptyPath,
    /// A path edge has no value in the metric matrices.
    InvalidPath { u: usize, v: usize },
    /// merge_paths inputs do not share a source.
    MixedSources,
    DuplicateDestination { dst: usize },
    /// The edge set is not a single tree covering all terminals.
    NotATree,
    MissingTerminal { node: usize },
    /// A leaf of the edge set is neither the source nor a destination.
    RedundantLeaf { node: usize },
}

impl fmt::Display for MulticastError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MulticastError::EmptyDstSet => write!(f, "destination set is empty"),
            MulticastError::SrcInDstSet { src } => {
                write!(f, "source {src} appears in the destination set")
            }
            MulticastError::UnknownNode { node } => write!(f, "node {node} is not in the topology"),
            MulticastError::NotAdjacent { u, v } => {
                write!(f, "path step ({u}, {v}) is not a topology edge")
            }
            MulticastError::RepeatedNode { node } => write!(f, "path repeats node {node}"),
            MulticastError::EmptyPath => write!(f, "path has no edges"),
            MulticastError::InvalidPath { u, v } => {
                write!(f, "no metric value on path edge ({u}, {v})")
            }
            MulticastError::MixedSources => write!(f, "paths do not share a source"),
            MulticastError::DuplicateDestination { dst } => {
                write!(f, "duplicate destination {dst}")
            }
            MulticastError::NotATree => write!(f, "edge set is not a single tree"),
            MulticastError::MissingTerminal { node } => {
                write!(f, "terminal {node} is not covered by the tree")
            }
            MulticastError::RedundantLeaf { node } => {
                write!(f, "non-terminal leaf {node} in tree")
            }
        }
    }
}

impl core::error::Error for MulticastError {}

/// A simple route: an ordered node list from a source to one destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePath {
    nodes: Vec<usize>,
}

impl RoutePath {
    /// Validates adjacency and node uniqueness against the topology.
    pub fn new(nodes: Vec<usize>, topo: &Topology) -> Result<Self, MulticastError> {
        if nodes.is_empty() {
            return Err(MulticastError::EmptyPath);
        }
        let mut seen = BTreeSet::new();
        for &node in &nodes {
            if !topo.contains_node(node) {
                return Err(MulticastError::UnknownNode { node });
            }
            if !seen.insert(node) {
                return Err(MulticastError::RepeatedNode { node });
            }
        }
        for pair in nodes.windows(2) {
            if !topo.has_edge(pair[0], pair[1]) {
                return Err(MulticastError::NotAdjacent { u: pair[0], v: pair[1] });
            }
        }
        Ok(RoutePath { nodes })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn src(&self) -> usize {
        self.nodes[0]
    }

    pub fn dst(&self) -> usize {
        *self.nodes.last().unwrap()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Consecutive node pairs along the route.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Aggregated metrics of one route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub bw: f64,
    pub delay: f64,
    pub loss: f64,
    pub used_bw: f64,
    pub errors: f64,
    pub drops: f64,
    pub distance: f64,
}

impl PathMetrics {
    /// The seven values in canonical channel order.
    pub fn channel_values(&self) -> [f64; 7] {
        [self.bw, self.delay, self.loss, self.used_bw, self.errors, self.drops, self.distance]
    }
}

/// Per-path aggregation: bottleneck min for bw, sum for delay, survival
/// products for loss/errors/drops, max for used bw, mean for distance.
pub fn path_metrics(
    path: &RoutePath,
    m: &impl LinkMetrics,
) -> Result<PathMetrics, MulticastError> {
    if path.edge_count() == 0 {
        return Err(MulticastError::EmptyPath);
    }
    let mut bw = f64::INFINITY;
    let mut delay = 0.0;
    let mut used_bw = 0.0f64;
    let mut dist_sum = 0.0;
    let mut loss_surv = 1.0;
    let mut err_surv = 1.0;
    let mut drop_surv = 1.0;
    for (u, v) in path.edges() {
        let em = m.edge_metrics(u, v).ok_or(MulticastError::InvalidPath { u, v })?;
        bw = bw.min(em.bw);
        delay += em.delay;
        used_bw = used_bw.max(em.used_bw);
        dist_sum += em.distance;
        loss_surv *= 1.0 - em.loss;
        err_surv *= 1.0 - em.errors;
        drop_surv *= 1.0 - em.drops;
    }
    Ok(PathMetrics {
        bw,
        delay,
        loss: 1.0 - loss_surv,
        used_bw,
        errors: 1.0 - err_surv,
        drops: 1.0 - drop_surv,
        distance: dist_sum / path.edge_count() as f64,
    })
}

/// Scalar objective of one path over normalized metrics: the bandwidth term
/// enters positively, every cost term as its complement.
pub fn path_objective(pm: &PathMetrics, weights: &RewardWeights) -> f64 {
    weights.score(pm.channel_values())
}

/// Objective vector across one path per destination, plus its mean.
pub fn tree_objective(
    paths: &[RoutePath],
    m: &impl LinkMetrics,
    weights: &RewardWeights,
) -> Result<(Vec<f64>, f64), MulticastError> {
    let mut seen = BTreeSet::new();
    for path in paths {
        if !seen.insert(path.dst()) {
            return Err(MulticastError::DuplicateDestination { dst: path.dst() });
        }
    }
    let mut values = Vec::with_capacity(paths.len());
    for path in paths {
        values.push(path_objective(&path_metrics(path, m)?, weights));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((values, mean))
}

/// Serialized form of a multicast tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeRaw {
    src: usize,
    dst_set: BTreeSet<usize>,
    edges: BTreeSet<(usize, usize)>,
}

/// A tree rooted at `src` spanning every destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeRaw", into = "TreeRaw")]
pub struct MulticastTree {
    src: usize,
    dst_set: BTreeSet<usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl TryFrom<TreeRaw> for MulticastTree {
    type Error = MulticastError;

    fn try_from(raw: TreeRaw) -> Result<Self, Self::Error> {
        MulticastTree::new(raw.src, raw.dst_set, raw.edges)
    }
}

impl From<MulticastTree> for TreeRaw {
    fn from(t: MulticastTree) -> Self {
        TreeRaw { src: t.src, dst_set: t.dst_set, edges: t.edges }
    }
}

impl MulticastTree {
    /// Validates that `edges` form a single connected acyclic component
    /// covering the source and every destination, with no redundant leaves.
    pub fn new(
        src: usize,
        dst_set: BTreeSet<usize>,
        edges: BTreeSet<(usize, usize)>,
    ) -> Result<Self, MulticastError> {
        if dst_set.is_empty() {
            return Err(MulticastError::EmptyDstSet);
        }
        if dst_set.contains(&src) {
            return Err(MulticastError::SrcInDstSet { src });
        }
        let edges: BTreeSet<(usize, usize)> =
            edges.into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        let adj = adjacency(&edges);
        for &t in core::iter::once(&src).chain(&dst_set) {
            if !adj.contains_key(&t) {
                return Err(MulticastError::MissingTerminal { node: t });
            }
        }
        // Connected and acyclic: one component reaching every covered node,
        // with |edges| = |nodes| - 1.
        let reached = component_of(src, &adj);
        if reached.len() != adj.len() || edges.len() != adj.len() - 1 {
            return Err(MulticastError::NotATree);
        }
        for (&node, neighbors) in &adj {
            if neighbors.len() == 1 && node != src && !dst_set.contains(&node) {
                return Err(MulticastError::RedundantLeaf { node });
            }
        }
        Ok(MulticastTree { src, dst_set, edges })
    }

    pub fn src(&self) -> usize {
        self.src
    }

    pub fn dst_set(&self) -> &BTreeSet<usize> {
        &self.dst_set
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Every edge must exist in the topology.
    pub fn validate_in(&self, topo: &Topology) -> Result<(), MulticastError> {
        for &(u, v) in &self.edges {
            if !topo.contains_node(u) || !topo.contains_node(v) {
                return Err(MulticastError::UnknownNode { node: u.max(v) });
            }
            if !topo.has_edge(u, v) {
                return Err(MulticastError::NotAdjacent { u, v });
            }
        }
        Ok(())
    }

    /// The unique in-tree route from the source to `dst`.
    pub fn path_to(&self, dst: usize) -> Option<Vec<usize>> {
        let adj = adjacency(&self.edges);
        tree_path(self.src, dst, &adj)
    }
}

/// Tree-level aggregates: bottleneck bandwidth, worst-receiver cost metrics,
/// mean edge distance, and the edge count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub bw: f64,
    pub delay: f64,
    pub loss: f64,
    pub used_bw: f64,
    pub errors: f64,
    pub drops: f64,
    pub distance: f64,
    pub len: usize,
}

impl TreeMetrics {
    pub fn channel_values(&self) -> [f64; 7] {
        [self.bw, self.delay, self.loss, self.used_bw, self.errors, self.drops, self.distance]
    }
}

/// Computes [`TreeMetrics`]: min/max over edges for bw/used_bw, the worst
/// per-destination path aggregate for delay/loss/errors/drops, and the mean
/// edge distance.
pub fn tree_metrics(
    tree: &MulticastTree,
    m: &impl LinkMetrics,
) -> Result<TreeMetrics, MulticastError> {
    let mut bw = f64::INFINITY;
    let mut used_bw = 0.0f64;
    let mut dist_sum = 0.0;
    for &(u, v) in tree.edges() {
        let em = m.edge_metrics(u, v).ok_or(MulticastError::InvalidPath { u, v })?;
        bw = bw.min(em.bw);
        used_bw = used_bw.max(em.used_bw);
        dist_sum += em.distance;
    }

    let adj = adjacency(tree.edges());
    let mut delay = 0.0f64;
    let mut loss = 0.0f64;
    let mut errors = 0.0f64;
    let mut drops = 0.0f64;
    for &dst in tree.dst_set() {
        let nodes = tree_path(tree.src(), dst, &adj).ok_or(MulticastError::NotATree)?;
        let mut d = 0.0;
        let mut loss_surv = 1.0;
        let mut err_surv = 1.0;
        let mut drop_surv = 1.0;
        for w in nodes.windows(2) {
            let em = m
                .edge_metrics(w[0], w[1])
                .ok_or(MulticastError::InvalidPath { u: w[0], v: w[1] })?;
            d += em.delay;
            loss_surv *= 1.0 - em.loss;
            err_surv *= 1.0 - em.errors;
            drop_surv *= 1.0 - em.drops;
        }
        delay = delay.max(d);
        loss = loss.max(1.0 - loss_surv);
        errors = errors.max(1.0 - err_surv);
        drops = drops.max(1.0 - drop_surv);
    }

    Ok(TreeMetrics {
        bw,
        delay,
        loss,
        used_bw,
        errors,
        drops,
        distance: dist_sum / tree.len() as f64,
        len: tree.len(),
    })
}

/// Merges per-destination routes into one multicast tree.
///
/// Takes the union of the path edges, keeps its minimum-delay spanning
/// structure when the union is cyclic (delay read from `m`), then strips
/// non-terminal leaves until every leaf is the source or a destination.
pub fn merge_paths(
    paths: &[RoutePath],
    m: &impl LinkMetrics,
) -> Result<MulticastTree, MulticastError> {
    let Some(first) = paths.first() else {
        return Err(MulticastError::EmptyDstSet);
    };
    let src = first.src();
    let mut dst_set = BTreeSet::new();
    let mut union: BTreeSet<(usize, usize)> = BTreeSet::new();
    for path in paths {
        if path.src() != src {
            return Err(MulticastError::MixedSources);
        }
        dst_set.insert(path.dst());
        for (u, v) in path.edges() {
            union.insert((u.min(v), u.max(v)));
        }
    }
    dst_set.remove(&src);
    if dst_set.is_empty() {
        return Err(MulticastError::EmptyDstSet);
    }

    // Minimum-delay spanning structure of the union subgraph. When the union
    // is already a tree this is the union itself.
    let mut weighted: Vec<(f64, usize, usize)> = Vec::with_capacity(union.len());
    for &(u, v) in &union {
        let d = m
            .edge(Channel::Delay, u, v)
            .ok_or(MulticastError::InvalidPath { u, v })?;
        weighted.push((d, u, v));
    }
    weighted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nodes: BTreeSet<usize> = union.iter().flat_map(|&(u, v)| [u, v]).collect();
    let ids: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let mut dsu = Dsu::new(nodes.len());
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (_, u, v) in weighted {
        if dsu.union(ids[&u], ids[&v]) {
            edges.insert((u, v));
        }
    }

    let mut terminals = dst_set.clone();
    terminals.insert(src);
    prune_non_terminal_leaves(&mut edges, &terminals);

    // The union contains a path from src to every destination, so the
    // spanning structure keeps all terminals connected.
    Ok(MulticastTree::new(src, dst_set, edges)
        .expect("pruned path union must form a multicast tree"))
}

/// Route between two nodes within an explicit edge set, if one exists.
///
/// Used to read per-destination routes out of a partially grown tree.
pub fn path_in_edges(
    edges: &BTreeSet<(usize, usize)>,
    from: usize,
    to: usize,
) -> Option<Vec<usize>> {
    tree_path(from, to, &adjacency(edges))
}

/// Repeatedly removes leaves that are not terminals.
pub fn prune_non_terminal_leaves(
    edges: &mut BTreeSet<(usize, usize)>,
    terminals: &BTreeSet<usize>,
) {
    loop {
        let adj = adjacency(edges);
        let doomed: Vec<usize> = adj
            .iter()
            .filter(|(node, nbrs)| nbrs.len() == 1 && !terminals.contains(node))
            .map(|(&node, _)| node)
            .collect();
        if doomed.is_empty() {
            return;
        }
        for node in doomed {
            edges.retain(|&(u, v)| u != node && v != node);
        }
    }
}

/// Minimal union-find over dense indices.
pub(crate) struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    pub(crate) fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Merges the two sets; false if they were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

fn adjacency(edges: &BTreeSet<(usize, usize)>) -> BTreeMap<usize, Vec<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, v) in edges {
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    adj
}

fn component_of(start: usize, adj: &BTreeMap<usize, Vec<usize>>) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack = alloc::vec![start];
    seen.insert(start);
    while let Some(u) = stack.pop() {
        if let Some(nbrs) = adj.get(&u) {
            for &v in nbrs {
                if seen.insert(v) {
                    stack.push(v);
                }
            }
        }
    }
    seen
}

/// DFS path between two nodes of a tree given its adjacency.
fn tree_path(from: usize, to: usize, adj: &BTreeMap<usize, Vec<usize>>) -> Option<Vec<usize>> {
    if from == to {
        return Some(alloc::vec![from]);
    }
    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    let mut stack = alloc::vec![from];
    parent.insert(from, from);
    while let Some(u) = stack.pop() {
        if u == to {
            break;
        }
        if let Some(nbrs) = adj.get(&u) {
            for &v in nbrs {
                if !parent.contains_key(&v) {
                    parent.insert(v, u);
                    stack.push(v);
                }
            }
        }
    }
    if !parent.contains_key(&to) {
        return None;
    }
    let mut nodes = alloc::vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[&cur];
        nodes.push(cur);
    }
    nodes.reverse();
    Some(nodes)
}
