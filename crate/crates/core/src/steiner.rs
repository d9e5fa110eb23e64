//! Weighted Steiner-tree construction: deterministic shortest paths, the
//! five-step KMB heuristic under three link-weight choices, and an
//! exhaustive optimum finder for small instances used as a test oracle.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::multicast::{prune_non_terminal_leaves, Dsu, MulticastRequest, MulticastTree, RoutePath};
use crate::topology::{Channel, LinkMetrics, Topology};

/// Highest loss fed into the -ln(1 - loss) transform.
const LOSS_CLAMP: f64 = 0.999999;
/// Guard added to residual bandwidth before taking the reciprocal.
const BW_EPSILON: f64 = 1e-6;

/// Which link metric a KMB run minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmbMetric {
    /// Reciprocal residual bandwidth, 1 / (bw + 1e-6).
    Bw,
    /// Link delay as-is.
    Delay,
    /// Additive loss, -ln(1 - loss) with loss clamped below 1.
    Loss,
}

impl KmbMetric {
    pub fn label(self) -> &'static str {
        match self {
            KmbMetric::Bw => "KMB_bw",
            KmbMetric::Delay => "KMB_delay",
            KmbMetric::Loss => "KMB_loss",
        }
    }

    /// Edge weight under this metric; `None` when (u, v) carries no value.
    pub fn edge_weight(self, m: &impl LinkMetrics, u: usize, v: usize) -> Option<f64> {
        match self {
            KmbMetric::Delay => m.edge(Channel::Delay, u, v),
            KmbMetric::Loss => m
                .edge(Channel::Loss, u, v)
                .map(|loss| -math::ln(1.0 - loss.min(LOSS_CLAMP))),
            KmbMetric::Bw => m.edge(Channel::Bw, u, v).map(|bw| 1.0 / (bw + BW_EPSILON)),
        }
    }
}

/// Routing errors for the Steiner constructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteError {
    UnknownNode { node: usize },
    Unreachable { from: usize, to: usize },
    /// Weight function produced a negative or non-finite value.
    BadWeight { u: usize, v: usize },
    /// Oracle instance above the enumeration size limit.
    TooLarge { nodes: usize, limit: usize },
}

impl fmt::Display for RouteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteError::UnknownNode { node } => write!(f, "node {node} is not in the topology"),
            RouteError::Unreachable { from, to } => write!(f, "no route from {from} to {to}"),
            RouteError::BadWeight { u, v } => {
                write!(f, "negative or non-finite weight on edge ({u}, {v})")
            }
            RouteError::TooLarge { nodes, limit } => {
                write!(f, "{nodes} nodes exceeds the enumeration limit of {limit}")
            }
        }
    }
}

impl core::error::Error for RouteError {}

/// Minimum-weight route between two nodes under a non-negative edge weight.
///
/// Ties break first toward fewer hops, then toward the lexicographically
/// smallest node sequence, so equal-weight graphs still route reproducibly.
pub fn shortest_path(
    topo: &Topology,
    weight: &impl Fn(usize, usize) -> f64,
    from: usize,
    to: usize,
) -> Result<RoutePath, RouteError> {
    for node in [from, to] {
        if !topo.contains_node(node) {
            return Err(RouteError::UnknownNode { node });
        }
    }
    // Label-correcting search over composite labels (weight, hops, path).
    // The composite order is prefix-monotone, so the usual settle-on-best
    // sweep converges; graphs here are small enough not to need a heap.
    let n = topo.node_count();
    let mut best: Vec<Option<(f64, usize, Vec<usize>)>> = vec![None; n];
    best[from] = Some((0.0, 0, vec![from]));
    let mut frontier = vec![from];
    while let Some(u) = frontier.pop() {
        let (w_u, hops_u, path_u) = best[u].clone().unwrap();
        for &v in topo.neighbors(u) {
            if path_u.contains(&v) {
                continue;
            }
            let w_e = weight(u, v);
            if !(w_e >= 0.0) || !w_e.is_finite() {
                return Err(RouteError::BadWeight { u, v });
            }
            let mut path = path_u.clone();
            path.push(v);
            let cand = (w_u + w_e, hops_u + 1, path);
            let better = match &best[v] {
                None => true,
                Some(cur) => {
                    (cand.0, cand.1, &cand.2) < (cur.0, cur.1, &cur.2)
                }
            };
            if better {
                best[v] = Some(cand);
                frontier.push(v);
            }
        }
    }
    match best[to].take() {
        Some((_, _, nodes)) => {
            Ok(RoutePath::new(nodes, topo).expect("search emits valid simple paths"))
        }
        None => Err(RouteError::Unreachable { from, to }),
    }
}

/// Total weight of a path under an edge weight function.
pub fn path_weight(path: &RoutePath, weight: &impl Fn(usize, usize) -> f64) -> f64 {
    path.edges().map(|(u, v)| weight(u, v)).sum()
}

/// Total weight of a tree's edge set.
pub fn tree_weight(tree: &MulticastTree, weight: &impl Fn(usize, usize) -> f64) -> f64 {
    tree.edges().iter().map(|&(u, v)| weight(u, v)).sum()
}

/// The KMB Steiner heuristic under the chosen link metric.
///
/// Classic five steps: build the metric closure over the terminals, take its
/// minimum spanning tree, expand each closure edge into its shortest path,
/// re-span the induced subgraph, and prune non-terminal leaves.
pub fn kmb(
    topo: &Topology,
    m: &impl LinkMetrics,
    metric: KmbMetric,
    req: &MulticastRequest,
) -> Result<MulticastTree, RouteError> {
    let weight = |u: usize, v: usize| metric.edge_weight(m, u, v).unwrap_or(f64::NAN);
    kmb_with(topo, &weight, req)
}

/// KMB under an arbitrary non-negative edge weight.
pub fn kmb_with(
    topo: &Topology,
    weight: &impl Fn(usize, usize) -> f64,
    req: &MulticastRequest,
) -> Result<MulticastTree, RouteError> {
    let terminals: Vec<usize> = req.terminals().into_iter().collect();
    for &t in &terminals {
        if !topo.contains_node(t) {
            return Err(RouteError::UnknownNode { node: t });
        }
    }

    // 1. Metric closure over the terminals.
    let mut closure: BTreeMap<(usize, usize), (f64, RoutePath)> = BTreeMap::new();
    for (i, &a) in terminals.iter().enumerate() {
        for &b in &terminals[i + 1..] {
            let path = shortest_path(topo, weight, a, b)?;
            closure.insert((a, b), (path_weight(&path, weight), path));
        }
    }

    // 2. MST of the closure graph.
    let mut closure_edges: Vec<(f64, usize, usize)> =
        closure.iter().map(|(&(a, b), &(w, _))| (w, a, b)).collect();
    closure_edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let ids: BTreeMap<usize, usize> =
        terminals.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let mut dsu = Dsu::new(terminals.len());
    let mut spanning: Vec<(usize, usize)> = Vec::new();
    for (_, a, b) in closure_edges {
        if dsu.union(ids[&a], ids[&b]) {
            spanning.push((a, b));
        }
    }

    // 3. Expand closure edges into their shortest paths.
    let mut nodes: BTreeSet<usize> = BTreeSet::new();
    for (a, b) in spanning {
        let (_, path) = &closure[&(a.min(b), a.max(b))];
        nodes.extend(path.nodes().iter().copied());
    }

    // 4. MST of the subgraph induced by the expansion's vertex set.
    let mut induced: Vec<(f64, usize, usize)> = Vec::new();
    for link in topo.edges() {
        let (u, v) = (link.u.min(link.v), link.u.max(link.v));
        if nodes.contains(&u) && nodes.contains(&v) {
            let w = weight(u, v);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(RouteError::BadWeight { u, v });
            }
            induced.push((w, u, v));
        }
    }
    induced.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let node_ids: BTreeMap<usize, usize> =
        nodes.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let mut dsu = Dsu::new(nodes.len());
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (_, u, v) in induced {
        if dsu.union(node_ids[&u], node_ids[&v]) {
            edges.insert((u, v));
        }
    }

    // 5. Prune non-terminal leaves.
    prune_non_terminal_leaves(&mut edges, &req.terminals());
    Ok(MulticastTree::new(req.src, req.dst_set.clone(), edges)
        .expect("KMB spans all terminals of a connected graph"))
}

/// Enumeration limit for [`exhaustive_steiner_oracle`].
pub const ORACLE_NODE_LIMIT: usize = 10;

/// Minimum-weight Steiner tree by exhaustive enumeration.
///
/// Scans every vertex superset of the terminals and takes the best spanning
/// tree of the induced subgraph; only meant for oracle-sized instances.
pub fn exhaustive_steiner_oracle(
    topo: &Topology,
    weight: &impl Fn(usize, usize) -> f64,
    req: &MulticastRequest,
) -> Result<MulticastTree, RouteError> {
    let n = topo.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(RouteError::TooLarge { nodes: n, limit: ORACLE_NODE_LIMIT });
    }
    let terminals = req.terminals();
    for &t in &terminals {
        if !topo.contains_node(t) {
            return Err(RouteError::UnknownNode { node: t });
        }
    }
    let free: Vec<usize> = (0..n).filter(|x| !terminals.contains(x)).collect();

    let mut best: Option<(f64, BTreeSet<(usize, usize)>)> = None;
    for mask in 0..(1u32 << free.len()) {
        let mut vertices = terminals.clone();
        for (bit, &node) in free.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                vertices.insert(node);
            }
        }
        if let Some(found) = spanning_tree_weight(topo, weight, &vertices)? {
            let replace = match &best {
                None => true,
                Some((w, _)) => found.0 < *w,
            };
            if replace {
                best = Some(found);
            }
        }
    }

    let (_, mut edges) = best.ok_or(RouteError::Unreachable {
        from: req.src,
        to: *req.dst_set.iter().next().unwrap(),
    })?;
    prune_non_terminal_leaves(&mut edges, &terminals);
    Ok(MulticastTree::new(req.src, req.dst_set.clone(), edges)
        .expect("optimal subset spans the terminals"))
}

/// MST of the subgraph induced by `vertices`, or `None` if it cannot span.
fn spanning_tree_weight(
    topo: &Topology,
    weight: &impl Fn(usize, usize) -> f64,
    vertices: &BTreeSet<usize>,
) -> Result<Option<(f64, BTreeSet<(usize, usize)>)>, RouteError> {
    let mut candidate: Vec<(f64, usize, usize)> = Vec::new();
    for link in topo.edges() {
        let (u, v) = (link.u.min(link.v), link.u.max(link.v));
        if vertices.contains(&u) && vertices.contains(&v) {
            let w = weight(u, v);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(RouteError::BadWeight { u, v });
            }
            candidate.push((w, u, v));
        }
    }
    candidate.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let ids: BTreeMap<usize, usize> =
        vertices.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let mut dsu = Dsu::new(vertices.len());
    let mut edges = BTreeSet::new();
    let mut total = 0.0;
    for (w, u, v) in candidate {
        if dsu.union(ids[&u], ids[&v]) {
            edges.insert((u, v));
            total += w;
        }
    }
    if edges.len() + 1 == vertices.len() {
        Ok(Some((total, edges)))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Link, NodeInfo};

    fn topo_from(edges: &[(usize, usize)], n: usize) -> Topology {
        let nodes =
            (0..n).map(|i| NodeInfo { id: i, x: i as f64 * 40.0, y: 0.0 }).collect();
        let links = edges.iter().map(|&(u, v)| Link { u, v, bw_max: 40.0 }).collect();
        Topology::new(nodes, links).unwrap()
    }

    #[test]
    fn shortest_path_trivial_and_weighted() {
        let topo = topo_from(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4);
        let w = |u: usize, v: usize| match (u.min(v), u.max(v)) {
            (0, 1) => 1.0,
            (1, 2) => 1.0,
            (2, 3) => 5.0,
            (0, 3) => 1.0,
            _ => unreachable!(),
        };
        // Single-node path.
        assert_eq!(shortest_path(&topo, &w, 2, 2).unwrap().nodes(), &[2]);
        // The cheap two-hop side of the square.
        assert_eq!(shortest_path(&topo, &w, 0, 2).unwrap().nodes(), &[0, 1, 2]);
    }

    #[test]
    fn shortest_path_breaks_full_ties_lexicographically() {
        // Two equal-weight, equal-hop routes 0-1-3 and 0-2-3.
        let topo = topo_from(&[(0, 1), (0, 2), (1, 3), (2, 3)], 4);
        let w = |_: usize, _: usize| 1.0;
        assert_eq!(shortest_path(&topo, &w, 0, 3).unwrap().nodes(), &[0, 1, 3]);
        // Fewer hops beat equal weight: direct edge of weight 2 vs 1+1.
        let topo = topo_from(&[(0, 1), (1, 2), (0, 2)], 3);
        let w = |u: usize, v: usize| if (u.min(v), u.max(v)) == (0, 2) { 2.0 } else { 1.0 };
        assert_eq!(shortest_path(&topo, &w, 0, 2).unwrap().nodes(), &[0, 2]);
    }

    #[test]
    fn kmb_single_destination_is_shortest_path() {
        let topo = topo_from(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4);
        let w = |u: usize, v: usize| ((u + v) % 3 + 1) as f64;
        let req = MulticastRequest::new(0, [2]).unwrap();
        let tree = kmb_with(&topo, &w, &req).unwrap();
        let path = shortest_path(&topo, &w, 0, 2).unwrap();
        let path_edges: BTreeSet<(usize, usize)> =
            path.edges().map(|(u, v)| (u.min(v), u.max(v))).collect();
        assert_eq!(*tree.edges(), path_edges);
    }

    #[test]
    fn kmb_star_topology_yields_star_tree() {
        let topo = topo_from(&[(0, 1), (0, 2), (0, 3)], 4);
        let w = |_: usize, _: usize| 1.0;
        let req = MulticastRequest::new(1, [2, 3]).unwrap();
        let tree = kmb_with(&topo, &w, &req).unwrap();
        assert_eq!(tree.len(), 3);
        assert_eq!(tree_weight(&tree, &w), 3.0);
    }

    #[test]
    fn oracle_picks_cheap_triangle_side() {
        let topo = topo_from(&[(0, 1), (1, 2), (0, 2)], 3);
        let w = |u: usize, v: usize| if (u.min(v), u.max(v)) == (0, 2) { 3.0 } else { 1.0 };
        let req = MulticastRequest::new(0, [2]).unwrap();
        let tree = exhaustive_steiner_oracle(&topo, &w, &req).unwrap();
        assert_eq!(tree.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert_eq!(tree_weight(&tree, &w), 2.0);
    }

    #[test]
    fn oracle_on_path_graph_returns_the_path() {
        let topo = topo_from(&[(0, 1), (1, 2)], 3);
        let w = |_: usize, _: usize| 1.0;
        let req = MulticastRequest::new(0, [2]).unwrap();
        let tree = exhaustive_steiner_oracle(&topo, &w, &req).unwrap();
        assert_eq!(tree.len(), 2);
    }

    #[test]
    fn oracle_with_all_terminals_is_an_mst() {
        let topo = topo_from(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4);
        let w = |u: usize, v: usize| (u * 4 + v) as f64;
        let req = MulticastRequest::new(0, [1, 2, 3]).unwrap();
        let tree = exhaustive_steiner_oracle(&topo, &w, &req).unwrap();
        assert_eq!(tree.len(), 3);
        // Kruskal on the full graph must find the same weight.
        let full: BTreeSet<usize> = (0..4).collect();
        let (mst_w, _) = spanning_tree_weight(&topo, &w, &full).unwrap().unwrap();
        assert_eq!(tree_weight(&tree, &w), mst_w);
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let edges: Vec<(usize, usize)> = (0..11).map(|i| (i, (i + 1) % 12)).collect();
        let topo = topo_from(&edges, 12);
        let req = MulticastRequest::new(0, [5]).unwrap();
        assert_eq!(
            exhaustive_steiner_oracle(&topo, &|_, _| 1.0, &req).unwrap_err(),
            RouteError::TooLarge { nodes: 12, limit: 10 }
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        /// Random connected graph on up to 7 nodes with uniform weights,
        /// derived deterministically from a u64 seed.
        fn random_instance(seed: u64) -> (Topology, BTreeMap<(usize, usize), f64>, MulticastRequest) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(3..=7);
            let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
            // Random spanning tree first, extra edges after.
            for v in 1..n {
                let u = rng.gen_range(0..v);
                edges.insert((u, v));
            }
            let extras = rng.gen_range(0..=n);
            for _ in 0..extras {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u != v {
                    edges.insert((u.min(v), u.max(v)));
                }
            }
            let mut weights = BTreeMap::new();
            for &e in &edges {
                weights.insert(e, rng.gen_range(0.1..10.0f64));
            }
            let topo = topo_from(&edges.iter().copied().collect::<Vec<_>>(), n);
            let k = rng.gen_range(1..=2.min(n - 1));
            let src = rng.gen_range(0..n);
            let mut dsts = BTreeSet::new();
            while dsts.len() < k {
                let d = rng.gen_range(0..n);
                if d != src {
                    dsts.insert(d);
                }
            }
            (topo, weights, MulticastRequest::new(src, dsts).unwrap())
        }

        proptest! {
            /// The classic KMB guarantee: never worse than twice the optimum.
            #[test]
            fn kmb_within_twice_the_oracle(seed in 0u64..300) {
                let (topo, weights, req) = random_instance(seed);
                let w = |u: usize, v: usize| weights[&(u.min(v), u.max(v))];
                let heur = kmb_with(&topo, &w, &req).unwrap();
                let oracle = exhaustive_steiner_oracle(&topo, &w, &req).unwrap();
                let hw = tree_weight(&heur, &w);
                let ow = tree_weight(&oracle, &w);
                prop_assert!(hw <= 2.0 * ow + 1e-9, "kmb {} vs oracle {}", hw, ow);
            }
        }
    }
}
