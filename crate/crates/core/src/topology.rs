//! Wireless network graph and the seven per-link traffic matrices.
//!
//! The application-plane math lives here: raw port counters collected per
//! link endpoint are turned into residual bandwidth, used bandwidth, delay,
//! loss, error and drop rates plus the endpoint distance, and the resulting
//! matrices are max-min normalized into the [0,1] channels the agents
//! consume. Counters are synthesized by the lab harness; this module only
//! does the arithmetic.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math;

/// A wireless access node with its deployment coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// An undirected link with its capacity in Mbit/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub u: usize,
    pub v: usize,
    pub bw_max: f64,
}

/// Validation failures when building a [`Topology`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    NoNodes,
    /// Node ids must be exactly 0..n-1 with no gaps or repeats.
    BadNodeIds,
    NonFiniteCoordinate { node: usize },
    SelfLoop { node: usize },
    DuplicateEdge { u: usize, v: usize },
    UnknownEndpoint { u: usize, v: usize },
    NonPositiveCapacity { u: usize, v: usize },
    Disconnected,
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::NoNodes => write!(f, "topology has no nodes"),
            TopologyError::BadNodeIds => write!(f, "node ids are not contiguous 0..n-1"),
            TopologyError::NonFiniteCoordinate { node } => {
                write!(f, "node {node} has a non-finite coordinate")
            }
            TopologyError::SelfLoop { node } => write!(f, "self-loop on node {node}"),
            TopologyError::DuplicateEdge { u, v } => write!(f, "duplicate edge ({u}, {v})"),
            TopologyError::UnknownEndpoint { u, v } => {
                write!(f, "edge ({u}, {v}) references an unknown node")
            }
            TopologyError::NonPositiveCapacity { u, v } => {
                write!(f, "edge ({u}, {v}) has non-positive capacity")
            }
            TopologyError::Disconnected => write!(f, "graph is not connected"),
        }
    }
}

impl core::error::Error for TopologyError {}

/// Serialized form of a topology: just the node and edge lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyRaw {
    nodes: Vec<NodeInfo>,
    edges: Vec<Link>,
}

/// A connected, undirected, weighted wireless graph.
///
/// Construction validates every invariant (contiguous ids, finite
/// coordinates, no self-loops or duplicate edges, positive capacities,
/// connectivity), so holding a `Topology` is proof the graph is well formed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TopologyRaw", into = "TopologyRaw")]
pub struct Topology {
    nodes: Vec<NodeInfo>,
    edges: Vec<Link>,
    /// Sorted neighbor lists per node.
    adj: Vec<Vec<usize>>,
    /// Maps the normalized pair (min, max) to an index into `edges`.
    index: BTreeMap<(usize, usize), usize>,
}

impl Topology {
    pub fn new(mut nodes: Vec<NodeInfo>, edges: Vec<Link>) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::NoNodes);
        }
        nodes.sort_by_key(|n| n.id);
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(TopologyError::BadNodeIds);
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(TopologyError::NonFiniteCoordinate { node: node.id });
            }
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut index = BTreeMap::new();
        for (e, link) in edges.iter().enumerate() {
            let (u, v) = (link.u, link.v);
            if u == v {
                return Err(TopologyError::SelfLoop { node: u });
            }
            if u >= n || v >= n {
                return Err(TopologyError::UnknownEndpoint { u, v });
            }
            if !(link.bw_max > 0.0) || !link.bw_max.is_finite() {
                return Err(TopologyError::NonPositiveCapacity { u, v });
            }
            let key = (u.min(v), u.max(v));
            if index.insert(key, e).is_some() {
                return Err(TopologyError::DuplicateEdge { u: key.0, v: key.1 });
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }

        let topo = Topology { nodes, edges, adj, index };
        if !topo.is_connected() {
            return Err(TopologyError::Disconnected);
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Link] {
        &self.edges
    }

    /// Neighbors of `node`, sorted ascending.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.index.contains_key(&(u.min(v), u.max(v)))
    }

    /// Index into [`Topology::edges`] for the unordered pair (u, v).
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.index.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn link_between(&self, u: usize, v: usize) -> Option<&Link> {
        self.edge_index(u, v).map(|e| &self.edges[e])
    }

    pub fn contains_node(&self, node: usize) -> bool {
        node < self.nodes.len()
    }

    /// Euclidean distance between two node positions in meters.
    pub fn distance(&self, u: usize, v: usize) -> f64 {
        let a = &self.nodes[u];
        let b = &self.nodes[v];
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        math::sqrt(dx * dx + dy * dy)
    }

    fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }
}

impl TryFrom<TopologyRaw> for Topology {
    type Error = TopologyError;

    fn try_from(raw: TopologyRaw) -> Result<Self, Self::Error> {
        Topology::new(raw.nodes, raw.edges)
    }
}

impl From<Topology> for TopologyRaw {
    fn from(t: Topology) -> Self {
        TopologyRaw { nodes: t.nodes, edges: t.edges }
    }
}

/// Cumulative counters observed at one port of a link.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PortCounters {
    pub tx_p: u64,
    pub rx_p: u64,
    pub tx_b: u64,
    pub rx_b: u64,
    pub tx_drop: u64,
    pub rx_drop: u64,
    pub tx_err: u64,
    pub rx_err: u64,
    /// Seconds the port has been sending data.
    pub t_dur: f64,
}

/// Controller-side delay probe times for one link, all in seconds.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LinkProbe {
    pub t_fwd: f64,
    pub t_reply: f64,
    pub rtt_rs: f64,
    pub rtt_rd: f64,
}

/// Raw data for one link: counters at both endpoints plus the delay probe.
///
/// `at_u` / `at_v` are the ports on the lower/higher endpoint of the edge as
/// stored in the topology; `at_u` acts as the sender for the loss pairing.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LinkCounters {
    pub at_u: PortCounters,
    pub at_v: PortCounters,
    pub probe: LinkProbe,
}

/// One snapshot of raw counters covering every edge of a topology, indexed
/// like [`Topology::edges`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawLinkCounters {
    pub per_edge: Vec<LinkCounters>,
}

/// Errors from [`derive_link_state`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CounterError {
    /// Counter list does not line up with the topology edge list.
    WrongEdgeCount { expected: usize, got: usize },
    /// Zero or negative time delta, or a zero packet count, on the named edge.
    MalformedCounters { u: usize, v: usize },
    /// A computed rate fell outside [0,1] on the named edge.
    InconsistentCounters { u: usize, v: usize },
}

impl fmt::Display for CounterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CounterError::WrongEdgeCount { expected, got } => {
                write!(f, "expected counters for {expected} edges, got {got}")
            }
            CounterError::MalformedCounters { u, v } => {
                write!(f, "malformed counters on edge ({u}, {v})")
            }
            CounterError::InconsistentCounters { u, v } => {
                write!(f, "inconsistent counters on edge ({u}, {v}): rate outside [0,1]")
            }
        }
    }
}

impl core::error::Error for CounterError {}

/// The seven per-link metric channels, in the weight order of the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Bw,
    Delay,
    Loss,
    UsedBw,
    Errors,
    Drops,
    Distance,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Bw,
        Channel::Delay,
        Channel::Loss,
        Channel::UsedBw,
        Channel::Errors,
        Channel::Drops,
        Channel::Distance,
    ];

    pub fn index(self) -> usize {
        match self {
            Channel::Bw => 0,
            Channel::Delay => 1,
            Channel::Loss => 2,
            Channel::UsedBw => 3,
            Channel::Errors => 4,
            Channel::Drops => 5,
            Channel::Distance => 6,
        }
    }

    /// Every channel except residual bandwidth is a cost (lower is better).
    pub fn is_cost(self) -> bool {
        !matches!(self, Channel::Bw)
    }

    /// Fill value for non-edges after normalization: the worst value of the
    /// channel, so the state tensor is dense.
    pub fn worst_normalized(self) -> f64 {
        if self.is_cost() {
            1.0
        } else {
            0.0
        }
    }
}

/// The per-edge values of all seven channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub bw: f64,
    pub used_bw: f64,
    pub delay: f64,
    pub loss: f64,
    pub errors: f64,
    pub drops: f64,
    pub distance: f64,
}

impl EdgeMetrics {
    /// The seven values in canonical channel order.
    pub fn channel_values(&self) -> [f64; 7] {
        [self.bw, self.delay, self.loss, self.used_bw, self.errors, self.drops, self.distance]
    }

    pub fn channel(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Bw => self.bw,
            Channel::Delay => self.delay,
            Channel::Loss => self.loss,
            Channel::UsedBw => self.used_bw,
            Channel::Errors => self.errors,
            Channel::Drops => self.drops,
            Channel::Distance => self.distance,
        }
    }
}

/// A symmetric n-by-n matrix where non-edges hold no value at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    n: usize,
    data: Vec<Option<f64>>,
}

impl MetricMatrix {
    pub fn absent(n: usize) -> Self {
        MetricMatrix { n, data: vec![None; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.data[i * self.n + j]
    }

    /// Sets both (i, j) and (j, i).
    pub fn set_sym(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = Some(value);
        self.data[j * self.n + i] = Some(value);
    }

    /// Present values on the upper triangle.
    pub fn present(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            ((i + 1)..self.n).filter_map(move |j| self.get(i, j).map(|v| ((i, j), v)))
        })
    }
}

/// Read access to per-edge metric values, raw or normalized.
pub trait LinkMetrics {
    fn size(&self) -> usize;
    /// Value of `ch` on edge (i, j); `None` when (i, j) is not an edge.
    fn edge(&self, ch: Channel, i: usize, j: usize) -> Option<f64>;

    /// All seven channels of edge (i, j); `None` when (i, j) is not an edge.
    fn edge_metrics(&self, i: usize, j: usize) -> Option<EdgeMetrics> {
        Some(EdgeMetrics {
            bw: self.edge(Channel::Bw, i, j)?,
            used_bw: self.edge(Channel::UsedBw, i, j)?,
            delay: self.edge(Channel::Delay, i, j)?,
            loss: self.edge(Channel::Loss, i, j)?,
            errors: self.edge(Channel::Errors, i, j)?,
            drops: self.edge(Channel::Drops, i, j)?,
            distance: self.edge(Channel::Distance, i, j)?,
        })
    }
}

/// The seven raw traffic matrices for one link-state snapshot.
///
/// Units: bw and used_bw in Mbit/s, delay in ms, loss/errors/drops as rates
/// in [0,1], distance in meters. The diagonal and all non-edges are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStateMatrices {
    mats: [MetricMatrix; 7],
}

impl LinkStateMatrices {
    fn empty(n: usize) -> Self {
        LinkStateMatrices { mats: core::array::from_fn(|_| MetricMatrix::absent(n)) }
    }

    /// Builds matrices directly from per-edge values, validating the type
    /// invariants (rates in [0,1], bw + used_bw = bw_max within 1e-9).
    pub fn from_edge_metrics(
        topo: &Topology,
        values: &[EdgeMetrics],
    ) -> Result<Self, CounterError> {
        if values.len() != topo.edges().len() {
            return Err(CounterError::WrongEdgeCount {
                expected: topo.edges().len(),
                got: values.len(),
            });
        }
        let mut out = Self::empty(topo.node_count());
        for (link, m) in topo.edges().iter().zip(values) {
            let (u, v) = (link.u, link.v);
            for rate in [m.loss, m.errors, m.drops] {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(CounterError::InconsistentCounters { u, v });
                }
            }
            if math::abs(m.bw + m.used_bw - link.bw_max) > 1e-9 {
                return Err(CounterError::InconsistentCounters { u, v });
            }
            out.set_edge(u, v, m);
        }
        Ok(out)
    }

    fn set_edge(&mut self, u: usize, v: usize, m: &EdgeMetrics) {
        for ch in Channel::ALL {
            self.mats[ch.index()].set_sym(u, v, m.channel(ch));
        }
    }

    pub fn channel(&self, ch: Channel) -> &MetricMatrix {
        &self.mats[ch.index()]
    }
}

impl LinkMetrics for LinkStateMatrices {
    fn size(&self) -> usize {
        self.mats[0].n()
    }

    fn edge(&self, ch: Channel, i: usize, j: usize) -> Option<f64> {
        self.mats[ch.index()].get(i, j)
    }
}

/// The seven channels rescaled to [0,1] by per-channel max-min normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrices {
    mats: [MetricMatrix; 7],
}

impl NormalizedMatrices {
    pub fn channel(&self, ch: Channel) -> &MetricMatrix {
        &self.mats[ch.index()]
    }

    /// Dense value for the state tensor: absent entries (non-edges and the
    /// diagonal) take the channel's worst value.
    pub fn dense(&self, ch: Channel, i: usize, j: usize) -> f64 {
        self.mats[ch.index()].get(i, j).unwrap_or_else(|| ch.worst_normalized())
    }

    /// Row-major concatenation of the seven dense channels, `7 * n * n` long.
    pub fn flatten_channels(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = Vec::with_capacity(7 * n * n);
        for ch in Channel::ALL {
            for i in 0..n {
                for j in 0..n {
                    out.push(self.dense(ch, i, j));
                }
            }
        }
        out
    }
}

impl LinkMetrics for NormalizedMatrices {
    fn size(&self) -> usize {
        self.mats[0].n()
    }

    fn edge(&self, ch: Channel, i: usize, j: usize) -> Option<f64> {
        self.mats[ch.index()].get(i, j)
    }
}

/// Derives the seven traffic matrices from one counter snapshot.
///
/// Per edge (u, v): used bandwidth is the absolute byte-total difference
/// between the endpoints over their duration delta, converted at 8/10^6 to
/// Mbit/s; residual bandwidth is capacity minus that; loss compares packets
/// sent at u with packets received at v; drop and error rates pool both
/// endpoints over the packets exchanged; delay is half the probe detour time
/// with the controller round trips removed, in ms (clamped to 0 if jitter
/// drives it negative); distance is the Euclidean endpoint distance.
pub fn derive_link_state(
    counters: &RawLinkCounters,
    topo: &Topology,
) -> Result<LinkStateMatrices, CounterError> {
    if counters.per_edge.len() != topo.edges().len() {
        return Err(CounterError::WrongEdgeCount {
            expected: topo.edges().len(),
            got: counters.per_edge.len(),
        });
    }
    let mut out = LinkStateMatrices::empty(topo.node_count());
    for (link, c) in topo.edges().iter().zip(&counters.per_edge) {
        let (u, v) = (link.u, link.v);
        let malformed = CounterError::MalformedCounters { u, v };
        let inconsistent = CounterError::InconsistentCounters { u, v };

        let dt = c.at_v.t_dur - c.at_u.t_dur;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(malformed);
        }
        let bytes_u = (c.at_u.tx_b + c.at_u.rx_b) as f64;
        let bytes_v = (c.at_v.tx_b + c.at_v.rx_b) as f64;
        let used_bw = math::abs(bytes_u - bytes_v) * 8.0 / 1e6 / dt;
        let bw = link.bw_max - used_bw;

        if c.at_u.tx_p == 0 {
            return Err(malformed);
        }
        let tx_p = c.at_u.tx_p as f64;
        let rx_p = c.at_v.rx_p as f64;
        let loss = (tx_p - rx_p) / tx_p;
        if !(0.0..=1.0).contains(&loss) {
            return Err(inconsistent);
        }
        let pkt_pool = tx_p + rx_p;
        let drops = (c.at_u.tx_drop + c.at_v.rx_drop) as f64 / pkt_pool;
        let errors = (c.at_u.tx_err + c.at_v.rx_err) as f64 / pkt_pool;
        if !(0.0..=1.0).contains(&drops) || !(0.0..=1.0).contains(&errors) {
            return Err(inconsistent);
        }

        let p = &c.probe;
        let mut delay = (p.t_fwd + p.t_reply - p.rtt_rs - p.rtt_rd) / 2.0 * 1e3;
        if delay < 0.0 {
            log::warn!("negative probe delay {delay} ms on edge ({u}, {v}); clamped to 0");
            delay = 0.0;
        }

        let m = EdgeMetrics {
            bw,
            used_bw,
            delay,
            loss,
            errors,
            drops,
            distance: topo.distance(u, v),
        };
        out.set_edge(u, v, &m);
    }
    Ok(out)
}

/// Max-min normalizes each channel independently over its present entries.
///
/// A constant channel (max equals min) maps to all zeros.
pub fn normalize(matrices: &LinkStateMatrices) -> NormalizedMatrices {
    let n = matrices.size();
    let mut mats: [MetricMatrix; 7] = core::array::from_fn(|_| MetricMatrix::absent(n));
    for ch in Channel::ALL {
        let src = matrices.channel(ch);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, v) in src.present() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let dst = &mut mats[ch.index()];
        for ((i, j), v) in src.present() {
            let scaled = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            dst.set_sym(i, j, scaled);
        }
    }
    NormalizedMatrices { mats }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_topo(n: usize, bw_max: f64) -> Topology {
        let nodes = (0..n).map(|i| NodeInfo { id: i, x: i as f64 * 50.0, y: 0.0 }).collect();
        let edges = (0..n - 1).map(|i| Link { u: i, v: i + 1, bw_max }).collect();
        Topology::new(nodes, edges).unwrap()
    }

    /// Counter set that derives to exactly the given per-edge target metrics.
    fn counters_for(
        topo: &Topology,
        f: impl Fn(usize) -> (f64, f64, f64, f64, f64),
    ) -> RawLinkCounters {
        let per_edge = (0..topo.edges().len())
            .map(|e| {
                let (used_mbps, delay_ms, loss, drops, errors) = f(e);
                synth_edge(used_mbps, delay_ms, loss, drops, errors)
            })
            .collect();
        RawLinkCounters { per_edge }
    }

    /// Builds one edge's counters so the hand formulas recover the targets.
    fn synth_edge(used_mbps: f64, delay_ms: f64, loss: f64, drops: f64, errors: f64) -> LinkCounters {
        let window = 2.0;
        let delta_bytes = (used_mbps * 1e6 * window / 8.0) as u64;
        let tx_p = 1_000_000u64;
        let rx_p = ((tx_p as f64) * (1.0 - loss)) as u64;
        let pool = tx_p + rx_p;
        let dropped = (drops * pool as f64) as u64;
        let errored = (errors * pool as f64) as u64;
        let rtt_rs = 0.004;
        let rtt_rd = 0.006;
        let fwd = delay_ms / 1e3 + (rtt_rs + rtt_rd) / 2.0;
        LinkCounters {
            at_u: PortCounters {
                tx_p,
                tx_b: 5_000_000 + delta_bytes,
                rx_b: 5_000_000,
                tx_drop: dropped,
                tx_err: errored,
                t_dur: 100.0,
                ..Default::default()
            },
            at_v: PortCounters {
                rx_p,
                tx_b: 5_000_000,
                rx_b: 5_000_000,
                t_dur: 100.0 + window,
                ..Default::default()
            },
            probe: LinkProbe { t_fwd: fwd, t_reply: fwd, rtt_rs, rtt_rd },
        }
    }

    #[test]
    fn used_bw_and_residual_from_byte_delta() {
        // 2,000,000 bytes over 2 s on a 40 Mbit/s link.
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].at_u.tx_b = 2_000_000;
        c.per_edge[0].at_u.rx_b = 0;
        c.per_edge[0].at_v.tx_b = 0;
        c.per_edge[0].at_v.rx_b = 0;
        let m = derive_link_state(&c, &topo).unwrap();
        assert!((m.edge(Channel::UsedBw, 0, 1).unwrap() - 8.0).abs() < 1e-12);
        assert!((m.edge(Channel::Bw, 0, 1).unwrap() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn loss_and_drop_rates_match_hand_rule() {
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].at_u.tx_p = 100;
        c.per_edge[0].at_v.rx_p = 90;
        let m = derive_link_state(&c, &topo).unwrap();
        assert!((m.edge(Channel::Loss, 0, 1).unwrap() - 0.10).abs() < 1e-12);

        c.per_edge[0].at_u.tx_p = 50;
        c.per_edge[0].at_v.rx_p = 50;
        c.per_edge[0].at_u.tx_drop = 2;
        c.per_edge[0].at_v.rx_drop = 3;
        let m = derive_link_state(&c, &topo).unwrap();
        assert!((m.edge(Channel::Drops, 0, 1).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn delay_from_probe_times() {
        // T_fwd = T_reply = 10 ms, RTT_rs = 4 ms, RTT_rd = 6 ms -> 5 ms.
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].probe =
            LinkProbe { t_fwd: 0.010, t_reply: 0.010, rtt_rs: 0.004, rtt_rd: 0.006 };
        let m = derive_link_state(&c, &topo).unwrap();
        assert!((m.edge(Channel::Delay, 0, 1).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn identical_byte_totals_mean_idle_link() {
        let topo = line_topo(2, 40.0);
        let c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        let m = derive_link_state(&c, &topo).unwrap();
        assert_eq!(m.edge(Channel::UsedBw, 0, 1).unwrap(), 0.0);
        assert_eq!(m.edge(Channel::Bw, 0, 1).unwrap(), 40.0);
    }

    #[test]
    fn negative_delay_clamps_to_zero() {
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].probe =
            LinkProbe { t_fwd: 0.001, t_reply: 0.001, rtt_rs: 0.004, rtt_rd: 0.006 };
        let m = derive_link_state(&c, &topo).unwrap();
        assert_eq!(m.edge(Channel::Delay, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn bad_time_delta_is_malformed() {
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].at_v.t_dur = c.per_edge[0].at_u.t_dur;
        assert_eq!(
            derive_link_state(&c, &topo),
            Err(CounterError::MalformedCounters { u: 0, v: 1 })
        );
    }

    #[test]
    fn receiver_ahead_of_sender_is_inconsistent() {
        let topo = line_topo(2, 40.0);
        let mut c = counters_for(&topo, |_| (0.0, 1.0, 0.0, 0.0, 0.0));
        c.per_edge[0].at_u.tx_p = 80;
        c.per_edge[0].at_v.rx_p = 90;
        assert_eq!(
            derive_link_state(&c, &topo),
            Err(CounterError::InconsistentCounters { u: 0, v: 1 })
        );
    }

    #[test]
    fn distance_is_symmetric_euclidean() {
        let nodes = vec![
            NodeInfo { id: 0, x: 0.0, y: 0.0 },
            NodeInfo { id: 1, x: 30.0, y: 40.0 },
        ];
        let topo = Topology::new(nodes, vec![Link { u: 0, v: 1, bw_max: 10.0 }]).unwrap();
        assert!((topo.distance(0, 1) - 50.0).abs() < 1e-12);
        assert_eq!(topo.distance(0, 1), topo.distance(1, 0));
    }

    #[test]
    fn normalize_maps_midpoint_and_endpoints() {
        let topo = line_topo(4, 40.0);
        // Delay channel entries 2, 10, 6 across the three edges.
        let delays = [2.0, 10.0, 6.0];
        let c = counters_for(&topo, |e| (0.0, delays[e], 0.0, 0.0, 0.0));
        let m = derive_link_state(&c, &topo).unwrap();
        let norm = normalize(&m);
        assert!((norm.edge(Channel::Delay, 0, 1).unwrap() - 0.0).abs() < 1e-9);
        assert!((norm.edge(Channel::Delay, 1, 2).unwrap() - 1.0).abs() < 1e-9);
        assert!((norm.edge(Channel::Delay, 2, 3).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn normalize_constant_channel_goes_to_zero() {
        let topo = line_topo(3, 40.0);
        let c = counters_for(&topo, |_| (4.0, 3.0, 0.0, 0.0, 0.0));
        let norm = normalize(&derive_link_state(&c, &topo).unwrap());
        for ch in Channel::ALL {
            assert_eq!(norm.edge(ch, 0, 1).unwrap(), 0.0);
            assert_eq!(norm.edge(ch, 1, 2).unwrap(), 0.0);
        }
    }

    #[test]
    fn dense_fill_uses_worst_value_per_channel() {
        let topo = line_topo(3, 40.0);
        let c = counters_for(&topo, |e| (e as f64, 1.0 + e as f64, 0.0, 0.0, 0.0));
        let norm = normalize(&derive_link_state(&c, &topo).unwrap());
        // (0, 2) is not an edge.
        assert_eq!(norm.dense(Channel::Bw, 0, 2), 0.0);
        assert_eq!(norm.dense(Channel::Delay, 0, 2), 1.0);
        assert_eq!(norm.dense(Channel::Loss, 0, 0), 1.0);
    }

    #[test]
    fn flatten_orders_channels_then_rows() {
        let topo = line_topo(2, 40.0);
        let c = counters_for(&topo, |_| (1.0, 1.0, 0.0, 0.0, 0.0));
        let norm = normalize(&derive_link_state(&c, &topo).unwrap());
        let flat = norm.flatten_channels();
        assert_eq!(flat.len(), 7 * 4);
        for (k, ch) in Channel::ALL.into_iter().enumerate() {
            assert_eq!(flat[k * 4], norm.dense(ch, 0, 0));
            assert_eq!(flat[k * 4 + 1], norm.dense(ch, 0, 1));
        }
    }

    #[test]
    fn topology_invariant_violations_have_distinct_kinds() {
        let nodes = vec![
            NodeInfo { id: 0, x: 0.0, y: 0.0 },
            NodeInfo { id: 1, x: 1.0, y: 0.0 },
            NodeInfo { id: 2, x: 2.0, y: 0.0 },
        ];
        let e = |u, v| Link { u, v, bw_max: 10.0 };
        assert_eq!(
            Topology::new(nodes.clone(), vec![e(0, 0), e(0, 1), e(1, 2)]).unwrap_err(),
            TopologyError::SelfLoop { node: 0 }
        );
        assert_eq!(
            Topology::new(nodes.clone(), vec![e(0, 1), e(1, 0), e(1, 2)]).unwrap_err(),
            TopologyError::DuplicateEdge { u: 0, v: 1 }
        );
        assert_eq!(
            Topology::new(nodes.clone(), vec![e(0, 1)]).unwrap_err(),
            TopologyError::Disconnected
        );
        assert_eq!(
            Topology::new(nodes, vec![e(0, 1), e(1, 5)]).unwrap_err(),
            TopologyError::UnknownEndpoint { u: 1, v: 5 }
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_targets() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
            (
                0.0..30.0f64,
                0.0..10.0f64,
                0.0..0.5f64,
                0.0..0.02f64,
                0.0..0.02f64,
            )
        }

        proptest! {
            #[test]
            fn derived_matrices_hold_invariants(
                targets in proptest::collection::vec(arb_targets(), 4),
            ) {
                let topo = line_topo(5, 40.0);
                let c = counters_for(&topo, |e| targets[e]);
                let m = derive_link_state(&c, &topo).unwrap();
                for link in topo.edges() {
                    let (u, v) = (link.u, link.v);
                    for ch in Channel::ALL {
                        // Symmetry, and presence on every edge.
                        prop_assert_eq!(m.edge(ch, u, v), m.edge(ch, v, u));
                        prop_assert!(m.edge(ch, u, v).is_some());
                    }
                    let bw = m.edge(Channel::Bw, u, v).unwrap();
                    let used = m.edge(Channel::UsedBw, u, v).unwrap();
                    prop_assert!((bw + used - link.bw_max).abs() < 1e-9);
                    for ch in [Channel::Loss, Channel::Errors, Channel::Drops] {
                        let r = m.edge(ch, u, v).unwrap();
                        prop_assert!((0.0..=1.0).contains(&r));
                    }
                }
            }

            #[test]
            fn normalization_is_idempotent_on_unit_channels(
                targets in proptest::collection::vec(arb_targets(), 4),
            ) {
                let topo = line_topo(5, 40.0);
                let c = counters_for(&topo, |e| targets[e]);
                let norm = normalize(&derive_link_state(&c, &topo).unwrap());
                for ch in Channel::ALL {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for (_, v) in norm.channel(ch).present() {
                        prop_assert!((0.0..=1.0).contains(&v));
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    // Each non-constant channel spans exactly [0, 1].
                    if hi > lo {
                        prop_assert!(lo.abs() < 1e-12);
                        prop_assert!((hi - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
