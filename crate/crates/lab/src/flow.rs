//! Analytical flow accounting and the algorithm comparison report.
//!
//! Delivery is modeled without packet simulation: the group's offered load
//! squeezes through the tree bottleneck and survives the worst-receiver loss
//! rate; delay is the worst-receiver path delay. Per-window averages of
//! those plus the per-link tree averages (residual bandwidth, length,
//! weighted length, distance) make up the report rows.

use std::collections::BTreeSet;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use madrl_mr_core::agent::A2c;
use madrl_mr_core::env::RewardWeights;
use madrl_mr_core::multicast::{tree_metrics, MulticastRequest, MulticastTree};
use madrl_mr_core::steiner::{kmb, KmbMetric};
use madrl_mr_core::topology::{Channel, LinkMetrics, LinkStateMatrices, Topology};
use madrl_mr_core::trainer::{rollout_merged_tree, AgentTask, Snapshot};

/// Instantaneous delivery figures for one tree on one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    /// Delivered rate summed over receivers, Mbit/s.
    pub throughput: f64,
    /// Worst-receiver path delay, ms.
    pub delay: f64,
    /// Worst-receiver loss rate.
    pub loss: f64,
}

/// Analytical stand-in for a measured transfer: bottleneck-capped offered
/// load times the loss survival, summed over all receivers.
pub fn flow_accounting(
    tree: &MulticastTree,
    m: &LinkStateMatrices,
    offered_mbps: f64,
) -> anyhow::Result<FlowSample> {
    let tm = tree_metrics(tree, m).context("tree metrics over snapshot")?;
    let delivered = offered_mbps.min(tm.bw) * (1.0 - tm.loss);
    Ok(FlowSample {
        throughput: delivered * tree.dst_set().len() as f64,
        delay: tm.delay,
        loss: tm.loss,
    })
}

/// The algorithms a comparison run can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    MadrlMr,
    KmbBw,
    KmbDelay,
    KmbLoss,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] =
        [Algorithm::MadrlMr, Algorithm::KmbBw, Algorithm::KmbDelay, Algorithm::KmbLoss];

    pub const BASELINES: [Algorithm; 3] =
        [Algorithm::KmbBw, Algorithm::KmbDelay, Algorithm::KmbLoss];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::MadrlMr => "MADRL-MR",
            Algorithm::KmbBw => "KMB_bw",
            Algorithm::KmbDelay => "KMB_delay",
            Algorithm::KmbLoss => "KMB_loss",
        }
    }
}

/// Trained per-agent policies plus their task split, as needed to rebuild
/// trees on new snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub agents: Vec<(AgentTask, A2c)>,
    pub weights: RewardWeights,
    pub step_cap: usize,
}

impl PolicyBundle {
    /// Greedy merged tree for one snapshot.
    pub fn tree_for(
        &self,
        topo: &Arc<Topology>,
        snapshot: &Snapshot,
    ) -> anyhow::Result<MulticastTree> {
        let parts: Vec<(&AgentTask, &A2c)> =
            self.agents.iter().map(|(t, a)| (t, a)).collect();
        let (tree, fallbacks) =
            rollout_merged_tree(&parts, topo, snapshot, &self.weights, self.step_cap)
                .context("policy rollout")?;
        if !fallbacks.is_empty() {
            log::warn!("rollout fell back to min-delay routes for {fallbacks:?}");
        }
        Ok(tree)
    }
}

/// One report row: per-window averages for one algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub algorithm: String,
    pub window: usize,
    /// Mean delivered rate, Mbit/s.
    pub throughput: f64,
    /// Mean worst-receiver delay, ms.
    pub delay: f64,
    /// Mean worst-receiver loss rate.
    pub loss: f64,
    /// Mean per-link residual bandwidth of the tree, Mbit/s.
    pub tree_bw: f64,
    /// Mean tree length in edges.
    pub tree_len: f64,
    /// Mean total edge distance of the tree, m.
    pub tree_wlen: f64,
    /// Mean per-link distance of the tree, m.
    pub tree_dist: f64,
}

/// The full comparison report; rows ordered by algorithm then window.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "algorithm,window,throughput_mbps,delay_ms,loss_rate,tree_bw_mbps,tree_len_edges,tree_wlen_m,tree_dist_m";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.algorithm,
                r.window,
                r.throughput,
                r.delay,
                r.loss,
                r.tree_bw,
                r.tree_len,
                r.tree_wlen,
                r.tree_dist
            ));
        }
        out
    }
}

/// Evaluation knobs.
#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub offered_mbps: f64,
    /// Snapshots per reporting window.
    pub window: usize,
}

/// Per-snapshot evaluation of one already-built tree.
fn snapshot_stats(
    tree: &MulticastTree,
    m: &LinkStateMatrices,
    offered: f64,
) -> anyhow::Result<[f64; 7]> {
    let flow = flow_accounting(tree, m, offered)?;
    let mut bw_sum = 0.0;
    let mut dist_sum = 0.0;
    for &(u, v) in tree.edges() {
        bw_sum += m.edge(Channel::Bw, u, v).context("tree edge lost its metrics")?;
        dist_sum += m.edge(Channel::Distance, u, v).context("tree edge lost its metrics")?;
    }
    let e = tree.len() as f64;
    Ok([
        flow.throughput,
        flow.delay,
        flow.loss,
        bw_sum / e,
        e,
        dist_sum,
        dist_sum / e,
    ])
}

/// Builds each algorithm's tree per snapshot and averages per window.
///
/// MADRL-MR rows need a trained policy; requesting them without one is an
/// error.
pub fn evaluate(
    topo: &Arc<Topology>,
    snapshots: &[Snapshot],
    request: &MulticastRequest,
    algorithms: &[Algorithm],
    policy: Option<&PolicyBundle>,
    cfg: &EvalConfig,
) -> anyhow::Result<EvalReport> {
    if snapshots.is_empty() {
        bail!("no snapshots to evaluate");
    }
    if algorithms.contains(&Algorithm::MadrlMr) && policy.is_none() {
        bail!("MADRL-MR evaluation requested but no trained policy checkpoint was given");
    }
    let window = cfg.window.max(1);

    let mut report = EvalReport::default();
    for &alg in algorithms {
        // Per-snapshot stat rows for this algorithm.
        let mut stats: Vec<[f64; 7]> = Vec::with_capacity(snapshots.len());
        for snap in snapshots {
            let tree = match alg {
                Algorithm::MadrlMr => {
                    policy.unwrap().tree_for(topo, snap).context("building MADRL-MR tree")?
                }
                Algorithm::KmbBw => kmb(topo, &snap.raw, KmbMetric::Bw, request)?,
                Algorithm::KmbDelay => kmb(topo, &snap.raw, KmbMetric::Delay, request)?,
                Algorithm::KmbLoss => kmb(topo, &snap.raw, KmbMetric::Loss, request)?,
            };
            stats.push(snapshot_stats(&tree, &snap.raw, cfg.offered_mbps)?);
        }

        for (w, chunk) in stats.chunks(window).enumerate() {
            let k = chunk.len() as f64;
            let mut mean = [0.0; 7];
            for row in chunk {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / k;
                }
            }
            report.rows.push(EvalRow {
                algorithm: alg.label().to_string(),
                window: w,
                throughput: mean[0],
                delay: mean[1],
                loss: mean[2],
                tree_bw: mean[3],
                tree_len: mean[4],
                tree_wlen: mean[5],
                tree_dist: mean[6],
            });
        }
    }
    Ok(report)
}

/// Trees per algorithm on one snapshot; used by comparison tests and the
/// baseline subcommand.
pub fn baseline_trees(
    topo: &Arc<Topology>,
    snap: &Snapshot,
    request: &MulticastRequest,
) -> anyhow::Result<Vec<(Algorithm, MulticastTree)>> {
    let mut out = Vec::new();
    for alg in Algorithm::BASELINES {
        let metric = match alg {
            Algorithm::KmbBw => KmbMetric::Bw,
            Algorithm::KmbDelay => KmbMetric::Delay,
            Algorithm::KmbLoss => KmbMetric::Loss,
            Algorithm::MadrlMr => unreachable!(),
        };
        out.push((alg, kmb(topo, &snap.raw, metric, request)?));
    }
    Ok(out)
}

/// Destinations a tree fails to cover (sanity helper for reports).
pub fn uncovered(tree: &MulticastTree, request: &MulticastRequest) -> BTreeSet<usize> {
    request
        .dst_set
        .iter()
        .copied()
        .filter(|&d| tree.path_to(d).is_none())
        .collect()
}
