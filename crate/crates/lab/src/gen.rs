//! Synthetic wireless topologies and diurnal traffic.
//!
//! Topologies are geometric: nodes get coordinates, any pair between 30 and
//! 120 meters apart may carry a link, connectivity comes from a random
//! spanning tree plus extra candidate edges. Traffic follows a two-peak
//! day/night curve; each snapshot synthesizes raw port counters consistent
//! with the sampled per-link utilization, so deriving matrices from them
//! reproduces the sampled ground truth.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use madrl_mr_core::topology::{
    derive_link_state, Channel, Link, LinkCounters, LinkMetrics, LinkProbe, NodeInfo,
    PortCounters, RawLinkCounters, Topology,
};
use madrl_mr_core::trainer::Snapshot;

/// Edge length bounds in meters.
const DIST_MIN: f64 = 30.0;
const DIST_MAX: f64 = 120.0;
/// Link capacity bounds in Mbit/s.
const BW_MIN: f64 = 5.0;
const BW_MAX: f64 = 40.0;
/// Base link delay bounds in ms.
const DELAY_MIN: f64 = 1.0;
const DELAY_MAX: f64 = 10.0;
/// Synthetic measurement window in seconds; long enough that integer byte
/// counts keep the derived utilization within 1e-7 of the sample.
const WINDOW_SECS: f64 = 60.0;

/// Random connected geometric topology with capacities in [5, 40] Mbit/s and
/// edge lengths in [30, 120] m.
pub fn gen_topology(n_nodes: usize, seed: u64) -> Topology {
    assert!(n_nodes >= 2, "need at least two nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 75.0 * (n_nodes as f64).sqrt();

    loop {
        let nodes: Vec<NodeInfo> = (0..n_nodes)
            .map(|id| NodeInfo {
                id,
                x: rng.gen_range(0.0..side),
                y: rng.gen_range(0.0..side),
            })
            .collect();

        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for u in 0..n_nodes {
            for v in (u + 1)..n_nodes {
                let (dx, dy) = (nodes[u].x - nodes[v].x, nodes[u].y - nodes[v].y);
                let d = (dx * dx + dy * dy).sqrt();
                if (DIST_MIN..=DIST_MAX).contains(&d) {
                    candidates.push((u, v));
                }
            }
        }

        // Random spanning tree over the candidate graph, if it has one.
        let mut order = candidates.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut parent: Vec<usize> = (0..n_nodes).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let r = find(parent, parent[x]);
                parent[x] = r;
            }
            parent[x]
        }
        let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(u, v) in &order {
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
                chosen.insert((u, v));
            }
        }
        if chosen.len() != n_nodes - 1 {
            continue; // candidate graph disconnected; new layout
        }

        // Extra edges for route diversity, up to one per node.
        let mut extras = 0;
        for &(u, v) in &order {
            if extras >= n_nodes {
                break;
            }
            if chosen.insert((u, v)) {
                extras += 1;
            }
        }

        let edges: Vec<Link> = chosen
            .into_iter()
            .map(|(u, v)| Link { u, v, bw_max: rng.gen_range(BW_MIN..BW_MAX) })
            .collect();
        return Topology::new(nodes, edges).expect("generated graph satisfies invariants");
    }
}

/// Mean offered load per link across a simulated day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficProfile {
    /// Mean load per hour of day, Mbit/s.
    pub hourly_mean: [f64; 24],
    /// Multiplicative noise sigma.
    pub noise_sigma: f64,
    /// Seed of the load-noise stream.
    pub seed: u64,
}

impl TrafficProfile {
    /// Two-peak day shape: a night trough, a midday bump and a taller
    /// evening peak scaled so the evening mean equals `peak_mbps`.
    pub fn two_peak(peak_mbps: f64, noise_sigma: f64, seed: u64) -> Self {
        let gauss = |h: f64, center: f64, width: f64| {
            let z = (h - center) / width;
            (-0.5 * z * z).exp()
        };
        let mut hourly_mean = [0.0; 24];
        let mut raw_peak = 0.0f64;
        for (h, slot) in hourly_mean.iter_mut().enumerate() {
            let h = h as f64;
            let shape = 0.12 + 0.55 * gauss(h, 13.0, 2.8) + 0.88 * gauss(h, 20.0, 2.2);
            *slot = shape;
            raw_peak = raw_peak.max(shape);
        }
        for slot in &mut hourly_mean {
            *slot *= peak_mbps / raw_peak;
        }
        TrafficProfile { hourly_mean, noise_sigma, seed }
    }

    /// Linear interpolation of the hourly means at a fractional hour.
    pub fn mean_at(&self, hour: f64) -> f64 {
        let h = hour.rem_euclid(24.0);
        let lo = h.floor() as usize % 24;
        let hi = (lo + 1) % 24;
        let t = h - h.floor();
        self.hourly_mean[lo] * (1.0 - t) + self.hourly_mean[hi] * t
    }
}

/// Pre-snap sampled targets for one edge, kept for self-consistency checks.
#[derive(Debug, Clone, Copy)]
pub struct EdgeTargets {
    pub used_bw: f64,
    pub delay: f64,
    pub loss: f64,
    pub drops: f64,
    pub errors: f64,
}

/// One generated snapshot: the raw counters, the derived matrices, and the
/// targets the counters were synthesized from.
#[derive(Debug, Clone)]
pub struct GeneratedSnapshot {
    pub hour: f64,
    pub counters: RawLinkCounters,
    pub snapshot: Snapshot,
    pub targets: Vec<EdgeTargets>,
}

/// Gaussian via Box-Muller.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Synthesizes `count` snapshots across one simulated day.
///
/// Per snapshot and link: utilization is the diurnal mean with multiplicative
/// noise, clamped to the capacity; counters (byte/packet/drop/error totals,
/// port durations, delay probes) are built to be exactly consistent with it.
/// The derived matrices are checked against the sampled targets within 1e-6
/// before returning.
pub fn gen_snapshots(
    topo: &Topology,
    profile: &TrafficProfile,
    count: usize,
    seed: u64,
) -> Vec<GeneratedSnapshot> {
    assert!(count >= 1, "need at least one snapshot");
    let mut load_rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut plumb_rng = ChaCha8Rng::seed_from_u64(seed);

    // Base delays are a per-link property; the topology file does not carry
    // them, so they are derived once from the synthesis seed.
    let base_delay: Vec<f64> = topo
        .edges()
        .iter()
        .map(|_| plumb_rng.gen_range(DELAY_MIN..DELAY_MAX))
        .collect();

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let hour = 24.0 * i as f64 / count as f64;
        let mean = profile.mean_at(hour);
        let mut per_edge = Vec::with_capacity(topo.edges().len());
        let mut targets = Vec::with_capacity(topo.edges().len());

        for (e, link) in topo.edges().iter().enumerate() {
            let noise = (1.0 + profile.noise_sigma * normal(&mut load_rng)).max(0.0);
            let used_target = (mean * noise).clamp(0.0, link.bw_max);

            // Byte totals: the endpoint difference encodes the utilization.
            let delta_bytes = (used_target * 1e6 * WINDOW_SECS / 8.0).round() as u64;
            let used_snapped = delta_bytes as f64 * 8.0 / 1e6 / WINDOW_SECS;
            let base_tx: u64 = plumb_rng.gen_range(1_000_000..1_000_000_000);
            let base_rx: u64 = plumb_rng.gen_range(1_000_000..1_000_000_000);
            let t0 = 1_000.0 * (i + 1) as f64;

            // Packet counters: loss pairs sender u with receiver v, drop and
            // error rates pool both ends.
            let tx_p: u64 = 1_000_000 + plumb_rng.gen_range(0..500_000);
            let loss_rate = plumb_rng.gen_range(0.0..0.02);
            let rx_p = ((tx_p as f64) * (1.0 - loss_rate)).round() as u64;
            let loss_snapped = (tx_p - rx_p) as f64 / tx_p as f64;
            let pool = tx_p + rx_p;
            let dropped = (plumb_rng.gen_range(0.0..0.02) * pool as f64).round() as u64;
            let errored = (plumb_rng.gen_range(0.0..0.02) * pool as f64).round() as u64;

            // Delay probes: jitter around the base, reconstructed exactly.
            let delay_ms =
                (base_delay[e] + 0.3 * normal(&mut plumb_rng)).max(0.05);
            let rtt_rs = plumb_rng.gen_range(0.002..0.008);
            let rtt_rd = plumb_rng.gen_range(0.002..0.008);
            let probe_leg = delay_ms / 1e3 + (rtt_rs + rtt_rd) / 2.0;

            per_edge.push(LinkCounters {
                at_u: PortCounters {
                    tx_p,
                    tx_b: base_tx + delta_bytes,
                    rx_b: base_rx,
                    tx_drop: dropped / 2,
                    tx_err: errored / 2,
                    t_dur: t0,
                    ..Default::default()
                },
                at_v: PortCounters {
                    rx_p,
                    tx_b: base_tx,
                    rx_b: base_rx,
                    rx_drop: dropped - dropped / 2,
                    rx_err: errored - errored / 2,
                    t_dur: t0 + WINDOW_SECS,
                    ..Default::default()
                },
                probe: LinkProbe { t_fwd: probe_leg, t_reply: probe_leg, rtt_rs, rtt_rd },
            });
            targets.push(EdgeTargets {
                used_bw: used_snapped,
                delay: delay_ms,
                loss: loss_snapped,
                drops: dropped as f64 / pool as f64,
                errors: errored as f64 / pool as f64,
            });
        }

        let counters = RawLinkCounters { per_edge };
        let raw = derive_link_state(&counters, topo)
            .expect("synthesized counters are well-formed");
        for (link, t) in topo.edges().iter().zip(&targets) {
            let got = raw.edge(Channel::UsedBw, link.u, link.v).unwrap();
            assert!(
                (got - t.used_bw).abs() <= 1e-6,
                "derived used_bw {got} drifted from sampled {}",
                t.used_bw
            );
        }
        out.push(GeneratedSnapshot {
            hour,
            counters,
            snapshot: Snapshot::new(raw),
            targets,
        });
    }
    out
}
