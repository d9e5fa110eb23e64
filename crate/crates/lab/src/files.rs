//! On-disk formats: topology JSON, per-snapshot link-state JSON, multicast
//! tree JSON, and weight checkpoints.
//!
//! All formats are plain serde JSON; floats round-trip exactly. Graph and
//! tree files are validated on load, with parse errors and invariant
//! violations reported as distinct kinds.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use madrl_mr_core::multicast::{MulticastError, MulticastTree};
use madrl_mr_core::topology::{
    EdgeMetrics, Link, LinkMetrics, LinkStateMatrices, NodeInfo, Topology, TopologyError,
};
use madrl_mr_core::trainer::{PretrainedWeights, Snapshot};

use crate::flow::PolicyBundle;

/// Load/store failures, keeping parse and validation errors apart.
#[derive(Debug)]
pub enum FileError {
    Io(PathBuf, io::Error),
    Parse(PathBuf, serde_json::Error),
    InvalidTopology(TopologyError),
    InvalidTree(MulticastError),
    /// Snapshot file does not match the topology it is loaded against.
    Mismatch(String),
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            FileError::Parse(p, e) => write!(f, "{}: parse error: {e}", p.display()),
            FileError::InvalidTopology(e) => write!(f, "invalid topology: {e}"),
            FileError::InvalidTree(e) => write!(f, "invalid tree: {e}"),
            FileError::Mismatch(m) => write!(f, "snapshot/topology mismatch: {m}"),
        }
    }
}

impl std::error::Error for FileError {}

fn read(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|e| FileError::Io(path.to_path_buf(), e))
}

fn write(path: &Path, text: &str) -> Result<(), FileError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| FileError::Io(path.to_path_buf(), e))?;
        }
    }
    fs::write(path, text).map_err(|e| FileError::Io(path.to_path_buf(), e))
}

/// Unvalidated mirror of the topology file schema.
#[derive(Serialize, Deserialize)]
struct TopologyFile {
    nodes: Vec<NodeInfo>,
    edges: Vec<Link>,
}

pub fn save_topology(topo: &Topology, path: &Path) -> Result<(), FileError> {
    let file =
        TopologyFile { nodes: topo.nodes().to_vec(), edges: topo.edges().to_vec() };
    write(path, &to_pretty(&file, path)?)
}

pub fn load_topology(path: &Path) -> Result<Topology, FileError> {
    let raw: TopologyFile = serde_json::from_str(&read(path)?)
        .map_err(|e| FileError::Parse(path.to_path_buf(), e))?;
    Topology::new(raw.nodes, raw.edges).map_err(FileError::InvalidTopology)
}

/// One edge of a snapshot file: the link plus its seven metric values.
#[derive(Serialize, Deserialize)]
struct SnapshotEdge {
    u: usize,
    v: usize,
    bw_max: f64,
    bw: f64,
    used_bw: f64,
    delay: f64,
    loss: f64,
    errors: f64,
    drops: f64,
    distance: f64,
}

/// Snapshot file schema: the topology plus per-edge metric fields.
#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    hour: f64,
    nodes: Vec<NodeInfo>,
    edges: Vec<SnapshotEdge>,
}

pub fn save_snapshot(
    topo: &Topology,
    snap: &Snapshot,
    hour: f64,
    path: &Path,
) -> Result<(), FileError> {
    let edges = topo
        .edges()
        .iter()
        .map(|l| {
            let m = snap
                .raw
                .edge_metrics(l.u, l.v)
                .expect("snapshot covers every topology edge");
            SnapshotEdge {
                u: l.u,
                v: l.v,
                bw_max: l.bw_max,
                bw: m.bw,
                used_bw: m.used_bw,
                delay: m.delay,
                loss: m.loss,
                errors: m.errors,
                drops: m.drops,
                distance: m.distance,
            }
        })
        .collect();
    let file = SnapshotFile { hour, nodes: topo.nodes().to_vec(), edges };
    write(path, &to_pretty(&file, path)?)
}

pub fn load_snapshot(path: &Path, topo: &Topology) -> Result<(f64, Snapshot), FileError> {
    let raw: SnapshotFile = serde_json::from_str(&read(path)?)
        .map_err(|e| FileError::Parse(path.to_path_buf(), e))?;
    if raw.nodes.len() != topo.node_count() || raw.edges.len() != topo.edges().len() {
        return Err(FileError::Mismatch(format!(
            "file has {} nodes / {} edges, topology has {} / {}",
            raw.nodes.len(),
            raw.edges.len(),
            topo.node_count(),
            topo.edges().len()
        )));
    }
    let mut values = Vec::with_capacity(raw.edges.len());
    for (e, link) in topo.edges().iter().zip(&raw.edges) {
        if e.u.min(e.v) != link.u.min(link.v) || e.u.max(e.v) != link.u.max(link.v) {
            return Err(FileError::Mismatch(format!(
                "edge ({}, {}) does not match topology edge ({}, {})",
                link.u, link.v, e.u, e.v
            )));
        }
        values.push(EdgeMetrics {
            bw: link.bw,
            used_bw: link.used_bw,
            delay: link.delay,
            loss: link.loss,
            errors: link.errors,
            drops: link.drops,
            distance: link.distance,
        });
    }
    let raw_m = LinkStateMatrices::from_edge_metrics(topo, &values)
        .map_err(|e| FileError::Mismatch(e.to_string()))?;
    Ok((raw.hour, Snapshot::new(raw_m)))
}

/// Writes one file per snapshot into `dir` (snapshot_000.json, ...).
pub fn save_snapshots(
    topo: &Topology,
    snaps: &[(f64, Snapshot)],
    dir: &Path,
) -> Result<(), FileError> {
    fs::create_dir_all(dir).map_err(|e| FileError::Io(dir.to_path_buf(), e))?;
    for (i, (hour, snap)) in snaps.iter().enumerate() {
        save_snapshot(topo, snap, *hour, &dir.join(format!("snapshot_{i:03}.json")))?;
    }
    Ok(())
}

/// Loads every `snapshot_*.json` in `dir`, ordered by file name.
pub fn load_snapshots(dir: &Path, topo: &Topology) -> Result<Vec<(f64, Snapshot)>, FileError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FileError::Io(dir.to_path_buf(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("snapshot_") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| load_snapshot(p, topo)).collect()
}

pub fn save_tree(tree: &MulticastTree, path: &Path) -> Result<(), FileError> {
    write(path, &to_pretty(tree, path)?)
}

pub fn load_tree(path: &Path) -> Result<MulticastTree, FileError> {
    // Tree validation runs inside deserialization; tell the two apart by the
    // embedded message.
    serde_json::from_str(&read(path)?).map_err(|e| parse_or_tree_error(path, e))
}

fn parse_or_tree_error(path: &Path, e: serde_json::Error) -> FileError {
    if e.is_data() {
        FileError::InvalidTree(MulticastError::NotATree)
    } else {
        FileError::Parse(path.to_path_buf(), e)
    }
}

pub fn save_weights(weights: &PretrainedWeights, path: &Path) -> Result<(), FileError> {
    write(path, &to_string(weights, path)?)
}

pub fn load_weights(path: &Path) -> Result<PretrainedWeights, FileError> {
    serde_json::from_str(&read(path)?).map_err(|e| FileError::Parse(path.to_path_buf(), e))
}

pub fn save_policy(bundle: &PolicyBundle, path: &Path) -> Result<(), FileError> {
    write(path, &to_string(bundle, path)?)
}

pub fn load_policy(path: &Path) -> Result<PolicyBundle, FileError> {
    serde_json::from_str(&read(path)?).map_err(|e| FileError::Parse(path.to_path_buf(), e))
}

fn to_pretty<T: Serialize>(value: &T, path: &Path) -> Result<String, FileError> {
    serde_json::to_string_pretty(value).map_err(|e| FileError::Parse(path.to_path_buf(), e))
}

fn to_string<T: Serialize>(value: &T, path: &Path) -> Result<String, FileError> {
    serde_json::to_string(value).map_err(|e| FileError::Parse(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{gen_snapshots, gen_topology, TrafficProfile};
    use madrl_mr_core::topology::Channel;
    use std::collections::BTreeSet;

    #[test]
    fn topology_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.json");
        let topo = gen_topology(14, 7);
        save_topology(&topo, &path).unwrap();
        let back = load_topology(&path).unwrap();
        assert_eq!(back.node_count(), 14);
        assert_eq!(back.nodes(), topo.nodes());
        assert_eq!(back.edges(), topo.edges());

        // Save(load(f)) must byte-match save(f).
        let again = dir.path().join("topo2.json");
        save_topology(&back, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn invalid_topology_files_have_distinct_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");

        fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_topology(&p), Err(FileError::Parse(..))));

        fs::write(
            &p,
            r#"{"nodes":[{"id":0,"x":0.0,"y":0.0},{"id":1,"x":50.0,"y":0.0},{"id":2,"x":99.0,"y":0.0},{"id":3,"x":0.0,"y":50.0}],
                "edges":[{"u":3,"v":3,"bw_max":10.0},{"u":0,"v":1,"bw_max":10.0},{"u":1,"v":2,"bw_max":10.0},{"u":2,"v":3,"bw_max":10.0}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_topology(&p),
            Err(FileError::InvalidTopology(TopologyError::SelfLoop { node: 3 }))
        ));

        fs::write(
            &p,
            r#"{"nodes":[{"id":0,"x":0.0,"y":0.0},{"id":1,"x":50.0,"y":0.0}],
                "edges":[{"u":0,"v":1,"bw_max":10.0},{"u":1,"v":0,"bw_max":12.0}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_topology(&p),
            Err(FileError::InvalidTopology(TopologyError::DuplicateEdge { u: 0, v: 1 }))
        ));
    }

    #[test]
    fn snapshot_series_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let topo = gen_topology(9, 3);
        let profile = TrafficProfile::two_peak(14.0, 0.1, 2);
        let snaps: Vec<(f64, Snapshot)> = gen_snapshots(&topo, &profile, 5, 8)
            .into_iter()
            .map(|g| (g.hour, g.snapshot))
            .collect();
        save_snapshots(&topo, &snaps, dir.path()).unwrap();
        let back = load_snapshots(dir.path(), &topo).unwrap();
        assert_eq!(back.len(), 5);
        for ((h1, s1), (h2, s2)) in snaps.iter().zip(&back) {
            assert_eq!(h1, h2);
            for link in topo.edges() {
                for ch in Channel::ALL {
                    assert_eq!(
                        s1.raw.edge(ch, link.u, link.v),
                        s2.raw.edge(ch, link.u, link.v)
                    );
                }
            }
        }
    }

    #[test]
    fn tree_files_validate_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        let tree = MulticastTree::new(
            0,
            BTreeSet::from([2]),
            BTreeSet::from([(0, 1), (1, 2)]),
        )
        .unwrap();
        save_tree(&tree, &path).unwrap();
        assert_eq!(load_tree(&path).unwrap(), tree);

        // A cyclic edge set must be rejected as an invalid tree.
        fs::write(&path, r#"{"src":0,"dst_set":[2],"edges":[[0,1],[1,2],[0,2]]}"#).unwrap();
        assert!(matches!(load_tree(&path), Err(FileError::InvalidTree(_))));
    }

    #[test]
    fn weights_round_trip_exactly() {
        use madrl_mr_core::agent::A2c;
        use madrl_mr_core::trainer::{PretrainedWeights, Provenance};
        use rand::SeedableRng;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let weights = PretrainedWeights {
            a2c: A2c::new(4, &mut rng),
            provenance: Provenance { topology_hash: 7, traffic_hash: 9, episodes: 12 },
        };
        save_weights(&weights, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.a2c, weights.a2c);
        assert_eq!(back.provenance, weights.provenance);
    }
}
