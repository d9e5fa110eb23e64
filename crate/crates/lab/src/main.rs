//! Command-line front end for the multicast routing lab.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use madrl_mr_core::multicast::MulticastRequest;
use madrl_mr_core::topology::Topology;
use madrl_mr_core::trainer::{pretrain_unicast, Snapshot};

use madrl_mr_lab::config::LabConfig;
use madrl_mr_lab::files;
use madrl_mr_lab::flow::{evaluate, Algorithm, EvalConfig};
use madrl_mr_lab::gen::{gen_snapshots, gen_topology, TrafficProfile};
use madrl_mr_lab::run::{execute_train, write_run_dir};

/// Decorrelates the counter-plumbing stream from the load-noise stream.
const PLUMBING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Parser)]
#[command(name = "madrl-mr", version, about = "Multi-agent RL multicast routing lab")]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file or directory (meaning depends on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random connected wireless topology.
    GenTopo {
        /// Node count; defaults to the config value.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Generate a day of link-state snapshots for a topology.
    GenTraffic {
        /// Topology file.
        #[arg(long, default_value = "topo.json")]
        topo: PathBuf,
        /// Snapshot count; defaults to the config value.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Pretrain transferable weights on unicast episodes.
    Pretrain {
        #[arg(long, default_value = "topo.json")]
        topo: PathBuf,
        /// Directory of snapshot files.
        #[arg(long, default_value = "traffic")]
        traffic: PathBuf,
        /// Episode budget; defaults to the config value.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the multi-agent policy and write a run directory.
    Train {
        #[arg(long, default_value = "topo.json")]
        topo: PathBuf,
        #[arg(long, default_value = "traffic")]
        traffic: PathBuf,
        /// Warm-start weights from `pretrain`.
        #[arg(long)]
        warm: Option<PathBuf>,
        /// Episode budget; defaults to the config value.
        #[arg(long)]
        episodes: Option<usize>,
        /// Train agents on separate threads (identical results).
        #[arg(long)]
        parallel: bool,
    },
    /// Compare the trained policy against the KMB baselines.
    Eval {
        #[arg(long, default_value = "topo.json")]
        topo: PathBuf,
        #[arg(long, default_value = "traffic")]
        traffic: PathBuf,
        /// Run directory produced by `train`.
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
    /// Report the KMB baselines only (no checkpoint needed).
    Baseline {
        #[arg(long, default_value = "topo.json")]
        topo: PathBuf,
        #[arg(long, default_value = "traffic")]
        traffic: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<LabConfig> {
    match path {
        Some(p) => LabConfig::load(p),
        None => Ok(LabConfig::default()),
    }
}

fn load_inputs(
    topo_path: &Path,
    traffic_dir: &Path,
) -> anyhow::Result<(Arc<Topology>, Vec<Snapshot>)> {
    let topo = files::load_topology(topo_path)
        .with_context(|| format!("reading topology file {}", topo_path.display()))?;
    let snaps = files::load_snapshots(traffic_dir, &topo)
        .with_context(|| format!("reading snapshot directory {}", traffic_dir.display()))?;
    anyhow::ensure!(!snaps.is_empty(), "no snapshots in {}", traffic_dir.display());
    Ok((Arc::new(topo), snaps.into_iter().map(|(_, s)| s).collect()))
}

fn request_from(cfg: &LabConfig) -> anyhow::Result<MulticastRequest> {
    MulticastRequest::new(cfg.request.src, cfg.request.dst.iter().copied())
        .map_err(|e| anyhow::anyhow!("invalid request in config: {e}"))
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.config)?;
    let seed = cli.seed;

    match cli.cmd {
        Cmd::GenTopo { nodes } => {
            let n = nodes.unwrap_or(cfg.topology.nodes);
            let topo = gen_topology(n, seed);
            let out = cli.out.unwrap_or_else(|| PathBuf::from("topo.json"));
            files::save_topology(&topo, &out)?;
            println!(
                "wrote {} ({} nodes, {} edges)",
                out.display(),
                topo.node_count(),
                topo.edges().len()
            );
        }

        Cmd::GenTraffic { topo, count } => {
            let topo_v = files::load_topology(&topo)
                .with_context(|| format!("reading topology file {}", topo.display()))?;
            let count = count.unwrap_or(cfg.traffic.snapshots_per_day);
            let profile =
                TrafficProfile::two_peak(cfg.traffic.peak_mbps, cfg.traffic.noise_sigma, seed);
            let snaps = gen_snapshots(&topo_v, &profile, count, seed ^ PLUMBING_SALT);
            let out = cli.out.unwrap_or_else(|| PathBuf::from("traffic"));
            let series: Vec<(f64, Snapshot)> =
                snaps.into_iter().map(|g| (g.hour, g.snapshot)).collect();
            files::save_snapshots(&topo_v, &series, &out)?;
            println!("wrote {count} snapshots to {}", out.display());
        }

        Cmd::Pretrain { topo, traffic, episodes } => {
            let (topo, snaps) = load_inputs(&topo, &traffic)?;
            let mut hyper = cfg.hyperparams(seed);
            hyper.episodes = episodes.unwrap_or(cfg.hyper.pretrain_episodes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pre = pretrain_unicast(&topo, &snaps, &hyper, &mut rng)
                .map_err(|e| anyhow::anyhow!("pretraining failed: {e}"))?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("pretrained.json"));
            files::save_weights(&pre.weights, &out)?;
            let tail = pre.episodes.len().saturating_sub(50);
            let late: f64 = pre.episodes[tail..].iter().map(|e| e.reward).sum::<f64>()
                / pre.episodes.len().saturating_sub(tail).max(1) as f64;
            println!(
                "wrote {} after {} unicast episodes (late mean reward {late:.3})",
                out.display(),
                hyper.episodes
            );
        }

        Cmd::Train { topo, traffic, warm, episodes, parallel } => {
            let (topo, snaps) = load_inputs(&topo, &traffic)?;
            let warm = match warm {
                Some(p) => Some(
                    files::load_weights(&p)
                        .with_context(|| format!("reading warm-start weights {}", p.display()))?,
                ),
                None => None,
            };
            let mut hyper = cfg.hyperparams(seed);
            if let Some(e) = episodes {
                hyper.episodes = e;
            }
            let request = request_from(&cfg)?;
            let weights = cfg.reward_weights();
            let artifacts = execute_train(
                &topo,
                &snaps,
                &request,
                &hyper,
                &weights,
                warm.as_ref(),
                parallel,
            )?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("run"));
            write_run_dir(&out, &cfg, &artifacts, &topo)?;
            let curve = artifacts.run.mean_reward_curve();
            let tail = curve.len().saturating_sub(50);
            let late =
                curve[tail..].iter().sum::<f64>() / curve.len().saturating_sub(tail).max(1) as f64;
            println!(
                "wrote run to {} ({} episodes, {:.1}s, late mean reward {late:.3}, tree {} edges)",
                out.display(),
                hyper.episodes,
                artifacts.wall_clock.as_secs_f64(),
                artifacts.run.tree.len()
            );
        }

        Cmd::Eval { topo, traffic, run } => {
            let (topo, snaps) = load_inputs(&topo, &traffic)?;
            let policy_path = run.join("checkpoints").join("policy.json");
            let policy = files::load_policy(&policy_path)
                .with_context(|| format!("reading policy checkpoint {}", policy_path.display()))?;
            let request = request_from(&cfg)?;
            let report = evaluate(
                &topo,
                &snaps,
                &request,
                &Algorithm::ALL,
                Some(&policy),
                &EvalConfig { offered_mbps: cfg.eval.offered_mbps, window: cfg.eval.window },
            )?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("report.csv"));
            std::fs::write(&out, report.to_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} rows)", out.display(), report.rows.len());
        }

        Cmd::Baseline { topo, traffic } => {
            let (topo, snaps) = load_inputs(&topo, &traffic)?;
            let request = request_from(&cfg)?;
            let report = evaluate(
                &topo,
                &snaps,
                &request,
                &Algorithm::BASELINES,
                None,
                &EvalConfig { offered_mbps: cfg.eval.offered_mbps, window: cfg.eval.window },
            )?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("baseline.csv"));
            std::fs::write(&out, report.to_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} rows)", out.display(), report.rows.len());
        }
    }
    Ok(())
}
