//! Training-run orchestration and the run directory layout.
//!
//! A run directory holds the config snapshot, one reward CSV per agent, the
//! policy checkpoint bundle, the merged tree, and a JSON summary with seeds
//! and wall-clock time. Agents can train sequentially or on threads; both
//! paths follow the same seed discipline and produce identical results.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use madrl_mr_core::agent::Hyperparams;
use madrl_mr_core::env::RewardWeights;
use madrl_mr_core::multicast::{MulticastRequest, RoutePath};
use madrl_mr_core::topology::Topology;
use madrl_mr_core::trainer::{
    merge_agent_trees, partition_destinations, train_agent, train_madrl, PretrainedWeights,
    Snapshot, TrainError, TrainingRun,
};

use crate::config::LabConfig;
use crate::files;
use crate::flow::PolicyBundle;

/// A finished run plus its wall-clock cost.
pub struct RunArtifacts {
    pub run: TrainingRun,
    pub wall_clock: Duration,
}

/// Trains every agent on its own thread; bit-identical to the sequential
/// [`train_madrl`] because partitioning, per-agent seeds and the merge
/// all follow the same discipline.
pub fn train_madrl_parallel(
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

    let mut partition_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let tasks =
        partition_destinations(request.src, &request.dst_set, hyper.n_agents, &mut partition_rng);
    let statics: Vec<Arc<Vec<f64>>> =
        snapshots.iter().map(|s| Arc::new(s.static_input())).collect();

    let records = thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .iter()
            .map(|task| {
                let statics = &statics;
                scope.spawn(move || {
                    if !task.is_active() {
                        return Ok(madrl_mr_core::trainer::AgentRecord {
                            task: task.clone(),
                            episodes: vec![Default::default(); hyper.episodes],
                            a2c: None,
                            paths: Vec::new(),
                            fallback_dsts: Default::default(),
                        });
                    }
                    train_agent(
                        topo,
                        snapshots,
                        statics,
                        task,
                        hyper,
                        weights,
                        warm.map(|w| &w.a2c),
                        hyper.seed + task.agent_index as u64,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("agent thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let all_paths: Vec<RoutePath> =
        records.iter().flat_map(|a| a.paths.iter().cloned()).collect();
    let si = hyper.episodes.saturating_sub(1) % snapshots.len();
    let tree = merge_agent_trees(&all_paths, &snapshots[si].raw)?;

    Ok(TrainingRun { agents: records, tree, hyper: *hyper, weights: *weights })
}

/// Runs training (threaded when asked) and times it.
pub fn execute_train(
    topo: &Arc<Topology>,
    snapshots: &[Snapshot],
    request: &MulticastRequest,
    hyper: &Hyperparams,
    weights: &RewardWeights,
    warm: Option<&PretrainedWeights>,
    parallel: bool,
) -> anyhow::Result<RunArtifacts> {
    let started = Instant::now();
    let run = if parallel {
        train_madrl_parallel(topo, snapshots, request, hyper, weights, warm)
    } else {
        train_madrl(topo, snapshots, request, hyper, weights, warm)
    }
    .context("training failed")?;
    Ok(RunArtifacts { run, wall_clock: started.elapsed() })
}

/// Checkpoint bundle with everything eval needs to rebuild trees.
pub fn bundle_from_run(run: &TrainingRun, n_nodes: usize) -> PolicyBundle {
    PolicyBundle {
        agents: run
            .agents
            .iter()
            .filter(|a| a.task.is_active())
            .map(|a| (a.task.clone(), a.a2c.clone().expect("active agents keep weights")))
            .collect(),
        weights: run.weights,
        step_cap: run.hyper.step_cap(n_nodes),
    }
}

/// JSON summary at the run directory root.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub episodes: usize,
    pub n_agents: usize,
    pub agents: Vec<AgentSummary>,
    pub tree_file: String,
    pub policy_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent_index: usize,
    pub assigned_dsts: Vec<usize>,
    pub fallback_dsts: Vec<usize>,
    /// Mean reward over the final 50 episodes (or all, if fewer).
    pub final_mean_reward: f64,
    /// Fraction of episodes that reached END.
    pub end_rate: f64,
}

/// Writes the full run directory.
pub fn write_run_dir(
    dir: &Path,
    cfg: &LabConfig,
    artifacts: &RunArtifacts,
    topo: &Topology,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(&dir.join("config.toml"))?;

    let run = &artifacts.run;
    for agent in &run.agents {
        let mut csv = String::from("episode,reward,steps,part,hell,loop,ended\n");
        for (e, st) in agent.episodes.iter().enumerate() {
            csv.push_str(&format!(
                "{e},{:.6},{},{},{},{},{}\n",
                st.reward, st.steps, st.part, st.hell, st.loops, st.ended as u8
            ));
        }
        let path = dir.join(format!("rewards_agent_{}.csv", agent.task.agent_index));
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }

    files::save_tree(&run.tree, &dir.join("tree.json"))?;
    let bundle = bundle_from_run(run, topo.node_count());
    files::save_policy(&bundle, &dir.join("checkpoints").join("policy.json"))?;

    let summary = RunSummary {
        seed: run.hyper.seed,
        wall_clock_secs: artifacts.wall_clock.as_secs_f64(),
        episodes: run.hyper.episodes,
        n_agents: run.hyper.n_agents,
        agents: run
            .agents
            .iter()
            .map(|a| {
                let rewards: Vec<f64> = a.episodes.iter().map(|e| e.reward).collect();
                let tail = rewards.len().saturating_sub(50);
                let final_mean = if rewards.is_empty() {
                    0.0
                } else {
                    rewards[tail..].iter().sum::<f64>() / (rewards.len() - tail) as f64
                };
                let ended = a.episodes.iter().filter(|e| e.ended).count();
                AgentSummary {
                    agent_index: a.task.agent_index,
                    assigned_dsts: a.task.assigned_dsts.iter().copied().collect(),
                    fallback_dsts: a.fallback_dsts.iter().copied().collect(),
                    final_mean_reward: final_mean,
                    end_rate: if a.episodes.is_empty() {
                        0.0
                    } else {
                        ended as f64 / a.episodes.len() as f64
                    },
                }
            })
            .collect(),
        tree_file: "tree.json".into(),
        policy_file: "checkpoints/policy.json".into(),
    };
    let text = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    fs::write(dir.join("summary.json"), text).context("writing summary.json")?;
    Ok(())
}
