//! TOML experiment configuration.
//!
//! Every section has defaults matching the reference setup: a 14-node
//! topology, 48 snapshots over a simulated day, the tuned reward weighting,
//! and the tuned learning hyperparameters with source node 3 multicasting
//! to {6, 7, 8, 9, 11, 13}.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use madrl_mr_core::agent::Hyperparams;
use madrl_mr_core::env::RewardWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySection {
    pub nodes: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection { nodes: 14 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSection {
    /// Snapshots per simulated day.
    pub snapshots_per_day: usize,
    /// Multiplicative load-noise sigma.
    pub noise_sigma: f64,
    /// Evening-peak mean load per link in Mbit/s; the rest of the diurnal
    /// curve scales from it.
    pub peak_mbps: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection { snapshots_per_day: 48, noise_sigma: 0.1, peak_mbps: 18.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    pub beta: [f64; 7],
    pub r_hell: f64,
    pub r_loop: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        RewardSection { beta: w.beta, r_hell: w.r_hell, r_loop: w.r_loop }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSection {
    pub alpha_actor: f64,
    pub alpha_critic: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub update_time: usize,
    pub episodes: usize,
    pub n_agents: usize,
    pub step_cap_mult: usize,
    /// Unicast pretraining episode budget.
    pub pretrain_episodes: usize,
}

impl Default for HyperSection {
    fn default() -> Self {
        let h = Hyperparams::default();
        HyperSection {
            alpha_actor: h.alpha_actor,
            alpha_critic: h.alpha_critic,
            gamma: h.gamma,
            batch_size: h.batch_size,
            update_time: h.update_time,
            episodes: h.episodes,
            n_agents: h.n_agents,
            step_cap_mult: h.step_cap_mult,
            pretrain_episodes: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestSection {
    pub src: usize,
    pub dst: Vec<usize>,
}

impl Default for RequestSection {
    fn default() -> Self {
        RequestSection { src: 3, dst: vec![6, 7, 8, 9, 11, 13] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Offered load per multicast group in Mbit/s.
    pub offered_mbps: f64,
    /// Snapshots per reporting window.
    pub window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { offered_mbps: 20.0, window: 6 }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub topology: TopologySection,
    pub traffic: TrafficSection,
    pub reward: RewardSection,
    pub hyper: HyperSection,
    pub request: RequestSection,
    pub eval: EvalSection,
}

impl LabConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let cfg: LabConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            beta: self.reward.beta,
            r_hell: self.reward.r_hell,
            r_loop: self.reward.r_loop,
        }
    }

    /// Hyperparameters with the run seed filled in.
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            alpha_actor: self.hyper.alpha_actor,
            alpha_critic: self.hyper.alpha_critic,
            gamma: self.hyper.gamma,
            batch_size: self.hyper.batch_size,
            update_time: self.hyper.update_time,
            episodes: self.hyper.episodes,
            n_agents: self.hyper.n_agents,
            step_cap_mult: self.hyper.step_cap_mult,
            seed,
        }
    }
}
