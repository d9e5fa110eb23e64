//! Experiment harness around `madrl-mr-core`: synthetic topologies and
//! diurnal traffic, training-run orchestration, baseline comparison reports,
//! and the on-disk formats behind the `madrl-mr` CLI.

pub mod config;
pub mod files;
pub mod flow;
pub mod gen;
pub mod run;
