//! Core algorithms for multi-agent reinforcement-learning multicast routing.
//!
//! The crate models a software-defined wireless network as a weighted
//! undirected graph, derives per-link traffic matrices from raw port
//! counters, and trains independent advantage actor-critic agents that
//! cooperatively grow a multicast tree. Weighted KMB Steiner heuristics and
//! an exhaustive small-instance Steiner oracle serve as baselines.
//!
//! Everything here is pure computation over owned data; file formats, the
//! CLI and experiment orchestration live in the companion `madrl-mr-lab`
//! crate. The crate is `no_std` (with `alloc`) when built without the
//! default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod env;
pub mod multicast;
pub mod nn;
pub mod steiner;
pub mod topology;
pub mod trainer;

pub(crate) mod math;
