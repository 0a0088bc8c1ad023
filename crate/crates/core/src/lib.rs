//! Group-based off-policy policy optimization surrogates on tabular
//! autoregressive softmax policies.
//!
//! The crate implements five surrogate objectives over groups of sampled
//! responses — hard-clipped token-level (GRPO), hard-clipped sequence-level
//! (GSPO), geometric-mean token-clipped (GMPO), sigmoid-gated (SAPO) and
//! arctan-gated geometric (SSPO) — together with their analytic gradients,
//! a finite-difference gradient checker, synthetic verifiable-reward tasks,
//! and a deterministic off-policy training loop.
//!
//! Everything here is pure computation over `f64` tables; IO, file formats
//! and the command-line front end live in the companion `policyopt-cli`
//! crate. The crate is `no_std`-compatible (it only needs `alloc`); disable
//! the default `std` feature to use it in that mode.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod gates;
pub mod gradcheck;
pub mod group;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use gates::GateConfig;
pub use group::{Trajectory, TrajectoryGroup};
pub use objectives::{evaluate, ObjectiveKind, SurrogateResult};
pub use policy::PolicyParams;
pub use rng::DetRng;
pub use tasks::{RewardMode, TaskKind, TaskSpec};
pub use trainer::{train, train_with, MetricsRow, OptimizerKind, TrainConfig};
