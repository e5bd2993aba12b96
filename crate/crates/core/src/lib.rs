//! Federated-weighted multi-agent actor-critic training for joint
//! communication and compute control on a simulated wireless edge network.
//!
//! Stations contend for a shared channel, train small actor and critic
//! networks either fully locally or with server-side centralized critics,
//! and periodically fuse their critics with divergence-aware weights.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod energy;
pub mod env;
pub mod error;
pub mod fedwgt;
pub mod harness;
pub mod mac;
pub mod marl;
pub mod nn;
pub mod noise;
pub mod par;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use harness::{run_experiment, run_matrix, Summary};
