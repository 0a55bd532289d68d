//! Mean-field control of large 2D agent swarms.

pub mod collision;
pub mod control;
pub mod envs;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod meanfield;
pub mod policy_nn;
pub mod ppo;
pub mod rng;
pub mod sim_core;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Executor;
pub use rng::SeedStream;
pub use sim_core::Vec2;
