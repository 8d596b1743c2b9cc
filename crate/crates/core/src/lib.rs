//! Agent-temporal reward redistribution for cooperative multi-agent
//! reinforcement learning with episodic (end-of-episode) rewards.
//!
//! The crate is organised bottom-up:
//!
//! - [`redistribution`]: weight matrices, the simplex constraints and the
//!   `r[t][i] = w'[t][i] * w[t] * R` redistribution.
//! - [`envs`]: two small cooperative Dec-POMDPs that withhold reward until
//!   termination and expose ground-truth per-step credit.
//! - [`redistributors`]: the experimental arms (episodic, IRCR,
//!   temporal-only, oracle, TAR²).
//! - [`reward_model`]: the temporal/agent attention return-decomposition
//!   network with a hand-written reverse-mode tape.
//! - [`theory`]: executable checks of the shaping, gradient-scaling and
//!   variance identities, including an exact enumeration oracle.
//! - [`training`]: independent REINFORCE / clipped-PPO learners and the
//!   warm-up schedule.

pub mod envs;
pub mod error;
pub mod persist;
pub mod redistribution;
pub mod redistributors;
pub mod reward_model;
pub mod rng;
pub mod theory;
pub mod trajectory;
pub mod training;

pub use error::{Error, Result};
pub use redistribution::{
    redistribute_with_weights, validate_weights, weights_from_contributions, ContributionMatrix,
    RedistributionMatrix, ValidationReport, WeightMatrix,
};
pub use trajectory::Trajectory;
