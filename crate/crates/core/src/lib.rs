//! PPO with Optimistic Policy Regularization on small deterministic environments.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense matrices, MLP forward/backward, Adam and log-softmax.
//! - [`agent`]: categorical actor-critic built from two MLPs (optionally a shared trunk).
//! - [`ppo`]: rollout batches, GAE, clipped surrogate, value loss and the update loop.
//! - [`opr`]: the good-episode buffer, directional log-ratio shaping and the behavioral cloning loss.
//! - [`envs`]: DeepChain, DistractorGrid and MiniDefense plus an exact DP solver.
//! - [`harness`]: configuration, the training loop, comparisons, metrics, checkpoints.
//!
//! Numerics are generic over [`Scalar`]; the aliases below fix the element type to `f64`,
//! which is what the harness trains with.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod opr;
pub mod ppo;
pub mod scalar;
pub mod seeding;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numkit::Matrix<f64>;
pub type Matrix32 = numkit::Matrix<f32>;
pub type Mlp = numkit::MlpParams<f64>;
pub type Mlp32 = numkit::MlpParams<f32>;
pub type Adam = numkit::AdamState<f64>;
pub type Agent = agent::AgentParams<f64>;
pub type Agent32 = agent::AgentParams<f32>;
pub type AgentOptimizer = agent::AgentOptimizer<f64>;
pub type Rollout = ppo::RolloutBatch<f64>;
pub type Transition = opr::Transition<f64>;
pub type Episode = opr::Episode<f64>;
pub type GoodEpisodeBuffer = opr::GoodEpisodeBuffer<f64>;
