//! Recurrent reinforcement-learning laboratory for memory-based locomotion control.
//!
//! The crate trains LSTM and feedforward Gaussian policies with a recurrent
//! variant of PPO on a planar five-link biped (and a fast 1-D diagnostic task),
//! randomizes simulation dynamics per episode, and probes the trained recurrent
//! hidden states for the dynamics parameters they implicitly encode.
//!
//! Everything is 64-bit and deterministic given a master seed: the neural nets
//! are hand-rolled (dense + two-layer LSTM with exact backpropagation through
//! time, verified against finite differences), the physics is a semi-implicit
//! Euler integrator with penalty contacts, and all randomness flows through
//! seeded ChaCha generators.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod dynrand;
pub mod env;
pub mod error;
pub mod nn;
pub mod ppo;
pub mod probe;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use dynrand::{DynamicsParameters, RandomizationSpec};
pub use env::{BipedModel, Environment, StepOutcome};
pub use error::{Error, Result};
pub use nn::{Critic, Policy, PolicyFamily, PolicyState};
pub use ppo::{Normalizer, PpoConfig, RolloutBuffer, Trajectory};
