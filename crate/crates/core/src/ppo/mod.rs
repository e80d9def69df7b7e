//! Recurrent PPO: prenormalization, deterministic parallel rollout
//! collection, generalized advantage estimation, and trajectory-batched
//! optimization of the clipped surrogate with a KL early abort.

pub mod batch;
pub mod gae;
pub mod loss;
pub mod normalizer;
pub mod rollout;
pub mod trainer;

pub use batch::{epoch_batches, pad_batch, sample_trajectory_batch, TrajectoryBatch};
pub use gae::estimate_advantages;
pub use loss::{kl_estimate, probability_ratio, surrogate_loss};
pub use normalizer::{collect_prenormalization_stats, Normalizer};
pub use rollout::{collect_rollouts, CollectMode, CollectOptions, RolloutBuffer, Trajectory};
pub use trainer::{IterationMetrics, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PPO hyperparameters. Defaults follow common practice where the method
/// itself leaves them open; all of them are run-configuration values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub kl_threshold: f64,
    pub epochs: usize,
    /// Fixed rollout count per iteration; when absent, rollouts are collected
    /// until the timestep target is reached.
    pub rollouts_per_iteration: Option<usize>,
    pub iteration_timesteps: usize,
    /// Recurrent policies consume whole-trajectory batches of this size.
    pub trajectory_batch_size: usize,
    /// Feedforward policies consume timestep batches of this size.
    pub timestep_batch_size: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub total_timesteps: u64,
    pub max_trajectory_steps: usize,
    pub prenormalization_steps: usize,
    /// Lockstep environment slots in the collector.
    pub rollout_slots: usize,
    pub workers: usize,
    /// Fixed gradient-reduction chunk count; results are identical for any
    /// worker count because the reduction tree never depends on it.
    pub grad_chunks: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            kl_threshold: 0.02,
            epochs: 4,
            rollouts_per_iteration: None,
            iteration_timesteps: 50_000,
            trajectory_batch_size: 64,
            timestep_batch_size: 1024,
            gamma: 0.99,
            lambda: 0.95,
            learning_rate: 1e-4,
            total_timesteps: 3_000_000,
            max_trajectory_steps: 300,
            prenormalization_steps: 10_000,
            rollout_slots: 16,
            workers: 2,
            grad_chunks: 8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_epsilon <= 0.0 {
            return Err(Error::Config("clip_epsilon must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.kl_threshold < 0.0 {
            return Err(Error::Config("kl_threshold must be >= 0".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if self.trajectory_batch_size == 0 || self.timestep_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.max_trajectory_steps == 0 || self.max_trajectory_steps > 300 {
            return Err(Error::Config(
                "max_trajectory_steps must lie in 1..=300".into(),
            ));
        }
        if self.rollout_slots == 0 || self.workers == 0 || self.grad_chunks == 0 {
            return Err(Error::Config(
                "rollout_slots, workers, grad_chunks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stable per-purpose seed derivation from the master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over a mixed input keeps streams statistically independent
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed stream identifiers.
pub mod streams {
    pub const PRENORM: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const EPOCH_SHUFFLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const PROBE: u64 = 6;
}
