//! Observation prenormalization: mean/std statistics collected from the
//! untrained stochastic policy before training and frozen thereafter.

use serde::{Deserialize, Serialize};

use super::rollout::{collect_rollouts, CollectMode, CollectOptions};
use crate::env::EnvFactory;
use crate::error::{Error, Result};
use crate::nn::Policy;

pub const STD_FLOOR: f64 = 1e-6;

/// Frozen per-dimension state statistics. There is deliberately no update
/// path: the struct is fully built by [`Normalizer::fit`] and read-only
/// afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: u64,
}

impl Normalizer {
    /// Pass-through normalizer (zero mean, unit scale).
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            count: 0,
        }
    }

    /// Population statistics over an observation set, std floored at 1e-6.
    pub fn fit<'a>(observations: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut count = 0u64;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for obs in observations {
            if obs.len() != dim {
                return Err(Error::dim("normalizer fit", dim, obs.len()));
            }
            count += 1;
            let inv = 1.0 / count as f64;
            for d in 0..dim {
                let delta = obs[d] - mean[d];
                mean[d] += delta * inv;
                m2[d] += delta * (obs[d] - mean[d]);
            }
        }
        if count == 0 {
            return Err(Error::Config("no observations to fit normalizer".into()));
        }
        let std = m2
            .iter()
            .map(|&s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Rolls the untrained stochastic policy under randomized dynamics until at
/// least `n_steps` observations are gathered, then freezes their statistics.
pub fn collect_prenormalization_stats(
    policy: &Policy,
    factory: &EnvFactory,
    n_steps: usize,
    slots: usize,
    workers: usize,
    seed: u64,
) -> Result<Normalizer> {
    if n_steps < 10_000 {
        return Err(Error::Config(
            "prenormalization needs at least 10,000 steps".into(),
        ));
    }
    let opts = CollectOptions {
        mode: CollectMode::MinTimesteps(n_steps),
        slots,
        workers,
        record_latents: false,
        record_raw_obs: false,
        deterministic: false,
        max_steps: 300,
        seed_stream: seed,
    };
    // no normalizer yet: the policy sees raw observations while statistics
    // are being gathered
    let buffer = collect_rollouts(policy, None, factory, None, &opts)?;
    if buffer.total_steps < n_steps {
        return Err(Error::Config(format!(
            "collected only {} of {} prenormalization steps",
            buffer.total_steps, n_steps
        )));
    }
    let dim = policy.obs_dim;
    Normalizer::fit(
        buffer
            .trajectories
            .iter()
            .flat_map(|t| t.observations.iter().map(|o| o.as_slice())),
        dim,
    )
}
