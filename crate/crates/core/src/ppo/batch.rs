//! Whole-trajectory batching for recurrent training: padding to the longest
//! member with a validity mask that keeps padded steps out of every loss.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;

use super::rollout::{RolloutBuffer, Trajectory};

/// A padded batch of whole trajectories plus the mask of real steps.
pub struct TrajectoryBatch {
    /// `(T, B, obs)`
    pub obs: Array3<f64>,
    /// `(T, B, act)`
    pub actions: Array3<f64>,
    pub behavior_means: Array3<f64>,
    /// `(T, B)`
    pub logp_old: Array2<f64>,
    pub advantages: Array2<f64>,
    pub returns: Array2<f64>,
    /// True marks real steps; padded steps are excluded from every loss,
    /// gradient, and KL average.
    pub mask: Array2<bool>,
    pub real_steps: usize,
}

/// Pads the given trajectories to the longest member.
pub fn pad_batch(trajs: &[&Trajectory]) -> TrajectoryBatch {
    assert!(!trajs.is_empty(), "cannot pad an empty batch");
    let batch = trajs.len();
    let t_max = trajs.iter().map(|t| t.len()).max().unwrap();
    let obs_dim = trajs[0].observations[0].len();
    let act_dim = trajs[0].actions[0].len();

    let mut obs = Array3::zeros((t_max, batch, obs_dim));
    let mut actions = Array3::zeros((t_max, batch, act_dim));
    let mut means = Array3::zeros((t_max, batch, act_dim));
    let mut logp_old = Array2::zeros((t_max, batch));
    let mut advantages = Array2::zeros((t_max, batch));
    let mut returns = Array2::zeros((t_max, batch));
    let mut mask = Array2::from_elem((t_max, batch), false);
    let mut real_steps = 0;

    for (b, traj) in trajs.iter().enumerate() {
        for t in 0..traj.len() {
            for d in 0..obs_dim {
                obs[[t, b, d]] = traj.observations[t][d];
            }
            for d in 0..act_dim {
                actions[[t, b, d]] = traj.actions[t][d];
                means[[t, b, d]] = traj.behavior_means[t][d];
            }
            logp_old[[t, b]] = traj.log_probs[t];
            advantages[[t, b]] = traj.advantages[t];
            returns[[t, b]] = traj.returns[t];
            mask[[t, b]] = true;
        }
        real_steps += traj.len();
    }

    TrajectoryBatch {
        obs,
        actions,
        behavior_means: means,
        logp_old,
        advantages,
        returns,
        mask,
        real_steps,
    }
}

/// Shuffled index chunks: every trajectory appears in exactly one batch per
/// epoch pass (the final batch may be short).
pub fn epoch_batches(n_trajectories: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_trajectories).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// Samples one padded batch of whole trajectories without replacement.
pub fn sample_trajectory_batch(
    buffer: &RolloutBuffer,
    batch_size: usize,
    rng: &mut impl Rng,
) -> (TrajectoryBatch, Vec<usize>) {
    let batches = epoch_batches(buffer.trajectories.len(), batch_size, rng);
    let indices = batches.into_iter().next().unwrap_or_default();
    let refs: Vec<&Trajectory> = indices.iter().map(|&i| &buffer.trajectories[i]).collect();
    (pad_batch(&refs), indices)
}
