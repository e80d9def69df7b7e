//! The iteration loop: snapshot-free behavior-policy bookkeeping (log-probs
//! and means are recorded at collection time), trajectory- or timestep-batched
//! surrogate optimization, mean-squared-error returns regression for the
//! critic, and the post-update KL check that aborts remaining epochs.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::batch::{epoch_batches, pad_batch, TrajectoryBatch};
use super::gae::estimate_advantages;
use super::loss::kl_term;
use super::normalizer::Normalizer;
use super::rollout::{collect_rollouts, CollectMode, CollectOptions, RolloutBuffer, Trajectory};
use super::{derive_seed, streams, PpoConfig};
use crate::env::EnvFactory;
use crate::error::{Error, Result};
use crate::nn::{
    action_std, gaussian_logprob, AdamParams, AdamState, Critic, NetKind, Policy, PolicyFamily,
};

/// Per-iteration training metrics, one CSV row each.
#[derive(Debug, Clone)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub cumulative_timesteps: u64,
    pub mean_episode_reward: f64,
    pub mean_episode_length: f64,
    pub kl_at_stop: f64,
    pub epochs_completed: usize,
    pub clip_fraction: f64,
    pub wall_time_s: f64,
}

/// Aggregates of one optimization batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    pub samples: usize,
    pub clip_hits: usize,
    pub surrogate_sum: f64,
}

/// Clipped-surrogate gradient of the *sum* over real samples with respect to
/// the policy parameters, flat layout. The caller divides by the sample count.
pub fn policy_gradient_for_batch(
    policy: &Policy,
    batch: &TrajectoryBatch,
    epsilon: f64,
) -> Result<(Vec<f64>, BatchStats)> {
    let net = match &policy.net {
        NetKind::Lstm(n) => n,
        NetKind::Mlp(_) => {
            return Err(Error::Config(
                "trajectory-batch gradients are for recurrent policies".into(),
            ))
        }
    };
    let (means, cache) = net.forward_seq(&batch.obs)?;
    let (t_len, b_len, a_dim) = means.dim();
    let inv_var = 1.0 / (action_std() * action_std());
    let mut upstream = Array3::zeros((t_len, b_len, a_dim));
    let mut stats = BatchStats::default();
    for t in 0..t_len {
        for b in 0..b_len {
            if !batch.mask[[t, b]] {
                continue;
            }
            let mut logp_new = 0.0;
            {
                let sigma = action_std();
                let inv_two_var = 1.0 / (2.0 * sigma * sigma);
                const LN_2PI: f64 = 1.8378770664093453;
                for d in 0..a_dim {
                    let diff = batch.actions[[t, b, d]] - means[[t, b, d]];
                    logp_new += -diff * diff * inv_two_var - crate::nn::LOG_STD - 0.5 * LN_2PI;
                }
            }
            let ratio = super::loss::probability_ratio(logp_new, batch.logp_old[[t, b]]);
            let adv = batch.advantages[[t, b]];
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
            stats.samples += 1;
            stats.surrogate_sum += unclipped.min(clipped);
            if (ratio - 1.0).abs() > epsilon {
                stats.clip_hits += 1;
            }
            // min picks the unclipped branch when it is not larger; the
            // saturated clip branch has zero gradient
            if unclipped <= clipped {
                for d in 0..a_dim {
                    let dlogp = (batch.actions[[t, b, d]] - means[[t, b, d]]) * inv_var;
                    upstream[[t, b, d]] = ratio * adv * dlogp;
                }
            }
        }
    }
    let grads = net.backward_seq(&cache, &upstream, Some(&batch.mask))?;
    Ok((NetKind::Lstm(grads).params_flat(), stats))
}

/// Sum-form clipped surrogate over the real samples of a padded batch.
pub fn batch_surrogate_loss(
    policy: &Policy,
    batch: &TrajectoryBatch,
    epsilon: f64,
) -> Result<(f64, usize)> {
    let means = forward_means(policy, batch)?;
    let (t_len, b_len, a_dim) = means.dim();
    let mut sum = 0.0;
    let mut samples = 0;
    for t in 0..t_len {
        for b in 0..b_len {
            if !batch.mask[[t, b]] {
                continue;
            }
            let mean: Vec<f64> = (0..a_dim).map(|d| means[[t, b, d]]).collect();
            let action: Vec<f64> = (0..a_dim).map(|d| batch.actions[[t, b, d]]).collect();
            let logp_new = gaussian_logprob(&mean, &action)?;
            let ratio = super::loss::probability_ratio(logp_new, batch.logp_old[[t, b]]);
            let adv = batch.advantages[[t, b]];
            sum += (ratio * adv).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv);
            samples += 1;
        }
    }
    Ok((sum, samples))
}

/// Unrolled action means of either family over a padded batch.
pub fn forward_means(policy: &Policy, batch: &TrajectoryBatch) -> Result<Array3<f64>> {
    match &policy.net {
        NetKind::Lstm(n) => Ok(n.forward_seq(&batch.obs)?.0),
        NetKind::Mlp(n) => {
            let (t_len, b_len, _) = batch.obs.dim();
            let mut out = Array3::zeros((t_len, b_len, policy.action_dim));
            for t in 0..t_len {
                let (y, _) = n.forward(batch.obs.index_axis(ndarray::Axis(0), t));
                out.index_axis_mut(ndarray::Axis(0), t).assign(&y);
            }
            Ok(out)
        }
    }
}

/// Critic gradient (sum-form MSE to the returns) over a padded batch.
fn critic_gradient_for_batch(critic: &Critic, batch: &TrajectoryBatch) -> Result<Vec<f64>> {
    match &critic.net {
        NetKind::Lstm(n) => {
            let (values, cache) = n.forward_seq(&batch.obs)?;
            let (t_len, b_len, _) = values.dim();
            let mut upstream = Array3::zeros((t_len, b_len, 1));
            for t in 0..t_len {
                for b in 0..b_len {
                    if batch.mask[[t, b]] {
                        upstream[[t, b, 0]] = 2.0 * (values[[t, b, 0]] - batch.returns[[t, b]]);
                    }
                }
            }
            let grads = n.backward_seq(&cache, &upstream, Some(&batch.mask))?;
            Ok(NetKind::Lstm(grads).params_flat())
        }
        NetKind::Mlp(_) => Err(Error::Config(
            "trajectory-batch gradients are for recurrent critics".into(),
        )),
    }
}

/// Post-update KL sum over the real samples of a padded batch.
fn batch_kl_sum(policy: &Policy, batch: &TrajectoryBatch) -> Result<(f64, usize)> {
    let means = forward_means(policy, batch)?;
    let (t_len, b_len, a_dim) = means.dim();
    let mut sum = 0.0;
    let mut samples = 0;
    for t in 0..t_len {
        for b in 0..b_len {
            if !batch.mask[[t, b]] {
                continue;
            }
            let old: Vec<f64> = (0..a_dim).map(|d| batch.behavior_means[[t, b, d]]).collect();
            let new: Vec<f64> = (0..a_dim).map(|d| means[[t, b, d]]).collect();
            sum += kl_term(&old, &new);
            samples += 1;
        }
    }
    Ok((sum, samples))
}

/// Runs `job` over chunk indices `0..n_chunks` on `workers` threads; results
/// land in chunk order so the reduction is independent of the worker count.
fn run_chunked<T: Send>(
    n_chunks: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Mutex<Option<Result<T>>>> = (0..n_chunks).map(|_| Mutex::new(None)).collect();
    let counter = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(n_chunks.max(1)) {
            scope.spawn(|| loop {
                let c = counter.fetch_add(1, Ordering::Relaxed);
                if c >= n_chunks {
                    break;
                }
                let out = job(c);
                *results[c].lock().unwrap() = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("chunk job ran"))
        .collect()
}

/// Fixed contiguous chunking of a batch's trajectory list.
fn chunk_ranges(len: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = chunks.max(1);
    (0..chunks)
        .map(|c| (c * len / chunks)..((c + 1) * len / chunks))
        .filter(|r| !r.is_empty())
        .collect()
}

fn add_scaled(acc: &mut [f64], part: &[f64]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += p;
    }
}

/// Recurrent PPO trainer: owns the policy/critic pair, the frozen
/// normalizer, and both optimizer states.
pub struct Trainer {
    pub policy: Policy,
    pub critic: Critic,
    pub normalizer: Normalizer,
    pub adam_policy: AdamState,
    pub adam_critic: AdamState,
    pub cfg: PpoConfig,
    pub factory: EnvFactory,
    pub master_seed: u64,
    pub iteration: u64,
    pub cumulative_timesteps: u64,
}

impl Trainer {
    pub fn new(
        policy: Policy,
        critic: Critic,
        normalizer: Normalizer,
        cfg: PpoConfig,
        factory: EnvFactory,
        master_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if policy.family() != critic.net.family() {
            return Err(Error::Config("policy and critic families must match".into()));
        }
        let hp = AdamParams {
            learning_rate: cfg.learning_rate.max(f64::MIN_POSITIVE),
            ..AdamParams::default()
        };
        let adam_policy = AdamState::new(policy.net.param_layout(), hp);
        let adam_critic = AdamState::new(critic.net.param_layout(), hp);
        Ok(Trainer {
            policy,
            critic,
            normalizer,
            adam_policy,
            adam_critic,
            cfg,
            factory,
            master_seed,
            iteration: 0,
            cumulative_timesteps: 0,
        })
    }

    fn collect_options(&self) -> CollectOptions {
        CollectOptions {
            mode: match self.cfg.rollouts_per_iteration {
                Some(n) => CollectMode::Count(n),
                None => CollectMode::MinTimesteps(self.cfg.iteration_timesteps),
            },
            slots: self.cfg.rollout_slots,
            workers: self.cfg.workers,
            record_latents: false,
            record_raw_obs: false,
            deterministic: false,
            max_steps: self.cfg.max_trajectory_steps,
            seed_stream: derive_seed(self.master_seed, streams::ROLLOUT, self.iteration),
        }
    }

    /// One full iteration: collect N rollouts under the frozen behavior
    /// policy, estimate advantages, then optimize for up to K epochs of
    /// batched updates, aborting as soon as the post-update KL exceeds the
    /// threshold.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let started = Instant::now();
        let opts = self.collect_options();
        let mut buffer = collect_rollouts(
            &self.policy,
            Some(&self.critic),
            &self.factory,
            Some(&self.normalizer),
            &opts,
        )?;
        estimate_advantages(&mut buffer, self.cfg.gamma, self.cfg.lambda);

        let (kl_at_stop, epochs_completed, clip_fraction) = match self.policy.family() {
            PolicyFamily::Lstm => self.optimize_recurrent(&buffer)?,
            PolicyFamily::Feedforward => self.optimize_feedforward(&buffer)?,
        };

        self.cumulative_timesteps += buffer.total_steps as u64;
        self.iteration += 1;
        Ok(IterationMetrics {
            iteration: self.iteration,
            cumulative_timesteps: self.cumulative_timesteps,
            mean_episode_reward: buffer.mean_episode_reward(),
            mean_episode_length: buffer.mean_episode_length(),
            kl_at_stop,
            epochs_completed,
            clip_fraction,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }

    fn apply_update(
        adam: &mut AdamState,
        net: &mut NetKind,
        grad_sum: Vec<f64>,
        scale: f64,
        learning_rate: f64,
    ) -> Result<()> {
        if learning_rate == 0.0 {
            return Ok(());
        }
        let mut grad = grad_sum;
        for g in &mut grad {
            *g *= scale;
        }
        let mut params = net.params_flat();
        adam.update(&mut params, &grad)?;
        net.load_flat(&params)
    }

    fn optimize_recurrent(&mut self, buffer: &RolloutBuffer) -> Result<(f64, usize, f64)> {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.master_seed,
            streams::EPOCH_SHUFFLE,
            self.iteration,
        ));
        let mut kl_last = 0.0;
        let mut epochs_completed = 0;
        let mut clip_hits = 0usize;
        let mut clip_total = 0usize;

        'epochs: for _ in 0..self.cfg.epochs {
            let batches = epoch_batches(
                buffer.trajectories.len(),
                self.cfg.trajectory_batch_size,
                &mut shuffle_rng,
            );
            for idxs in batches {
                let trajs: Vec<&Trajectory> =
                    idxs.iter().map(|&i| &buffer.trajectories[i]).collect();
                let ranges = chunk_ranges(trajs.len(), self.cfg.grad_chunks);

                // policy + critic gradients over fixed chunks, in parallel
                let policy_ref = &self.policy;
                let critic_ref = &self.critic;
                let eps = self.cfg.clip_epsilon;
                let trajs_ref = &trajs;
                let parts = run_chunked(ranges.len(), self.cfg.workers, |c| {
                    let chunk = pad_batch(&trajs_ref[ranges[c].clone()]);
                    let (pg, stats) = policy_gradient_for_batch(policy_ref, &chunk, eps)?;
                    let cg = critic_gradient_for_batch(critic_ref, &chunk)?;
                    Ok((pg, cg, stats))
                })?;

                let mut pgrad = vec![0.0; self.adam_policy.param_len()];
                let mut cgrad = vec![0.0; self.adam_critic.param_len()];
                let mut samples = 0usize;
                for (pg, cg, stats) in &parts {
                    add_scaled(&mut pgrad, pg);
                    add_scaled(&mut cgrad, cg);
                    samples += stats.samples;
                    clip_hits += stats.clip_hits;
                }
                clip_total += samples;
                let n = samples.max(1) as f64;
                // ascend the surrogate: descend its negation
                Self::apply_update(
                    &mut self.adam_policy,
                    &mut self.policy.net,
                    pgrad,
                    -1.0 / n,
                    self.cfg.learning_rate,
                )?;
                Self::apply_update(
                    &mut self.adam_critic,
                    &mut self.critic.net,
                    cgrad,
                    1.0 / n,
                    self.cfg.learning_rate,
                )?;

                // Alg. 1 ordering: optimize first, then test the divergence
                let policy_ref = &self.policy;
                let kl_parts = run_chunked(ranges.len(), self.cfg.workers, |c| {
                    let chunk = pad_batch(&trajs_ref[ranges[c].clone()]);
                    batch_kl_sum(policy_ref, &chunk)
                })?;
                let (kl_sum, kl_n) = kl_parts
                    .iter()
                    .fold((0.0, 0usize), |(s, n), (ps, pn)| (s + ps, n + pn));
                kl_last = kl_sum / kl_n.max(1) as f64;
                if kl_last > self.cfg.kl_threshold {
                    break 'epochs;
                }
            }
            epochs_completed += 1;
        }
        let clip_fraction = clip_hits as f64 / clip_total.max(1) as f64;
        Ok((kl_last, epochs_completed, clip_fraction))
    }

    fn optimize_feedforward(&mut self, buffer: &RolloutBuffer) -> Result<(f64, usize, f64)> {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.master_seed,
            streams::EPOCH_SHUFFLE,
            self.iteration,
        ));

        // flatten the buffer into timestep records
        let steps: Vec<(usize, usize)> = buffer
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
            .collect();
        let obs_dim = self.policy.obs_dim;
        let act_dim = self.policy.action_dim;

        let mut kl_last = 0.0;
        let mut epochs_completed = 0;
        let mut clip_hits = 0usize;
        let mut clip_total = 0usize;

        'epochs: for _ in 0..self.cfg.epochs {
            let batches = epoch_batches(steps.len(), self.cfg.timestep_batch_size, &mut shuffle_rng);
            for idxs in batches {
                let n_rows = idxs.len();
                let mut obs = Array2::zeros((n_rows, obs_dim));
                let mut actions = Array2::zeros((n_rows, act_dim));
                let mut means_old = Array2::zeros((n_rows, act_dim));
                let mut logp_old = vec![0.0; n_rows];
                let mut adv = vec![0.0; n_rows];
                let mut rets = vec![0.0; n_rows];
                for (r, &si) in idxs.iter().enumerate() {
                    let (ti, k) = steps[si];
                    let traj = &buffer.trajectories[ti];
                    for d in 0..obs_dim {
                        obs[[r, d]] = traj.observations[k][d];
                    }
                    for d in 0..act_dim {
                        actions[[r, d]] = traj.actions[k][d];
                        means_old[[r, d]] = traj.behavior_means[k][d];
                    }
                    logp_old[r] = traj.log_probs[k];
                    adv[r] = traj.advantages[k];
                    rets[r] = traj.returns[k];
                }

                let row_ranges = chunk_ranges(n_rows, self.cfg.grad_chunks);
                let policy_net = match &self.policy.net {
                    NetKind::Mlp(n) => n,
                    _ => unreachable!(),
                };
                let critic_net = match &self.critic.net {
                    NetKind::Mlp(n) => n,
                    _ => unreachable!(),
                };
                let eps = self.cfg.clip_epsilon;
                let inv_var = 1.0 / (action_std() * action_std());
                let obs_ref = &obs;
                let actions_ref = &actions;
                let logp_ref = &logp_old;
                let adv_ref = &adv;
                let rets_ref = &rets;
                let parts = run_chunked(row_ranges.len(), self.cfg.workers, |c| {
                    let rows = row_ranges[c].clone();
                    let x = obs_ref.slice(ndarray::s![rows.clone(), ..]);
                    let (means, cache) = policy_net.forward(x);
                    let mut upstream = Array2::zeros((rows.len(), act_dim));
                    let mut stats = BatchStats::default();
                    for (rr, r) in rows.clone().enumerate() {
                        let mean: Vec<f64> = (0..act_dim).map(|d| means[[rr, d]]).collect();
                        let action: Vec<f64> =
                            (0..act_dim).map(|d| actions_ref[[r, d]]).collect();
                        let logp_new = gaussian_logprob(&mean, &action)?;
                        let ratio = super::loss::probability_ratio(logp_new, logp_ref[r]);
                        let a = adv_ref[r];
                        let unclipped = ratio * a;
                        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
                        stats.samples += 1;
                        stats.surrogate_sum += unclipped.min(clipped);
                        if (ratio - 1.0).abs() > eps {
                            stats.clip_hits += 1;
                        }
                        if unclipped <= clipped {
                            for d in 0..act_dim {
                                upstream[[rr, d]] =
                                    ratio * a * (action[d] - mean[d]) * inv_var;
                            }
                        }
                    }
                    let mut pgrad = policy_net.zeros_like();
                    policy_net.backward(&cache, upstream.view(), &mut pgrad);

                    let (values, vcache) = critic_net.forward(x);
                    let mut vup = Array2::zeros((rows.len(), 1));
                    for (rr, r) in rows.clone().enumerate() {
                        vup[[rr, 0]] = 2.0 * (values[[rr, 0]] - rets_ref[r]);
                    }
                    let mut cgrad = critic_net.zeros_like();
                    critic_net.backward(&vcache, vup.view(), &mut cgrad);
                    Ok((
                        NetKind::Mlp(pgrad).params_flat(),
                        NetKind::Mlp(cgrad).params_flat(),
                        stats,
                    ))
                })?;

                let mut pgrad = vec![0.0; self.adam_policy.param_len()];
                let mut cgrad = vec![0.0; self.adam_critic.param_len()];
                let mut samples = 0usize;
                for (pg, cg, stats) in &parts {
                    add_scaled(&mut pgrad, pg);
                    add_scaled(&mut cgrad, cg);
                    samples += stats.samples;
                    clip_hits += stats.clip_hits;
                }
                clip_total += samples;
                let n = samples.max(1) as f64;
                Self::apply_update(
                    &mut self.adam_policy,
                    &mut self.policy.net,
                    pgrad,
                    -1.0 / n,
                    self.cfg.learning_rate,
                )?;
                Self::apply_update(
                    &mut self.adam_critic,
                    &mut self.critic.net,
                    cgrad,
                    1.0 / n,
                    self.cfg.learning_rate,
                )?;

                // post-update KL on this batch
                let policy_net = match &self.policy.net {
                    NetKind::Mlp(n) => n,
                    _ => unreachable!(),
                };
                let means_ref = &means_old;
                let kl_parts = run_chunked(row_ranges.len(), self.cfg.workers, |c| {
                    let rows = row_ranges[c].clone();
                    let x = obs_ref.slice(ndarray::s![rows.clone(), ..]);
                    let (means, _) = policy_net.forward(x);
                    let mut sum = 0.0;
                    for (rr, r) in rows.clone().enumerate() {
                        let old: Vec<f64> = (0..act_dim).map(|d| means_ref[[r, d]]).collect();
                        let new: Vec<f64> = (0..act_dim).map(|d| means[[rr, d]]).collect();
                        sum += kl_term(&old, &new);
                    }
                    Ok((sum, rows.len()))
                })?;
                let (kl_sum, kl_n) = kl_parts
                    .iter()
                    .fold((0.0, 0usize), |(s, n), (ps, pn)| (s + ps, n + pn));
                kl_last = kl_sum / kl_n.max(1) as f64;
                if kl_last > self.cfg.kl_threshold {
                    break 'epochs;
                }
            }
            epochs_completed += 1;
        }
        let clip_fraction = clip_hits as f64 / clip_total.max(1) as f64;
        Ok((kl_last, epochs_completed, clip_fraction))
    }
}


#[cfg(test)]
impl Trajectory {
    /// Test helper: shorten a trajectory in place, keeping fields aligned.
    pub fn truncate_to(&mut self, len: usize) {
        self.observations.truncate(len);
        self.actions.truncate(len);
        self.behavior_means.truncate(len);
        self.log_probs.truncate(len);
        self.rewards.truncate(len);
        self.values.truncate(len);
        self.advantages.truncate(len);
        self.returns.truncate(len);
        self.phases.truncate(len);
        self.terminal = true;
    }
}
