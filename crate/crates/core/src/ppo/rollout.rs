//! Deterministic parallel rollout collection.
//!
//! A fixed number of environment slots advance in lockstep so the policy and
//! critic evaluate all live episodes in one batched step. Each trajectory owns
//! a generator seeded purely from its global index, and finished slots pull
//! the next trajectory index in slot order, so results are bit-identical for
//! any worker count: workers only split the per-slot environment stepping,
//! which never mixes state across slots.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::derive_seed;
use crate::dynrand::DynamicsParameters;
use crate::env::{EnvFactory, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::nn::{action_std, gaussian_logprob, Critic, LstmState, NetState, Policy};

/// Ordered per-episode record; the unit of sampling for recurrent training.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    /// Per-step policy inputs (normalized when a normalizer was active).
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Action means under the behavior policy, for the KL estimate.
    pub behavior_means: Vec<Vec<f64>>,
    /// Log-probabilities recorded under the behavior policy.
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// True when the episode genuinely terminated (bootstrap value zero);
    /// false when it hit the step cap (bootstrap from the critic).
    pub terminal: bool,
    pub bootstrap_value: f64,
    /// Filled by advantage estimation.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Dynamics parameter set this episode ran under.
    pub params: DynamicsParameters,
    pub task_seed: u64,
    /// Per-step latent vectors (probe harvesting only).
    pub latents: Option<Vec<Vec<f64>>>,
    /// Per-step raw (unnormalized) observations when requested.
    pub raw_observations: Option<Vec<Vec<f64>>>,
    /// Gait phase at each recorded step.
    pub phases: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub trajectories: Vec<Trajectory>,
    pub total_steps: usize,
}

impl RolloutBuffer {
    pub fn mean_episode_reward(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>()
            / self.trajectories.len() as f64
    }

    pub fn mean_episode_length(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.total_steps as f64 / self.trajectories.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CollectMode {
    /// Exactly this many rollouts.
    Count(usize),
    /// Keep starting rollouts until finished trajectories cover this many
    /// timesteps (started rollouts always run to completion).
    MinTimesteps(usize),
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub mode: CollectMode,
    pub slots: usize,
    pub workers: usize,
    pub record_latents: bool,
    pub record_raw_obs: bool,
    /// Evaluation mode: actions are the policy means, no sampling.
    pub deterministic: bool,
    /// Trajectory step cap (the spec limit is 300).
    pub max_steps: usize,
    /// Base of the per-trajectory seed stream.
    pub seed_stream: u64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            mode: CollectMode::MinTimesteps(50_000),
            slots: 16,
            workers: 2,
            record_latents: false,
            record_raw_obs: false,
            deterministic: false,
            max_steps: 300,
            seed_stream: 0,
        }
    }
}

struct Slot {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    traj: Trajectory,
    traj_index: u64,
    obs: Vec<f64>,
    raw_obs: Vec<f64>,
    active: bool,
    outcome: Option<Result<StepOutcome>>,
    action: Vec<f64>,
}

impl Slot {
    fn begin(
        &mut self,
        index: u64,
        seed_stream: u64,
        normalizer: Option<&super::Normalizer>,
        opts: &CollectOptions,
    ) -> Result<()> {
        let task_seed = derive_seed(seed_stream, 0, index);
        self.rng = ChaCha8Rng::seed_from_u64(task_seed);
        let raw = self.env.reset(&mut self.rng, task_seed)?;
        self.obs = normalize_obs(normalizer, &raw);
        self.raw_obs = raw;
        self.traj = Trajectory {
            params: self.env.applied_parameters().clone(),
            task_seed,
            latents: opts.record_latents.then(Vec::new),
            raw_observations: opts.record_raw_obs.then(Vec::new),
            ..Trajectory::default()
        };
        self.traj_index = index;
        self.active = true;
        Ok(())
    }
}

fn normalize_obs(norm: Option<&super::Normalizer>, raw: &[f64]) -> Vec<f64> {
    match norm {
        Some(n) => n.normalize(raw),
        None => raw.to_vec(),
    }
}

fn clone_state_row(state: &NetState, row: usize) -> NetState {
    match state {
        NetState::Stateless => NetState::Stateless,
        NetState::Lstm(s) => {
            let layers = s.h.len();
            let hidden = s.h[0].ncols();
            let mut out = LstmState::zeros(layers, 1, hidden);
            for l in 0..layers {
                out.h[l].row_mut(0).assign(&s.h[l].row(row));
                out.c[l].row_mut(0).assign(&s.c[l].row(row));
            }
            NetState::Lstm(out)
        }
    }
}

/// Collects rollouts under frozen policy/critic parameters. Each trajectory
/// starts with a freshly sampled dynamics parameter set and zeroed hidden
/// states, and ends on termination or the step cap. Recorded log-probs come
/// from the (normalized) observations actually fed to the policy.
pub fn collect_rollouts(
    policy: &Policy,
    critic: Option<&Critic>,
    factory: &EnvFactory,
    normalizer: Option<&super::Normalizer>,
    opts: &CollectOptions,
) -> Result<RolloutBuffer> {
    let n_slots = opts.slots.max(1);
    let obs_dim = policy.obs_dim;
    let act_dim = policy.action_dim;

    if let CollectMode::Count(0) = opts.mode {
        return Ok(RolloutBuffer {
            trajectories: vec![],
            total_steps: 0,
        });
    }

    let mut policy_state = policy.initial_state(n_slots);
    let mut critic_state = critic.map(|c| c.initial_state(n_slots));

    let mut next_index: u64 = 0;
    let mut finished_steps: usize = 0;

    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let env = factory()?;
        if env.obs_dim() != obs_dim {
            return Err(Error::dim("collector obs", obs_dim, env.obs_dim()));
        }
        if env.action_dim() != act_dim {
            return Err(Error::dim("collector action", act_dim, env.action_dim()));
        }
        let mut slot = Slot {
            env,
            rng: ChaCha8Rng::seed_from_u64(0),
            traj: Trajectory::default(),
            traj_index: 0,
            obs: vec![0.0; obs_dim],
            raw_obs: vec![0.0; obs_dim],
            active: false,
            outcome: None,
            action: vec![0.0; act_dim],
        };
        let assign = match opts.mode {
            CollectMode::Count(n) => next_index < n as u64,
            CollectMode::MinTimesteps(_) => true,
        };
        if assign {
            slot.begin(next_index, opts.seed_stream, normalizer, opts)?;
            next_index += 1;
        }
        slots.push(slot);
    }

    let mut finished: Vec<(u64, Trajectory)> = Vec::new();
    let sigma = action_std();

    while slots.iter().any(|s| s.active) {
        // batched policy (and critic) evaluation across all slots
        let mut x = Array2::zeros((n_slots, obs_dim));
        for (s, slot) in slots.iter().enumerate() {
            if slot.active {
                for d in 0..obs_dim {
                    x[[s, d]] = slot.obs[d];
                }
            }
        }
        let (means, latents) = if opts.record_latents {
            let (m, l) = policy.net.forward_step_with_latent(x.view(), &mut policy_state)?;
            (m, Some(l))
        } else {
            (policy.net.forward_step(x.view(), &mut policy_state)?, None)
        };
        let values = match (critic, critic_state.as_mut()) {
            (Some(c), Some(cs)) => Some(c.value_step(x.view(), cs)?),
            _ => None,
        };

        for (s, slot) in slots.iter_mut().enumerate() {
            if !slot.active {
                continue;
            }
            let mean: Vec<f64> = means.row(s).to_vec();
            slot.action = if opts.deterministic {
                mean.clone()
            } else {
                mean.iter()
                    .map(|m| m + sigma * slot.rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            let logp = gaussian_logprob(&mean, &slot.action)?;
            slot.traj.observations.push(slot.obs.clone());
            if let Some(raw) = slot.traj.raw_observations.as_mut() {
                raw.push(slot.raw_obs.clone());
            }
            slot.traj.actions.push(slot.action.clone());
            slot.traj.behavior_means.push(mean);
            slot.traj.log_probs.push(logp);
            slot.traj.values.push(values.as_ref().map_or(0.0, |v| v[s]));
            slot.traj.phases.push(slot.env.phase());
            if let (Some(store), Some(l)) = (slot.traj.latents.as_mut(), latents.as_ref()) {
                store.push(l.row(s).to_vec());
            }
        }

        // step environments, split across workers; slots never share state
        let chunk = n_slots.div_ceil(opts.workers.max(1));
        std::thread::scope(|scope| {
            for slot_chunk in slots.chunks_mut(chunk) {
                scope.spawn(move || {
                    for slot in slot_chunk {
                        if slot.active {
                            slot.outcome = Some(slot.env.step(&slot.action));
                        }
                    }
                });
            }
        });

        // record outcomes; finalize and restart finished slots in slot order
        for s in 0..n_slots {
            let (terminated, next_raw_obs) = {
                let slot = &mut slots[s];
                if !slot.active {
                    continue;
                }
                let outcome = slot.outcome.take().expect("active slot stepped")?;
                slot.traj.rewards.push(outcome.reward);
                let hit_cap = slot.traj.len() >= opts.max_steps;
                if !(outcome.terminated || outcome.truncated || hit_cap) {
                    slot.obs = normalize_obs(normalizer, &outcome.observation);
                    slot.raw_obs = outcome.observation;
                    continue;
                }
                (outcome.terminated, outcome.observation)
            };

            // finalize: bootstrap with the critic only across a step cap
            let bootstrap = if terminated {
                0.0
            } else {
                match (critic, critic_state.as_ref()) {
                    (Some(c), Some(cs)) => {
                        let next_obs = normalize_obs(normalizer, &next_raw_obs);
                        let mut row_state = clone_state_row(cs, s);
                        let xm = Array2::from_shape_vec((1, obs_dim), next_obs)
                            .expect("obs length checked");
                        c.value_step(xm.view(), &mut row_state)?[0]
                    }
                    _ => 0.0,
                }
            };
            let slot = &mut slots[s];
            slot.traj.terminal = terminated;
            slot.traj.bootstrap_value = bootstrap;
            finished_steps += slot.traj.len();
            finished.push((slot.traj_index, std::mem::take(&mut slot.traj)));
            slot.active = false;
            policy_state.reset_row(s);
            if let Some(cs) = critic_state.as_mut() {
                cs.reset_row(s);
            }

            let assign = match opts.mode {
                CollectMode::Count(n) => next_index < n as u64,
                CollectMode::MinTimesteps(t) => finished_steps < t,
            };
            if assign {
                let idx = next_index;
                next_index += 1;
                slots[s].begin(idx, opts.seed_stream, normalizer, opts)?;
            }
        }
    }

    finished.sort_by_key(|(idx, _)| *idx);
    let trajectories: Vec<Trajectory> = finished.into_iter().map(|(_, t)| t).collect();
    let total_steps = trajectories.iter().map(Trajectory::len).sum();
    Ok(RolloutBuffer {
        trajectories,
        total_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynrand::RandomizationSpec;
    use crate::env::{DiagnosticEnv, DiagnosticEnvConfig};
    use crate::nn::PolicyFamily;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn diag_factory() -> EnvFactory {
        Arc::new(|| {
            Ok(Box::new(DiagnosticEnv::new(
                DiagnosticEnvConfig::default(),
                RandomizationSpec::diagnostic_default(),
            )?) as Box<dyn Environment>)
        })
    }

    fn small_policy(seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Policy::new(PolicyFamily::Lstm, 2, 1, 8, &mut rng)
    }

    fn small_critic(seed: u64) -> Critic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Critic::new(PolicyFamily::Lstm, 2, 8, &mut rng)
    }

    #[test]
    fn single_rollout_is_reproducible() {
        let policy = small_policy(1);
        let critic = small_critic(2);
        let factory = diag_factory();
        let opts = CollectOptions {
            mode: CollectMode::Count(1),
            seed_stream: 77,
            ..CollectOptions::default()
        };
        let a = collect_rollouts(&policy, Some(&critic), &factory, None, &opts).unwrap();
        let b = collect_rollouts(&policy, Some(&critic), &factory, None, &opts).unwrap();
        assert_eq!(a.trajectories.len(), 1);
        assert_eq!(a.trajectories[0].observations, b.trajectories[0].observations);
        assert_eq!(a.trajectories[0].actions, b.trajectories[0].actions);
        assert_eq!(a.trajectories[0].log_probs, b.trajectories[0].log_probs);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let policy = small_policy(3);
        let critic = small_critic(4);
        let factory = diag_factory();
        let base = CollectOptions {
            mode: CollectMode::Count(5),
            seed_stream: 13,
            ..CollectOptions::default()
        };
        let one = CollectOptions { workers: 1, ..base.clone() };
        let four = CollectOptions { workers: 4, ..base };
        let a = collect_rollouts(&policy, Some(&critic), &factory, None, &one).unwrap();
        let b = collect_rollouts(&policy, Some(&critic), &factory, None, &four).unwrap();
        assert_eq!(a.total_steps, b.total_steps);
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.actions, tb.actions);
            assert_eq!(ta.rewards, tb.rewards);
        }
    }

    #[test]
    fn trajectories_respect_the_step_cap() {
        let policy = small_policy(5);
        let factory = diag_factory();
        let opts = CollectOptions {
            mode: CollectMode::Count(3),
            max_steps: 300,
            seed_stream: 5,
            ..CollectOptions::default()
        };
        let buf = collect_rollouts(&policy, None, &factory, None, &opts).unwrap();
        for t in &buf.trajectories {
            assert!(t.len() <= 300);
            // the diagnostic env truncates rather than terminates
            assert!(!t.terminal);
        }
    }

    #[test]
    fn timestep_target_is_reached() {
        let policy = small_policy(6);
        let factory = diag_factory();
        let opts = CollectOptions {
            mode: CollectMode::MinTimesteps(2_000),
            seed_stream: 6,
            ..CollectOptions::default()
        };
        let buf = collect_rollouts(&policy, None, &factory, None, &opts).unwrap();
        assert!(buf.total_steps >= 2_000);
    }

    #[test]
    fn rollout_count_mode_matches_expected_budget() {
        // N chosen as target / expected length: diagnostic episodes always run
        // 300 steps, so N = 2000/300 rounded up covers the target
        let policy = small_policy(7);
        let factory = diag_factory();
        let n = (2000usize).div_ceil(300);
        let opts = CollectOptions {
            mode: CollectMode::Count(n),
            seed_stream: 7,
            ..CollectOptions::default()
        };
        let buf = collect_rollouts(&policy, None, &factory, None, &opts).unwrap();
        assert!(buf.total_steps >= 2_000);
        assert_eq!(buf.trajectories.len(), n);
    }

    #[test]
    fn fresh_parameters_per_trajectory() {
        let policy = small_policy(8);
        let factory = diag_factory();
        let opts = CollectOptions {
            mode: CollectMode::Count(6),
            seed_stream: 8,
            ..CollectOptions::default()
        };
        let buf = collect_rollouts(&policy, None, &factory, None, &opts).unwrap();
        let first = buf.trajectories[0].params.vector();
        assert!(
            buf.trajectories.iter().any(|t| t.params.vector() != first),
            "dynamics parameters should vary across episodes"
        );
    }

    #[test]
    fn deterministic_mode_uses_the_mean() {
        let policy = small_policy(9);
        let factory = diag_factory();
        let opts = CollectOptions {
            mode: CollectMode::Count(1),
            deterministic: true,
            seed_stream: 9,
            ..CollectOptions::default()
        };
        let buf = collect_rollouts(&policy, None, &factory, None, &opts).unwrap();
        let t = &buf.trajectories[0];
        for (a, m) in t.actions.iter().zip(&t.behavior_means) {
            assert_eq!(a, m);
        }
    }
}
