//! Deterministic simulation environments behind one stepping interface:
//! the planar five-link biped and the 1-D diagnostic velocity task.

pub mod biped;
pub mod diagnostic;
pub mod gait;

pub use biped::{
    check_termination, compute_reward, contact_summary, mechanical_energy, pd_torque,
    physics_substep, torso_com, torso_com_velocity, BipedEnv, BipedEnvConfig, BipedModel,
    BipedState, BIPED_ACTION_DIM, BIPED_OBS_DIM, NDOF, PHYSICS_DT, SUBSTEPS_PER_POLICY_STEP,
};
pub use diagnostic::{
    diagnostic_velocity_update, DiagnosticEnv, DiagnosticEnvConfig, DIAG_ACTION_DIM, DIAG_DT,
    DIAG_FORCE_LIMIT, DIAG_OBS_DIM,
};
pub use gait::{GaitConfig, GaitTarget, ReferenceGait, POLICY_DT};

use rand::RngCore;

use crate::dynrand::{DynamicsParameters, RandomizationSpec};
use crate::error::Result;

/// Result of one policy-rate step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True termination (fall, numerical failure); bootstrap value is zero.
    pub terminated: bool,
    /// Step-cap cutoff; the episode did not end on its own.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Single-owner simulation episode source. Instances are never shared;
/// concurrency comes from running many instances in separate workers, and all
/// randomness flows through the caller-provided generators.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_episode_steps(&self) -> usize;

    /// Starts a new episode under freshly sampled dynamics parameters.
    /// `provenance_seed` is recorded in the sampled set for reproducibility.
    fn reset(&mut self, rng: &mut dyn RngCore, provenance_seed: u64) -> Result<Vec<f64>>;

    /// Starts a new episode under a fixed, pre-validated parameter set.
    fn reset_with(&mut self, params: &DynamicsParameters, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// The dynamics parameters applied at the last reset.
    fn applied_parameters(&self) -> &DynamicsParameters;

    fn randomization_spec(&self) -> &RandomizationSpec;

    /// Gait phase counter modulo the cycle length (0 for phase-free tasks).
    fn phase(&self) -> usize;

    fn state_labels(&self) -> Vec<String>;
    fn state_vector(&self) -> Vec<f64>;
    fn time(&self) -> f64;
}

/// Creates fresh environment instances for workers.
pub type EnvFactory = std::sync::Arc<dyn Fn() -> crate::error::Result<Box<dyn Environment>> + Send + Sync>;
