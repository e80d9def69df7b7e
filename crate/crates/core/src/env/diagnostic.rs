//! Diagnostic velocity-tracking task: a 1-D cart with hidden mass and
//! damping, exactly integrable, used for fast system-identification
//! experiments. The hidden parameters never appear in the observation, so
//! tracking them requires memory.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepOutcome};
use crate::dynrand::{apply_to_diagnostic, DynamicsParameters, RandomizationSpec};
use crate::error::{Error, Result};

pub const DIAG_DT: f64 = 0.03;
pub const DIAG_OBS_DIM: usize = 2;
pub const DIAG_ACTION_DIM: usize = 1;
pub const DIAG_FORCE_LIMIT: f64 = 10.0;
pub const DIAG_CMD_RESAMPLE_STEPS: u64 = 100;
pub const DIAG_CMD_MAX: f64 = 1.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticEnvConfig {
    pub base_mass: f64,
    pub base_damping: f64,
    pub max_episode_steps: usize,
}

impl Default for DiagnosticEnvConfig {
    fn default() -> Self {
        DiagnosticEnvConfig {
            base_mass: 1.0,
            base_damping: 1.0,
            max_episode_steps: 300,
        }
    }
}

/// Exact discretization of `m dv/dt = u - c v` over one step.
pub fn diagnostic_velocity_update(v: f64, u: f64, mass: f64, damping: f64, dt: f64) -> f64 {
    let decay = (-damping * dt / mass).exp();
    v * decay + (u / damping) * (1.0 - decay)
}

pub struct DiagnosticEnv {
    cfg: DiagnosticEnvConfig,
    spec: RandomizationSpec,
    mass: f64,
    damping: f64,
    v: f64,
    v_cmd: f64,
    steps: u64,
    params: DynamicsParameters,
    cmd_rng: ChaCha8Rng,
    done: bool,
}

impl DiagnosticEnv {
    pub fn new(cfg: DiagnosticEnvConfig, spec: RandomizationSpec) -> Result<Self> {
        spec.validate()?;
        if cfg.base_mass <= 0.0 || cfg.base_damping <= 0.0 {
            return Err(Error::Validation(
                "diagnostic base mass and damping must be positive".into(),
            ));
        }
        Ok(DiagnosticEnv {
            cfg,
            spec,
            mass: 1.0,
            damping: 1.0,
            v: 0.0,
            v_cmd: 0.0,
            steps: 0,
            params: DynamicsParameters::default(),
            cmd_rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
        })
    }

    pub fn hidden_dynamics(&self) -> (f64, f64) {
        (self.mass, self.damping)
    }

    pub fn velocity(&self) -> f64 {
        self.v
    }

    pub fn commanded(&self) -> f64 {
        self.v_cmd
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.v_cmd, self.v]
    }
}

impl Environment for DiagnosticEnv {
    fn obs_dim(&self) -> usize {
        DIAG_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        DIAG_ACTION_DIM
    }

    fn max_episode_steps(&self) -> usize {
        self.cfg.max_episode_steps
    }

    fn reset(&mut self, rng: &mut dyn RngCore, provenance_seed: u64) -> Result<Vec<f64>> {
        let params = self.spec.sample(rng, provenance_seed);
        self.reset_with(&params, rng)
    }

    fn reset_with(&mut self, params: &DynamicsParameters, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.spec.contains(params)?;
        let (m, c) = apply_to_diagnostic(params, self.cfg.base_mass, self.cfg.base_damping)?;
        self.mass = m;
        self.damping = c;
        self.params = params.clone();
        self.v = 0.0;
        self.steps = 0;
        self.done = false;
        self.cmd_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        self.v_cmd = self.cmd_rng.gen_range(0.0..=DIAG_CMD_MAX);
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != DIAG_ACTION_DIM {
            return Err(Error::dim("diagnostic action", DIAG_ACTION_DIM, action.len()));
        }
        if self.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        let u = action[0].clamp(-DIAG_FORCE_LIMIT, DIAG_FORCE_LIMIT);
        self.v = diagnostic_velocity_update(self.v, u, self.mass, self.damping, DIAG_DT);
        self.steps += 1;
        let err = self.v - self.v_cmd;
        let reward = (-err * err).exp();
        // command holds for blocks of 100 steps; the reward above used the
        // command that was active during this step
        if self.steps % DIAG_CMD_RESAMPLE_STEPS == 0 {
            self.v_cmd = self.cmd_rng.gen_range(0.0..=DIAG_CMD_MAX);
        }
        let truncated = self.steps as usize >= self.cfg.max_episode_steps;
        self.done = truncated;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated,
        })
    }

    fn applied_parameters(&self) -> &DynamicsParameters {
        &self.params
    }

    fn randomization_spec(&self) -> &RandomizationSpec {
        &self.spec
    }

    fn phase(&self) -> usize {
        0
    }

    fn state_labels(&self) -> Vec<String> {
        vec!["v".into(), "v_cmd".into()]
    }

    fn state_vector(&self) -> Vec<f64> {
        vec![self.v, self.v_cmd]
    }

    fn time(&self) -> f64 {
        self.steps as f64 * DIAG_DT
    }
}
