//! Procedural periodic reference gait.
//!
//! A tabulated cycle of reference joint positions replaces a recorded expert
//! trajectory: sinusoidal hip swings with a knee-flexion bump during swing,
//! the right leg a half cycle ahead of the left. The reference walks forward
//! at a constant speed, so the reference forward position is `speed * time`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const POLICY_DT: f64 = 0.03;

/// Reference state at one phase tick.
#[derive(Debug, Clone, Copy)]
pub struct GaitTarget {
    /// [left hip, left knee, right hip, right knee] in rad.
    pub joints: [f64; 4],
    pub forward_pos: f64,
    pub forward_speed: f64,
    pub torso_pitch: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitConfig {
    pub phase_len: usize,
    pub speed: f64,
    pub torso_pitch: f64,
    pub hip_center: f64,
    pub hip_amplitude: f64,
    pub knee_center: f64,
    pub knee_amplitude: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            phase_len: 28,
            speed: 1.0,
            torso_pitch: 0.0,
            hip_center: 0.05,
            hip_amplitude: 0.30,
            knee_center: -0.10,
            knee_amplitude: 0.35,
        }
    }
}

/// Phase-indexed table of reference joint positions plus the forward-motion
/// reference. Periodic: phase `L` wraps to phase 0.
#[derive(Debug, Clone)]
pub struct ReferenceGait {
    pub phase_len: usize,
    pub speed: f64,
    pub torso_pitch: f64,
    /// Per-phase `[lhip, lknee, rhip, rknee]`.
    table: Vec<[f64; 4]>,
}

impl ReferenceGait {
    pub fn new(cfg: &GaitConfig) -> Result<Self> {
        if cfg.phase_len < 2 || cfg.phase_len % 2 != 0 {
            return Err(Error::Config(
                "gait phase length must be an even number of policy steps >= 2".into(),
            ));
        }
        let hip = |phi: f64| cfg.hip_center + cfg.hip_amplitude * (2.0 * PI * phi).sin();
        // one flexion bump per cycle: sin^2(pi*phi) peaks mid-cycle
        let knee = |phi: f64| {
            let s = (PI * phi).sin();
            cfg.knee_center - cfg.knee_amplitude * s * s
        };
        let l = cfg.phase_len;
        let table = (0..l)
            .map(|w| {
                let phi = w as f64 / l as f64;
                let phi_r = (w + l / 2) as f64 / l as f64;
                [hip(phi), knee(phi), hip(phi_r), knee(phi_r)]
            })
            .collect();
        Ok(ReferenceGait {
            phase_len: l,
            speed: cfg.speed,
            torso_pitch: cfg.torso_pitch,
            table,
        })
    }

    /// Reference state at absolute phase counter `omega` (wraps modulo the
    /// cycle); the forward position keeps growing with elapsed time.
    pub fn state_at(&self, omega: u64) -> GaitTarget {
        let idx = (omega % self.phase_len as u64) as usize;
        GaitTarget {
            joints: self.table[idx],
            forward_pos: self.speed * omega as f64 * POLICY_DT,
            forward_speed: self.speed,
            torso_pitch: self.torso_pitch,
        }
    }
}
