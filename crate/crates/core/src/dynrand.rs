//! Per-episode dynamics randomization: sampling parameter sets from a
//! configurable multivariate uniform distribution and applying them to a
//! simulation model without ever mutating the defaults.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::BipedModel;
use crate::error::{Error, Result};

/// How a sampled value combines with the model default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Scales the default: `value * default`.
    Multiplier,
    /// Adds to the default: `value + default`.
    Offset,
}

/// Model fields a randomization entry may target.
pub const BIPED_TARGETS: &[&str] = &["joint_damping", "link_mass", "torso_com_x", "torso_com_z"];
pub const DIAGNOSTIC_TARGETS: &[&str] = &["mass", "damping"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationEntry {
    pub name: String,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
    pub target: String,
}

/// The sampling distribution: one independent uniform range per entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RandomizationSpec {
    pub entries: Vec<RandomizationEntry>,
}

/// One sampled parameter, self-describing so it can be applied and audited
/// without the original spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledParam {
    pub name: String,
    pub kind: ParamKind,
    pub target: String,
    pub value: f64,
}

/// One sampled dynamics parameter set, applied to a simulation episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParameters {
    pub values: Vec<SampledParam>,
    /// Seed of the draw that produced this set, for reproducibility audits.
    pub provenance_seed: u64,
}

impl DynamicsParameters {
    /// Sampled values in spec-entry order; the probe's regression target.
    pub fn vector(&self) -> Vec<f64> {
        self.values.iter().map(|p| p.value).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.values.iter().map(|p| p.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|p| p.name == name).map(|p| p.value)
    }
}

impl RandomizationSpec {
    /// No randomization: every apply returns the default model.
    pub fn disabled() -> Self {
        RandomizationSpec { entries: vec![] }
    }

    /// Planar-biped analog of the published randomization table: joint
    /// damping and link masses as multipliers, torso CoM as additive offsets
    /// with a strong backward skew on the x range.
    pub fn biped_default() -> Self {
        RandomizationSpec {
            entries: vec![
                RandomizationEntry {
                    name: "damping_scale".into(),
                    kind: ParamKind::Multiplier,
                    lo: 0.5,
                    hi: 1.5,
                    target: "joint_damping".into(),
                },
                RandomizationEntry {
                    name: "mass_scale".into(),
                    kind: ParamKind::Multiplier,
                    lo: 0.7,
                    hi: 1.3,
                    target: "link_mass".into(),
                },
                RandomizationEntry {
                    name: "com_x".into(),
                    kind: ParamKind::Offset,
                    lo: -0.15,
                    hi: 0.05,
                    target: "torso_com_x".into(),
                },
                RandomizationEntry {
                    name: "com_z".into(),
                    kind: ParamKind::Offset,
                    lo: -0.04,
                    hi: 0.04,
                    target: "torso_com_z".into(),
                },
            ],
        }
    }

    /// Hidden mass/damping multipliers of the diagnostic velocity task,
    /// reusing the biped multiplier ranges for comparability.
    pub fn diagnostic_default() -> Self {
        RandomizationSpec {
            entries: vec![
                RandomizationEntry {
                    name: "mass_scale".into(),
                    kind: ParamKind::Multiplier,
                    lo: 0.7,
                    hi: 1.3,
                    target: "mass".into(),
                },
                RandomizationEntry {
                    name: "damping_scale".into(),
                    kind: ParamKind::Multiplier,
                    lo: 0.5,
                    hi: 1.5,
                    target: "damping".into(),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.lo > e.hi {
                return Err(Error::Validation(format!(
                    "entry {}: lo {} > hi {}",
                    e.name, e.lo, e.hi
                )));
            }
            if e.kind == ParamKind::Multiplier && e.lo <= 0.0 {
                return Err(Error::Validation(format!(
                    "entry {}: multiplier range must be strictly positive",
                    e.name
                )));
            }
            let known = BIPED_TARGETS.contains(&e.target.as_str())
                || DIAGNOSTIC_TARGETS.contains(&e.target.as_str());
            if !known {
                return Err(Error::Validation(format!(
                    "entry {}: unknown target field {}",
                    e.name, e.target
                )));
            }
        }
        Ok(())
    }

    /// Draws each entry independently and uniformly from its range.
    pub fn sample(&self, rng: &mut dyn RngCore, provenance_seed: u64) -> DynamicsParameters {
        let values = self
            .entries
            .iter()
            .map(|e| SampledParam {
                name: e.name.clone(),
                kind: e.kind,
                target: e.target.clone(),
                value: if e.lo == e.hi {
                    e.lo
                } else {
                    rng.gen_range(e.lo..=e.hi)
                },
            })
            .collect();
        DynamicsParameters {
            values,
            provenance_seed,
        }
    }

    /// Checks that every sampled value lies inside its spec range.
    pub fn contains(&self, params: &DynamicsParameters) -> Result<()> {
        for p in &params.values {
            let entry = self
                .entries
                .iter()
                .find(|e| e.name == p.name)
                .ok_or_else(|| {
                    Error::Validation(format!("parameter {} not in randomization spec", p.name))
                })?;
            if p.value < entry.lo || p.value > entry.hi {
                return Err(Error::Validation(format!(
                    "parameter {} = {} outside [{}, {}]",
                    p.name, p.value, entry.lo, entry.hi
                )));
            }
        }
        Ok(())
    }

    /// Half-width of each entry's range, in entry order. Used by the probe's
    /// percent-error normalization.
    pub fn half_widths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| (e.hi - e.lo) / 2.0).collect()
    }

    /// Range midpoints, in entry order.
    pub fn midpoints(&self) -> Vec<f64> {
        self.entries.iter().map(|e| (e.hi + e.lo) / 2.0).collect()
    }
}

/// Applies `params` to a fresh copy of the default model. Multipliers scale
/// defaults, offsets add to defaults; re-application is never cumulative
/// because the source model is untouched.
pub fn apply_to_biped(params: &DynamicsParameters, base: &BipedModel) -> Result<BipedModel> {
    let mut model = base.clone();
    for p in &params.values {
        match (p.target.as_str(), p.kind) {
            ("joint_damping", ParamKind::Multiplier) => {
                model.hip_damping = base.hip_damping * p.value;
                model.knee_damping = base.knee_damping * p.value;
            }
            ("link_mass", ParamKind::Multiplier) => {
                model.torso_mass = base.torso_mass * p.value;
                model.thigh_mass = base.thigh_mass * p.value;
                model.shank_mass = base.shank_mass * p.value;
                model.torso_inertia = base.torso_inertia * p.value;
                model.thigh_inertia = base.thigh_inertia * p.value;
                model.shank_inertia = base.shank_inertia * p.value;
            }
            ("torso_com_x", ParamKind::Offset) => {
                model.torso_com_x = base.torso_com_x + p.value;
            }
            ("torso_com_z", ParamKind::Offset) => {
                model.torso_com_z = base.torso_com_z + p.value;
            }
            (target, kind) => {
                return Err(Error::Validation(format!(
                    "cannot apply {kind:?} entry to biped field {target}"
                )))
            }
        }
    }
    model.validate()?;
    Ok(model)
}

/// Diagnostic-task analog of [`apply_to_biped`]: returns `(mass, damping)`.
pub fn apply_to_diagnostic(
    params: &DynamicsParameters,
    base_mass: f64,
    base_damping: f64,
) -> Result<(f64, f64)> {
    let mut mass = base_mass;
    let mut damping = base_damping;
    for p in &params.values {
        match (p.target.as_str(), p.kind) {
            ("mass", ParamKind::Multiplier) => mass = base_mass * p.value,
            ("damping", ParamKind::Multiplier) => damping = base_damping * p.value,
            (target, kind) => {
                return Err(Error::Validation(format!(
                    "cannot apply {kind:?} entry to diagnostic field {target}"
                )))
            }
        }
    }
    if mass <= 0.0 || damping <= 0.0 {
        return Err(Error::Validation(
            "diagnostic mass and damping must stay positive".into(),
        ));
    }
    Ok((mass, damping))
}
