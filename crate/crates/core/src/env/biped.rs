//! Planar five-link biped: torso plus two thigh/shank legs with point feet.
//!
//! Generalized coordinates `q = [x, z, pitch, lhip, lknee, rhip, rknee]`
//! (hip position, absolute torso pitch, relative joint angles; positive joint
//! angles swing the limb forward, negative knee angles flex). The equations of
//! motion are assembled from per-link CoM Jacobians:
//!
//! `M(q) qdd = tau_gen + J_c^T f_c - bias(q, qd)`
//!
//! with gravity and centripetal terms folded into the bias, semi-implicit
//! Euler at 2 kHz, penalty ground contact at the feet (spring-damper normal
//! force, viscous tangential force clamped to the Coulomb cone), and PD
//! torque control on the four joints at the same 2 kHz rate. The policy
//! interface runs at one step per 60 physics substeps (30 ms).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::gait::{GaitConfig, ReferenceGait, POLICY_DT};
use super::{Environment, StepOutcome};
use crate::dynrand::{apply_to_biped, DynamicsParameters, RandomizationSpec};
use crate::error::{Error, Result};

pub const PHYSICS_DT: f64 = 0.0005;
pub const SUBSTEPS_PER_POLICY_STEP: usize = 60;
pub const NDOF: usize = 7;
/// Observation layout: f_vel, clock sin, clock cos, pitch, pitch rate,
/// torso height, forward velocity, 4 joint positions, 4 joint velocities.
pub const BIPED_OBS_DIM: usize = 15;
pub const BIPED_ACTION_DIM: usize = 4;

/// Physical description of the biped; every randomizable quantity lives here.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BipedModel {
    pub torso_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub torso_length: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub torso_inertia: f64,
    pub thigh_inertia: f64,
    pub shank_inertia: f64,
    /// Torso CoM in the torso frame, measured from the hip.
    pub torso_com_x: f64,
    pub torso_com_z: f64,
    /// CoM distance of thigh/shank from their proximal joint.
    pub thigh_com_dist: f64,
    pub shank_com_dist: f64,
    pub hip_damping: f64,
    pub knee_damping: f64,
    pub hip_kp: f64,
    pub hip_kd: f64,
    pub knee_kp: f64,
    pub knee_kd: f64,
    pub hip_torque_limit: f64,
    pub knee_torque_limit: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction: f64,
    pub gravity: f64,
    /// Standing hip split angle; the feet land fore and aft of the hip.
    pub stance_split: f64,
    /// Standing knee flexion; keeps the knees off their singular straight
    /// configuration so stance loads them in a consistent direction.
    pub stance_knee_flex: f64,
}

impl Default for BipedModel {
    fn default() -> Self {
        BipedModel {
            torso_mass: 14.0,
            thigh_mass: 4.5,
            shank_mass: 3.0,
            torso_length: 0.5,
            thigh_length: 0.4,
            shank_length: 0.4,
            torso_inertia: 14.0 * 0.5 * 0.5 / 12.0,
            thigh_inertia: 4.5 * 0.4 * 0.4 / 12.0,
            shank_inertia: 3.0 * 0.4 * 0.4 / 12.0,
            torso_com_x: 0.0,
            torso_com_z: 0.25,
            thigh_com_dist: 0.2,
            shank_com_dist: 0.2,
            hip_damping: 1.5,
            knee_damping: 1.0,
            hip_kp: 120.0,
            hip_kd: 4.0,
            knee_kp: 120.0,
            knee_kd: 4.0,
            hip_torque_limit: 150.0,
            knee_torque_limit: 120.0,
            contact_stiffness: 1.0e5,
            contact_damping: 1.0e3,
            friction: 1.0,
            gravity: 9.81,
            stance_split: 0.15,
            stance_knee_flex: 0.10,
        }
    }
}

impl BipedModel {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("torso_mass", self.torso_mass),
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("torso_length", self.torso_length),
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("torso_inertia", self.torso_inertia),
            ("thigh_inertia", self.thigh_inertia),
            ("shank_inertia", self.shank_inertia),
            ("hip_kp", self.hip_kp),
            ("hip_kd", self.hip_kd),
            ("knee_kp", self.knee_kp),
            ("knee_kd", self.knee_kd),
            ("hip_torque_limit", self.hip_torque_limit),
            ("knee_torque_limit", self.knee_torque_limit),
            ("contact_stiffness", self.contact_stiffness),
            ("contact_damping", self.contact_damping),
            ("gravity", self.gravity),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.friction < 0.0 {
            return Err(Error::Validation("friction must be >= 0".into()));
        }
        if self.hip_damping < 0.0 || self.knee_damping < 0.0 {
            return Err(Error::Validation("joint damping must be >= 0".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * self.thigh_mass + 2.0 * self.shank_mass
    }

    pub fn leg_length(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    /// Nominal hip height in the standing posture.
    pub fn standing_height(&self) -> f64 {
        let half = 0.5 * self.stance_knee_flex;
        self.thigh_length * (self.stance_split + half).cos()
            + self.shank_length * (self.stance_split - half).cos()
    }

    /// Static joint posture of the robot standing at rest; the constant
    /// offset added to every policy action before the PD stage. Hips are
    /// shifted by half the knee flexion so both feet land at equal height
    /// (exact for equal thigh/shank lengths).
    pub fn neutral_joint_pos(&self) -> [f64; 4] {
        let half = 0.5 * self.stance_knee_flex;
        [
            self.stance_split + half,
            -self.stance_knee_flex,
            -self.stance_split + half,
            -self.stance_knee_flex,
        ]
    }

    /// Static contact penetration with the weight split across both feet.
    pub fn static_penetration(&self) -> f64 {
        self.total_mass() * self.gravity / (2.0 * self.contact_stiffness)
    }
}

/// Full simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct BipedState {
    pub q: [f64; NDOF],
    pub qd: [f64; NDOF],
    /// Policy steps taken since reset; simulation time is `steps * 0.03 s`.
    pub steps: u64,
    pub numerical_failure: bool,
}

impl BipedState {
    pub fn time(&self) -> f64 {
        self.steps as f64 * POLICY_DT
    }
}

/// PD position control toward `target`, clamped to the torque limit.
pub fn pd_torque(target: f64, q: f64, qd: f64, kp: f64, kd: f64, limit: f64) -> f64 {
    (kp * (target - q) - kd * qd).clamp(-limit, limit)
}

/// Cholesky solve of the 7x7 SPD system `m x = b`. Fails on a non-positive
/// pivot, which indicates a conditioning breakdown.
fn chol_solve(m: &[[f64; NDOF]; NDOF], b: &[f64; NDOF]) -> Option<[f64; NDOF]> {
    let mut l = [[0.0; NDOF]; NDOF];
    for i in 0..NDOF {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-12 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; NDOF];
    for i in 0..NDOF {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; NDOF];
    for i in (0..NDOF).rev() {
        let mut s = y[i];
        for k in i + 1..NDOF {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

struct BodyKin {
    mass: f64,
    inertia: f64,
    /// CoM Jacobian rows (x and z) over the 7 coordinates.
    jv: [[f64; NDOF]; 2],
    /// CoM acceleration at zero generalized acceleration (centripetal).
    a0: [f64; 2],
    /// Angular Jacobian (constant 0/1 pattern).
    jw: [f64; NDOF],
    com_z: f64,
}

struct FootKin {
    pos: [f64; 2],
    vel: [f64; 2],
    j: [[f64; NDOF]; 2],
}

struct Kinematics {
    bodies: [BodyKin; 5],
    feet: [FootKin; 2],
}

fn dir(s: f64) -> [f64; 2] {
    [s.sin(), -s.cos()]
}

fn ddir(s: f64) -> [f64; 2] {
    [s.cos(), s.sin()]
}

fn kinematics(model: &BipedModel, q: &[f64; NDOF], qd: &[f64; NDOF]) -> Kinematics {
    let (z, th) = (q[1], q[2]);
    let w_t = qd[2];

    // torso
    let (cx, cz) = (model.torso_com_x, model.torso_com_z);
    let (sin_t, cos_t) = th.sin_cos();
    let rot_c = [cx * cos_t + cz * sin_t, -cx * sin_t + cz * cos_t];
    let mut torso = BodyKin {
        mass: model.torso_mass,
        inertia: model.torso_inertia,
        jv: [[0.0; NDOF]; 2],
        a0: [-w_t * w_t * rot_c[0], -w_t * w_t * rot_c[1]],
        jw: [0.0; NDOF],
        com_z: z + rot_c[1],
    };
    torso.jv[0][0] = 1.0;
    torso.jv[1][1] = 1.0;
    torso.jv[0][2] = -cx * sin_t + cz * cos_t;
    torso.jv[1][2] = -cx * cos_t - cz * sin_t;
    torso.jw[2] = 1.0;

    // legs: hip coordinate index, knee coordinate index
    let mut bodies = [torso, leg_thigh(model, q, qd, 3), leg_shank(model, q, qd, 3, 4),
        leg_thigh(model, q, qd, 5), leg_shank(model, q, qd, 5, 6)];
    // fill shared translational columns
    for b in bodies.iter_mut() {
        b.jv[0][0] = 1.0;
        b.jv[1][1] = 1.0;
    }
    for b in bodies.iter_mut().skip(1) {
        b.com_z += z;
    }

    let feet = [foot_kin(model, q, qd, 3, 4), foot_kin(model, q, qd, 5, 6)];
    Kinematics { bodies, feet }
}

fn leg_thigh(model: &BipedModel, q: &[f64; NDOF], qd: &[f64; NDOF], hip: usize) -> BodyKin {
    let s = q[2] + q[hip];
    let w = qd[2] + qd[hip];
    let d = model.thigh_com_dist;
    let dd = ddir(s);
    let dv = dir(s);
    let mut b = BodyKin {
        mass: model.thigh_mass,
        inertia: model.thigh_inertia,
        jv: [[0.0; NDOF]; 2],
        a0: [-d * w * w * dv[0], -d * w * w * dv[1]],
        jw: [0.0; NDOF],
        com_z: d * dv[1],
    };
    b.jv[0][2] = d * dd[0];
    b.jv[1][2] = d * dd[1];
    b.jv[0][hip] = d * dd[0];
    b.jv[1][hip] = d * dd[1];
    b.jw[2] = 1.0;
    b.jw[hip] = 1.0;
    b
}

fn leg_shank(
    model: &BipedModel,
    q: &[f64; NDOF],
    qd: &[f64; NDOF],
    hip: usize,
    knee: usize,
) -> BodyKin {
    let s_t = q[2] + q[hip];
    let s_s = s_t + q[knee];
    let w_t = qd[2] + qd[hip];
    let w_s = w_t + qd[knee];
    let lt = model.thigh_length;
    let ds = model.shank_com_dist;
    let (dv_t, dd_t) = (dir(s_t), ddir(s_t));
    let (dv_s, dd_s) = (dir(s_s), ddir(s_s));
    let mut b = BodyKin {
        mass: model.shank_mass,
        inertia: model.shank_inertia,
        jv: [[0.0; NDOF]; 2],
        a0: [
            -lt * w_t * w_t * dv_t[0] - ds * w_s * w_s * dv_s[0],
            -lt * w_t * w_t * dv_t[1] - ds * w_s * w_s * dv_s[1],
        ],
        jw: [0.0; NDOF],
        com_z: lt * dv_t[1] + ds * dv_s[1],
    };
    for axis in 0..2 {
        let chain = lt * dd_t[axis] + ds * dd_s[axis];
        b.jv[axis][2] = chain;
        b.jv[axis][hip] = chain;
        b.jv[axis][knee] = ds * dd_s[axis];
    }
    b.jw[2] = 1.0;
    b.jw[hip] = 1.0;
    b.jw[knee] = 1.0;
    b
}

fn foot_kin(
    model: &BipedModel,
    q: &[f64; NDOF],
    qd: &[f64; NDOF],
    hip: usize,
    knee: usize,
) -> FootKin {
    let s_t = q[2] + q[hip];
    let s_s = s_t + q[knee];
    let lt = model.thigh_length;
    let ls = model.shank_length;
    let (dv_t, dd_t) = (dir(s_t), ddir(s_t));
    let (dv_s, dd_s) = (dir(s_s), ddir(s_s));
    let mut j = [[0.0; NDOF]; 2];
    for axis in 0..2 {
        let chain = lt * dd_t[axis] + ls * dd_s[axis];
        j[axis][if axis == 0 { 0 } else { 1 }] = 1.0;
        j[axis][2] = chain;
        j[axis][hip] = chain;
        j[axis][knee] = ls * dd_s[axis];
    }
    let pos = [
        q[0] + lt * dv_t[0] + ls * dv_s[0],
        q[1] + lt * dv_t[1] + ls * dv_s[1],
    ];
    let mut vel = [0.0; 2];
    for axis in 0..2 {
        for k in 0..NDOF {
            vel[axis] += j[axis][k] * qd[k];
        }
    }
    FootKin { pos, vel, j }
}

/// One semi-implicit Euler substep at `PHYSICS_DT` under the given joint
/// torques `[lhip, lknee, rhip, rknee]`. Sets the failure flag instead of
/// returning an error when the state leaves the finite range.
pub fn physics_substep(state: &mut BipedState, torques: &[f64; 4], model: &BipedModel) {
    let kin = kinematics(model, &state.q, &state.qd);

    // mass matrix
    let mut m = [[0.0; NDOF]; NDOF];
    for b in &kin.bodies {
        for j in 0..NDOF {
            for k in 0..=j {
                let mut acc = b.mass * (b.jv[0][j] * b.jv[0][k] + b.jv[1][j] * b.jv[1][k]);
                acc += b.inertia * b.jw[j] * b.jw[k];
                m[j][k] += acc;
            }
        }
    }
    for j in 0..NDOF {
        for k in j + 1..NDOF {
            m[j][k] = m[k][j];
        }
    }

    // generalized forces: gravity + centripetal correction per body
    let mut rhs = [0.0; NDOF];
    for b in &kin.bodies {
        let fx = -b.mass * b.a0[0];
        let fz = -b.mass * (model.gravity + b.a0[1]);
        for k in 0..NDOF {
            rhs[k] += b.jv[0][k] * fx + b.jv[1][k] * fz;
        }
    }
    // joint torques and joint damping on the four actuated coordinates
    let damping = [
        model.hip_damping,
        model.knee_damping,
        model.hip_damping,
        model.knee_damping,
    ];
    for (jidx, coord) in (3..NDOF).enumerate() {
        rhs[coord] += torques[jidx] - damping[jidx] * state.qd[coord];
    }
    // penalty contacts at the feet
    for foot in &kin.feet {
        if foot.pos[1] < 0.0 {
            let pen = -foot.pos[1];
            let normal =
                (model.contact_stiffness * pen - model.contact_damping * foot.vel[1]).max(0.0);
            let bound = model.friction * normal;
            let tangent = (-model.contact_damping * foot.vel[0]).clamp(-bound, bound);
            for k in 0..NDOF {
                rhs[k] += foot.j[0][k] * tangent + foot.j[1][k] * normal;
            }
        }
    }

    match chol_solve(&m, &rhs) {
        Some(qdd) => {
            for k in 0..NDOF {
                state.qd[k] += PHYSICS_DT * qdd[k];
                state.q[k] += PHYSICS_DT * state.qd[k];
            }
            if !state
                .q
                .iter()
                .chain(state.qd.iter())
                .all(|v| v.is_finite())
            {
                state.numerical_failure = true;
            }
        }
        None => state.numerical_failure = true,
    }
}

/// Total mechanical energy: kinetic + gravitational + contact-spring storage.
pub fn mechanical_energy(state: &BipedState, model: &BipedModel) -> f64 {
    let kin = kinematics(model, &state.q, &state.qd);
    let mut kinetic = 0.0;
    for b in &kin.bodies {
        let mut v = [0.0; 2];
        let mut w = 0.0;
        for k in 0..NDOF {
            v[0] += b.jv[0][k] * state.qd[k];
            v[1] += b.jv[1][k] * state.qd[k];
            w += b.jw[k] * state.qd[k];
        }
        kinetic += 0.5 * b.mass * (v[0] * v[0] + v[1] * v[1]) + 0.5 * b.inertia * w * w;
    }
    let mut potential = 0.0;
    for b in &kin.bodies {
        potential += b.mass * model.gravity * b.com_z;
    }
    let mut spring = 0.0;
    for foot in &kin.feet {
        if foot.pos[1] < 0.0 {
            spring += 0.5 * model.contact_stiffness * foot.pos[1] * foot.pos[1];
        }
    }
    kinetic + potential + spring
}

/// Contact diagnostics used by the static-equilibrium oracle.
pub fn contact_summary(state: &BipedState, model: &BipedModel) -> (f64, f64) {
    let kin = kinematics(model, &state.q, &state.qd);
    let mut total_normal = 0.0;
    let mut max_pen: f64 = 0.0;
    for foot in &kin.feet {
        if foot.pos[1] < 0.0 {
            let pen = -foot.pos[1];
            max_pen = max_pen.max(pen);
            total_normal +=
                (model.contact_stiffness * pen - model.contact_damping * foot.vel[1]).max(0.0);
        }
    }
    (total_normal, max_pen)
}

/// Torso CoM position in world coordinates.
pub fn torso_com(state: &BipedState, model: &BipedModel) -> [f64; 2] {
    let (sin_t, cos_t) = state.q[2].sin_cos();
    [
        state.q[0] + model.torso_com_x * cos_t + model.torso_com_z * sin_t,
        state.q[1] - model.torso_com_x * sin_t + model.torso_com_z * cos_t,
    ]
}

/// Torso CoM velocity in world coordinates.
pub fn torso_com_velocity(state: &BipedState, model: &BipedModel) -> [f64; 2] {
    let (sin_t, cos_t) = state.q[2].sin_cos();
    let jx = -model.torso_com_x * sin_t + model.torso_com_z * cos_t;
    let jz = -model.torso_com_x * cos_t - model.torso_com_z * sin_t;
    [
        state.qd[0] + jx * state.qd[2],
        state.qd[1] + jz * state.qd[2],
    ]
}

/// Reward against the reference gait at phase `omega`: a convex combination of
/// exponentiated squared tracking errors (joints, forward speed, forward
/// position, torso orientation). Always in `(0, 1]`, exactly 1 at zero error.
pub fn compute_reward(state: &BipedState, gait: &ReferenceGait, omega: u64) -> f64 {
    let target = gait.state_at(omega);
    let mut q_err = 0.0;
    for (j, &coord) in [3usize, 4, 5, 6].iter().enumerate() {
        let d = state.q[coord] - target.joints[j];
        q_err += d * d;
    }
    let xdot_err = {
        let d = state.qd[0] - target.forward_speed;
        d * d
    };
    let x_err = {
        let d = state.q[0] - target.forward_pos;
        d * d
    };
    let orient_err = {
        let d = state.q[2] - target.torso_pitch;
        d * d
    };
    REWARD_W_JOINT * (-q_err).exp()
        + REWARD_W_SPEED * (-xdot_err).exp()
        + REWARD_W_POS * (-x_err).exp()
        + REWARD_W_ORIENT * (-orient_err).exp()
}

/// Published weights of the four retained reward terms (0.20, 0.20, 0.05,
/// 0.30), renormalized by 1/0.75 so they sum to one.
pub const REWARD_W_JOINT: f64 = 4.0 / 15.0;
pub const REWARD_W_SPEED: f64 = 4.0 / 15.0;
pub const REWARD_W_POS: f64 = 1.0 / 15.0;
pub const REWARD_W_ORIENT: f64 = 0.4;

/// Episode termination: torso below 60% of standing height, pitch beyond
/// 1 rad (strict), or a recorded numerical failure.
pub fn check_termination(state: &BipedState, model: &BipedModel) -> bool {
    state.numerical_failure
        || state.q[1] < 0.6 * model.standing_height()
        || state.q[2].abs() > 1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BipedEnvConfig {
    pub model: BipedModel,
    pub gait: GaitConfig,
    /// Uniform init-noise amplitude on joint angles and joint velocities.
    pub init_noise: f64,
    /// Gaussian observation noise std; 0 disables the draw entirely.
    pub obs_noise: f64,
    pub commanded_speed: f64,
    pub max_episode_steps: usize,
}

impl Default for BipedEnvConfig {
    fn default() -> Self {
        BipedEnvConfig {
            model: BipedModel::default(),
            gait: GaitConfig::default(),
            init_noise: 0.02,
            obs_noise: 0.0,
            commanded_speed: 1.0,
            max_episode_steps: 300,
        }
    }
}

/// The biped environment: 33 Hz policy interface over the 2 kHz PD/physics
/// inner loop, per-episode dynamics randomization, gait-tracking reward.
pub struct BipedEnv {
    pub base_model: BipedModel,
    pub model: BipedModel,
    spec: RandomizationSpec,
    gait: ReferenceGait,
    cfg: BipedEnvConfig,
    state: BipedState,
    params: DynamicsParameters,
    noise_rng: ChaCha8Rng,
    done: bool,
}

impl BipedEnv {
    pub fn new(cfg: BipedEnvConfig, spec: RandomizationSpec) -> Result<Self> {
        cfg.model.validate()?;
        spec.validate()?;
        let gait = ReferenceGait::new(&cfg.gait)?;
        let state = BipedState {
            q: [0.0; NDOF],
            qd: [0.0; NDOF],
            steps: 0,
            numerical_failure: false,
        };
        Ok(BipedEnv {
            base_model: cfg.model.clone(),
            model: cfg.model.clone(),
            spec,
            gait,
            cfg,
            state,
            params: DynamicsParameters::default(),
            noise_rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
        })
    }

    pub fn state(&self) -> &BipedState {
        &self.state
    }

    pub fn gait(&self) -> &ReferenceGait {
        &self.gait
    }

    fn init_state(&mut self, rng: &mut dyn RngCore) {
        let neutral = self.base_model.neutral_joint_pos();
        let stand_z = self.base_model.standing_height() - self.model.static_penetration();
        let mut q = [0.0; NDOF];
        q[1] = stand_z;
        q[3] = neutral[0];
        q[4] = neutral[1];
        q[5] = neutral[2];
        q[6] = neutral[3];
        let mut qd = [0.0; NDOF];
        let amp = self.cfg.init_noise;
        if amp > 0.0 {
            for coord in 3..NDOF {
                q[coord] += rng.gen_range(-amp..=amp);
                qd[coord] = rng.gen_range(-amp..=amp);
            }
        }
        self.state = BipedState {
            q,
            qd,
            steps: 0,
            numerical_failure: false,
        };
        self.noise_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        self.done = false;
    }

    fn observation(&mut self) -> Vec<f64> {
        let s = &self.state;
        let omega = s.steps % self.gait.phase_len as u64;
        let phi = 2.0 * PI * omega as f64 / self.gait.phase_len as f64;
        let mut obs = vec![
            self.cfg.commanded_speed,
            phi.sin(),
            phi.cos(),
            s.q[2],
            s.qd[2],
            s.q[1],
            s.qd[0],
            s.q[3],
            s.q[4],
            s.q[5],
            s.q[6],
            s.qd[3],
            s.qd[4],
            s.qd[5],
            s.qd[6],
        ];
        if self.cfg.obs_noise > 0.0 {
            use rand_distr::StandardNormal;
            // the clock and command are synthetic inputs, never noisy
            for v in obs.iter_mut().skip(3) {
                let z: f64 = self.noise_rng.sample(StandardNormal);
                *v += self.cfg.obs_noise * z;
            }
        }
        obs
    }
}

impl Environment for BipedEnv {
    fn obs_dim(&self) -> usize {
        BIPED_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        BIPED_ACTION_DIM
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
        self.model = apply_to_biped(params, &self.base_model)?;
        self.params = params.clone();
        self.init_state(rng);
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != BIPED_ACTION_DIM {
            return Err(Error::dim("biped action", BIPED_ACTION_DIM, action.len()));
        }
        if self.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::Numerical("non-finite action".into()));
        }
        let neutral = self.base_model.neutral_joint_pos();
        let mut targets = [0.0; 4];
        for j in 0..4 {
            targets[j] = neutral[j] + action[j];
        }
        for _ in 0..SUBSTEPS_PER_POLICY_STEP {
            let s = &self.state;
            let torques = [
                pd_torque(targets[0], s.q[3], s.qd[3], self.model.hip_kp, self.model.hip_kd, self.model.hip_torque_limit),
                pd_torque(targets[1], s.q[4], s.qd[4], self.model.knee_kp, self.model.knee_kd, self.model.knee_torque_limit),
                pd_torque(targets[2], s.q[5], s.qd[5], self.model.hip_kp, self.model.hip_kd, self.model.hip_torque_limit),
                pd_torque(targets[3], s.q[6], s.qd[6], self.model.knee_kp, self.model.knee_kd, self.model.knee_torque_limit),
            ];
            physics_substep(&mut self.state, &torques, &self.model);
            if self.state.numerical_failure {
                break;
            }
        }
        self.state.steps += 1;
        let omega = self.state.steps;
        let reward = compute_reward(&self.state, &self.gait, omega);
        let terminated = check_termination(&self.state, &self.model);
        let truncated = !terminated && self.state.steps as usize >= self.cfg.max_episode_steps;
        self.done = terminated || truncated;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminated,
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
        (self.state.steps % self.gait.phase_len as u64) as usize
    }

    fn state_labels(&self) -> Vec<String> {
        let names = ["x", "z", "pitch", "lhip", "lknee", "rhip", "rknee"];
        let mut out: Vec<String> = names.iter().map(|n| format!("q_{n}")).collect();
        out.extend(names.iter().map(|n| format!("qd_{n}")));
        out
    }

    fn state_vector(&self) -> Vec<f64> {
        self.state
            .q
            .iter()
            .chain(self.state.qd.iter())
            .copied()
            .collect()
    }

    fn time(&self) -> f64 {
        self.state.time()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn quiet_env() -> BipedEnv {
        let cfg = BipedEnvConfig {
            init_noise: 0.0,
            ..BipedEnvConfig::default()
        };
        BipedEnv::new(cfg, RandomizationSpec::disabled()).unwrap()
    }

    #[test]
    fn pd_torque_examples() {
        assert_eq!(pd_torque(0.5, 0.5, 0.0, 100.0, 5.0, 50.0), 0.0);
        let tau = pd_torque(0.1, 0.0, 1.0, 100.0, 5.0, 50.0);
        assert!((tau - 5.0).abs() < 1e-12);
        // saturation
        assert_eq!(pd_torque(10.0, 0.0, 0.0, 100.0, 5.0, 50.0), 50.0);
        assert_eq!(pd_torque(-10.0, 0.0, 0.0, 100.0, 5.0, 50.0), -50.0);
    }

    #[test]
    fn reward_is_one_at_zero_error() {
        let model = BipedModel::default();
        let gait = ReferenceGait::new(&GaitConfig::default()).unwrap();
        let target = gait.state_at(7);
        let state = BipedState {
            q: [
                target.forward_pos,
                model.standing_height(),
                target.torso_pitch,
                target.joints[0],
                target.joints[1],
                target.joints[2],
                target.joints[3],
            ],
            qd: [target.forward_speed, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            steps: 7,
            numerical_failure: false,
        };
        assert_eq!(compute_reward(&state, &gait, 7), 1.0);
    }

    #[test]
    fn reward_weights_are_the_renormalized_coefficients() {
        let sum = REWARD_W_JOINT + REWARD_W_SPEED + REWARD_W_POS + REWARD_W_ORIENT;
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((REWARD_W_JOINT - 0.2 / 0.75).abs() < 1e-15);
        assert!((REWARD_W_SPEED - 0.2 / 0.75).abs() < 1e-15);
        assert!((REWARD_W_POS - 0.05 / 0.75).abs() < 1e-15);
        assert!((REWARD_W_ORIENT - 0.3 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn reward_matches_direct_substitution_for_speed_error() {
        // only the speed error is 1 (m/s)^2: R = 1 - w*(1 - e^-1)
        let model = BipedModel::default();
        let gait = ReferenceGait::new(&GaitConfig::default()).unwrap();
        let target = gait.state_at(0);
        let state = BipedState {
            q: [
                target.forward_pos,
                model.standing_height(),
                0.0,
                target.joints[0],
                target.joints[1],
                target.joints[2],
                target.joints[3],
            ],
            qd: [target.forward_speed - 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            steps: 0,
            numerical_failure: false,
        };
        let r = compute_reward(&state, &gait, 0);
        assert!((r - 0.831434517645718).abs() < 1e-12, "{r}");
    }

    #[test]
    fn termination_boundaries() {
        let model = BipedModel::default();
        let n = model.neutral_joint_pos();
        let standing = BipedState {
            q: [0.0, model.standing_height(), 0.0, n[0], n[1], n[2], n[3]],
            qd: [0.0; 7],
            steps: 0,
            numerical_failure: false,
        };
        assert!(!check_termination(&standing, &model));

        let mut fallen = standing.clone();
        fallen.q[1] = 0.0;
        assert!(check_termination(&fallen, &model));

        let mut pitched = standing.clone();
        pitched.q[2] = 1.0;
        assert!(!check_termination(&pitched, &model), "boundary is strict");
        pitched.q[2] = 1.0 + 1e-9;
        assert!(check_termination(&pitched, &model));

        let mut failed = standing;
        failed.numerical_failure = true;
        assert!(check_termination(&failed, &model));
    }

    #[test]
    fn free_fall_is_ballistic() {
        let model = BipedModel::default();
        let mut state = BipedState {
            q: [0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            qd: [0.0; 7],
            steps: 0,
            numerical_failure: false,
        };
        let v0 = torso_com_velocity(&state, &model)[1];
        for _ in 0..200 {
            physics_substep(&mut state, &[0.0; 4], &model);
        }
        assert!(!state.numerical_failure);
        let v1 = torso_com_velocity(&state, &model)[1];
        let dv = v1 - v0;
        assert!((dv + 0.981).abs() < 1e-3, "dv = {dv}");
    }

    #[test]
    fn static_rest_supports_the_weight() {
        let mut env = quiet_env();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng, 0).unwrap();
        // hold the neutral posture for 2 simulated seconds
        for _ in 0..66 {
            let out = env.step(&[0.0; 4]).unwrap();
            assert!(!out.terminated, "fell while settling");
        }
        let (normal, pen) = contact_summary(env.state(), &env.model);
        let weight = env.model.total_mass() * env.model.gravity;
        assert!(
            (normal - weight).abs() / weight < 0.01,
            "normal {normal} vs weight {weight}"
        );
        assert!(pen < 0.002, "penetration {pen}");
    }

    #[test]
    fn neutral_actions_keep_the_biped_standing() {
        let mut env = quiet_env();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng, 0).unwrap();
        for k in 0..100 {
            let out = env.step(&[0.0; 4]).unwrap();
            assert!(!out.terminated, "fell at step {k}");
        }
    }

    #[test]
    fn doubling_masses_leaves_equilibrium_posture_unchanged() {
        // the stored static posture is geometric, so mass scaling must not
        // move it: the passive statics (gravity vs contact) are homogeneous
        // in the total mass
        let base = BipedModel::default();
        let mut heavy = base.clone();
        heavy.torso_mass *= 2.0;
        heavy.thigh_mass *= 2.0;
        heavy.shank_mass *= 2.0;
        heavy.torso_inertia *= 2.0;
        heavy.thigh_inertia *= 2.0;
        heavy.shank_inertia *= 2.0;
        assert_eq!(base.neutral_joint_pos(), heavy.neutral_joint_pos());
        assert_eq!(base.standing_height(), heavy.standing_height());
        // the penalty penetration scales with weight instead
        assert!((heavy.static_penetration() - 2.0 * base.static_penetration()).abs() < 1e-15);

        // and the PD-held robot still settles standing, near the same posture
        let settle = |model: BipedModel| -> ([f64; 4], bool) {
            let cfg = BipedEnvConfig {
                model,
                init_noise: 0.0,
                ..BipedEnvConfig::default()
            };
            let mut env = BipedEnv::new(cfg, RandomizationSpec::disabled()).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            env.reset(&mut rng, 0).unwrap();
            let mut alive = true;
            for _ in 0..100 {
                alive &= !env.step(&[0.0; 4]).unwrap().terminated;
            }
            let q = env.state().q;
            ([q[3], q[4], q[5], q[6]], alive)
        };
        let (q_base, alive_base) = settle(base);
        let (q_heavy, alive_heavy) = settle(heavy);
        assert!(alive_base && alive_heavy, "both variants must keep standing");
        for j in 0..4 {
            // gravity deflection against fixed PD gains grows with mass but
            // the posture stays qualitatively the same stance
            assert!(
                (q_base[j] - q_heavy[j]).abs() < 0.25,
                "joint {j}: {} vs {}",
                q_base[j],
                q_heavy[j]
            );
        }
    }

    #[test]
    fn passive_energy_never_increases_beyond_tolerance() {
        // drop from 5 cm with zero torques and let the contacts fire
        let model = BipedModel::default();
        let n = model.neutral_joint_pos();
        let mut state = BipedState {
            q: [0.0, model.standing_height() + 0.05, 0.0, n[0], n[1], n[2], n[3]],
            qd: [0.0; 7],
            steps: 0,
            numerical_failure: false,
        };
        let e0 = mechanical_energy(&state, &model);
        for k in 0..2000 {
            physics_substep(&mut state, &[0.0; 4], &model);
            if state.numerical_failure {
                break;
            }
            let e = mechanical_energy(&state, &model);
            // allowance: 1% of the initial energy per simulated second
            let budget = 0.01 * e0.abs() * (k + 1) as f64 * PHYSICS_DT;
            assert!(
                e - e0 <= budget + 1e-9,
                "substep {k}: energy rose by {} (budget {budget})",
                e - e0
            );
        }
    }

    #[test]
    fn reset_without_noise_is_the_standing_posture() {
        let mut env = quiet_env();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let obs = env.reset(&mut rng, 0).unwrap();
        assert_eq!(obs.len(), BIPED_OBS_DIM);
        assert_eq!(obs[0], 1.0, "commanded speed");
        assert_eq!(obs[1], 0.0, "clock sin at omega = 0");
        assert_eq!(obs[2], 1.0, "clock cos at omega = 0");
        assert_eq!(obs[3], 0.0, "pitch");
        let neutral = env.base_model.neutral_joint_pos();
        assert!((obs[7] - neutral[0]).abs() < 1e-15);
        assert!((obs[8] - neutral[1]).abs() < 1e-15);
        assert!((obs[9] - neutral[2]).abs() < 1e-15);
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = BipedEnv::new(BipedEnvConfig::default(), RandomizationSpec::biped_default()).unwrap();
        let mut b = BipedEnv::new(BipedEnvConfig::default(), RandomizationSpec::biped_default()).unwrap();
        let oa = a.reset(&mut rand_chacha::ChaCha8Rng::seed_from_u64(42), 7).unwrap();
        let ob = b.reset(&mut rand_chacha::ChaCha8Rng::seed_from_u64(42), 7).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.applied_parameters(), b.applied_parameters());
    }

    #[test]
    fn reset_noise_is_uniform_within_bounds() {
        let cfg = BipedEnvConfig {
            init_noise: 0.05,
            ..BipedEnvConfig::default()
        };
        let mut env = BipedEnv::new(cfg, RandomizationSpec::disabled()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let hip0 = env.base_model.neutral_joint_pos()[0];
        let mut min_dev = f64::INFINITY;
        let mut max_dev = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let n = 1000;
        for k in 0..n {
            env.reset(&mut rng, k).unwrap();
            let dev = env.state().q[3] - hip0;
            min_dev = min_dev.min(dev);
            max_dev = max_dev.max(dev);
            sum += dev;
        }
        assert!(min_dev >= -0.05 && max_dev <= 0.05);
        assert!(min_dev < -0.04 && max_dev > 0.04, "range poorly covered");
        assert!((sum / n as f64).abs() < 0.005, "mean {}", sum / n as f64);
    }

    #[test]
    fn trajectories_are_bit_identical_across_repeat_runs() {
        let run = || -> Vec<f64> {
            let mut env = BipedEnv::new(BipedEnvConfig::default(), RandomizationSpec::biped_default()).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
            let mut trace = env.reset(&mut rng, 5).unwrap();
            for k in 0..200 {
                let a = [(k as f64 * 0.05).sin() * 0.1, 0.0, -0.05, 0.02];
                let out = env.step(&a).unwrap();
                let done = out.done();
                trace.extend(out.observation);
                trace.push(out.reward);
                if done {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clock_inputs_stay_on_the_unit_circle() {
        let mut env = quiet_env();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut obs = env.reset(&mut rng, 0).unwrap();
        for _ in 0..90 {
            let r = obs[1] * obs[1] + obs[2] * obs[2];
            assert!((r - 1.0).abs() < 1e-12);
            let out = env.step(&[0.0; 4]).unwrap();
            let done = out.done();
            obs = out.observation;
            if done {
                break;
            }
        }
    }

    #[test]
    fn each_step_advances_time_by_exactly_one_policy_period() {
        let mut env = quiet_env();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng, 0).unwrap();
        for k in 1..=50u64 {
            env.step(&[0.0; 4]).unwrap();
            assert_eq!(env.time(), k as f64 * POLICY_DT);
        }
    }
}
