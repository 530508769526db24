//! Kinematics, Jacobians, and rigid-body dynamics terms for the 18-DOF quadruped.
//!
//! Generalized coordinates `q ∈ R^18` stack the base pose `[r_b; Φ_b]`
//! (position in meters, XYZ-Euler roll/pitch/yaw in radians) followed by 12
//! joint angles in leg order FL, FR, RL, RR with (abduction, hip, knee) per
//! leg. Generalized velocities are the plain coordinate rates, so the base
//! rotational rows carry Euler-angle rates; the mapping `ω = E(Φ)·Φ̇` to a
//! physical angular velocity is applied explicitly wherever one is needed.
//! Assembling everything in these coordinates keeps the equation of motion,
//! the operational-space Jacobian, and the wrench estimator mutually
//! consistent.
//!
//! Leg kinematic structure: abduction about the x-axis, then hip and knee
//! about the y-axis, which matches common quadruped morphology.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total degrees of freedom: 6 base + 12 joints.
pub const DOF: usize = 18;
/// Number of legs, ordered FL=0, FR=1, RL=2, RR=3.
pub const NUM_LEGS: usize = 4;
/// Actuated joints.
pub const NUM_JOINTS: usize = 12;

pub type GenVec = SVector<f64, DOF>;
pub type GenMat = SMatrix<f64, DOF, DOF>;
pub type Jac3x18 = SMatrix<f64, 3, DOF>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in input state")]
    NonFiniteInput,
    #[error("invalid robot parameter: {0}")]
    InvalidParameter(String),
    #[error("failed to read robot config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse robot config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Link length triple shared by all four legs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkLengths {
    /// Lateral offset from the abduction pivot to the hip pitch axis, m.
    pub abduction: f64,
    /// Thigh length, m.
    pub thigh: f64,
    /// Shank length (knee to foot point), m.
    pub shank: f64,
}

/// Joint angle ranges, rad.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointLimits {
    pub abduction: [f64; 2],
    pub hip: [f64; 2],
    pub knee: [f64; 2],
}

impl JointLimits {
    /// Range for joint `k ∈ {0,1,2}` within a leg.
    pub fn range(&self, k: usize) -> [f64; 2] {
        match k {
            0 => self.abduction,
            1 => self.hip,
            _ => self.knee,
        }
    }
}

/// Per-leg link masses and link-frame principal inertias.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LegInertial {
    pub abduction_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    /// Principal inertia of each link about its own COM, kg·m².
    pub abduction_inertia: [f64; 3],
    pub thigh_inertia: [f64; 3],
    pub shank_inertia: [f64; 3],
}

/// Kinematic and inertial parameters of the robot.
///
/// Default numeric values are plausible for a Go2-class machine and live in
/// `config/robot_default.json`; they are not measured data.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub total_mass: f64,
    pub base_mass: f64,
    /// Trunk COM offset from the base-frame origin. The default cancels the
    /// rearward bias of the hanging legs so the whole-robot COM sits at the
    /// base origin in the nominal crouch.
    pub base_com_offset: Vector3<f64>,
    /// Nominal trunk inertia, also used as `I_b` by the reduced-order MPC.
    pub base_inertia_nominal: Matrix3<f64>,
    /// Position of each abduction pivot in the base frame, leg order FL, FR, RL, RR.
    pub hip_offsets: [Vector3<f64>; NUM_LEGS],
    pub link_lengths: LinkLengths,
    pub joint_limits: JointLimits,
    /// Ground friction coefficient.
    pub mu: f64,
    /// Gravity vector, m/s².
    pub gravity: Vector3<f64>,
    pub leg_inertial: LegInertial,
}

/// On-disk robot parameter file. All units SI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotConfig {
    /// Total robot mass, kg.
    pub mass: f64,
    /// Nominal trunk inertia tensor (3×3 row-major), kg·m².
    pub inertia: [[f64; 3]; 3],
    /// Abduction pivot positions in the base frame, leg order FL, FR, RL, RR.
    pub hip_offsets: [[f64; 3]; 4],
    pub link_lengths: LinkLengths,
    pub joint_limits: JointLimits,
    /// Friction coefficient.
    pub mu: f64,
    pub gravity: [f64; 3],
    /// Trunk COM offset in the base frame. Optional.
    #[serde(default)]
    pub base_com_offset: Option<[f64; 3]>,
    /// Leg link masses/inertias. Optional; defaults scale with total mass.
    #[serde(default)]
    pub legs: Option<LegInertial>,
}

impl RobotModel {
    pub fn from_config(cfg: &RobotConfig) -> Result<Self, ModelError> {
        let leg_inertial = cfg.legs.unwrap_or(LegInertial {
            abduction_mass: 0.04 * cfg.mass,
            thigh_mass: 0.06 * cfg.mass,
            shank_mass: 0.0133 * cfg.mass,
            abduction_inertia: [2.4e-4, 2.4e-4, 2.4e-4],
            thigh_inertia: [3.4e-3, 3.4e-3, 2.2e-4],
            shank_inertia: [7.6e-4, 7.6e-4, 2.0e-5],
        });
        let leg_mass =
            leg_inertial.abduction_mass + leg_inertial.thigh_mass + leg_inertial.shank_mass;
        let base_mass = cfg.mass - 4.0 * leg_mass;
        let model = RobotModel {
            total_mass: cfg.mass,
            base_mass,
            base_com_offset: cfg
                .base_com_offset
                .map(|v| Vector3::from_row_slice(&v))
                .unwrap_or_else(|| Vector3::new(0.039, 0.0, 0.0)),
            base_inertia_nominal: Matrix3::from_fn(|r, c| cfg.inertia[r][c]),
            hip_offsets: [
                Vector3::from_row_slice(&cfg.hip_offsets[0]),
                Vector3::from_row_slice(&cfg.hip_offsets[1]),
                Vector3::from_row_slice(&cfg.hip_offsets[2]),
                Vector3::from_row_slice(&cfg.hip_offsets[3]),
            ],
            link_lengths: cfg.link_lengths,
            joint_limits: cfg.joint_limits,
            mu: cfg.mu,
            gravity: Vector3::from_row_slice(&cfg.gravity),
            leg_inertial,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: RobotConfig = serde_json::from_str(text)?;
        Self::from_config(&cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Built-in default parameter set (matches `config/robot_default.json`).
    pub fn default_model() -> Self {
        Self::from_json(DEFAULT_ROBOT_JSON).expect("builtin robot config is valid")
    }

    fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::InvalidParameter(m.to_string()));
        if !(self.total_mass > 0.0) {
            return err("total mass must be positive");
        }
        if self.base_mass <= 0.0 {
            return err("leg masses exceed total mass");
        }
        let li = &self.leg_inertial;
        if li.abduction_mass < 0.0 || li.thigh_mass < 0.0 || li.shank_mass < 0.0 {
            return err("link masses must be non-negative");
        }
        let sym = self.base_inertia_nominal - self.base_inertia_nominal.transpose();
        if sym.norm() > 1e-9 {
            return err("base inertia must be symmetric");
        }
        if self
            .base_inertia_nominal
            .symmetric_eigenvalues()
            .min()
            <= 0.0
        {
            return err("base inertia must be positive definite");
        }
        if !(self.mu > 0.0) {
            return err("friction coefficient must be positive");
        }
        if self.link_lengths.abduction < 0.0
            || self.link_lengths.thigh <= 0.0
            || self.link_lengths.shank <= 0.0
        {
            return err("link lengths must be positive");
        }
        // Left/right and front/rear sign symmetry of the hip rectangle.
        let h = &self.hip_offsets;
        let sx = [1.0, 1.0, -1.0, -1.0];
        let sy = [1.0, -1.0, 1.0, -1.0];
        for i in 0..NUM_LEGS {
            if h[i].x * sx[i] <= 0.0 || h[i].y * sy[i] <= 0.0 {
                return err("hip offsets must have left/right and front/rear sign symmetry");
            }
            if (h[i].x.abs() - h[0].x.abs()).abs() > 1e-9
                || (h[i].y.abs() - h[0].y.abs()).abs() > 1e-9
            {
                return err("hip offset magnitudes must be symmetric");
            }
        }
        for k in 0..3 {
            let r = self.joint_limits.range(k);
            if r[0] >= r[1] {
                return err("joint limit ranges must be ordered");
            }
        }
        Ok(())
    }

    /// +1 for left legs (FL, RL), −1 for right legs.
    pub fn side_sign(leg: usize) -> f64 {
        if leg % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Nominal foot point in the base frame: hip pivot plus the abduction
    /// link offset (where a leg with zero abduction hangs).
    pub fn nominal_foot_offset(&self, leg: usize) -> Vector3<f64> {
        self.hip_offsets[leg]
            + Vector3::new(0.0, Self::side_sign(leg) * self.link_lengths.abduction, 0.0)
    }

    /// Maximum foot distance from the abduction pivot.
    pub fn max_leg_reach(&self) -> f64 {
        let l = &self.link_lengths;
        (l.abduction * l.abduction + (l.thigh + l.shank) * (l.thigh + l.shank)).sqrt()
    }
}

/// Generalized coordinates and velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedState {
    pub q: GenVec,
    pub qdot: GenVec,
}

impl GeneralizedState {
    pub fn new(q: GenVec, qdot: GenVec) -> Self {
        Self { q, qdot }
    }

    pub fn base_position(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(0).into_owned()
    }

    pub fn base_euler(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(3).into_owned()
    }

    pub fn base_velocity(&self) -> Vector3<f64> {
        self.qdot.fixed_rows::<3>(0).into_owned()
    }

    pub fn euler_rates(&self) -> Vector3<f64> {
        self.qdot.fixed_rows::<3>(3).into_owned()
    }

    /// Physical base angular velocity in the global frame.
    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        euler_rate_map(&self.base_euler()) * self.euler_rates()
    }

    pub fn joint_angles(&self, leg: usize) -> Vector3<f64> {
        self.q.fixed_rows::<3>(6 + 3 * leg).into_owned()
    }

    pub fn joint_rates(&self, leg: usize) -> Vector3<f64> {
        self.qdot.fixed_rows::<3>(6 + 3 * leg).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// Operational-space coordinates: base pose followed by the four foot positions.
#[derive(Debug, Clone)]
pub struct OperationalState {
    pub chi: GenVec,
    pub jacobian: GenMat,
    /// Bias acceleration J̇·q̇.
    pub jdot_qdot: GenVec,
}

/// Joint-space inertia matrix and nonlinear force vector.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_matrix: GenMat,
    /// Coriolis + centrifugal + gravity generalized forces.
    pub eta: GenVec,
    /// Set when the inertia matrix conditioning estimate exceeds 1e8.
    pub singular_warning: bool,
}

/// Selection matrix `S = [0 | I]` mapping joint torques into generalized forces.
pub fn selection_matrix() -> SMatrix<f64, NUM_JOINTS, DOF> {
    let mut s = SMatrix::<f64, NUM_JOINTS, DOF>::zeros();
    for i in 0..NUM_JOINTS {
        s[(i, 6 + i)] = 1.0;
    }
    s
}

/// `Sᵀτ` without materializing S.
pub fn joint_torques_to_generalized(tau: &SVector<f64, NUM_JOINTS>) -> GenVec {
    let mut out = GenVec::zeros();
    out.fixed_rows_mut::<NUM_JOINTS>(6).copy_from(tau);
    out
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Base rotation matrix for XYZ-Euler angles `(roll, pitch, yaw)`:
/// `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn base_rotation(euler: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_euler_angles(euler.x, euler.y, euler.z).into_inner()
}

/// Mapping `E(Φ)` from Euler-angle rates to the global angular velocity,
/// `ω = E(Φ)·Φ̇`. Singular at pitch = ±π/2.
pub fn euler_rate_map(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler.y.sin_cos();
    let (sy, cy) = euler.z.sin_cos();
    Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0)
}

/// Time derivative of `E(Φ)` along Euler rates `Φ̇`.
pub fn euler_rate_map_dot(euler: &Vector3<f64>, euler_rates: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler.y.sin_cos();
    let (sy, cy) = euler.z.sin_cos();
    let (td, yd) = (euler_rates.y, euler_rates.z);
    Matrix3::new(
        -sy * yd * cp - cy * sp * td,
        -cy * yd,
        0.0,
        cy * yd * cp - sy * sp * td,
        -sy * yd,
        0.0,
        -cp * td,
        0.0,
        0.0,
    )
}

/// Inverse mapping: physical moment conjugate to Euler rates and back.
/// `τ_Euler = E(Φ)ᵀ·m  ⇔  m = E(Φ)⁻ᵀ·τ_Euler`.
pub fn euler_torque_to_moment(euler: &Vector3<f64>, tau_euler: &Vector3<f64>) -> Vector3<f64> {
    euler_rate_map(euler)
        .transpose()
        .try_inverse()
        .map(|inv| inv * tau_euler)
        .unwrap_or(*tau_euler)
}

/// Joint pivots, axes, link orientations, and the foot point of one leg,
/// all expressed in the base frame.
#[derive(Debug, Clone)]
pub struct LegChain {
    pub origins: [Vector3<f64>; 3],
    pub axes: [Vector3<f64>; 3],
    pub link_rotations: [Matrix3<f64>; 3],
    pub foot: Vector3<f64>,
}

impl RobotModel {
    /// Kinematic chain of leg `leg` at joint angles `q_leg = (abd, hip, knee)`.
    pub fn leg_chain(&self, leg: usize, q_leg: &Vector3<f64>) -> LegChain {
        let side = Self::side_sign(leg);
        let l = &self.link_lengths;

        let r0 = Rotation3::from_axis_angle(&Vector3::x_axis(), q_leg.x).into_inner();
        let r01 = r0 * Rotation3::from_axis_angle(&Vector3::y_axis(), q_leg.y).into_inner();
        let r012 = r01 * Rotation3::from_axis_angle(&Vector3::y_axis(), q_leg.z).into_inner();

        let o0 = self.hip_offsets[leg];
        let o1 = o0 + r0 * Vector3::new(0.0, side * l.abduction, 0.0);
        let o2 = o1 + r01 * Vector3::new(0.0, 0.0, -l.thigh);
        let foot = o2 + r012 * Vector3::new(0.0, 0.0, -l.shank);

        LegChain {
            origins: [o0, o1, o2],
            axes: [Vector3::x(), r0 * Vector3::y(), r01 * Vector3::y()],
            link_rotations: [r0, r01, r012],
            foot,
        }
    }

    /// Foot position in the base frame.
    pub fn foot_position_base(&self, leg: usize, q_leg: &Vector3<f64>) -> Vector3<f64> {
        self.leg_chain(leg, q_leg).foot
    }

    /// COM positions of the three links of a leg, base frame.
    fn leg_link_coms(&self, chain: &LegChain, leg: usize) -> [Vector3<f64>; 3] {
        let side = Self::side_sign(leg);
        let l = &self.link_lengths;
        [
            chain.origins[0] + chain.link_rotations[0] * Vector3::new(0.0, side * 0.5 * l.abduction, 0.0),
            chain.origins[1] + chain.link_rotations[1] * Vector3::new(0.0, 0.0, -0.5 * l.thigh),
            chain.origins[2] + chain.link_rotations[2] * Vector3::new(0.0, 0.0, -0.5 * l.shank),
        ]
    }
}

/// Base-frame velocity/bias data for a point rigidly attached to a leg link.
struct ChainPoint {
    /// ∂p/∂q_k columns for the leg's three joints (zero beyond `n_joints`).
    jac: [Vector3<f64>; 3],
    vel: Vector3<f64>,
    bias: Vector3<f64>,
}

/// Point kinematics within a leg chain, relative to the base frame, with the
/// base held fixed. `n_joints` is the number of joints the point depends on.
fn chain_point(chain: &LegChain, qd: &Vector3<f64>, n_joints: usize, p: Vector3<f64>) -> ChainPoint {
    let mut jac = [Vector3::zeros(); 3];
    let mut vel = Vector3::zeros();
    for k in 0..n_joints {
        jac[k] = chain.axes[k].cross(&(p - chain.origins[k]));
        vel += qd[k] * jac[k];
    }
    // ȧ_k and the velocity of each pivot come from the preceding joints only.
    let mut bias = Vector3::zeros();
    let mut w_pre = Vector3::zeros();
    for k in 0..n_joints {
        let a_dot = w_pre.cross(&chain.axes[k]);
        let mut o_vel = Vector3::zeros();
        for m in 0..k {
            o_vel += qd[m] * chain.axes[m].cross(&(chain.origins[k] - chain.origins[m]));
        }
        bias += qd[k] * (a_dot.cross(&(p - chain.origins[k])) + chain.axes[k].cross(&(vel - o_vel)));
        w_pre += qd[k] * chain.axes[k];
    }
    ChainPoint { jac, vel, bias }
}

/// Angular velocity and angular bias of link `n_joints-1` relative to the base.
fn chain_angular(chain: &LegChain, qd: &Vector3<f64>, n_joints: usize) -> (Vector3<f64>, Vector3<f64>) {
    let mut w = Vector3::zeros();
    let mut alpha = Vector3::zeros();
    for k in 0..n_joints {
        alpha += qd[k] * w.cross(&chain.axes[k]);
        w += qd[k] * chain.axes[k];
    }
    (w, alpha)
}

/// World-frame kinematics of one rigid body: pose, Jacobians, velocities,
/// and the bias accelerations `J̇·q̇` evaluated at zero generalized acceleration.
#[derive(Debug, Clone)]
pub struct BodyKin {
    pub pos: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub jv: Jac3x18,
    pub jw: Jac3x18,
    pub vel: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub bias_v: Vector3<f64>,
    pub bias_w: Vector3<f64>,
}

/// Shared per-state base quantities.
struct BaseFrame {
    r_b: Vector3<f64>,
    rot: Matrix3<f64>,
    e_map: Matrix3<f64>,
    v_b: Vector3<f64>,
    omega: Vector3<f64>,
    /// `Ė(Φ)·Φ̇`, the base angular bias acceleration at q̈ = 0.
    omega_bias: Vector3<f64>,
}

impl BaseFrame {
    fn new(state: &GeneralizedState) -> Self {
        let euler = state.base_euler();
        let rates = state.euler_rates();
        let e_map = euler_rate_map(&euler);
        Self {
            r_b: state.base_position(),
            rot: base_rotation(&euler),
            e_map,
            v_b: state.base_velocity(),
            omega: e_map * rates,
            omega_bias: euler_rate_map_dot(&euler, &rates) * rates,
        }
    }

    /// Lift a base-frame chain point into world-frame body kinematics.
    fn lift_point(
        &self,
        p_base: Vector3<f64>,
        cp: &ChainPoint,
        leg: usize,
        n_joints: usize,
    ) -> (Vector3<f64>, Jac3x18, Vector3<f64>, Vector3<f64>) {
        let rp = self.rot * p_base;
        let mut jv = Jac3x18::zeros();
        jv.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        jv.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-skew(&rp) * self.e_map));
        for k in 0..n_joints {
            jv.fixed_view_mut::<3, 1>(0, 6 + 3 * leg + k)
                .copy_from(&(self.rot * cp.jac[k]));
        }
        let rel_vel = self.rot * cp.vel;
        let vel = self.v_b + self.omega.cross(&rp) + rel_vel;
        let bias = self.omega_bias.cross(&rp)
            + self.omega.cross(&self.omega.cross(&rp))
            + 2.0 * self.omega.cross(&rel_vel)
            + self.rot * cp.bias;
        (self.r_b + rp, jv, vel, bias)
    }

    fn lift_angular(
        &self,
        w_rel: Vector3<f64>,
        alpha_rel: Vector3<f64>,
        axes: &[Vector3<f64>; 3],
        leg: usize,
        n_joints: usize,
    ) -> (Jac3x18, Vector3<f64>, Vector3<f64>) {
        let mut jw = Jac3x18::zeros();
        jw.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.e_map);
        for k in 0..n_joints {
            jw.fixed_view_mut::<3, 1>(0, 6 + 3 * leg + k)
                .copy_from(&(self.rot * axes[k]));
        }
        let omega = self.omega + self.rot * w_rel;
        let bias =
            self.omega_bias + self.omega.cross(&(self.rot * w_rel)) + self.rot * alpha_rel;
        (jw, omega, bias)
    }
}

impl RobotModel {
    /// Operational-space coordinates `χ = [q_b; r_p1..r_p4]` (foot positions global).
    pub fn forward_kinematics(&self, q: &GenVec) -> Result<GenVec, ModelError> {
        if !q.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        let r_b = q.fixed_rows::<3>(0).into_owned();
        let rot = base_rotation(&q.fixed_rows::<3>(3).into_owned());
        let mut chi = GenVec::zeros();
        chi.fixed_rows_mut::<6>(0).copy_from(&q.fixed_rows::<6>(0));
        for leg in 0..NUM_LEGS {
            let q_leg = q.fixed_rows::<3>(6 + 3 * leg).into_owned();
            let foot = r_b + rot * self.foot_position_base(leg, &q_leg);
            chi.fixed_rows_mut::<3>(6 + 3 * leg).copy_from(&foot);
        }
        Ok(chi)
    }

    /// Operational-space Jacobian `J = ∂χ/∂q` and bias acceleration `J̇·q̇`.
    pub fn jacobian(&self, q: &GenVec, qdot: &GenVec) -> Result<(GenMat, GenVec), ModelError> {
        let state = GeneralizedState::new(*q, *qdot);
        if !state.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let base = BaseFrame::new(&state);
        let mut jac = GenMat::zeros();
        let mut bias = GenVec::zeros();
        for i in 0..6 {
            jac[(i, i)] = 1.0;
        }
        for leg in 0..NUM_LEGS {
            let q_leg = state.joint_angles(leg);
            let qd_leg = state.joint_rates(leg);
            let chain = self.leg_chain(leg, &q_leg);
            let cp = chain_point(&chain, &qd_leg, 3, chain.foot);
            let (_, jv, _, b) = base.lift_point(chain.foot, &cp, leg, 3);
            jac.fixed_view_mut::<3, DOF>(6 + 3 * leg, 0).copy_from(&jv);
            bias.fixed_rows_mut::<3>(6 + 3 * leg).copy_from(&b);
        }
        Ok((jac, bias))
    }

    /// Full operational state.
    pub fn operational_state(
        &self,
        q: &GenVec,
        qdot: &GenVec,
    ) -> Result<OperationalState, ModelError> {
        let chi = self.forward_kinematics(q)?;
        let (jacobian, jdot_qdot) = self.jacobian(q, qdot)?;
        Ok(OperationalState {
            chi,
            jacobian,
            jdot_qdot,
        })
    }

    /// World-frame kinematics of all 13 bodies with their masses and
    /// link-frame inertias: base first, then (abduction, thigh, shank) per leg.
    fn body_kinematics(&self, state: &GeneralizedState) -> Vec<(BodyKin, f64, Matrix3<f64>)> {
        let base = BaseFrame::new(state);
        let mut bodies = Vec::with_capacity(13);

        let rp = base.rot * self.base_com_offset;
        let mut jv = Jac3x18::zeros();
        jv.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        jv.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-skew(&rp) * base.e_map));
        let mut jw = Jac3x18::zeros();
        jw.fixed_view_mut::<3, 3>(0, 3).copy_from(&base.e_map);
        bodies.push((
            BodyKin {
                pos: base.r_b + rp,
                rot: base.rot,
                jv,
                jw,
                vel: base.v_b + base.omega.cross(&rp),
                omega: base.omega,
                bias_v: base.omega_bias.cross(&rp) + base.omega.cross(&base.omega.cross(&rp)),
                bias_w: base.omega_bias,
            },
            self.base_mass,
            self.base_inertia_nominal,
        ));

        let li = &self.leg_inertial;
        let link_masses = [li.abduction_mass, li.thigh_mass, li.shank_mass];
        let link_inertias = [
            Matrix3::from_diagonal(&Vector3::from_row_slice(&li.abduction_inertia)),
            Matrix3::from_diagonal(&Vector3::from_row_slice(&li.thigh_inertia)),
            Matrix3::from_diagonal(&Vector3::from_row_slice(&li.shank_inertia)),
        ];

        for leg in 0..NUM_LEGS {
            let q_leg = state.joint_angles(leg);
            let qd_leg = state.joint_rates(leg);
            let chain = self.leg_chain(leg, &q_leg);
            let coms = self.leg_link_coms(&chain, leg);
            for link in 0..3 {
                let n_joints = link + 1;
                let cp = chain_point(&chain, &qd_leg, n_joints, coms[link]);
                let (pos, jv, vel, bias_v) = base.lift_point(coms[link], &cp, leg, n_joints);
                let (w_rel, alpha_rel) = chain_angular(&chain, &qd_leg, n_joints);
                let (jw, omega, bias_w) =
                    base.lift_angular(w_rel, alpha_rel, &chain.axes, leg, n_joints);
                bodies.push((
                    BodyKin {
                        pos,
                        rot: base.rot * chain.link_rotations[link],
                        jv,
                        jw,
                        vel,
                        omega,
                        bias_v,
                        bias_w,
                    },
                    link_masses[link],
                    link_inertias[link],
                ));
            }
        }
        bodies
    }

    /// Joint-space inertia matrix and nonlinear forces of Eq. of motion
    /// `M(q)q̈ + η(q, q̇) = Sᵀτ + J_cᵀF_c`.
    pub fn dynamics_terms(&self, q: &GenVec, qdot: &GenVec) -> Result<DynamicsTerms, ModelError> {
        let state = GeneralizedState::new(*q, *qdot);
        if !state.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut m = GenMat::zeros();
        let mut eta = GenVec::zeros();
        for (body, mass, inertia_link) in self.body_kinematics(&state) {
            let i_world = body.rot * inertia_link * body.rot.transpose();
            m += mass * body.jv.transpose() * body.jv + body.jw.transpose() * i_world * body.jw;
            let f = mass * (body.bias_v - self.gravity);
            let n = i_world * body.bias_w + body.omega.cross(&(i_world * body.omega));
            eta += body.jv.transpose() * f + body.jw.transpose() * n;
        }
        // Cheap conditioning proxy from the Cholesky factor diagonals.
        let singular_warning = match m.cholesky() {
            Some(chol) => {
                let diag = chol.l().diagonal();
                let dmax = diag.max();
                let dmin = diag.min();
                dmin <= 0.0 || (dmax / dmin) * (dmax / dmin) > 1e8
            }
            None => true,
        };
        Ok(DynamicsTerms {
            mass_matrix: m,
            eta,
            singular_warning,
        })
    }

    /// Generalized gravity vector, `η(q, 0)`.
    pub fn gravity_vector(&self, q: &GenVec) -> Result<GenVec, ModelError> {
        let state = GeneralizedState::new(*q, GenVec::zeros());
        if !state.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut eta = GenVec::zeros();
        for (body, mass, _) in self.body_kinematics(&state) {
            eta += body.jv.transpose() * (mass * (-self.gravity));
        }
        Ok(eta)
    }

    /// Total mechanical energy `½q̇ᵀM q̇ + Σ m_b g h_b`, J.
    pub fn mechanical_energy(&self, q: &GenVec, qdot: &GenVec) -> Result<f64, ModelError> {
        let state = GeneralizedState::new(*q, *qdot);
        if !state.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for (body, mass, inertia_link) in self.body_kinematics(&state) {
            let i_world = body.rot * inertia_link * body.rot.transpose();
            kinetic += 0.5 * mass * body.vel.norm_squared()
                + 0.5 * body.omega.dot(&(i_world * body.omega));
            potential -= mass * self.gravity.dot(&body.pos);
        }
        Ok(kinetic + potential)
    }

    /// Contact Jacobian: the 12 foot rows of `J`.
    pub fn contact_jacobian(
        &self,
        q: &GenVec,
        qdot: &GenVec,
    ) -> Result<SMatrix<f64, 12, DOF>, ModelError> {
        let (j, _) = self.jacobian(q, qdot)?;
        Ok(j.fixed_view::<12, DOF>(6, 0).into_owned())
    }

    /// 3×3 Jacobian of one foot w.r.t. its own leg joints, world frame.
    pub fn foot_joint_jacobian(&self, q: &GenVec, leg: usize) -> Matrix3<f64> {
        let q_leg = q.fixed_rows::<3>(6 + 3 * leg).into_owned();
        let rot = base_rotation(&q.fixed_rows::<3>(3).into_owned());
        let chain = self.leg_chain(leg, &q_leg);
        let cp = chain_point(&chain, &Vector3::zeros(), 3, chain.foot);
        let mut j = Matrix3::zeros();
        for k in 0..3 {
            j.set_column(k, &(rot * cp.jac[k]));
        }
        j
    }

    /// World foot positions.
    pub fn foot_positions(&self, q: &GenVec) -> Result<[Vector3<f64>; NUM_LEGS], ModelError> {
        let chi = self.forward_kinematics(q)?;
        let mut out = [Vector3::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            out[leg] = chi.fixed_rows::<3>(6 + 3 * leg).into_owned();
        }
        Ok(out)
    }
}

pub const DEFAULT_ROBOT_JSON: &str = include_str!("../config/robot_default.json");
