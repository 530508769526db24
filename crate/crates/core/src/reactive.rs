//! High-rate reactive force control: desired base wrench, contact-force QP
//! solved by geometric projected gradient descent (GPGD), and the joint
//! torque mapping.
//!
//! The QP minimizes wrench tracking error, a force regularizer, and MPC
//! tracking, subject to exact second-order friction cones per leg. Each
//! gradient step is followed by the closed-form Euclidean projection onto
//! the truncated cone, so every iterate is feasible.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::base_planner::BaseReference;
use crate::model::{skew, GenVec, RobotModel, NUM_LEGS};
use crate::mpc::InputVec;

pub type Wrench = SVector<f64, 6>;

/// PD gains for the desired base wrench.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WrenchPdGains {
    /// Position stiffness, 1/s² (multiplied by mass).
    pub k_p_pos: [f64; 3],
    /// Position damping, 1/s.
    pub k_d_pos: [f64; 3],
    /// Orientation stiffness, 1/s² (multiplied by inertia).
    pub k_p_ori: [f64; 3],
    /// Orientation damping, 1/s.
    pub k_d_ori: [f64; 3],
}

impl Default for WrenchPdGains {
    fn default() -> Self {
        // Orientation stiffness must clear the inverted-pendulum tipping
        // stiffness m·g·h (~46 N·m/rad here) after multiplication by the
        // small trunk inertia.
        Self {
            k_p_pos: [0.0, 0.0, 400.0],
            k_d_pos: [30.0, 30.0, 40.0],
            k_p_ori: [400.0, 300.0, 100.0],
            k_d_ori: [40.0, 30.0, 15.0],
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Desired feedback wrench on the base:
/// `τ_b = [m(r̈_d + K_p e_r + K_d e_v) − m g; I_b(K_p_ori e_Φ + K_d_ori e_ω)]`.
///
/// The orientation error is the small-angle Euler difference toward zero
/// roll/pitch and the reference yaw.
pub fn desired_base_wrench(
    base_pos: &Vector3<f64>,
    base_vel: &Vector3<f64>,
    euler: &Vector3<f64>,
    omega: &Vector3<f64>,
    reference: &BaseReference,
    gains: &WrenchPdGains,
    model: &RobotModel,
) -> Wrench {
    let r_d = Vector3::new(reference.r_d.x, reference.r_d.y, reference.z_d);
    let v_d = Vector3::new(reference.rdot_d.x, reference.rdot_d.y, 0.0);
    let a_d = Vector3::new(reference.rddot_d.x, reference.rddot_d.y, 0.0);
    let e_r = r_d - base_pos;
    let e_v = v_d - base_vel;
    let mut acc_cmd = a_d;
    for i in 0..3 {
        acc_cmd[i] += gains.k_p_pos[i] * e_r[i] + gains.k_d_pos[i] * e_v[i];
    }
    let force = model.total_mass * acc_cmd - model.total_mass * model.gravity;

    let e_phi = Vector3::new(
        -euler.x,
        -euler.y,
        wrap_angle(reference.yaw_d - euler.z),
    );
    let omega_d = Vector3::new(0.0, 0.0, reference.yawrate_d);
    let mut ang_cmd = Vector3::zeros();
    for i in 0..3 {
        ang_cmd[i] = gains.k_p_ori[i] * e_phi[i] + gains.k_d_ori[i] * (omega_d[i] - omega[i]);
    }
    let moment = model.base_inertia_nominal * ang_cmd;

    let mut tau = Wrench::zeros();
    tau.fixed_rows_mut::<3>(0).copy_from(&force);
    tau.fixed_rows_mut::<3>(3).copy_from(&moment);
    tau
}

/// Truncated second-order friction cone of one foot:
/// `{ ‖F_xy‖ ≤ μ F_z,  f_min ≤ F_z ≤ f_max }`; inactive legs admit only 0.
#[derive(Debug, Clone, Copy)]
pub struct ConeSpec {
    pub mu: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub active: bool,
}

impl ConeSpec {
    pub fn stance(mu: f64, f_min: f64, f_max: f64) -> Self {
        Self {
            mu,
            f_min,
            f_max,
            active: true,
        }
    }

    pub fn swing() -> Self {
        Self {
            mu: 1.0,
            f_min: 0.0,
            f_max: 0.0,
            active: false,
        }
    }

    pub fn contains(&self, f: &Vector3<f64>, tol: f64) -> bool {
        if !self.active {
            return f.norm() <= tol;
        }
        let r = f.xy().norm();
        r <= self.mu * f.z + tol && f.z >= self.f_min - tol && f.z <= self.f_max + tol
    }
}

fn clip_disc(xy: Vector2<f64>, radius: f64) -> Vector2<f64> {
    let r = xy.norm();
    if r <= radius || r < 1e-15 {
        xy
    } else {
        xy * (radius / r)
    }
}

/// Exact Euclidean projection onto the truncated second-order cone.
///
/// The unconstrained cone projection is computed first; if its height falls
/// outside `[f_min, f_max]` the projection lies on the corresponding disc,
/// with the lateral part clipped to the disc radius.
pub fn project_truncated_cone(f: &Vector3<f64>, spec: &ConeSpec) -> Vector3<f64> {
    if !spec.active {
        return Vector3::zeros();
    }
    let xy = f.xy();
    let r = xy.norm();
    let mu = spec.mu;

    let cone_z = if r <= mu * f.z {
        f.z
    } else if mu * r <= -f.z {
        0.0
    } else {
        (mu * r + f.z) / (mu * mu + 1.0)
    };

    if cone_z > spec.f_max {
        let c = clip_disc(xy, mu * spec.f_max);
        return Vector3::new(c.x, c.y, spec.f_max);
    }
    if cone_z < spec.f_min {
        let c = clip_disc(xy, mu * spec.f_min);
        return Vector3::new(c.x, c.y, spec.f_min);
    }
    if r <= mu * f.z {
        *f
    } else if mu * r <= -f.z {
        Vector3::zeros()
    } else {
        let scale = mu * cone_z / r;
        Vector3::new(xy.x * scale, xy.y * scale, cone_z)
    }
}

/// Map from stacked foot forces to the base wrench about the base origin:
/// column block per foot `[I; [r_rel]×]`.
pub fn base_wrench_map(foot_rel: &[Vector3<f64>; NUM_LEGS]) -> SMatrix<f64, 6, 12> {
    let mut g = SMatrix::<f64, 6, 12>::zeros();
    for leg in 0..NUM_LEGS {
        g.fixed_view_mut::<3, 3>(0, 3 * leg)
            .copy_from(&Matrix3::identity());
        g.fixed_view_mut::<3, 3>(3, 3 * leg)
            .copy_from(&skew(&foot_rel[leg]));
    }
    g
}

/// Reactive contact-force QP data.
#[derive(Debug, Clone)]
pub struct ReactiveQp {
    /// 6×12 map from foot forces to the base wrench.
    pub wrench_map: SMatrix<f64, 6, 12>,
    /// Desired base wrench.
    pub tau_b: Wrench,
    /// Diagonal wrench-tracking weight.
    pub s1_diag: SVector<f64, 6>,
    /// Diagonal force regularizer.
    pub w_diag: SVector<f64, 12>,
    /// Diagonal MPC-tracking weight.
    pub v_diag: SVector<f64, 12>,
    /// MPC force sample to track.
    pub f_mpc: InputVec,
    pub cones: [ConeSpec; NUM_LEGS],
}

impl ReactiveQp {
    /// `W + V` must be positive definite for strict convexity.
    pub fn validate(&self) -> bool {
        self.s1_diag.iter().all(|v| *v >= 0.0)
            && self.w_diag.iter().all(|v| *v >= 0.0)
            && self.v_diag.iter().all(|v| *v >= 0.0)
            && self
                .w_diag
                .iter()
                .zip(self.v_diag.iter())
                .all(|(w, v)| w + v > 0.0)
    }

    pub fn objective(&self, f: &InputVec) -> f64 {
        let resid = self.wrench_map * f - self.tau_b;
        let mut cost = resid.component_mul(&self.s1_diag).dot(&resid);
        cost += f.component_mul(&self.w_diag).dot(f);
        let dv = f - self.f_mpc;
        cost += dv.component_mul(&self.v_diag).dot(&dv);
        cost
    }

    pub fn gradient(&self, f: &InputVec) -> InputVec {
        let resid = self.wrench_map * f - self.tau_b;
        2.0 * self.wrench_map.transpose() * resid.component_mul(&self.s1_diag)
            + 2.0 * f.component_mul(&self.w_diag)
            + 2.0 * (f - self.f_mpc).component_mul(&self.v_diag)
    }

    /// Dense Hessian `2(GᵀS₁G + W + V)`.
    pub fn hessian(&self) -> SMatrix<f64, 12, 12> {
        let mut h = SMatrix::<f64, 12, 12>::zeros();
        let gt = self.wrench_map.transpose();
        for r in 0..6 {
            let w = self.s1_diag[r];
            for i in 0..12 {
                for j in 0..12 {
                    h[(i, j)] += 2.0 * w * gt[(i, r)] * gt[(j, r)];
                }
            }
        }
        for i in 0..12 {
            h[(i, i)] += 2.0 * (self.w_diag[i] + self.v_diag[i]);
        }
        h
    }

    /// Largest Hessian eigenvalue by power iteration, padded 5% so the GPGD
    /// step 1/L never overshoots.
    pub fn lipschitz(&self) -> f64 {
        let h = self.hessian();
        let mut v = SVector::<f64, 12>::from_element(1.0).normalize();
        let mut lam = 1.0;
        for _ in 0..20 {
            let hv = h * v;
            lam = hv.norm();
            if lam < 1e-12 {
                return 1e-12;
            }
            v = hv / lam;
        }
        lam * 1.05
    }
}

#[derive(Debug, Clone)]
pub struct ReactiveSolution {
    pub forces: InputVec,
    pub iterations: usize,
    pub converged: bool,
    /// Projected-gradient norm at termination.
    pub pg_norm: f64,
}

/// Geometric projected gradient descent with fixed step 1/L. Every iterate
/// satisfies the cone constraints exactly, so the result is always safe to
/// apply even at the iteration limit.
pub fn solve_reactive_qp(
    qp: &ReactiveQp,
    warm_start: Option<&InputVec>,
    max_iter: usize,
    tol: f64,
) -> ReactiveSolution {
    debug_assert!(qp.validate(), "reactive QP weights must be PSD with W+V PD");
    let l = qp.lipschitz();
    let step = 1.0 / l;

    let project = |f: &InputVec| -> InputVec {
        let mut out = InputVec::zeros();
        for leg in 0..NUM_LEGS {
            let p = project_truncated_cone(
                &f.fixed_rows::<3>(3 * leg).into_owned(),
                &qp.cones[leg],
            );
            out.fixed_rows_mut::<3>(3 * leg).copy_from(&p);
        }
        out
    };

    let mut f = project(warm_start.unwrap_or(&qp.f_mpc));
    let mut pg_norm = f64::INFINITY;
    for iter in 0..max_iter {
        let next = project(&(f - step * qp.gradient(&f)));
        pg_norm = (f - next).norm() * l;
        f = next;
        if pg_norm < tol {
            return ReactiveSolution {
                forces: f,
                iterations: iter + 1,
                converged: true,
                pg_norm,
            };
        }
    }
    ReactiveSolution {
        forces: f,
        iterations: max_iter,
        converged: false,
        pg_norm,
    }
}

/// Swing-leg task-space PD gains.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SwingGains {
    /// N/m.
    pub k_p: f64,
    /// N·s/m.
    pub k_d: f64,
}

impl Default for SwingGains {
    fn default() -> Self {
        Self {
            k_p: 700.0,
            k_d: 18.0,
        }
    }
}

/// Per-leg command for the torque mapping.
#[derive(Debug, Clone, Copy)]
pub enum LegCommand {
    /// Ground force the stance foot should exert on the robot.
    Stance { force: Vector3<f64> },
    /// Swing trajectory sample (world frame).
    Swing {
        pos_des: Vector3<f64>,
        vel_des: Vector3<f64>,
    },
}

/// Joint torques from leg commands: stance legs map the commanded ground
/// reaction through `−J_legᵀ`, swing legs run a task-space PD plus gravity
/// compensation. Near-singular leg Jacobians are damped and counted.
pub fn map_to_torques(
    commands: &[LegCommand; NUM_LEGS],
    q: &GenVec,
    qdot: &GenVec,
    model: &RobotModel,
    swing_gains: &SwingGains,
) -> (SVector<f64, 12>, u32) {
    let gravity = model
        .gravity_vector(q)
        .expect("finite state in torque mapping");
    let (jac, _) = model.jacobian(q, qdot).expect("finite state");
    let chi = model.forward_kinematics(q).expect("finite state");
    let foot_vel = jac * qdot;

    let mut tau = SVector::<f64, 12>::zeros();
    let mut singular_events = 0;
    for leg in 0..NUM_LEGS {
        let j_leg = model.foot_joint_jacobian(q, leg);
        let sigma_min = j_leg.svd(false, false).singular_values.min();
        let damping = if sigma_min < 1e-2 {
            singular_events += 1;
            sigma_min * sigma_min / (sigma_min * sigma_min + 1e-4)
        } else {
            1.0
        };
        let tau_leg = match commands[leg] {
            LegCommand::Stance { force } => {
                // Carry the leg's own weight in the actuators so the realized
                // ground reaction matches the commanded force.
                let grav_leg = gravity.fixed_rows::<3>(6 + 3 * leg).into_owned();
                -(j_leg.transpose() * force) * damping + grav_leg
            }
            LegCommand::Swing { pos_des, vel_des } => {
                let pos = chi.fixed_rows::<3>(6 + 3 * leg).into_owned();
                let vel = foot_vel.fixed_rows::<3>(6 + 3 * leg).into_owned();
                let f_pd = swing_gains.k_p * (pos_des - pos) + swing_gains.k_d * (vel_des - vel);
                let grav_leg = gravity.fixed_rows::<3>(6 + 3 * leg).into_owned();
                (j_leg.transpose() * f_pd) * damping + grav_leg
            }
        };
        tau.fixed_rows_mut::<3>(3 * leg).copy_from(&tau_leg);
    }
    (tau, singular_events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> RobotModel {
        RobotModel::default_model()
    }

    fn rest_reference(z: f64) -> BaseReference {
        BaseReference::at_rest(Vector2::zeros(), 0.0, z)
    }

    #[test]
    fn wrench_gravity_feedforward() {
        let m = model();
        let reference = rest_reference(0.31);
        let tau = desired_base_wrench(
            &Vector3::new(0.0, 0.0, 0.31),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &reference,
            &WrenchPdGains::default(),
            &m,
        );
        assert_abs_diff_eq!(tau[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tau[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tau[2], m.total_mass * 9.81, epsilon = 1e-9);
        assert_abs_diff_eq!(tau.fixed_rows::<3>(3).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wrench_pd_terms() {
        let m = model();
        let mut gains = WrenchPdGains::default();
        gains.k_p_pos = [100.0, 100.0, 100.0];
        gains.k_d_pos = [0.0; 3];
        let reference = rest_reference(0.31);
        // 0.1 m position error along x adds m·K_p·e = 15·100·0.1 = 150 N.
        let tau = desired_base_wrench(
            &Vector3::new(-0.1, 0.0, 0.31),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &reference,
            &gains,
            &m,
        );
        assert_abs_diff_eq!(tau[0], 150.0, epsilon = 1e-9);

        // 0.1 rad roll error with K_p_ori = 60 gives I_xx·6.0 about x.
        let mut gains = WrenchPdGains::default();
        gains.k_p_ori = [60.0, 60.0, 60.0];
        gains.k_d_ori = [0.0; 3];
        let tau = desired_base_wrench(
            &Vector3::new(0.0, 0.0, 0.31),
            &Vector3::zeros(),
            &Vector3::new(-0.1, 0.0, 0.0),
            &Vector3::zeros(),
            &reference,
            &gains,
            &m,
        );
        assert_abs_diff_eq!(tau[3], m.base_inertia_nominal[(0, 0)] * 6.0, epsilon = 1e-9);
    }

    /// Brute-force oracle for the truncated-cone projection: dense 2-D grid
    /// search in the (radial, vertical) plane of the query point.
    fn projection_oracle(f: &Vector3<f64>, spec: &ConeSpec) -> Vector3<f64> {
        let xy = f.xy();
        let r_in = xy.norm();
        let dir = if r_in < 1e-12 {
            Vector2::new(1.0, 0.0)
        } else {
            xy / r_in
        };
        let mut best = Vector3::new(0.0, 0.0, spec.f_min);
        let mut best_d = f64::INFINITY;
        let n = 800;
        for zi in 0..=n {
            let z = spec.f_min + (spec.f_max - spec.f_min) * zi as f64 / n as f64;
            let r_max = spec.mu * z;
            for ri in 0..=n {
                let r = r_max * ri as f64 / n as f64;
                let cand = Vector3::new(dir.x * r, dir.y * r, z);
                let d = (cand - f).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = cand;
                }
            }
        }
        best
    }

    #[test]
    fn cone_projection_matches_brute_force() {
        let spec = ConeSpec::stance(0.6, 5.0, 120.0);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..60 {
            let f = Vector3::new(
                rng.random_range(-150.0..150.0),
                rng.random_range(-150.0..150.0),
                rng.random_range(-150.0..200.0),
            );
            let p = project_truncated_cone(&f, &spec);
            let oracle = projection_oracle(&f, &spec);
            // Grid resolution limits the oracle accuracy.
            assert!(
                (p - oracle).norm() < 0.3,
                "projection {p:?} vs oracle {oracle:?} for {f:?}"
            );
            assert!(spec.contains(&p, 1e-9));
            // The projection must not beat the oracle by more than grid noise.
            assert!((p - f).norm() <= (oracle - f).norm() + 1e-6);
        }
    }

    #[test]
    fn cone_projection_cases() {
        let spec = ConeSpec::stance(0.5, 2.0, 100.0);
        // Interior point unchanged.
        let f = Vector3::new(5.0, 0.0, 50.0);
        assert_abs_diff_eq!(project_truncated_cone(&f, &spec), f, epsilon = 1e-12);
        // Deep polar point lands on the bottom disc center.
        let f = Vector3::new(0.0, 0.0, -40.0);
        assert_abs_diff_eq!(
            project_truncated_cone(&f, &spec),
            Vector3::new(0.0, 0.0, 2.0),
            epsilon = 1e-12
        );
        // Above the top plane: lateral clipped to μ·f_max.
        let f = Vector3::new(80.0, 0.0, 140.0);
        let p = project_truncated_cone(&f, &spec);
        assert_abs_diff_eq!(p.z, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.x, 50.0, epsilon = 1e-12);
        // Swing cone maps everything to zero.
        assert_eq!(
            project_truncated_cone(&Vector3::new(3.0, -2.0, 9.0), &ConeSpec::swing()),
            Vector3::zeros()
        );
    }

    fn default_feet() -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.19, 0.125, -0.31),
            Vector3::new(0.19, -0.125, -0.31),
            Vector3::new(-0.19, 0.125, -0.31),
            Vector3::new(-0.19, -0.125, -0.31),
        ]
    }

    #[test]
    fn gpgd_fixed_point_at_interior_mpc_force() {
        let mut f_mpc = InputVec::zeros();
        for leg in 0..4 {
            f_mpc[3 * leg + 2] = 36.0;
            f_mpc[3 * leg] = 2.0;
        }
        let qp = ReactiveQp {
            wrench_map: base_wrench_map(&default_feet()),
            tau_b: Wrench::zeros(),
            s1_diag: SVector::zeros(),
            w_diag: SVector::zeros(),
            v_diag: SVector::from_element(1.0),
            f_mpc,
            cones: [ConeSpec::stance(0.5, 2.0, 220.0); 4],
        };
        let sol = solve_reactive_qp(&qp, None, 100, 1e-9);
        assert!(sol.converged);
        assert!((sol.forces - f_mpc).abs().max() < 1e-9);
    }

    #[test]
    fn gpgd_distributes_gravity_wrench() {
        let m = 15.0;
        let mut tau = Wrench::zeros();
        tau[2] = m * 9.81;
        let qp = ReactiveQp {
            wrench_map: base_wrench_map(&default_feet()),
            tau_b: tau,
            s1_diag: SVector::from_element(1e4),
            w_diag: SVector::from_element(1e-3),
            v_diag: SVector::from_element(1.0),
            f_mpc: MpcGravity::distribution(m),
            cones: [ConeSpec::stance(0.5, 2.0, 220.0); 4],
        };
        let sol = solve_reactive_qp(&qp, None, 5000, 1e-8);
        for leg in 0..4 {
            assert!(
                (sol.forces[3 * leg + 2] - 36.7875).abs() < 0.1,
                "Fz = {}",
                sol.forces[3 * leg + 2]
            );
        }
    }

    struct MpcGravity;
    impl MpcGravity {
        fn distribution(mass: f64) -> InputVec {
            let mut u = InputVec::zeros();
            for leg in 0..4 {
                u[3 * leg + 2] = mass * 9.81 / 4.0;
            }
            u
        }
    }

    #[test]
    fn gpgd_saturates_on_cone_boundary() {
        // Demand far more lateral force than the friction cone allows.
        let mut tau = Wrench::zeros();
        tau[0] = 500.0;
        tau[2] = 15.0 * 9.81;
        let cones = [ConeSpec::stance(0.5, 2.0, 120.0); 4];
        let qp = ReactiveQp {
            wrench_map: base_wrench_map(&default_feet()),
            tau_b: tau,
            s1_diag: SVector::from_element(1e4),
            w_diag: SVector::from_element(1e-3),
            v_diag: SVector::from_element(1e-2),
            f_mpc: MpcGravity::distribution(15.0),
            cones,
        };
        let sol = solve_reactive_qp(&qp, None, 20000, 1e-10);
        let mut on_boundary = 0;
        for leg in 0..4 {
            let f = sol.forces.fixed_rows::<3>(3 * leg).into_owned();
            assert!(cones[leg].contains(&f, 1e-9));
            let slack = cones[leg].mu * f.z - f.xy().norm();
            if slack < 1e-6 {
                on_boundary += 1;
            }
        }
        assert!(on_boundary > 0, "expected at least one saturated cone");
    }

    #[test]
    fn gpgd_objective_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let mut tau = Wrench::zeros();
            for i in 0..6 {
                tau[i] = rng.random_range(-40.0..40.0);
            }
            tau[2] += 150.0;
            let cones = [
                ConeSpec::stance(0.5, 2.0, 180.0),
                ConeSpec::stance(0.5, 2.0, 180.0),
                ConeSpec::swing(),
                ConeSpec::stance(0.5, 2.0, 180.0),
            ];
            let qp = ReactiveQp {
                wrench_map: base_wrench_map(&default_feet()),
                tau_b: tau,
                s1_diag: SVector::from_element(10.0),
                w_diag: SVector::from_element(1e-2),
                v_diag: SVector::from_element(1.0),
                f_mpc: MpcGravity::distribution(15.0),
                cones,
            };
            // Manual iteration to watch the objective.
            let l = qp.lipschitz();
            let step = 1.0 / l;
            let mut f = InputVec::zeros();
            for leg in 0..4 {
                f[3 * leg + 2] = if qp.cones[leg].active { 40.0 } else { 0.0 };
            }
            let mut prev = qp.objective(&f);
            for _ in 0..300 {
                let g = qp.gradient(&f);
                let mut next = f - step * g;
                for leg in 0..4 {
                    let p = project_truncated_cone(
                        &next.fixed_rows::<3>(3 * leg).into_owned(),
                        &qp.cones[leg],
                    );
                    next.fixed_rows_mut::<3>(3 * leg).copy_from(&p);
                }
                let cost = qp.objective(&next);
                assert!(cost <= prev + 1e-9, "objective increased: {prev} -> {cost}");
                for leg in 0..4 {
                    assert!(qp.cones[leg]
                        .contains(&next.fixed_rows::<3>(3 * leg).into_owned(), 1e-9));
                }
                prev = cost;
                f = next;
            }
        }
    }

    #[test]
    fn torque_mapping_stance_and_swing() {
        let m = model();
        let mut q = GenVec::zeros();
        q[2] = 0.31;
        for leg in 0..4 {
            q[7 + 3 * leg] = 0.75;
            q[8 + 3 * leg] = -1.5;
        }
        let qdot = GenVec::zeros();

        // Zero commanded stance force gives zero torque on that leg.
        let commands = [
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
            LegCommand::Stance {
                force: Vector3::new(0.0, 0.0, 36.8),
            },
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
        ];
        let (tau, events) = map_to_torques(&commands, &q, &qdot, &m, &SwingGains::default());
        assert_eq!(events, 0);
        // Zero commanded force leaves exactly the leg gravity compensation.
        let grav = m.gravity_vector(&q).unwrap();
        assert!((tau.fixed_rows::<3>(0) - grav.fixed_rows::<3>(6)).norm() < 1e-12);
        assert!((tau.fixed_rows::<3>(3) - grav.fixed_rows::<3>(9)).norm() > 0.1);

        // Swing leg with zero tracking error: gravity compensation only.
        let chi = m.forward_kinematics(&q).unwrap();
        let foot = chi.fixed_rows::<3>(6).into_owned();
        let commands = [
            LegCommand::Swing {
                pos_des: foot,
                vel_des: Vector3::zeros(),
            },
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
            LegCommand::Stance {
                force: Vector3::zeros(),
            },
        ];
        let (tau, _) = map_to_torques(&commands, &q, &qdot, &m, &SwingGains::default());
        let grav2 = m.gravity_vector(&q).unwrap();
        assert!((tau.fixed_rows::<3>(0) - grav2.fixed_rows::<3>(6)).norm() < 1e-9);
    }
}
