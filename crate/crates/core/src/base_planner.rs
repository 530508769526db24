//! Base motion generation: one horizontal acceleration command composed from
//! user-command tracking, admittance compliance, and CBF collision avoidance,
//! integrated into an acceleration-limited reference trajectory.
//!
//! Frames: the admittance law and the CBF act in the body-yaw frame B; the
//! reference trajectory is integrated in the global frame.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::LowPassFilter2;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("admittance gain inputs must be strictly positive")]
    NonPositiveGainInput,
    #[error("integration step must be in (0, 0.1] s, got {0}")]
    InvalidTimestep(f64),
}

/// Admittance gains derived from the trajectory limits:
/// `K_f = a_max / F_max`, `K_b = a_max / v_max` (componentwise, scalar F_max).
#[derive(Debug, Clone, Copy)]
pub struct AdmittanceGains {
    /// 1/s, per horizontal axis.
    pub k_b: Vector2<f64>,
    /// (m/s²)/N, per horizontal axis.
    pub k_f: Vector2<f64>,
    /// m/s², per horizontal axis.
    pub a_max: Vector2<f64>,
    /// m/s, per horizontal axis.
    pub v_max: Vector2<f64>,
    /// Theoretical maximum estimated horizontal force, N.
    pub f_max: f64,
}

pub fn compute_gains(
    a_max: Vector2<f64>,
    v_max: Vector2<f64>,
    f_max: f64,
) -> Result<AdmittanceGains, PlannerError> {
    if !(f_max > 0.0) || a_max.iter().any(|v| *v <= 0.0) || v_max.iter().any(|v| *v <= 0.0) {
        return Err(PlannerError::NonPositiveGainInput);
    }
    Ok(AdmittanceGains {
        k_b: a_max.component_div(&v_max),
        k_f: a_max / f_max,
        a_max,
        v_max,
        f_max,
    })
}

/// Unsaturated commanded acceleration in frame B:
/// `r̈' = K_b·(v_cmd − ṙ_prev) + K_f·F̂`.
pub fn admittance_acceleration(
    v_cmd: Vector2<f64>,
    rdot_d_prev: Vector2<f64>,
    f_b_xy_hat: Vector2<f64>,
    gains: &AdmittanceGains,
) -> Vector2<f64> {
    gains.k_b.component_mul(&(v_cmd - rdot_d_prev)) + gains.k_f.component_mul(&f_b_xy_hat)
}

/// CBF parameters. Safe-set sign convention: the scalar obstacle coordinate
/// `r_b` is the negated Euclidean distance, so it is negative at safe
/// separation and the barrier `h = −r_b − δ − T_h·v_b ≥ 0` holds verbatim.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CbfParams {
    /// Class-K gain, 1/s.
    pub alpha: f64,
    /// Look-ahead time for deceleration, s.
    pub t_h: f64,
    /// Minimum separation, m.
    pub delta: f64,
    /// Deceleration capability used inside the barrier, m/s².
    pub a_max: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            alpha: 500.0,
            t_h: 0.5,
            delta: 0.3,
            a_max: 1.0,
        }
    }
}

/// Nearest-obstacle observation in the base frame.
#[derive(Debug, Clone, Copy)]
pub struct ObstacleObservation {
    /// Nearest surviving point, base-frame xy, m.
    pub nearest_point: Vector2<f64>,
    /// Unit vector from the base toward the nearest point.
    pub o_hat: Vector2<f64>,
    /// Signed obstacle coordinate: −distance (≤ 0 when not penetrating).
    pub r_b_signed: f64,
    /// Rate of `r_b_signed`, m/s (positive while approaching).
    pub v_b: f64,
    pub valid: bool,
}

impl ObstacleObservation {
    pub fn invalid() -> Self {
        Self {
            nearest_point: Vector2::zeros(),
            o_hat: Vector2::zeros(),
            r_b_signed: 0.0,
            v_b: 0.0,
            valid: false,
        }
    }
}

/// Axis-aligned crop box in the base frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CropBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl CropBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x[0]
            && p.x <= self.x[1]
            && p.y >= self.y[0]
            && p.y <= self.y[1]
            && p.z >= self.z[0]
            && p.z <= self.z[1]
    }
}

impl Default for CropBox {
    fn default() -> Self {
        Self {
            x: [0.1, 1.5],
            y: [-0.75, 0.75],
            z: [-0.4, 1.0],
        }
    }
}

/// Crop the cloud and return the xy-nearest surviving point to the base
/// origin (k = 1 nearest-neighbor by linear scan).
pub fn nearest_point_in_box(
    point_cloud: &[Vector3<f64>],
    crop: &CropBox,
) -> Option<(Vector2<f64>, f64)> {
    let mut best: Option<(Vector2<f64>, f64)> = None;
    for p in point_cloud {
        if !crop.contains(p) {
            continue;
        }
        let xy = Vector2::new(p.x, p.y);
        let d = xy.norm();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((xy, d));
        }
    }
    best
}

/// Stateful nearest-obstacle tracker: crops the cloud, finds the nearest
/// point, and differentiates `r_b_signed` through the same second-order
/// low-pass used for proprioceptive signals to produce `v_b`.
#[derive(Debug, Clone)]
pub struct ObstacleTracker {
    pub crop: CropBox,
    v_filter: LowPassFilter2,
    prev_r: Option<f64>,
    dt: f64,
}

impl ObstacleTracker {
    pub fn new(crop: CropBox, sample_hz: f64) -> Self {
        Self {
            crop,
            v_filter: LowPassFilter2::new(15.0, sample_hz, 1).expect("cutoff below Nyquist"),
            prev_r: None,
            dt: 1.0 / sample_hz,
        }
    }

    pub fn observe(&mut self, point_cloud: &[Vector3<f64>]) -> ObstacleObservation {
        match nearest_point_in_box(point_cloud, &self.crop) {
            Some((xy, dist)) if dist > 1e-9 => {
                let r_signed = -dist;
                let raw_v = match self.prev_r {
                    Some(prev) => (r_signed - prev) / self.dt,
                    None => 0.0,
                };
                self.prev_r = Some(r_signed);
                let v_b = self.v_filter.step_scalar(raw_v);
                ObstacleObservation {
                    nearest_point: xy,
                    o_hat: xy / dist,
                    r_b_signed: r_signed,
                    v_b,
                    valid: true,
                }
            }
            _ => {
                self.prev_r = None;
                self.v_filter.reset();
                ObstacleObservation::invalid()
            }
        }
    }
}

/// Closed-form CBF-QP output.
#[derive(Debug, Clone, Copy)]
pub struct CbfOutput {
    /// Optimal corrective acceleration along ô (≤ 0 when active), m/s².
    pub a_star: f64,
    /// Barrier value H.
    pub h: f64,
    /// Constraint value at zero input, Γ = L_fH + αH.
    pub gamma: f64,
    /// Set when the Lie derivative denominator vanished with Γ < 0.
    pub degenerate: bool,
}

impl CbfOutput {
    fn inactive() -> Self {
        Self {
            a_star: 0.0,
            h: 0.0,
            gamma: 0.0,
            degenerate: false,
        }
    }
}

/// Closed-form solution of the CBF-QP along the obstacle direction.
///
/// `H = −r_b − δ − T_h·v_b − ½v_b²/a_max`, `Γ = −v_b + αH`,
/// `a* = 0` if `Γ ≥ 0`, else `−Γ / L_gH` with `L_gH = −T_h − v_b/a_max`.
pub fn cbf_accel(obs: &ObstacleObservation, params: &CbfParams) -> CbfOutput {
    if !obs.valid {
        return CbfOutput::inactive();
    }
    let h = -obs.r_b_signed - params.delta - params.t_h * obs.v_b
        - 0.5 * obs.v_b * obs.v_b / params.a_max;
    let gamma = -obs.v_b + params.alpha * h;
    if gamma >= 0.0 {
        return CbfOutput {
            a_star: 0.0,
            h,
            gamma,
            degenerate: false,
        };
    }
    let lg_h = -params.t_h - obs.v_b / params.a_max;
    if lg_h.abs() < 1e-12 {
        return CbfOutput {
            a_star: -params.a_max,
            h,
            gamma,
            degenerate: true,
        };
    }
    CbfOutput {
        a_star: -gamma / lg_h,
        h,
        gamma,
        degenerate: false,
    }
}

/// Final base acceleration: `r̈″ = r̈′ + a*·ô`, clamped componentwise.
pub fn compose_acceleration(
    admittance_acc: Vector2<f64>,
    a_star: f64,
    o_hat: Vector2<f64>,
    a_max: Vector2<f64>,
) -> Vector2<f64> {
    let raw = admittance_acc + a_star * o_hat;
    Vector2::new(
        raw.x.clamp(-a_max.x, a_max.x),
        raw.y.clamp(-a_max.y, a_max.y),
    )
}

/// Desired base trajectory state.
#[derive(Debug, Clone, Copy)]
pub struct BaseReference {
    /// Desired base position, global xy, m.
    pub r_d: Vector2<f64>,
    /// Desired base velocity, global xy, m/s.
    pub rdot_d: Vector2<f64>,
    /// Last applied acceleration, global xy, m/s².
    pub rddot_d: Vector2<f64>,
    pub yaw_d: f64,
    pub yawrate_d: f64,
    /// Desired base height, m (owned by gait adaptation).
    pub z_d: f64,
}

impl BaseReference {
    pub fn at_rest(r_d: Vector2<f64>, yaw_d: f64, z_d: f64) -> Self {
        Self {
            r_d,
            rdot_d: Vector2::zeros(),
            rddot_d: Vector2::zeros(),
            yaw_d,
            yawrate_d: 0.0,
            z_d,
        }
    }
}

pub fn rot2(angle: f64) -> nalgebra::Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

/// Acceleration-limited trajectory update: rotate the frame-B acceleration
/// into the global frame by `yaw`, clamp the velocity, and integrate
/// `r += ṙΔt + ½r̈Δt²`. The yaw channel tracks the commanded rate through a
/// first-order smoother (time constant 0.2 s).
pub fn integrate_base_reference(
    reference: &BaseReference,
    acc_b: Vector2<f64>,
    yaw_rate_cmd: f64,
    dt: f64,
    yaw: f64,
    v_max: Vector2<f64>,
) -> Result<BaseReference, PlannerError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(PlannerError::InvalidTimestep(dt));
    }
    let acc_g = rot2(yaw) * acc_b;
    let vel = reference.rdot_d + acc_g * dt;
    let vel = Vector2::new(
        vel.x.clamp(-v_max.x, v_max.x),
        vel.y.clamp(-v_max.y, v_max.y),
    );
    let r_d = reference.r_d + vel * dt + 0.5 * acc_g * dt * dt;
    let tau_yaw = 0.2;
    let yawrate_d = reference.yawrate_d + (dt / tau_yaw) * (yaw_rate_cmd - reference.yawrate_d);
    Ok(BaseReference {
        r_d,
        rdot_d: vel,
        rddot_d: acc_g,
        yaw_d: reference.yaw_d + yawrate_d * dt,
        yawrate_d,
        z_d: reference.z_d,
    })
}

/// Planner state machine advanced once per control tick.
#[derive(Debug, Clone)]
pub struct BasePlanner {
    pub gains: AdmittanceGains,
    pub cbf: CbfParams,
    pub reference: BaseReference,
    pub tracker: ObstacleTracker,
    /// Degenerate-denominator CBF events observed so far.
    pub degenerate_events: u64,
    pub last_cbf: CbfOutput,
    pub last_obstacle: ObstacleObservation,
}

impl BasePlanner {
    pub fn new(
        gains: AdmittanceGains,
        cbf: CbfParams,
        crop: CropBox,
        reference: BaseReference,
        sample_hz: f64,
    ) -> Self {
        Self {
            gains,
            cbf,
            reference,
            tracker: ObstacleTracker::new(crop, sample_hz),
            degenerate_events: 0,
            last_cbf: CbfOutput::inactive(),
            last_obstacle: ObstacleObservation::invalid(),
        }
    }

    /// Replace the admittance force ceiling (adaptive `F_max`).
    pub fn set_f_max(&mut self, f_max: f64) {
        if f_max > 0.0 {
            self.gains =
                compute_gains(self.gains.a_max, self.gains.v_max, f_max).expect("positive inputs");
        }
    }

    /// Advance the reference by one control period.
    ///
    /// `f_b_xy_global` is the estimated horizontal base force in the global
    /// frame; `point_cloud` is expressed in the base frame.
    pub fn update(
        &mut self,
        v_cmd_b: Vector2<f64>,
        yaw_rate_cmd: f64,
        f_b_xy_global: Vector2<f64>,
        yaw: f64,
        point_cloud: &[Vector3<f64>],
        dt: f64,
    ) -> Result<&BaseReference, PlannerError> {
        let to_b = rot2(-yaw);
        let f_b = to_b * f_b_xy_global;
        let rdot_prev_b = to_b * self.reference.rdot_d;
        let acc_admittance = admittance_acceleration(v_cmd_b, rdot_prev_b, f_b, &self.gains);

        let obs = self.tracker.observe(point_cloud);
        let cbf_out = cbf_accel(&obs, &self.cbf);
        if cbf_out.degenerate {
            self.degenerate_events += 1;
        }
        self.last_cbf = cbf_out;
        self.last_obstacle = obs;
        let acc_b =
            compose_acceleration(acc_admittance, cbf_out.a_star, obs.o_hat, self.gains.a_max);
        self.reference = integrate_base_reference(
            &self.reference,
            acc_b,
            yaw_rate_cmd,
            dt,
            yaw,
            self.gains.v_max,
        )?;
        Ok(&self.reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gains_from_limits() {
        let g = compute_gains(Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0), 100.0).unwrap();
        assert_abs_diff_eq!(g.k_f.x, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(g.k_b.x, 1.0, epsilon = 1e-12);
        let g = compute_gains(Vector2::new(0.5, 0.5), Vector2::new(0.25, 0.25), 50.0).unwrap();
        assert_abs_diff_eq!(g.k_f.x, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(g.k_b.x, 2.0, epsilon = 1e-12);
        assert!(compute_gains(Vector2::new(1.0, 1.0), Vector2::new(0.0, 1.0), 10.0).is_err());
        assert!(compute_gains(Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn admittance_law_values() {
        let g = compute_gains(Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0), 100.0).unwrap();
        let a = admittance_acceleration(
            Vector2::zeros(),
            Vector2::zeros(),
            Vector2::new(20.0, 0.0),
            &g,
        );
        assert_abs_diff_eq!(a, Vector2::new(0.2, 0.0), epsilon = 1e-12);

        let a = admittance_acceleration(
            Vector2::new(0.5, 0.0),
            Vector2::new(0.5, 0.0),
            Vector2::zeros(),
            &g,
        );
        assert_abs_diff_eq!(a, Vector2::zeros(), epsilon = 1e-12);

        let a = admittance_acceleration(
            Vector2::new(0.5, 0.0),
            Vector2::new(0.3, 0.0),
            Vector2::new(10.0, 0.0),
            &g,
        );
        assert_abs_diff_eq!(a, Vector2::new(0.3, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn nearest_point_hand_geometry() {
        let crop = CropBox {
            x: [0.1, 2.0],
            y: [-1.0, 1.0],
            z: [0.0, 1.0],
        };
        let cloud = vec![Vector3::new(1.0, 0.0, 0.2), Vector3::new(0.5, 0.1, 0.1)];
        let (xy, d) = nearest_point_in_box(&cloud, &crop).unwrap();
        assert_abs_diff_eq!(xy, Vector2::new(0.5, 0.1), epsilon = 1e-12);
        assert_abs_diff_eq!(d, 0.50990195, epsilon = 1e-6);
        let o_hat = xy / d;
        assert_abs_diff_eq!(o_hat.x, 0.980581, epsilon = 1e-5);
        assert_abs_diff_eq!(o_hat.y, 0.196116, epsilon = 1e-5);
    }

    #[test]
    fn points_behind_robot_are_cropped() {
        let crop = CropBox::default();
        let cloud = vec![Vector3::new(-0.5, 0.0, 0.1), Vector3::new(-1.2, 0.3, 0.2)];
        assert!(nearest_point_in_box(&cloud, &crop).is_none());
        let mut tracker = ObstacleTracker::new(crop, 500.0);
        assert!(!tracker.observe(&cloud).valid);
    }

    #[test]
    fn single_point_distance() {
        let crop = CropBox::default();
        let cloud = vec![Vector3::new(0.3, 0.0, 0.0)];
        let mut tracker = ObstacleTracker::new(crop, 500.0);
        let obs = tracker.observe(&cloud);
        assert!(obs.valid);
        assert_abs_diff_eq!(obs.r_b_signed, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(obs.o_hat, Vector2::new(1.0, 0.0), epsilon = 1e-12);
    }

    fn obs(r_b: f64, v_b: f64) -> ObstacleObservation {
        ObstacleObservation {
            nearest_point: Vector2::new(-r_b, 0.0),
            o_hat: Vector2::new(1.0, 0.0),
            r_b_signed: r_b,
            v_b,
            valid: true,
        }
    }

    #[test]
    fn cbf_inactive_when_safe() {
        let p = CbfParams::default();
        let out = cbf_accel(&obs(-1.0, 0.0), &p);
        assert_abs_diff_eq!(out.h, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(out.gamma, 350.0, epsilon = 1e-9);
        assert_eq!(out.a_star, 0.0);
    }

    #[test]
    fn cbf_brakes_when_approaching() {
        let p = CbfParams::default();
        let out = cbf_accel(&obs(-0.5, 0.4), &p);
        assert_abs_diff_eq!(out.h, -0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(out.gamma, -40.4, epsilon = 1e-9);
        assert_abs_diff_eq!(out.a_star, -40.4 / 0.9, epsilon = 1e-9);
    }

    #[test]
    fn cbf_inactive_when_receding() {
        let p = CbfParams::default();
        let out = cbf_accel(&obs(-0.35, -0.2), &p);
        assert_abs_diff_eq!(out.h, 0.13, epsilon = 1e-12);
        assert_abs_diff_eq!(out.gamma, 65.2, epsilon = 1e-9);
        assert_eq!(out.a_star, 0.0);
    }

    #[test]
    fn cbf_degenerate_denominator_falls_back() {
        let p = CbfParams::default();
        // v_b = −T_h·a_max makes L_gH vanish; pick r_b so Γ < 0.
        let out = cbf_accel(&obs(0.5, -p.t_h * p.a_max), &p);
        assert!(out.gamma < 0.0);
        assert!(out.degenerate);
        assert_abs_diff_eq!(out.a_star, -p.a_max, epsilon = 1e-12);
    }

    /// Whenever Γ < 0, the returned a* restores Ḣ + αH ≥ 0.
    #[test]
    fn cbf_forward_invariance_surrogate() {
        let p = CbfParams::default();
        for r in [-2.0, -0.8, -0.5, -0.35, -0.31] {
            for v in [-0.5, -0.1, 0.05, 0.2, 0.4, 0.8] {
                let o = obs(r, v);
                let out = cbf_accel(&o, &p);
                if out.gamma < 0.0 && !out.degenerate {
                    let lg_h = -p.t_h - v / p.a_max;
                    let h_dot = -v + lg_h * out.a_star;
                    assert!(
                        h_dot + p.alpha * out.h >= -1e-9,
                        "r={r} v={v}: {}",
                        h_dot + p.alpha * out.h
                    );
                }
            }
        }
    }

    #[test]
    fn compose_and_clamp() {
        let a_max = Vector2::new(1.0, 1.0);
        let out = compose_acceleration(Vector2::new(0.2, 0.0), 0.0, Vector2::zeros(), a_max);
        assert_abs_diff_eq!(out, Vector2::new(0.2, 0.0), epsilon = 1e-12);

        let out = compose_acceleration(
            Vector2::new(0.5, 0.0),
            -44.9,
            Vector2::new(1.0, 0.0),
            a_max,
        );
        assert_abs_diff_eq!(out, Vector2::new(-1.0, 0.0), epsilon = 1e-12);

        let out = compose_acceleration(
            Vector2::new(0.0, 0.3),
            -2.0,
            Vector2::new(0.707, 0.707),
            a_max,
        );
        assert_abs_diff_eq!(out, Vector2::new(-1.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn reference_integration_steps() {
        let mut r = BaseReference::at_rest(Vector2::zeros(), 0.0, 0.31);
        r.rdot_d = Vector2::new(0.9, 0.0);
        let v_max = Vector2::new(1.0, 1.0);
        let out =
            integrate_base_reference(&r, Vector2::new(1.0, 0.0), 0.0, 0.002, 0.0, v_max).unwrap();
        assert_abs_diff_eq!(out.rdot_d.x, 0.902, epsilon = 1e-12);
        assert_abs_diff_eq!(
            out.r_d.x,
            0.902 * 0.002 + 0.5 * 1.0 * 0.002 * 0.002,
            epsilon = 1e-12
        );

        let mut r2 = BaseReference::at_rest(Vector2::zeros(), 0.0, 0.31);
        r2.rdot_d = Vector2::new(1.0, 0.0);
        let out2 =
            integrate_base_reference(&r2, Vector2::new(1.0, 0.0), 0.0, 0.002, 0.0, v_max).unwrap();
        assert_abs_diff_eq!(out2.rdot_d.x, 1.0, epsilon = 1e-12);

        // Frame rotation: a body-frame +x acceleration at yaw = π/2 is global +y.
        let r3 = BaseReference::at_rest(Vector2::zeros(), 0.0, 0.31);
        let out3 = integrate_base_reference(
            &r3,
            Vector2::new(1.0, 0.0),
            0.0,
            0.002,
            std::f64::consts::FRAC_PI_2,
            v_max,
        )
        .unwrap();
        assert_abs_diff_eq!(out3.rddot_d, Vector2::new(0.0, 1.0), epsilon = 1e-12);

        assert!(integrate_base_reference(&r3, Vector2::zeros(), 0.0, 0.0, 0.0, v_max).is_err());
        assert!(integrate_base_reference(&r3, Vector2::zeros(), 0.0, 0.2, 0.0, v_max).is_err());
    }

    /// Discrete recursion reaches the analytic steady state
    /// v_ss = v_max·F/F_max within 2% after 5/K_b seconds, and the peak
    /// acceleration is K_f·F at the first step.
    #[test]
    fn first_order_response_matches_analytic_solution() {
        let g = compute_gains(Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0), 100.0).unwrap();
        let force = Vector2::new(50.0, 0.0);
        let dt = 0.002;
        let mut reference = BaseReference::at_rest(Vector2::zeros(), 0.0, 0.31);
        let mut peak_acc: f64 = 0.0;
        let steps = (5.0 / g.k_b.x / dt).ceil() as usize;
        for _ in 0..steps {
            let acc = admittance_acceleration(Vector2::zeros(), reference.rdot_d, force, &g);
            peak_acc = peak_acc.max(acc.x.abs());
            reference = integrate_base_reference(&reference, acc, 0.0, dt, 0.0, g.v_max).unwrap();
        }
        let v_ss = g.v_max.x * force.x / g.f_max;
        assert!(
            (reference.rdot_d.x - v_ss).abs() / v_ss < 0.02,
            "v = {} vs v_ss = {v_ss}",
            reference.rdot_d.x
        );
        assert!((peak_acc - g.k_f.x * force.x).abs() / (g.k_f.x * force.x) < 0.01);
    }

    proptest! {
        /// Clamp postcondition: reference velocity/acceleration never exceed
        /// the configured limits componentwise.
        #[test]
        fn reference_respects_limits(
            vx in -3.0..3.0f64, vy in -3.0..3.0f64,
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            astar in -100.0..0.0f64, yaw in -3.14..3.14f64,
        ) {
            let a_max = Vector2::new(1.0, 0.8);
            let v_max = Vector2::new(1.2, 0.6);
            let acc = compose_acceleration(
                Vector2::new(ax, ay), astar, Vector2::new(yaw.cos(), yaw.sin()), a_max);
            prop_assert!(acc.x.abs() <= a_max.x + 1e-12);
            prop_assert!(acc.y.abs() <= a_max.y + 1e-12);
            let mut r = BaseReference::at_rest(Vector2::zeros(), 0.0, 0.3);
            r.rdot_d = Vector2::new(vx.clamp(-1.2, 1.2), vy.clamp(-0.6, 0.6));
            let out = integrate_base_reference(&r, acc, 0.0, 0.002, yaw, v_max).unwrap();
            prop_assert!(out.rdot_d.x.abs() <= v_max.x + 1e-12);
            prop_assert!(out.rdot_d.y.abs() <= v_max.y + 1e-12);
        }
    }
}
