//! Gait scheduling, the time-averaged stability polygon (TAPS), gait
//! frequency / base height adaptation, footstep targeting, and swing
//! trajectories.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::ScheduledContact;
use crate::model::NUM_LEGS;

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("gait period must be positive, got {0}")]
    NonPositivePeriod(f64),
}

/// Periodic gait schedule. A leg is in stance while its leg-local phase is
/// below the stance fraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaitSchedule {
    /// Gait period, s.
    pub t_g: f64,
    /// Stance fraction in (0, 1].
    pub phi_st: f64,
    /// Per-leg phase offsets in [0, 1), leg order FL, FR, RL, RR.
    pub phase_offset: [f64; NUM_LEGS],
    /// Global gait phase in [0, 1).
    pub phase: f64,
}

impl GaitSchedule {
    /// Trot: diagonal pairs, half-period offset, 50% stance.
    pub fn trot(t_g: f64) -> Self {
        Self {
            t_g,
            phi_st: 0.5,
            phase_offset: [0.0, 0.5, 0.5, 0.0],
            phase: 0.0,
        }
    }

    pub fn advance(&mut self, dt: f64) -> Result<(), GaitError> {
        if !(self.t_g > 0.0) {
            return Err(GaitError::NonPositivePeriod(self.t_g));
        }
        assert!(dt >= 0.0, "time step must be non-negative");
        self.phase = (self.phase + dt / self.t_g).rem_euclid(1.0);
        Ok(())
    }

    pub fn leg_phase(&self, leg: usize) -> f64 {
        (self.phase + self.phase_offset[leg]).rem_euclid(1.0)
    }

    pub fn in_stance(&self, leg: usize) -> bool {
        self.leg_phase(leg) < self.phi_st
    }

    /// Progress through the current stance interval, [0, 1).
    pub fn stance_progress(&self, leg: usize) -> f64 {
        self.leg_phase(leg) / self.phi_st
    }

    /// Progress through the current swing interval, [0, 1).
    pub fn swing_progress(&self, leg: usize) -> f64 {
        if self.phi_st >= 1.0 {
            return 0.0;
        }
        ((self.leg_phase(leg) - self.phi_st) / (1.0 - self.phi_st)).clamp(0.0, 1.0)
    }

    pub fn swing_duration(&self) -> f64 {
        self.t_g * (1.0 - self.phi_st)
    }

    pub fn scheduled_contact(&self) -> ScheduledContact {
        let mut stance = [false; NUM_LEGS];
        let mut leg_phase = [0.0; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            stance[leg] = self.in_stance(leg);
            leg_phase[leg] = self.leg_phase(leg);
        }
        ScheduledContact {
            stance,
            leg_phase,
            stance_fraction: self.phi_st,
        }
    }

    /// Scheduled stance flags over a prediction horizon, assuming the period
    /// stays constant.
    pub fn contact_horizon(&self, nodes: usize, dt: f64) -> Vec<[bool; NUM_LEGS]> {
        (0..nodes)
            .map(|j| {
                let phase = (self.phase + j as f64 * dt / self.t_g).rem_euclid(1.0);
                let mut stance = [false; NUM_LEGS];
                for leg in 0..NUM_LEGS {
                    stance[leg] =
                        (phase + self.phase_offset[leg]).rem_euclid(1.0) < self.phi_st;
                }
                stance
            })
            .collect()
    }
}

/// Time-Averaged Polygon for Stability: foot positions relative to the base,
/// scaled by the stance fraction.
#[derive(Debug, Clone, Copy)]
pub struct TapsPolygon {
    pub vertices: [Vector2<f64>; NUM_LEGS],
}

/// `ξ_i = φ_st · r̂_p_i` with foot positions expressed relative to the base xy.
pub fn taps_vertices(feet_xy_rel_base: &[Vector2<f64>; NUM_LEGS], phi_st: f64) -> TapsPolygon {
    assert!(phi_st > 0.0 && phi_st <= 1.0, "stance fraction in (0, 1]");
    TapsPolygon {
        vertices: [
            phi_st * feet_xy_rel_base[0],
            phi_st * feet_xy_rel_base[1],
            phi_st * feet_xy_rel_base[2],
            phi_st * feet_xy_rel_base[3],
        ],
    }
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain, CCW order. Handles duplicates and
/// collinear inputs (may return fewer than 3 points).
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let chain = |iter: &mut dyn Iterator<Item = &Vector2<f64>>| {
        let mut half: Vec<Vector2<f64>> = Vec::new();
        for p in iter {
            while half.len() >= 2
                && cross2(&half[half.len() - 2], &half[half.len() - 1], p) <= 1e-12
            {
                half.pop();
            }
            half.push(*p);
        }
        half.pop();
        half
    };
    let mut hull = chain(&mut pts.iter());
    hull.extend(chain(&mut pts.iter().rev()));
    hull
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-24 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

/// Signed distance from `base_xy` to the convex hull of the TAPS vertices:
/// positive inside, negative outside, zero on the boundary. Degenerate hulls
/// (collinear feet) yield the negated distance to the segment.
pub fn stability_margin(poly: &TapsPolygon, base_xy: Vector2<f64>) -> f64 {
    let hull = convex_hull(&poly.vertices);
    match hull.len() {
        0 => 0.0,
        1 => -(base_xy - hull[0]).norm(),
        2 => -point_segment_distance(&base_xy, &hull[0], &hull[1]),
        n => {
            let mut inside = true;
            let mut min_dist = f64::INFINITY;
            for i in 0..n {
                let a = hull[i];
                let b = hull[(i + 1) % n];
                if cross2(&a, &b, &base_xy) < 0.0 {
                    inside = false;
                }
                min_dist = min_dist.min(point_segment_distance(&base_xy, &a, &b));
            }
            if inside {
                min_dist
            } else {
                -min_dist
            }
        }
    }
}

/// Gait frequency and base height adaptation parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdaptationParams {
    /// Margin below which the gait goes to its slowest, lowest setting, m.
    pub h_min: f64,
    /// Nominal margin, m.
    pub h_nom: f64,
    /// Gait period growth rate when destabilized, s/s.
    pub eta_plus: f64,
    /// Gait period recovery rate, s/s.
    pub eta_minus: f64,
    /// Base height recovery rate, m/s.
    pub gamma_plus: f64,
    /// Base height drop rate when destabilized, m/s.
    pub gamma_minus: f64,
    /// [t_g_min, t_g_max], s.
    pub t_g_bounds: [f64; 2],
    /// [z_min, z_nom], m.
    pub z_bounds: [f64; 2],
    /// Leg-extension proximity flag: true when any stance leg exceeds 92% of
    /// its kinematic reach. Updated by the caller each tick.
    pub d_limit: bool,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        Self {
            h_min: 0.01,
            h_nom: 0.04,
            eta_plus: 0.2,
            eta_minus: 0.1,
            gamma_plus: 0.03,
            gamma_minus: 0.08,
            t_g_bounds: [0.35, 0.5],
            z_bounds: [0.24, 0.31],
            d_limit: false,
        }
    }
}

/// One step of the gait frequency and base height adaptation. Returns the
/// new `(t_g, z_d)`, clamped to the configured bounds.
pub fn adapt_motion(
    h: f64,
    t_g: f64,
    z_d: f64,
    params: &AdaptationParams,
    dt: f64,
) -> (f64, f64) {
    assert!(dt > 0.0);
    let (mut t_g, mut z_d) = if h < params.h_min {
        (params.t_g_bounds[1], params.z_bounds[0])
    } else if h < params.h_nom || params.d_limit {
        (t_g + params.eta_plus * dt, z_d - params.gamma_minus * dt)
    } else {
        (t_g - params.eta_minus * dt, z_d + params.gamma_plus * dt)
    };
    t_g = t_g.clamp(params.t_g_bounds[0], params.t_g_bounds[1]);
    z_d = z_d.clamp(params.z_bounds[0], params.z_bounds[1]);
    (t_g, z_d)
}

/// Footstep heuristic parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FootstepParams {
    /// Capture-point scaling coefficient.
    pub k_cp: f64,
    /// Velocity saturation box half-width, m/s.
    pub delta_v: f64,
    /// Swing apex height above the higher endpoint, m.
    pub step_height: f64,
}

impl Default for FootstepParams {
    fn default() -> Self {
        Self {
            k_cp: 1.0,
            delta_v: 0.4,
            step_height: 0.04,
        }
    }
}

/// Saturate the desired base velocity into a box of half-width `delta_v`
/// around the estimated velocity (componentwise min/max form).
pub fn saturate_desired_velocity(
    rdot_d: Vector2<f64>,
    rdot_hat: Vector2<f64>,
    delta_v: f64,
) -> Vector2<f64> {
    assert!(delta_v > 0.0);
    Vector2::new(
        rdot_d.x.clamp(rdot_hat.x - delta_v, rdot_hat.x + delta_v),
        rdot_d.y.clamp(rdot_hat.y - delta_v, rdot_hat.y + delta_v),
    )
}

/// Touchdown target for one foot:
/// `d = ½·ṙ̂_hip·φ_st·t_g + k_cp·√(r_h^z/‖g‖)·(ṙ̂_b − ṙ_b,d)`,
/// returned as `hip_pos_d^{xy} + d`.
pub fn footstep_target(
    hip_vel_hat: Vector2<f64>,
    hip_pos_d: Vector3<f64>,
    rdot_b_hat: Vector2<f64>,
    rdot_b_d: Vector2<f64>,
    phi_st: f64,
    t_g: f64,
    k_cp: f64,
    gravity_norm: f64,
) -> Vector2<f64> {
    assert!(phi_st > 0.0 && t_g > 0.0 && hip_pos_d.z > 0.0);
    let stance_travel = 0.5 * hip_vel_hat * phi_st * t_g;
    let capture = k_cp * (hip_pos_d.z / gravity_norm).sqrt() * (rdot_b_hat - rdot_b_d);
    Vector2::new(hip_pos_d.x, hip_pos_d.y) + stance_travel + capture
}

/// Swing foot trajectory: quintic xy with zero boundary velocity and
/// acceleration; z follows two chained cubics peaking `step_height` above
/// the higher endpoint at progress 0.5.
///
/// Returns the position and its derivative with respect to `progress`;
/// divide by the swing duration for a velocity in m/s.
pub fn swing_trajectory(
    liftoff: Vector3<f64>,
    target: Vector3<f64>,
    progress: f64,
    step_height: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let u = progress.clamp(0.0, 1.0);
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    let xy = liftoff.xy() + (target.xy() - liftoff.xy()) * s;
    let dxy = (target.xy() - liftoff.xy()) * ds;

    let apex = liftoff.z.max(target.z) + step_height;
    let (z, dz) = if u < 0.5 {
        let v = u / 0.5;
        let c = v * v * (3.0 - 2.0 * v);
        let dc = (6.0 * v - 6.0 * v * v) / 0.5;
        (liftoff.z + (apex - liftoff.z) * c, (apex - liftoff.z) * dc)
    } else {
        let v = (u - 0.5) / 0.5;
        let c = v * v * (3.0 - 2.0 * v);
        let dc = (6.0 * v - 6.0 * v * v) / 0.5;
        (apex + (target.z - apex) * c, (target.z - apex) * dc)
    };
    (
        Vector3::new(xy.x, xy.y, z),
        Vector3::new(dxy.x, dxy.y, dz),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trot_schedule_diagonal_pairs() {
        let sched = GaitSchedule::trot(0.4);
        assert!(sched.in_stance(0));
        assert!(!sched.in_stance(1));
        assert!(!sched.in_stance(2));
        assert!(sched.in_stance(3));
    }

    #[test]
    fn phase_wraps_over_full_period() {
        let mut sched = GaitSchedule::trot(0.4);
        sched.phase = 0.3;
        sched.advance(0.4).unwrap();
        assert_abs_diff_eq!(sched.phase, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn stance_to_swing_transition_at_threshold() {
        let mut sched = GaitSchedule::trot(0.4);
        sched.phase = 0.49;
        assert!(sched.in_stance(0) && sched.in_stance(3));
        sched.advance(0.02 * 0.4).unwrap();
        assert_abs_diff_eq!(sched.phase, 0.51, epsilon = 1e-12);
        assert!(!sched.in_stance(0) && !sched.in_stance(3));
        assert!(sched.in_stance(1) && sched.in_stance(2));
    }

    #[test]
    fn invalid_period_rejected() {
        let mut sched = GaitSchedule::trot(0.0);
        assert!(sched.advance(0.01).is_err());
    }

    #[test]
    fn taps_scaling() {
        let feet = [
            Vector2::new(0.2, 0.15),
            Vector2::new(0.2, -0.15),
            Vector2::new(-0.2, 0.15),
            Vector2::new(-0.2, -0.15),
        ];
        let poly = taps_vertices(&feet, 0.5);
        assert_abs_diff_eq!(poly.vertices[0], Vector2::new(0.1, 0.075), epsilon = 1e-12);
        let poly1 = taps_vertices(&feet, 1.0);
        assert_abs_diff_eq!(poly1.vertices[2], feet[2], epsilon = 1e-12);
        let poly_q = taps_vertices(&feet, 0.25);
        assert_abs_diff_eq!(
            poly_q.vertices[0],
            Vector2::new(0.05, 0.0375),
            epsilon = 1e-12
        );
    }

    #[test]
    fn margin_inside_outside_boundary() {
        let feet = [
            Vector2::new(0.2, 0.15),
            Vector2::new(0.2, -0.15),
            Vector2::new(-0.2, 0.15),
            Vector2::new(-0.2, -0.15),
        ];
        let poly = taps_vertices(&feet, 0.5); // rectangle ±0.1 × ±0.075
        assert_abs_diff_eq!(stability_margin(&poly, Vector2::zeros()), 0.075, epsilon = 1e-12);
        assert_abs_diff_eq!(
            stability_margin(&poly, Vector2::new(0.2, 0.0)),
            -0.1,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            stability_margin(&poly, Vector2::new(0.1, 0.0)),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn margin_degenerate_collinear_feet() {
        let poly = TapsPolygon {
            vertices: [
                Vector2::new(-0.1, 0.0),
                Vector2::new(0.0, 0.0),
                Vector2::new(0.1, 0.0),
                Vector2::new(0.05, 0.0),
            ],
        };
        let h = stability_margin(&poly, Vector2::new(0.0, 0.05));
        assert_abs_diff_eq!(h, -0.05, epsilon = 1e-12);
    }

    /// Brute-force oracle: min distance over densely sampled hull boundary,
    /// sign from a containment test using the same hull.
    fn margin_oracle(poly: &TapsPolygon, base: Vector2<f64>) -> f64 {
        let hull = convex_hull(&poly.vertices);
        if hull.len() < 3 {
            return match hull.len() {
                0 => 0.0,
                1 => -(base - hull[0]).norm(),
                _ => -point_segment_distance(&base, &hull[0], &hull[1]),
            };
        }
        let n_samples = 10_000;
        let perimeter: f64 = (0..hull.len())
            .map(|i| (hull[(i + 1) % hull.len()] - hull[i]).norm())
            .sum();
        let mut min_d = f64::INFINITY;
        for i in 0..hull.len() {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            let steps = ((b - a).norm() / perimeter * n_samples as f64).ceil() as usize + 1;
            for k in 0..=steps {
                let p = a + (b - a) * (k as f64 / steps as f64);
                min_d = min_d.min((base - p).norm());
            }
        }
        let inside = (0..hull.len()).all(|i| {
            cross2(&hull[i], &hull[(i + 1) % hull.len()], &base) >= 0.0
        });
        if inside {
            min_d
        } else {
            -min_d
        }
    }

    #[test]
    fn margin_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let feet = [
                Vector2::new(rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)),
                Vector2::new(rng.random_range(0.05..0.3), rng.random_range(-0.3..-0.05)),
                Vector2::new(rng.random_range(-0.3..-0.05), rng.random_range(0.05..0.3)),
                Vector2::new(rng.random_range(-0.3..-0.05), rng.random_range(-0.3..-0.05)),
            ];
            let poly = taps_vertices(&feet, rng.random_range(0.2..1.0));
            let base = Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let h = stability_margin(&poly, base);
            let oracle = margin_oracle(&poly, base);
            assert!(
                (h - oracle).abs() < 1e-4,
                "margin {h} vs oracle {oracle} for base {base:?}"
            );
        }
    }

    #[test]
    fn adaptation_branches() {
        let p = AdaptationParams {
            h_min: 0.01,
            h_nom: 0.04,
            eta_plus: 0.5,
            eta_minus: 0.1,
            gamma_plus: 0.02,
            gamma_minus: 0.05,
            t_g_bounds: [0.3, 0.6],
            z_bounds: [0.24, 0.31],
            d_limit: false,
        };
        let dt = 0.002;
        // Crisis branch pins both values.
        let (t_g, z_d) = adapt_motion(0.005, 0.4, 0.30, &p, dt);
        assert_abs_diff_eq!(t_g, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(z_d, 0.24, epsilon = 1e-12);
        // Marginal branch slows the gait and lowers the base.
        let (t_g, z_d) = adapt_motion(0.02, 0.4, 0.30, &p, dt);
        assert_abs_diff_eq!(t_g, 0.4 + 0.001, epsilon = 1e-12);
        assert_abs_diff_eq!(z_d, 0.30 - 0.05 * dt, epsilon = 1e-12);
        // Comfortable branch speeds up and raises, z clamped at nominal.
        let (t_g, z_d) = adapt_motion(0.08, 0.4, 0.31, &p, dt);
        assert_abs_diff_eq!(t_g, 0.4 - 0.1 * dt, epsilon = 1e-12);
        assert_abs_diff_eq!(z_d, 0.31, epsilon = 1e-12);
        // d_limit forces the marginal branch even at a comfortable margin.
        let p_lim = AdaptationParams { d_limit: true, ..p };
        let (t_g, _) = adapt_motion(0.08, 0.4, 0.30, &p_lim, dt);
        assert_abs_diff_eq!(t_g, 0.4 + 0.5 * dt, epsilon = 1e-12);
    }

    /// Larger margin never yields a larger gait period at the same state.
    #[test]
    fn adaptation_monotone_in_margin() {
        let p = AdaptationParams::default();
        let dt = 0.002;
        let hs: Vec<f64> = (0..200).map(|i| -0.02 + 0.001 * i as f64).collect();
        let mut prev_tg = f64::INFINITY;
        for &h in &hs {
            let (t_g, _) = adapt_motion(h, 0.45, 0.28, &p, dt);
            assert!(t_g <= prev_tg + 1e-12, "t_g increased with larger h");
            prev_tg = t_g;
        }
    }

    #[test]
    fn velocity_saturation_box() {
        let out = saturate_desired_velocity(
            Vector2::new(1.0, 0.0),
            Vector2::new(0.2, 0.0),
            0.3,
        );
        assert_abs_diff_eq!(out, Vector2::new(0.5, 0.0), epsilon = 1e-12);
        let out = saturate_desired_velocity(
            Vector2::new(0.25, 0.1),
            Vector2::new(0.2, 0.0),
            0.3,
        );
        assert_abs_diff_eq!(out, Vector2::new(0.25, 0.1), epsilon = 1e-12);
        let out = saturate_desired_velocity(Vector2::new(-1.0, 0.0), Vector2::zeros(), 0.3);
        assert_abs_diff_eq!(out, Vector2::new(-0.3, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn footstep_heuristic_values() {
        let d = footstep_target(
            Vector2::new(0.5, 0.0),
            Vector3::new(0.0, 0.0, 0.3),
            Vector2::zeros(),
            Vector2::zeros(),
            0.5,
            0.4,
            0.0,
            9.81,
        );
        assert_abs_diff_eq!(d, Vector2::new(0.05, 0.0), epsilon = 1e-12);

        let d = footstep_target(
            Vector2::new(0.5, 0.0),
            Vector3::new(0.0, 0.0, 0.3),
            Vector2::new(0.2, 0.0),
            Vector2::zeros(),
            0.5,
            0.4,
            1.0,
            9.81,
        );
        let capture = (0.3f64 / 9.81).sqrt() * 0.2;
        assert_abs_diff_eq!(d.x, 0.05 + capture, epsilon = 1e-9);
        assert_abs_diff_eq!(capture, 0.034979, epsilon = 1e-5);

        let d = footstep_target(
            Vector2::zeros(),
            Vector3::new(0.19, 0.125, 0.3),
            Vector2::zeros(),
            Vector2::zeros(),
            0.5,
            0.4,
            1.0,
            9.81,
        );
        assert_abs_diff_eq!(d, Vector2::new(0.19, 0.125), epsilon = 1e-12);
    }

    #[test]
    fn swing_trajectory_boundaries_and_apex() {
        let liftoff = Vector3::new(0.1, 0.05, 0.0);
        let target = Vector3::new(0.2, 0.05, 0.02);
        let h = 0.06;
        let (p0, v0) = swing_trajectory(liftoff, target, 0.0, h);
        assert_abs_diff_eq!(p0, liftoff, epsilon = 1e-12);
        assert_abs_diff_eq!(v0.norm(), 0.0, epsilon = 1e-12);
        let (p1, v1) = swing_trajectory(liftoff, target, 1.0, h);
        assert_abs_diff_eq!(p1, target, epsilon = 1e-12);
        assert_abs_diff_eq!(v1.norm(), 0.0, epsilon = 1e-12);
        let (pm, _) = swing_trajectory(liftoff, target, 0.5, h);
        assert_abs_diff_eq!(pm.z, target.z.max(liftoff.z) + h, epsilon = 1e-9);
    }

    proptest! {
        /// TAPS vertices scale linearly with the stance fraction.
        #[test]
        fn taps_scales_linearly(c in 0.01..1.0f64, phi in 0.01..1.0f64,
                                fx in 0.05..0.3f64, fy in 0.05..0.3f64) {
            prop_assume!(c * phi <= 1.0);
            let feet = [
                Vector2::new(fx, fy),
                Vector2::new(fx, -fy),
                Vector2::new(-fx, fy),
                Vector2::new(-fx, -fy),
            ];
            let a = taps_vertices(&feet, c * phi);
            let b = taps_vertices(&feet, phi);
            for i in 0..4 {
                prop_assert!((a.vertices[i] - c * b.vertices[i]).norm() < 1e-12);
            }
        }

        /// Footstep target is translation-equivariant in the desired hip xy.
        #[test]
        fn footstep_translation_equivariant(
            sx in -0.5..0.5f64, sy in -0.5..0.5f64,
            hvx in -1.0..1.0f64, bvx in -1.0..1.0f64,
        ) {
            let base_args = (
                Vector2::new(hvx, 0.1),
                Vector2::new(bvx, 0.0),
                Vector2::new(0.2, 0.0),
            );
            let t0 = footstep_target(
                base_args.0, Vector3::new(0.1, 0.2, 0.3),
                base_args.1, base_args.2, 0.5, 0.4, 1.0, 9.81);
            let t1 = footstep_target(
                base_args.0, Vector3::new(0.1 + sx, 0.2 + sy, 0.3),
                base_args.1, base_args.2, 0.5, 0.4, 1.0, 9.81);
            prop_assert!((t1 - t0 - Vector2::new(sx, sy)).norm() < 1e-12);
        }
    }
}
