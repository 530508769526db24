//! Proprioceptive signal filtering and external-wrench estimation.
//!
//! The estimator recovers the generalized external force vector
//! `F̂_e = −(J(q̂)ᵀ)†(Sᵀτ̂ − η(q̂, q̂̇))` from filtered joint data, neglecting
//! inertial terms. The base part is reported as a physical wrench (the
//! rotational rows of `F̂_e` are conjugate to Euler rates and are mapped
//! through `E(Φ)⁻ᵀ`); the remaining twelve rows are the estimated foot
//! contact forces.

use nalgebra::SVector;
use thiserror::Error;

use crate::model::{
    euler_torque_to_moment, joint_torques_to_generalized, GenVec, RobotModel, NUM_JOINTS, NUM_LEGS,
};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("cutoff must satisfy 0 < cutoff < sample_rate/2 (got {cutoff} Hz at {sample} Hz)")]
    InvalidCutoff { cutoff: f64, sample: f64 },
    #[error("channel count mismatch: filter has {expected}, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Second-order Butterworth low-pass filter (biquad, bilinear transform with
/// frequency prewarping). Unit DC gain, −3 dB at the cutoff.
#[derive(Debug, Clone)]
pub struct LowPassFilter2 {
    pub cutoff_hz: f64,
    pub sample_hz: f64,
    b: [f64; 3],
    a: [f64; 2],
    /// Per-channel (x1, x2, y1, y2); seeded on the first sample.
    state: Vec<[f64; 4]>,
    primed: bool,
}

impl LowPassFilter2 {
    pub fn new(cutoff_hz: f64, sample_hz: f64, channels: usize) -> Result<Self, EstimationError> {
        if !(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * sample_hz {
            return Err(EstimationError::InvalidCutoff {
                cutoff: cutoff_hz,
                sample: sample_hz,
            });
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Ok(Self {
            cutoff_hz,
            sample_hz,
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            state: vec![[0.0; 4]; channels],
            primed: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.state.len()
    }

    /// Filter one multi-channel sample in place. The first call seeds the
    /// internal state to the input, so there is no startup transient.
    pub fn step_in_place(&mut self, x: &mut [f64]) -> Result<(), EstimationError> {
        if x.len() != self.state.len() {
            return Err(EstimationError::ChannelMismatch {
                expected: self.state.len(),
                got: x.len(),
            });
        }
        if !self.primed {
            for (s, &v) in self.state.iter_mut().zip(x.iter()) {
                *s = [v, v, v, v];
            }
            self.primed = true;
        }
        for (s, v) in self.state.iter_mut().zip(x.iter_mut()) {
            let y = self.b[0] * *v + self.b[1] * s[0] + self.b[2] * s[1]
                - self.a[0] * s[2]
                - self.a[1] * s[3];
            *s = [*v, s[0], y, s[2]];
            *v = y;
        }
        Ok(())
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<Vec<f64>, EstimationError> {
        let mut out = raw.to_vec();
        self.step_in_place(&mut out)?;
        Ok(out)
    }

    /// Single-channel convenience for scalar signals.
    pub fn step_scalar(&mut self, raw: f64) -> f64 {
        let mut buf = [raw];
        self.step_in_place(&mut buf)
            .expect("scalar filter has one channel");
        buf[0]
    }

    pub fn reset(&mut self) {
        self.primed = false;
        for s in &mut self.state {
            *s = [0.0; 4];
        }
    }
}

/// Filters for the raw proprioceptive channels at the control rate.
#[derive(Debug, Clone)]
pub struct SensorPipeline {
    pub joint_pos: LowPassFilter2,
    pub joint_vel: LowPassFilter2,
    pub torque: LowPassFilter2,
}

impl SensorPipeline {
    /// Cutoffs: 30 Hz for joint position, 15 Hz for joint velocity and torque.
    pub fn new(sample_hz: f64) -> Result<Self, EstimationError> {
        Ok(Self {
            joint_pos: LowPassFilter2::new(30.0, sample_hz, NUM_JOINTS)?,
            joint_vel: LowPassFilter2::new(15.0, sample_hz, NUM_JOINTS)?,
            torque: LowPassFilter2::new(15.0, sample_hz, NUM_JOINTS)?,
        })
    }

    /// Filter one sample of each channel in place.
    pub fn process(
        &mut self,
        qj: &mut [f64; NUM_JOINTS],
        qj_dot: &mut [f64; NUM_JOINTS],
        tau: &mut [f64; NUM_JOINTS],
    ) -> Result<(), EstimationError> {
        self.joint_pos.step_in_place(qj)?;
        self.joint_vel.step_in_place(qj_dot)?;
        self.torque.step_in_place(tau)?;
        Ok(())
    }
}

/// Estimated generalized external forces, partitioned as `[F̂_b; F̂_c]`.
#[derive(Debug, Clone)]
pub struct WrenchEstimate {
    /// External base wrench (force N, moment N·m), global frame.
    pub f_b: SVector<f64, 6>,
    /// Per-foot contact force estimates, leg order FL, FR, RL, RR.
    pub f_c: SVector<f64, 12>,
    /// Raw generalized estimate `F̂_e` (rotational rows Euler-conjugate).
    pub generalized: GenVec,
    pub timestamp: f64,
    /// Set when the Jacobian was too ill-conditioned to invert; the estimate
    /// is then a copy of the previous one.
    pub degenerate: bool,
}

impl WrenchEstimate {
    pub fn zero(timestamp: f64) -> Self {
        Self {
            f_b: SVector::zeros(),
            f_c: SVector::zeros(),
            generalized: GenVec::zeros(),
            timestamp,
            degenerate: false,
        }
    }

    /// Vertical contact-force estimate of one leg, N.
    pub fn foot_normal_force(&self, leg: usize) -> f64 {
        self.f_c[3 * leg + 2]
    }
}

/// External wrench estimator with SVD-truncated pseudo-inversion.
#[derive(Debug, Clone)]
pub struct WrenchEstimator {
    /// Relative singular-value truncation for the pseudo-inverse.
    pub truncation: f64,
    /// Condition-number limit beyond which the estimate is held.
    pub cond_limit: f64,
    prev: Option<WrenchEstimate>,
}

impl Default for WrenchEstimator {
    fn default() -> Self {
        Self {
            truncation: 1e-8,
            cond_limit: 1e8,
            prev: None,
        }
    }
}

impl WrenchEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Estimate the external generalized wrench from filtered signals.
    pub fn estimate(
        &mut self,
        model: &RobotModel,
        q_hat: &GenVec,
        qdot_hat: &GenVec,
        tau_hat: &SVector<f64, NUM_JOINTS>,
        timestamp: f64,
    ) -> Result<WrenchEstimate, EstimationError> {
        let terms = model.dynamics_terms(q_hat, qdot_hat)?;
        let (jac, _) = model.jacobian(q_hat, qdot_hat)?;
        let rhs = joint_torques_to_generalized(tau_hat) - terms.eta;

        let svd = jac.transpose().svd(true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let degenerate = terms.singular_warning
            || s_min <= 0.0
            || s_max / s_min.max(f64::MIN_POSITIVE) > self.cond_limit;
        if degenerate {
            let mut held = self
                .prev
                .clone()
                .unwrap_or_else(|| WrenchEstimate::zero(timestamp));
            held.timestamp = timestamp;
            held.degenerate = true;
            self.prev = Some(held.clone());
            return Ok(held);
        }

        let generalized = -svd
            .solve(&rhs, self.truncation * s_max)
            .expect("svd computed with singular vectors");
        let euler = q_hat.fixed_rows::<3>(3).into_owned();
        let moment = euler_torque_to_moment(&euler, &generalized.fixed_rows::<3>(3).into_owned());
        let mut f_b = SVector::<f64, 6>::zeros();
        f_b.fixed_rows_mut::<3>(0)
            .copy_from(&generalized.fixed_rows::<3>(0));
        f_b.fixed_rows_mut::<3>(3).copy_from(&moment);

        let estimate = WrenchEstimate {
            f_b,
            f_c: generalized.fixed_rows::<12>(6).into_owned(),
            generalized,
            timestamp,
            degenerate: false,
        };
        self.prev = Some(estimate.clone());
        Ok(estimate)
    }
}

/// Scheduled contact information for one control tick.
#[derive(Debug, Clone, Copy)]
pub struct ScheduledContact {
    pub stance: [bool; NUM_LEGS],
    /// Leg-local gait phase in [0, 1).
    pub leg_phase: [f64; NUM_LEGS],
    pub stance_fraction: f64,
}

/// Detected contact state per leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactState {
    pub s_hat: [bool; NUM_LEGS],
}

/// Schedule-gated force-threshold contact detection.
///
/// Inside a ±10% phase window around a scheduled transition the threshold
/// alone decides, which admits early and late touchdowns; elsewhere the
/// schedule gates the decision.
pub fn detect_contact(
    f_c_hat: &SVector<f64, 12>,
    schedule: &ScheduledContact,
    threshold_n: f64,
) -> ContactState {
    assert!(threshold_n > 0.0, "contact threshold must be positive");
    let window = 0.10;
    let mut s_hat = [false; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let fz = f_c_hat[3 * leg + 2];
        let above = fz > threshold_n;
        let phase = schedule.leg_phase[leg].rem_euclid(1.0);
        let dist_touchdown = phase.min(1.0 - phase);
        let dist_liftoff = (phase - schedule.stance_fraction).abs();
        let in_window = dist_touchdown < window || dist_liftoff < window;
        s_hat[leg] = if in_window {
            above
        } else {
            schedule.stance[leg] && above
        };
    }
    ContactState { s_hat }
}
