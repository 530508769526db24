//! Deterministic rigid-body simulation of the quadruped with penalty ground
//! contact, actuator latency, sensor noise, and scripted disturbances.
//!
//! Forward dynamics solves `q̈ = M⁻¹(Sᵀτ + J_cᵀF_ground + Q_ext − η)` and
//! integrates semi-implicitly (velocity first, position with the averaged
//! velocity). Everything is driven by one seeded RNG, so identical seeds and
//! configs reproduce bit-identical trajectories.

use nalgebra::{SVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::model::{
    euler_rate_map, joint_torques_to_generalized, GenVec, GeneralizedState, RobotModel,
    NUM_JOINTS, NUM_LEGS,
};
use crate::reactive::Wrench;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("state diverged (non-finite) at t = {0}")]
    Diverged(f64),
}

/// Spring-damper (penalty) ground contact parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroundModel {
    /// Normal stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N·s/m.
    pub damping: f64,
    /// Friction coefficient.
    pub mu: f64,
    /// Tangential viscous coefficient below the Coulomb limit, N·s/m.
    pub tangential_damping: f64,
}

impl Default for GroundModel {
    fn default() -> Self {
        Self {
            stiffness: 1e4,
            damping: 200.0,
            mu: 0.7,
            tangential_damping: 600.0,
        }
    }
}

/// Additive Gaussian sensor noise (standard deviations; zero disables).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub joint_pos_std: f64,
    pub joint_vel_std: f64,
    pub torque_std: f64,
    #[serde(default)]
    pub base_pos_std: f64,
    #[serde(default)]
    pub base_vel_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            joint_pos_std: 1e-3,
            joint_vel_std: 1e-2,
            torque_std: 0.05,
            base_pos_std: 0.0,
            base_vel_std: 0.0,
        }
    }
}

/// Simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Physics step, s.
    pub dt_sim: f64,
    /// Control period, s (a multiple of `dt_sim`).
    pub dt_ctrl: f64,
    pub ground: GroundModel,
    /// Command latency histogram: (bin in ms — multiples of 5, probability).
    pub latency_histogram: Vec<(f64, f64)>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_sim: 5e-4,
            dt_ctrl: 2e-3,
            ground: GroundModel::default(),
            latency_histogram: vec![(0.0, 1.0)],
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt_sim > 0.0) || self.dt_ctrl < self.dt_sim {
            return Err(SimError::InvalidConfig(
                "need 0 < dt_sim <= dt_ctrl".into(),
            ));
        }
        let ratio = self.dt_ctrl / self.dt_sim;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(SimError::InvalidConfig(
                "dt_ctrl must be a multiple of dt_sim".into(),
            ));
        }
        let total: f64 = self.latency_histogram.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidConfig(
                "latency probabilities must sum to 1".into(),
            ));
        }
        for (bin, p) in &self.latency_histogram {
            if *p < 0.0 || *bin < 0.0 || (bin / 5.0 - (bin / 5.0).round()).abs() > 1e-9 {
                return Err(SimError::InvalidConfig(
                    "latency bins must be non-negative multiples of 5 ms".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.dt_ctrl / self.dt_sim).round() as usize
    }
}

/// Scripted external disturbance applied to the base.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceProfile {
    None,
    /// Constant wrench (force N, moment N·m).
    ConstantLoad {
        force: [f64; 3],
        #[serde(default)]
        moment: [f64; 3],
    },
    /// Horizontal force of fixed magnitude rotating at `omega`, plus an
    /// optional constant vertical load:
    /// `F = |F|(−sin(ωt)·x̂ + cos(ωt)·ŷ) + F_z·ẑ`.
    CircularForce {
        magnitude: f64,
        omega: f64,
        #[serde(default)]
        fz: f64,
        #[serde(default)]
        start_s: f64,
    },
    /// Rectangular force pulses repeating at `frequency_hz`.
    ImpulsePush {
        magnitude: f64,
        duration_s: f64,
        frequency_hz: f64,
        direction: [f64; 3],
        #[serde(default)]
        start_s: f64,
    },
    /// Piecewise-constant wrench timeline.
    ScriptedTimeline { entries: Vec<TimelineEntry> },
    /// Spring toward a moving anchor (rigid-rod leader stand-in), plus an
    /// optional constant vertical load.
    LeaderRod {
        stiffness: f64,
        waypoints: Vec<Waypoint>,
        #[serde(default)]
        fz: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t_start: f64,
    pub t_end: f64,
    pub force: [f64; 3],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl DisturbanceProfile {
    /// Base wrench at time `t`. The rod profile is the only one that reads
    /// the base position.
    pub fn wrench(&self, t: f64, base_xy: Vector2<f64>) -> Wrench {
        let mut out = Wrench::zeros();
        match self {
            DisturbanceProfile::None => {}
            DisturbanceProfile::ConstantLoad { force, moment } => {
                out.fixed_rows_mut::<3>(0)
                    .copy_from(&Vector3::from_row_slice(force));
                out.fixed_rows_mut::<3>(3)
                    .copy_from(&Vector3::from_row_slice(moment));
            }
            DisturbanceProfile::CircularForce {
                magnitude,
                omega,
                fz,
                start_s,
            } => {
                if t >= *start_s {
                    let phase = omega * (t - start_s);
                    out[0] = -magnitude * phase.sin();
                    out[1] = magnitude * phase.cos();
                    out[2] = *fz;
                }
            }
            DisturbanceProfile::ImpulsePush {
                magnitude,
                duration_s,
                frequency_hz,
                direction,
                start_s,
            } => {
                if t >= *start_s && *frequency_hz > 0.0 {
                    let period = 1.0 / frequency_hz;
                    let within = (t - start_s).rem_euclid(period);
                    if within < *duration_s {
                        let dir = Vector3::from_row_slice(direction);
                        let dir = if dir.norm() > 1e-12 {
                            dir / dir.norm()
                        } else {
                            Vector3::zeros()
                        };
                        out.fixed_rows_mut::<3>(0).copy_from(&(*magnitude * dir));
                    }
                }
            }
            DisturbanceProfile::ScriptedTimeline { entries } => {
                for e in entries {
                    if t >= e.t_start && t < e.t_end {
                        let mut f = out.fixed_rows_mut::<3>(0);
                        f += Vector3::from_row_slice(&e.force);
                    }
                }
            }
            DisturbanceProfile::LeaderRod {
                stiffness,
                waypoints,
                fz,
            } => {
                if let Some(anchor) = interpolate_waypoints(waypoints, t) {
                    let pull = *stiffness * (anchor - base_xy);
                    out[0] = pull.x;
                    out[1] = pull.y;
                    out[2] = *fz;
                }
            }
        }
        out
    }
}

fn interpolate_waypoints(wps: &[Waypoint], t: f64) -> Option<Vector2<f64>> {
    if wps.is_empty() {
        return None;
    }
    if t <= wps[0].t {
        return Some(Vector2::new(wps[0].x, wps[0].y));
    }
    for w in wps.windows(2) {
        if t <= w[1].t {
            let span = (w[1].t - w[0].t).max(1e-9);
            let a = (t - w[0].t) / span;
            return Some(Vector2::new(
                w[0].x + a * (w[1].x - w[0].x),
                w[0].y + a * (w[1].y - w[0].y),
            ));
        }
    }
    let last = wps.last().unwrap();
    Some(Vector2::new(last.x, last.y))
}

/// Per-foot contact information from the last step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContactInfo {
    pub in_contact: bool,
    pub penetration: f64,
    /// Ground reaction force on the foot, world frame.
    pub force: Vector3<f64>,
}

/// Raw sensor sample (noise already applied).
#[derive(Debug, Clone)]
pub struct RawSensors {
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    pub joint_torque: [f64; NUM_JOINTS],
    pub base_pos: Vector3<f64>,
    pub base_euler: Vector3<f64>,
    pub base_vel: Vector3<f64>,
    pub euler_rates: Vector3<f64>,
}

/// Command latency buffer: newest command at the front, the sampled latency
/// indexes backward in control periods (`index = ⌊latency/dt_ctrl⌋`).
#[derive(Debug, Clone)]
pub struct LatencyBuffer {
    buf: VecDeque<SVector<f64, NUM_JOINTS>>,
    max_len: usize,
    pub clamp_events: u64,
}

impl LatencyBuffer {
    pub fn new(max_latency_s: f64, dt_ctrl: f64, hold: SVector<f64, NUM_JOINTS>) -> Self {
        let max_len = (max_latency_s / dt_ctrl).floor() as usize + 1;
        let mut buf = VecDeque::with_capacity(max_len);
        buf.push_front(hold);
        Self {
            buf,
            max_len,
            clamp_events: 0,
        }
    }

    /// Push the newest command and fetch the one delayed by `latency_s`.
    pub fn step(&mut self, command: SVector<f64, NUM_JOINTS>, latency_s: f64, dt_ctrl: f64) -> SVector<f64, NUM_JOINTS> {
        self.buf.push_front(command);
        while self.buf.len() > self.max_len {
            self.buf.pop_back();
        }
        let mut index = (latency_s / dt_ctrl).floor() as usize;
        if index >= self.buf.len() {
            index = self.buf.len() - 1;
            self.clamp_events += 1;
        }
        self.buf[index]
    }
}

/// Zero-order hold used for control/sensor rate limiting.
#[derive(Debug, Clone)]
pub struct ZeroOrderHold<T: Clone> {
    value: T,
}

impl<T: Clone> ZeroOrderHold<T> {
    pub fn new(initial: T) -> Self {
        Self { value: initial }
    }

    pub fn latch(&mut self, value: T) {
        self.value = value;
    }

    pub fn held(&self) -> &T {
        &self.value
    }
}

/// The simulation world: robot state, contact state, and the RNG driving
/// noise and latency draws.
pub struct Simulation {
    pub model: RobotModel,
    pub cfg: SimConfig,
    pub state: GeneralizedState,
    pub time: f64,
    pub contacts: [ContactInfo; NUM_LEGS],
    /// Ground-truth external wrench applied during the last step.
    pub applied_external: Wrench,
    rng: ChaCha8Rng,
    latency_dist: Vec<(f64, f64)>,
}

impl Simulation {
    pub fn new(model: RobotModel, cfg: SimConfig, initial: GeneralizedState) -> Result<Self, SimError> {
        cfg.validate()?;
        // Cumulative distribution for latency sampling.
        let mut acc = 0.0;
        let latency_dist = cfg
            .latency_histogram
            .iter()
            .map(|(bin, p)| {
                acc += p;
                (acc, *bin)
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            cfg,
            state: initial,
            time: 0.0,
            contacts: [ContactInfo::default(); NUM_LEGS],
            applied_external: Wrench::zeros(),
            rng,
            latency_dist,
        })
    }

    /// Nominal standing state: knees bent, feet just touching the ground.
    pub fn standing_state(model: &RobotModel) -> GeneralizedState {
        let mut q = GenVec::zeros();
        for leg in 0..NUM_LEGS {
            q[7 + 3 * leg] = 0.75;
            q[8 + 3 * leg] = -1.5;
        }
        // Place the base so the straight-down feet rest at z = 0 with the
        // static spring deflection already applied.
        let l = &model.link_lengths;
        let drop = l.thigh * 0.75f64.cos() + l.shank * 0.75f64.cos();
        let deflection = model.total_mass * 9.81 / (4.0 * GroundModel::default().stiffness);
        q[2] = drop - deflection;
        GeneralizedState::new(q, GenVec::zeros())
    }

    /// Explicit evaluation of the ground reaction law at a configuration
    /// (spring + damping at the instantaneous velocity). The stepper applies
    /// the damping part implicitly; this form is what tests and logs see.
    pub fn ground_forces_explicit(
        &self,
        q: &GenVec,
        qdot: &GenVec,
    ) -> [Vector3<f64>; NUM_LEGS] {
        let chi = self.model.forward_kinematics(q).expect("finite state");
        let (jac, _) = self.model.jacobian(q, qdot).expect("finite state");
        let foot_vel = jac * qdot;
        let g = &self.cfg.ground;
        let mut forces = [Vector3::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let pos = chi.fixed_rows::<3>(6 + 3 * leg).into_owned();
            let vel = foot_vel.fixed_rows::<3>(6 + 3 * leg).into_owned();
            if pos.z >= 0.0 {
                continue;
            }
            let pen = -pos.z;
            let ramp = (pen / 5e-4).min(1.0);
            let f_n = (g.stiffness * pen - g.damping * ramp * vel.z).max(0.0);
            let v_t = Vector2::new(vel.x, vel.y);
            let speed = v_t.norm().max(1e-4);
            let gamma = g.tangential_damping.min(g.mu * f_n / speed);
            let f_t = -gamma * v_t;
            forces[leg] = Vector3::new(f_t.x, f_t.y, f_n);
        }
        forces
    }

    /// Soft joint-limit torques keeping the simulator inside the configured
    /// ranges.
    fn joint_limit_torques(&self, q: &GenVec, qdot: &GenVec) -> SVector<f64, NUM_JOINTS> {
        let mut tau = SVector::<f64, NUM_JOINTS>::zeros();
        let k = 80.0;
        let c = 0.5;
        for leg in 0..NUM_LEGS {
            for j in 0..3 {
                let idx = 3 * leg + j;
                let range = self.model.joint_limits.range(j);
                let qi = q[6 + idx];
                let qd = qdot[6 + idx];
                if qi < range[0] {
                    tau[idx] += -k * (qi - range[0]) - c * qd;
                } else if qi > range[1] {
                    tau[idx] += -k * (qi - range[1]) - c * qd;
                }
            }
        }
        tau
    }

    /// Advance one physics step under held joint torques and an external
    /// base wrench (force + physical moment, global frame).
    ///
    /// Kick-drift leapfrog with the contact damping folded into the velocity
    /// solve: `(M + Δt·JᵀCJ)·q̇' = M·q̇ + Δt·(spring + other forces)`. The
    /// midpoint force evaluation keeps the integrator from pumping contact
    /// oscillations, and the implicit damper is unconditionally stable for
    /// the light feet.
    pub fn step(
        &mut self,
        joint_torques: &SVector<f64, NUM_JOINTS>,
        external: &Wrench,
    ) -> Result<(), SimError> {
        let dt = self.cfg.dt_sim;
        self.applied_external = *external;
        let g = self.cfg.ground;

        let q_half = self.state.q + self.state.qdot * (0.5 * dt);
        let qdot = self.state.qdot;

        let terms = self.model.dynamics_terms(&q_half, &qdot)?;
        let chi = self.model.forward_kinematics(&q_half)?;
        let (jac, _) = self.model.jacobian(&q_half, &qdot)?;
        let foot_vel_all = jac * qdot;

        let tau_total = joint_torques + self.joint_limit_torques(&q_half, &qdot);
        let mut rhs = joint_torques_to_generalized(&tau_total) - terms.eta;
        let e_map = euler_rate_map(&q_half.fixed_rows::<3>(3).into_owned());
        {
            let mut f_rows = rhs.fixed_rows_mut::<3>(0);
            f_rows += external.fixed_rows::<3>(0);
        }
        {
            let mut m_rows = rhs.fixed_rows_mut::<3>(3);
            m_rows += e_map.transpose() * external.fixed_rows::<3>(3).into_owned();
        }

        // Contact: spring force explicit, damping coefficients implicit.
        let mut lhs = terms.mass_matrix;
        let mut contact_data: [Option<(f64, f64, f64, f64)>; NUM_LEGS] = [None; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let pos = chi.fixed_rows::<3>(6 + 3 * leg).into_owned();
            if pos.z >= 0.0 {
                continue;
            }
            let pen = -pos.z;
            let vel = foot_vel_all.fixed_rows::<3>(6 + 3 * leg).into_owned();
            let ramp = (pen / 5e-4).min(1.0);
            let c_n = g.damping * ramp;
            let f_n_now = g.stiffness * pen - c_n * vel.z;
            if f_n_now <= 0.0 {
                contact_data[leg] = Some((pen, 0.0, 0.0, 0.0));
                continue;
            }
            let speed = vel.xy().norm().max(1e-4);
            let gamma = g.tangential_damping.min(g.mu * f_n_now / speed);

            let j_foot = jac.fixed_view::<3, 18>(6 + 3 * leg, 0).into_owned();
            // rhs gets the spring part; the damper goes to the left side.
            rhs += j_foot.transpose() * Vector3::new(0.0, 0.0, g.stiffness * pen);
            let c_diag = Vector3::new(gamma, gamma, c_n);
            for r in 0..3 {
                let row = j_foot.row(r).transpose();
                let w = dt * c_diag[r];
                lhs += w * &row * row.transpose();
            }
            contact_data[leg] = Some((pen, g.stiffness * pen, c_n, gamma));
        }

        let qdot_new = lhs
            .cholesky()
            .map(|c| c.solve(&(terms.mass_matrix * qdot + rhs * dt)))
            .ok_or_else(|| SimError::Diverged(self.time))?;
        let q_new = q_half + qdot_new * (0.5 * dt);

        // Report the applied contact forces (damping at the new velocity).
        let foot_vel_new = jac * qdot_new;
        for leg in 0..NUM_LEGS {
            self.contacts[leg] = match contact_data[leg] {
                None => ContactInfo::default(),
                Some((pen, spring, c_n, gamma)) => {
                    let vel = foot_vel_new.fixed_rows::<3>(6 + 3 * leg).into_owned();
                    let f_n = (spring - c_n * vel.z).max(0.0);
                    let mut f_t = -gamma * vel.xy();
                    // The coefficient was capped at the pre-step normal force;
                    // re-cap against the reported one.
                    let limit = g.mu * f_n;
                    if f_t.norm() > limit {
                        f_t *= limit / f_t.norm().max(1e-12);
                    }
                    ContactInfo {
                        in_contact: spring > 0.0,
                        penetration: pen,
                        force: Vector3::new(f_t.x, f_t.y, f_n),
                    }
                }
            };
        }

        self.state = GeneralizedState::new(q_new, qdot_new);
        self.time += dt;
        if !self.state.is_finite() {
            return Err(SimError::Diverged(self.time));
        }
        Ok(())
    }

    /// Sample sensors with the configured noise. Draws a fixed number of
    /// normal variates per call so the RNG stream is reproducible.
    pub fn sample_sensors(&mut self) -> RawSensors {
        let n = &self.cfg.noise;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |std: f64| -> f64 {
            let v: f64 = normal.sample(&mut self.rng);
            v * std
        };
        let mut joint_pos = [0.0; NUM_JOINTS];
        let mut joint_vel = [0.0; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            joint_pos[i] = self.state.q[6 + i] + draw(n.joint_pos_std);
        }
        for i in 0..NUM_JOINTS {
            joint_vel[i] = self.state.qdot[6 + i] + draw(n.joint_vel_std);
        }
        RawSensors {
            joint_pos,
            joint_vel,
            joint_torque: [0.0; NUM_JOINTS], // torque channel filled by the harness
            base_pos: self.state.base_position()
                + Vector3::new(draw(n.base_pos_std), draw(n.base_pos_std), draw(n.base_pos_std)),
            base_euler: self.state.base_euler(),
            base_vel: self.state.base_velocity()
                + Vector3::new(draw(n.base_vel_std), draw(n.base_vel_std), draw(n.base_vel_std)),
            euler_rates: self.state.euler_rates(),
        }
    }

    /// Torque measurement noise, drawn separately so the harness can apply
    /// it to the commanded torque signal.
    pub fn torque_noise(&mut self) -> [f64; NUM_JOINTS] {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = [0.0; NUM_JOINTS];
        for v in &mut out {
            *v = normal.sample(&mut self.rng) * self.cfg.noise.torque_std;
        }
        out
    }

    /// Draw a command latency from the configured histogram, seconds.
    pub fn sample_latency(&mut self) -> f64 {
        if self.latency_dist.len() == 1 {
            return self.latency_dist[0].1 / 1000.0;
        }
        let u = Uniform::new(0.0, 1.0).expect("valid range");
        let x: f64 = u.sample(&mut self.rng);
        for (cum, bin) in &self.latency_dist {
            if x <= *cum {
                return bin / 1000.0;
            }
        }
        self.latency_dist.last().map(|(_, b)| b / 1000.0).unwrap_or(0.0)
    }

    pub fn mechanical_energy(&self) -> f64 {
        self.model
            .mechanical_energy(&self.state.q, &self.state.qdot)
            .expect("finite state")
    }

    /// Total linear momentum (top rows of M·q̇).
    pub fn linear_momentum(&self) -> Vector3<f64> {
        let terms = self
            .model
            .dynamics_terms(&self.state.q, &self.state.qdot)
            .expect("finite state");
        (terms.mass_matrix * self.state.qdot)
            .fixed_rows::<3>(0)
            .into_owned()
    }
}
