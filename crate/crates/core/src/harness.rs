//! Scenario runner: wires the simulator to the controller stack, applies
//! scripted disturbances, logs every control tick to CSV, and scores the
//! run against per-scenario metric thresholds.
//!
//! Runs are deterministic for a given seed and config (synchronous MPC).

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::base_planner::{compute_gains, BasePlanner, BaseReference, CbfParams, CropBox};
use crate::estimation::{detect_contact, SensorPipeline, WrenchEstimator};
use crate::gait::{
    adapt_motion, footstep_target, saturate_desired_velocity, stability_margin, swing_trajectory,
    taps_vertices, AdaptationParams, FootstepParams, GaitSchedule,
};
use crate::model::{base_rotation, euler_rate_map, GenVec, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::mpc::{
    build_dynamics, build_reference, solve_mpc, AsyncMpc, InputVec, MpcMailbox, MpcParams,
    MpcProblem, MpcStatus, SampleOutcome, StateVec,
};
use crate::reactive::{
    base_wrench_map, desired_base_wrench, map_to_torques, solve_reactive_qp, ConeSpec, LegCommand,
    ReactiveQp, SwingGains, Wrench, WrenchPdGains,
};
use crate::simulator::{DisturbanceProfile, LatencyBuffer, SimConfig, SimError, Simulation};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario config error: {0}")]
    Config(String),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Estimation(#[from] crate::estimation::EstimationError),
    #[error(transparent)]
    Planner(#[from] crate::base_planner::PlannerError),
    #[error(transparent)]
    Gait(#[from] crate::gait::GaitError),
    #[error(transparent)]
    Mpc(#[from] crate::mpc::MpcError),
}

/// Gait block of the scenario config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaitConfig {
    pub period: f64,
    pub stance_fraction: f64,
    pub offsets: [f64; NUM_LEGS],
}

impl Default for GaitConfig {
    fn default() -> Self {
        // Trot with a touch of stance overlap: smoother force handoffs.
        Self {
            period: 0.4,
            stance_fraction: 0.65,
            offsets: [0.0, 0.5, 0.5, 0.0],
        }
    }
}

/// Reactive-QP weight block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReactiveParams {
    /// Wrench-tracking weight on the horizontal force rows.
    pub s1: f64,
    /// Wrench-tracking weight on the vertical force row.
    pub s1_z: f64,
    /// Wrench-tracking weight on the moment rows.
    pub s1_moment: f64,
    pub w: f64,
    pub v: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ReactiveParams {
    fn default() -> Self {
        // The MPC leads (strong V) because a single stance pair cannot
        // realize arbitrary wrenches; the PD wrench is a fast corrector.
        Self {
            s1: 2.0,
            s1_z: 50.0,
            s1_moment: 100.0,
            w: 1e-3,
            v: 30.0,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

/// Controller configuration for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Commanded body-frame velocity (vx, vy), m/s.
    pub v_cmd: [f64; 2],
    pub yaw_rate_cmd: f64,
    /// Reference acceleration limits, m/s².
    pub a_max: [f64; 2],
    /// Reference velocity limits, m/s.
    pub v_max: [f64; 2],
    /// Fixed admittance force ceiling; absent → adaptive μ·(total normal).
    #[serde(default)]
    pub f_max: Option<f64>,
    pub cbf: CbfParams,
    pub crop_box: CropBox,
    pub gait: GaitConfig,
    pub adapt: AdaptationParams,
    pub footstep: FootstepParams,
    pub mpc: MpcParams,
    pub reactive: ReactiveParams,
    pub swing: SwingGains,
    pub wrench_pd: WrenchPdGains,
    /// Joint torque box limit, N·m.
    pub torque_limit: f64,
    /// Contact detection threshold; absent → 0.25·m·g/4.
    #[serde(default)]
    pub contact_threshold: Option<f64>,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            v_cmd: [0.0, 0.0],
            yaw_rate_cmd: 0.0,
            a_max: [1.0, 1.0],
            v_max: [0.5, 0.5],
            f_max: None,
            cbf: CbfParams::default(),
            crop_box: CropBox::default(),
            gait: GaitConfig::default(),
            adapt: AdaptationParams::default(),
            footstep: FootstepParams::default(),
            mpc: MpcParams::default(),
            reactive: ReactiveParams::default(),
            swing: SwingGains::default(),
            wrench_pd: WrenchPdGains::default(),
            torque_limit: 60.0,
            contact_threshold: None,
        }
    }
}

/// Synthetic cuboid obstacle sampled into a point cloud each tick.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxObstacle {
    /// Center of the box footprint, world xy, m.
    pub center: [f64; 2],
    /// Half extents (x, y), m.
    pub half_extents: [f64; 2],
    pub height: f64,
    /// Point sampling spacing, m.
    pub spacing: f64,
}

/// Sample the three robot-facing faces of the box (the near x-face and both
/// y-faces) and express the points in the base frame.
pub fn synth_box_cloud(
    obstacle: &BoxObstacle,
    base_pos: &Vector3<f64>,
    base_euler: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    let rot_t = base_rotation(base_euler).transpose();
    let c = Vector2::new(obstacle.center[0], obstacle.center[1]);
    let (hx, hy) = (obstacle.half_extents[0], obstacle.half_extents[1]);
    let spacing = obstacle.spacing.max(1e-3);
    let mut cloud = Vec::new();
    let mut push = |p_world: Vector3<f64>| {
        cloud.push(rot_t * (p_world - base_pos));
    };

    let n = |len: f64| ((len / spacing).ceil() as usize).max(1);
    // Near x-face: the one whose outward normal points toward the robot.
    let face_x = if base_pos.x < c.x { c.x - hx } else { c.x + hx };
    let (ny, nz) = (n(2.0 * hy), n(obstacle.height));
    for iy in 0..=ny {
        for iz in 0..=nz {
            let y = c.y - hy + 2.0 * hy * iy as f64 / ny as f64;
            let z = obstacle.height * iz as f64 / nz as f64;
            push(Vector3::new(face_x, y, z));
        }
    }
    // Both y-faces.
    let nx = n(2.0 * hx);
    for &face_y in &[c.y - hy, c.y + hy] {
        for ix in 0..=nx {
            for iz in 0..=nz {
                let x = c.x - hx + 2.0 * hx * ix as f64 / nx as f64;
                let z = obstacle.height * iz as f64 / nz as f64;
                push(Vector3::new(x, face_y, z));
            }
        }
    }
    cloud
}

/// One metric with its threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    /// Base never drops below 60% of nominal height nor tips past 0.6 rad.
    NoFall,
    /// RMS of (estimated − applied) horizontal force after settling, both
    /// smoothed by a moving average (the comparison the paper plots).
    HorizontalForceRmsError {
        max_n: f64,
        settle_s: f64,
        smooth_s: f64,
    },
    /// |mean(F̂_z) − expected| after settling.
    VerticalLoadMeanError {
        expected_n: f64,
        max_err_n: f64,
        settle_s: f64,
    },
    /// Dominant nonzero DFT bin of base velocity must sit at the expected
    /// frequency.
    VelocityDominantFrequency {
        expected_hz: f64,
        tol_hz: f64,
        settle_s: f64,
    },
    /// Each disturbance pulse must be recovered from within `max_s`:
    /// ‖ṙ̂ − v_cmd‖ < 0.1 m/s sustained for 0.5 s.
    PushRecovery { max_s: f64 },
    /// Peak |Δv| produced by the pulses must reach at least `min_mps`.
    DeltaV { min_mps: f64 },
    /// Commanded base height must dip at least `min_dip_m` after a pulse and
    /// return within `band_m` of nominal before the next pulse.
    HeightDipAndRecover { min_dip_m: f64, band_m: f64 },
    /// Minimum base-to-obstacle distance over the run.
    MinObstacleDistance { min_m: f64 },
    /// Total lateral (y) displacement must exceed `min_m`.
    LateralDisplacement { min_m: f64 },
    /// Mean distance to the rod anchor stays bounded.
    AnchorTracking { max_mean_m: f64 },
}

/// Scenario: robot + controller + simulation + disturbance + metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Path to a robot parameter file; absent → built-in defaults.
    #[serde(default)]
    pub robot: Option<String>,
    pub controller: ControllerParams,
    pub sim: SimConfig,
    pub disturbance: DisturbanceProfile,
    #[serde(default)]
    pub obstacle: Option<BoxObstacle>,
    pub duration_s: f64,
    pub metrics: Vec<MetricSpec>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.duration_s > 0.0) {
            return Err(HarnessError::Config("duration must be positive".into()));
        }
        self.sim.validate()?;
        if let Some(path) = &self.robot {
            if !Path::new(path).exists() {
                return Err(HarnessError::Config(format!(
                    "robot config not found: {path}"
                )));
            }
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<RobotModel, HarnessError> {
        Ok(match &self.robot {
            Some(path) => RobotModel::from_file(Path::new(path))?,
            None => RobotModel::default_model(),
        })
    }
}

/// One control-tick log record.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub time: f64,
    pub q: GenVec,
    pub qdot: GenVec,
    pub f_b_hat: Wrench,
    pub f_ext_true: Wrench,
    pub fc_hat_z: [f64; NUM_LEGS],
    pub s_hat: [bool; NUM_LEGS],
    pub r_d: Vector2<f64>,
    pub rdot_d: Vector2<f64>,
    pub z_d: f64,
    pub yaw_d: f64,
    pub taps_h: f64,
    pub t_g: f64,
    pub obstacle_valid: bool,
    pub obstacle_dist: f64,
    pub cbf_a_star: f64,
    pub mpc_iterations: usize,
    pub mpc_kkt: f64,
    pub mpc_status: MpcStatus,
    pub gpgd_iterations: usize,
    pub total_normal_force: f64,
}

pub const CSV_COLUMNS: &[&str] = &[
    "time",
    "q_bx", "q_by", "q_bz", "q_roll", "q_pitch", "q_yaw",
    "q_fl0", "q_fl1", "q_fl2", "q_fr0", "q_fr1", "q_fr2",
    "q_rl0", "q_rl1", "q_rl2", "q_rr0", "q_rr1", "q_rr2",
    "qd_bx", "qd_by", "qd_bz", "qd_roll", "qd_pitch", "qd_yaw",
    "qd_fl0", "qd_fl1", "qd_fl2", "qd_fr0", "qd_fr1", "qd_fr2",
    "qd_rl0", "qd_rl1", "qd_rl2", "qd_rr0", "qd_rr1", "qd_rr2",
    "fb_hat_x", "fb_hat_y", "fb_hat_z", "mb_hat_x", "mb_hat_y", "mb_hat_z",
    "fext_x", "fext_y", "fext_z", "mext_x", "mext_y", "mext_z",
    "fc_hat_z_fl", "fc_hat_z_fr", "fc_hat_z_rl", "fc_hat_z_rr",
    "s_hat_fl", "s_hat_fr", "s_hat_rl", "s_hat_rr",
    "r_d_x", "r_d_y", "rdot_d_x", "rdot_d_y", "z_d", "yaw_d",
    "taps_h", "t_g",
    "obstacle_valid", "obstacle_dist", "cbf_a_star",
    "mpc_iterations", "mpc_kkt", "mpc_status",
    "gpgd_iterations", "total_normal_force",
];

impl LogRow {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut fields: Vec<String> = Vec::with_capacity(CSV_COLUMNS.len());
        fields.push(format!("{}", self.time));
        for v in self.q.iter() {
            fields.push(format!("{v}"));
        }
        for v in self.qdot.iter() {
            fields.push(format!("{v}"));
        }
        for v in self.f_b_hat.iter() {
            fields.push(format!("{v}"));
        }
        for v in self.f_ext_true.iter() {
            fields.push(format!("{v}"));
        }
        for v in self.fc_hat_z {
            fields.push(format!("{v}"));
        }
        for s in self.s_hat {
            fields.push(if s { "1".into() } else { "0".into() });
        }
        for v in [
            self.r_d.x,
            self.r_d.y,
            self.rdot_d.x,
            self.rdot_d.y,
            self.z_d,
            self.yaw_d,
            self.taps_h,
            self.t_g,
        ] {
            fields.push(format!("{v}"));
        }
        fields.push(if self.obstacle_valid { "1".into() } else { "0".into() });
        fields.push(format!("{}", self.obstacle_dist));
        fields.push(format!("{}", self.cbf_a_star));
        fields.push(format!("{}", self.mpc_iterations));
        fields.push(format!("{}", self.mpc_kkt));
        fields.push(format!(
            "{}",
            match self.mpc_status {
                MpcStatus::Optimal => 0,
                MpcStatus::MaxIter => 1,
                MpcStatus::Infeasible => 2,
            }
        ));
        fields.push(format!("{}", self.gpgd_iterations));
        fields.push(format!("{}", self.total_normal_force));
        fields.join(",")
    }
}

/// One scored metric.
#[derive(Debug, Clone, Serialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub valid: bool,
}

/// Scored run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub fall: bool,
    pub completed: bool,
    pub results: Vec<MetricResult>,
    pub wall_time_s: f64,
    /// Mean/max MPC solve time over the run, µs (wall clock, not part of
    /// the deterministic state log).
    pub mpc_solve_us_mean: f64,
    pub mpc_solve_us_max: u64,
}

impl MetricsReport {
    pub fn all_pass(&self) -> bool {
        self.completed && self.results.iter().all(|r| r.pass && r.valid)
    }
}

/// Full output of one run.
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: Vec<LogRow>,
    pub staleness_events: u64,
    pub degenerate_estimates: u64,
}

struct SwingState {
    liftoff: Vector3<f64>,
    target: Vector2<f64>,
}

/// Run a scenario to completion (or fall), returning the metrics and log.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, HarnessError> {
    scenario.validate()?;
    let wall_start = std::time::Instant::now();
    let model = scenario.load_model()?;
    let ctrl = &scenario.controller;
    let sim_cfg = scenario.sim.clone();
    let dt = sim_cfg.dt_ctrl;
    let substeps = sim_cfg.substeps();

    let mut sim = Simulation::new(
        model.clone(),
        sim_cfg.clone(),
        Simulation::standing_state(&model),
    )?;
    let z_nominal = sim.state.q[2];

    // Controller state.
    let mut pipeline = SensorPipeline::new(1.0 / dt)?;
    let mut estimator = WrenchEstimator::new();
    let mu_mg = model.mu * model.total_mass * 9.81;
    let f_max0 = ctrl.f_max.unwrap_or(mu_mg);
    let gains = compute_gains(
        Vector2::from_row_slice(&ctrl.a_max),
        Vector2::from_row_slice(&ctrl.v_max),
        f_max0,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let initial_ref = BaseReference::at_rest(
        Vector2::new(sim.state.q[0], sim.state.q[1]),
        sim.state.q[5],
        ctrl.adapt.z_bounds[1],
    );
    let mut planner = BasePlanner::new(gains, ctrl.cbf, ctrl.crop_box, initial_ref, 1.0 / dt);
    let mut gait = GaitSchedule {
        t_g: ctrl.gait.period,
        phi_st: ctrl.gait.stance_fraction,
        phase_offset: ctrl.gait.offsets,
        phase: 0.0,
    };
    let mut adapt_params = ctrl.adapt;
    let contact_threshold = ctrl
        .contact_threshold
        .unwrap_or(0.25 * model.total_mass * 9.81 / 4.0);

    // Synchronous mode solves in-loop on the MPC cadence (deterministic);
    // asynchronous mode hands problems to a solver thread through a slot and
    // paces the loop to the wall clock, as a rate demonstration only.
    let sync_mailbox = MpcMailbox::new();
    let async_slot: std::sync::Arc<std::sync::Mutex<Option<(MpcProblem, f64)>>> =
        std::sync::Arc::new(std::sync::Mutex::new(None));
    let mut async_mpc = if ctrl.mpc.sync_mode {
        None
    } else {
        let slot = std::sync::Arc::clone(&async_slot);
        Some(AsyncMpc::spawn(ctrl.mpc.rate_hz, move || {
            slot.lock().expect("async slot").take()
        }))
    };
    let mpc_every = (ctrl.mpc.dt / dt).round().max(1.0) as usize;
    let mut mpc_warm: Option<Vec<InputVec>> = None;
    let mut last_mpc_stats = (0usize, 0.0f64, MpcStatus::Optimal);
    let mut last_stance_set = [true; NUM_LEGS];
    let mut last_mpc_tick = 0usize;
    let mut staleness_events = 0u64;
    let mut degenerate_estimates = 0u64;
    let mut solve_times_us: Vec<u64> = Vec::new();

    let mut latency_buf = LatencyBuffer::new(0.1, dt, SVector::zeros());
    let mut applied_torque = SVector::<f64, NUM_JOINTS>::zeros();
    let mut reactive_warm: Option<InputVec> = None;

    let mut swing_states: [Option<SwingState>; NUM_LEGS] = [None, None, None, None];
    let mut prev_scheduled = [true; NUM_LEGS];
    let mut stance_since = [0.0f64; NUM_LEGS];
    let mut prev_stance_cmd = [true; NUM_LEGS];
    let mut resync_ticks = 0usize;
    let mut f_max_cycle_phase = 0.0f64;

    let n_ticks = (scenario.duration_s / dt).round() as usize;
    let mut log = Vec::with_capacity(n_ticks);
    let mut fall = false;

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;

        // ── Sense and filter ────────────────────────────────────────────
        // The heavily filtered channels feed the wrench estimator; the fast
        // control loops (swing PD, torque mapping) use the raw samples to
        // avoid filter phase lag in their feedback paths.
        let mut sensors = sim.sample_sensors();
        let noise = sim.torque_noise();
        for i in 0..NUM_JOINTS {
            sensors.joint_torque[i] = applied_torque[i] + noise[i];
        }
        let mut q_raw = GenVec::zeros();
        let mut qd_raw = GenVec::zeros();
        q_raw.fixed_rows_mut::<3>(0).copy_from(&sensors.base_pos);
        q_raw.fixed_rows_mut::<3>(3).copy_from(&sensors.base_euler);
        qd_raw.fixed_rows_mut::<3>(0).copy_from(&sensors.base_vel);
        qd_raw
            .fixed_rows_mut::<3>(3)
            .copy_from(&sensors.euler_rates);
        for i in 0..NUM_JOINTS {
            q_raw[6 + i] = sensors.joint_pos[i];
            qd_raw[6 + i] = sensors.joint_vel[i];
        }
        pipeline.process(
            &mut sensors.joint_pos,
            &mut sensors.joint_vel,
            &mut sensors.joint_torque,
        )?;
        let mut q_hat = q_raw;
        let mut qd_hat = qd_raw;
        for i in 0..NUM_JOINTS {
            q_hat[6 + i] = sensors.joint_pos[i];
            qd_hat[6 + i] = sensors.joint_vel[i];
        }
        let tau_hat = SVector::<f64, NUM_JOINTS>::from_row_slice(&sensors.joint_torque);

        // ── Wrench estimation and contact detection ─────────────────────
        let estimate = estimator.estimate(&model, &q_hat, &qd_hat, &tau_hat, t)?;
        if estimate.degenerate {
            degenerate_estimates += 1;
        }
        let schedule = gait.scheduled_contact();
        let detected = detect_contact(&estimate.f_c, &schedule, contact_threshold);
        // Contact-driven resynchronization: when the detected loading
        // contradicts the schedule on at least three legs for 20 ms (a badly
        // perturbed robot landing on the "wrong" pair), flip the trot phase
        // half a cycle to match physical support.
        let mismatch = (0..NUM_LEGS)
            .filter(|&l| schedule.stance[l] != detected.s_hat[l])
            .count();
        if mismatch >= 3 {
            resync_ticks += 1;
        } else {
            resync_ticks = 0;
        }
        if resync_ticks as f64 * dt >= 0.02 {
            gait.phase = (gait.phase + 0.5).rem_euclid(1.0);
            resync_ticks = 0;
        }
        let schedule = gait.scheduled_contact();
        // Operational stance: scheduled stance or detected early touchdown.
        let mut stance_active = [false; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            stance_active[leg] = schedule.stance[leg] || detected.s_hat[leg];
        }

        // ── TAPS margin and gait adaptation ──────────────────────────────
        let feet_world = model.foot_positions(&q_raw)?;
        let base_xy = Vector2::new(q_hat[0], q_hat[1]);
        let mut feet_rel = [Vector2::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            feet_rel[leg] = feet_world[leg].xy() - base_xy;
        }
        let poly = taps_vertices(&feet_rel, gait.phi_st);
        let taps_h = stability_margin(&poly, Vector2::zeros());

        let max_reach = model.max_leg_reach();
        adapt_params.d_limit = (0..NUM_LEGS).any(|leg| {
            stance_active[leg] && {
                let hip = q_hat.fixed_rows::<3>(0).into_owned()
                    + base_rotation(&q_hat.fixed_rows::<3>(3).into_owned())
                        * model.hip_offsets[leg];
                (feet_world[leg] - hip).norm() > 0.92 * max_reach
            }
        });
        let (t_g_new, z_d_new) =
            adapt_motion(taps_h, gait.t_g, planner.reference.z_d, &adapt_params, dt);
        gait.t_g = t_g_new;
        planner.reference.z_d = z_d_new;

        // Adaptive admittance ceiling, refreshed once per gait cycle.
        if ctrl.f_max.is_none() {
            f_max_cycle_phase += dt / gait.t_g;
            if f_max_cycle_phase >= 1.0 || tick == 0 {
                f_max_cycle_phase = f_max_cycle_phase.rem_euclid(1.0);
                let total_normal: f64 = (0..NUM_LEGS)
                    .map(|leg| estimate.foot_normal_force(leg).max(0.0))
                    .sum();
                let f_max = (model.mu * total_normal).max(0.5 * mu_mg);
                planner.set_f_max(f_max);
            }
        }

        // ── Base planner (admittance + CBF) ──────────────────────────────
        let cloud = scenario
            .obstacle
            .as_ref()
            .map(|o| synth_box_cloud(o, &sensors.base_pos, &sensors.base_euler))
            .unwrap_or_default();
        let yaw_hat = q_hat[5];
        planner.update(
            Vector2::from_row_slice(&ctrl.v_cmd),
            ctrl.yaw_rate_cmd,
            estimate.f_b.fixed_rows::<2>(0).into_owned(),
            yaw_hat,
            &cloud,
            dt,
        )?;
        // Footstep robustness: keep the desired velocity near the estimate.
        let rdot_hat = qd_hat.fixed_rows::<2>(0).into_owned();
        planner.reference.rdot_d =
            saturate_desired_velocity(planner.reference.rdot_d, rdot_hat, ctrl.footstep.delta_v);

        // ── Gait phase and swing targets ─────────────────────────────────
        gait.advance(dt)?;
        let schedule_after = gait.scheduled_contact();
        let mut leg_commands: [LegCommand; NUM_LEGS] = [LegCommand::Stance {
            force: Vector3::zeros(),
        }; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let scheduled = schedule_after.stance[leg];
            if prev_scheduled[leg] && !scheduled {
                // Liftoff: record the starting point of the swing.
                swing_states[leg] = Some(SwingState {
                    liftoff: feet_world[leg],
                    target: feet_world[leg].xy(),
                });
            }
            prev_scheduled[leg] = scheduled;

            if !scheduled {
                let progress = gait.swing_progress(leg);
                // Early touchdown: the contact detector saw ground force late
                // in swing, so load the leg instead of driving it downward.
                if false && detected.s_hat[leg] && progress > 0.7 {
                    swing_states[leg] = None;
                    prev_scheduled[leg] = true;
                    continue;
                }
                let time_left = (1.0 - progress) * gait.swing_duration();
                let reference = &planner.reference;
                let omega_z = qd_hat[5];
                let hip_world = q_hat.fixed_rows::<3>(0).into_owned()
                    + base_rotation(&q_hat.fixed_rows::<3>(3).into_owned())
                        * model.nominal_foot_offset(leg);
                let hip_vel = rdot_hat
                    + omega_z * Vector2::new(-(hip_world.y - q_hat[1]), hip_world.x - q_hat[0]);
                // Touchdown hip prediction anchored at the actual hip and
                // extrapolated with the desired velocity, plus a lean-capture
                // shift: a tipping body lands its feet on the falling side
                // (h·(Φ + T·Φ̇) along the lean direction).
                let hip_at_td = hip_world.xy() + rdot_hat * time_left;
                let hip_pos_d = Vector3::new(hip_at_td.x, hip_at_td.y, reference.z_d);
                let target = footstep_target(
                    hip_vel,
                    hip_pos_d,
                    rdot_hat,
                    reference.rdot_d,
                    gait.phi_st,
                    gait.t_g,
                    ctrl.footstep.k_cp,
                    model.gravity.norm(),
                );
                if let Some(sw) = swing_states[leg].as_mut() {
                    sw.target = target;
                    // Aim slightly below the surface so the foot engages the
                    // ground with near-zero velocity instead of hovering.
                    let target3 = Vector3::new(target.x, target.y, -0.005);
                    let (pos, dpos) = swing_trajectory(
                        sw.liftoff,
                        target3,
                        progress,
                        ctrl.footstep.step_height,
                    );
                    let vel = dpos / gait.swing_duration().max(1e-6);
                    leg_commands[leg] = LegCommand::Swing {
                        pos_des: pos,
                        vel_des: vel,
                    };
                } else {
                    // Run started mid-swing; hold the foot where it is.
                    leg_commands[leg] = LegCommand::Swing {
                        pos_des: feet_world[leg],
                        vel_des: Vector3::zeros(),
                    };
                }
            }
        }

        // ── MPC (synchronous cadence, plus an immediate re-solve whenever
        // the stance set changes so node 0 is never stale at a handoff) ──
        let stance_changed = stance_active != last_stance_set && tick >= last_mpc_tick + 3;
        if tick % mpc_every == 0 || stance_changed {
            last_mpc_tick = tick;
            last_stance_set = stance_active;
            let reference = &planner.reference;
            let mut x0 = StateVec::zeros();
            x0.fixed_rows_mut::<3>(0)
                .copy_from(&q_hat.fixed_rows::<3>(0).into_owned());
            x0.fixed_rows_mut::<3>(3)
                .copy_from(&q_hat.fixed_rows::<3>(3).into_owned());
            x0.fixed_rows_mut::<3>(6)
                .copy_from(&qd_hat.fixed_rows::<3>(0).into_owned());
            let omega = euler_rate_map(&q_hat.fixed_rows::<3>(3).into_owned())
                * qd_hat.fixed_rows::<3>(3).into_owned();
            x0.fixed_rows_mut::<3>(9).copy_from(&omega);

            let n = ctrl.mpc.horizon;
            let mut stance_nodes = gait.contact_horizon(n, ctrl.mpc.dt);
            stance_nodes[0] = stance_active;
            let (x_ref, u_ref) = build_reference(
                reference.r_d,
                reference.rdot_d,
                reference.z_d,
                reference.yaw_d,
                reference.yawrate_d,
                &stance_nodes,
                model.total_mass,
                model.gravity.norm(),
                ctrl.mpc.dt,
            );

            // Foot positions relative to the base: current feet for stance,
            // planned touchdown for swing; trunk inertia in the yaw frame.
            let mut foot_rel = [Vector3::zeros(); NUM_LEGS];
            for leg in 0..NUM_LEGS {
                foot_rel[leg] = match (schedule_after.stance[leg], swing_states[leg].as_ref()) {
                    (false, Some(sw)) => Vector3::new(
                        sw.target.x - q_hat[0],
                        sw.target.y - q_hat[1],
                        -reference.z_d,
                    ),
                    _ => feet_world[leg] - q_hat.fixed_rows::<3>(0).into_owned(),
                };
            }
            let yaw_rot = base_rotation(&Vector3::new(0.0, 0.0, yaw_hat));
            let inertia_world = yaw_rot * model.base_inertia_nominal * yaw_rot.transpose();
            let (a, b, b_vec) = build_dynamics(
                model.total_mass,
                &inertia_world,
                &model.gravity,
                ctrl.mpc.dt,
                &foot_rel,
            )?;
            let problem = MpcProblem {
                a,
                b,
                b_vec,
                x0,
                x_ref,
                u_ref,
                q_diag: StateVec::from_row_slice(&ctrl.mpc.q_diag),
                r_diag: InputVec::from_row_slice(&ctrl.mpc.r_diag),
                stance: stance_nodes,
                mu: model.mu,
                f_z_min: ctrl.mpc.f_z_min,
                f_z_max: ctrl.mpc.f_z_max,
                dt: ctrl.mpc.dt,
            };
            if async_mpc.is_some() {
                *async_slot.lock().expect("async slot") = Some((problem, t));
            } else {
                let sol = solve_mpc(&problem, mpc_warm.as_deref(), t)?;
                mpc_warm = Some(sol.forces.clone());
                last_mpc_stats = (sol.iterations, sol.kkt_residual, sol.status);
                solve_times_us.push(sol.solve_time_us);
                sync_mailbox.publish(sol);
            }
        }
        let sample = match &async_mpc {
            Some(runner) => runner.mailbox.sample(t),
            None => sync_mailbox.sample(t),
        };
        let mut f_mpc = match sample {
            SampleOutcome::Fresh { forces, .. } => forces,
            SampleOutcome::Stale => {
                staleness_events += 1;
                MpcProblem::gravity_distribution(
                    model.total_mass,
                    model.gravity.norm(),
                    &stance_active,
                )
            }
            SampleOutcome::Empty => MpcProblem::gravity_distribution(
                model.total_mass,
                model.gravity.norm(),
                &stance_active,
            ),
        };
        // Remap the sampled plan onto the current stance set: the node's
        // schedule can be a tick stale around transitions. Legs now in
        // swing are zeroed; stance legs the plan left unloaded take the
        // gravity share so the tracking term stays meaningful.
        {
            let n_stance = leg_commands
                .iter()
                .filter(|c| matches!(c, LegCommand::Stance { .. }))
                .count()
                .max(1);
            let share = model.total_mass * model.gravity.norm() / n_stance as f64;
            for leg in 0..NUM_LEGS {
                let stance_now = matches!(leg_commands[leg], LegCommand::Stance { .. });
                if !stance_now {
                    f_mpc.fixed_rows_mut::<3>(3 * leg).fill(0.0);
                } else if f_mpc[3 * leg + 2] < ctrl.mpc.f_z_min {
                    f_mpc[3 * leg] = 0.0;
                    f_mpc[3 * leg + 1] = 0.0;
                    f_mpc[3 * leg + 2] = share;
                }
            }
        }

        // ── Reactive force QP and torque mapping ─────────────────────────
        let mut tau_b = desired_base_wrench(
            &q_hat.fixed_rows::<3>(0).into_owned(),
            &qd_hat.fixed_rows::<3>(0).into_owned(),
            &q_hat.fixed_rows::<3>(3).into_owned(),
            &(euler_rate_map(&q_hat.fixed_rows::<3>(3).into_owned())
                * qd_hat.fixed_rows::<3>(3).into_owned()),
            &planner.reference,
            &ctrl.wrench_pd,
            &model,
        );
        // Bounded attitude authority: an unbounded moment demand on an edge
        // stance whips the body into a ballistic spin; stepping has to do
        // the rest of the correction.
        tau_b[3] = tau_b[3].clamp(-12.0, 12.0);
        tau_b[4] = tau_b[4].clamp(-12.0, 12.0);
        tau_b[5] = tau_b[5].clamp(-8.0, 8.0);
        let mut foot_rel_now = [Vector3::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            foot_rel_now[leg] = feet_world[leg] - q_hat.fixed_rows::<3>(0).into_owned();
        }
        let mut cones = [ConeSpec::swing(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let stance_cmd = matches!(leg_commands[leg], LegCommand::Stance { .. });
            if stance_cmd && !prev_stance_cmd[leg] {
                stance_since[leg] = t;
            }
            prev_stance_cmd[leg] = stance_cmd;
            if stance_cmd {
                // Gait-scheduled force bounds: freshly landed legs load up
                // over 50 ms and legs about to lift off taper, which keeps
                // touchdown impacts from kicking the body.
                let ramp_up = ((t - stance_since[leg]) / 0.03).clamp(0.2, 1.0);
                let taper = if schedule_after.stance[leg] {
                    ((1.0 - gait.stance_progress(leg)) / 0.08).clamp(0.3, 1.0)
                } else {
                    1.0
                };
                let factor = ramp_up.min(taper);
                cones[leg] = ConeSpec::stance(
                    model.mu,
                    ctrl.mpc.f_z_min.min(factor * ctrl.mpc.f_z_max),
                    factor * ctrl.mpc.f_z_max,
                );
            }
        }
        let qp = ReactiveQp {
            wrench_map: base_wrench_map(&foot_rel_now),
            tau_b,
            s1_diag: SVector::<f64, 6>::from_column_slice(&[
                ctrl.reactive.s1,
                ctrl.reactive.s1,
                ctrl.reactive.s1_z,
                ctrl.reactive.s1_moment,
                ctrl.reactive.s1_moment,
                ctrl.reactive.s1_moment,
            ]),
            w_diag: SVector::from_element(ctrl.reactive.w),
            v_diag: SVector::from_element(ctrl.reactive.v),
            f_mpc,
            cones,
        };
        let reactive_sol = solve_reactive_qp(
            &qp,
            reactive_warm.as_ref(),
            ctrl.reactive.max_iter,
            ctrl.reactive.tol,
        );
        reactive_warm = Some(reactive_sol.forces);
        for leg in 0..NUM_LEGS {
            if let LegCommand::Stance { force } = &mut leg_commands[leg] {
                *force = reactive_sol.forces.fixed_rows::<3>(3 * leg).into_owned();
            }
        }
        let (mut tau_cmd, _singular) =
            map_to_torques(&leg_commands, &q_raw, &qd_raw, &model, &ctrl.swing);
        for v in tau_cmd.iter_mut() {
            *v = v.clamp(-ctrl.torque_limit, ctrl.torque_limit);
        }

        // ── Latency, actuation, physics ──────────────────────────────────
        let latency = sim.sample_latency();
        applied_torque = latency_buf.step(tau_cmd, latency, dt);
        let mut diverged = false;
        for k in 0..substeps {
            let t_sub = t + k as f64 * sim_cfg.dt_sim;
            let wrench = scenario
                .disturbance
                .wrench(t_sub, Vector2::new(sim.state.q[0], sim.state.q[1]));
            if sim.step(&applied_torque, &wrench).is_err() {
                // Divergence ends the run with a partial log and a failure
                // report rather than an error.
                diverged = true;
                break;
            }
        }
        if diverged {
            fall = true;
            break;
        }

        // ── Log ──────────────────────────────────────────────────────────
        let total_normal: f64 = sim.contacts.iter().map(|c| c.force.z).sum();
        log.push(LogRow {
            time: t,
            q: sim.state.q,
            qdot: sim.state.qdot,
            f_b_hat: estimate.f_b,
            f_ext_true: sim.applied_external,
            fc_hat_z: [
                estimate.foot_normal_force(0),
                estimate.foot_normal_force(1),
                estimate.foot_normal_force(2),
                estimate.foot_normal_force(3),
            ],
            s_hat: detected.s_hat,
            r_d: planner.reference.r_d,
            rdot_d: planner.reference.rdot_d,
            z_d: planner.reference.z_d,
            yaw_d: planner.reference.yaw_d,
            taps_h,
            t_g: gait.t_g,
            obstacle_valid: planner.last_obstacle.valid,
            obstacle_dist: -planner.last_obstacle.r_b_signed,
            cbf_a_star: planner.last_cbf.a_star,
            mpc_iterations: last_mpc_stats.0,
            mpc_kkt: last_mpc_stats.1,
            mpc_status: last_mpc_stats.2,
            gpgd_iterations: reactive_sol.iterations,
            total_normal_force: total_normal,
        });

        // Fall detection ends the run early.
        if sim.state.q[2] < 0.6 * z_nominal
            || sim.state.q[3].abs() > 0.6
            || sim.state.q[4].abs() > 0.6
        {
            fall = true;
            break;
        }

        // Asynchronous mode runs against the wall clock.
        if async_mpc.is_some() {
            let target = wall_start.elapsed().as_secs_f64();
            if t + dt > target {
                std::thread::sleep(std::time::Duration::from_secs_f64(t + dt - target));
            }
        }
    }
    if let Some(runner) = async_mpc.as_mut() {
        runner.stop();
    }

    let completed = !fall && log.len() == n_ticks;
    let results = compute_metrics(&scenario.metrics, &log, scenario, fall);
    let mpc_solve_us_mean = if solve_times_us.is_empty() {
        0.0
    } else {
        solve_times_us.iter().sum::<u64>() as f64 / solve_times_us.len() as f64
    };
    Ok(RunOutput {
        report: MetricsReport {
            scenario: scenario.name.clone(),
            fall,
            completed,
            results,
            wall_time_s: wall_start.elapsed().as_secs_f64(),
            mpc_solve_us_mean,
            mpc_solve_us_max: solve_times_us.iter().copied().max().unwrap_or(0),
        },
        log,
        staleness_events,
        degenerate_estimates,
    })
}

/// Write the state/force log as CSV.
pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{}", LogRow::csv_header())?;
    for row in log {
        writeln!(file, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Moving-average smoothing over a window of `n` samples.
fn moving_average(xs: &[f64], n: usize) -> Vec<f64> {
    if n <= 1 {
        return xs.to_vec();
    }
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        sum += x;
        if i >= n {
            sum -= xs[i - n];
        }
        out.push(sum / n.min(i + 1) as f64);
    }
    out
}

/// Pulse windows (start, end) of the configured impulse disturbance.
fn pulse_times(scenario: &Scenario) -> Vec<(f64, f64)> {
    if let DisturbanceProfile::ImpulsePush {
        duration_s,
        frequency_hz,
        start_s,
        ..
    } = &scenario.disturbance
    {
        let period = 1.0 / frequency_hz;
        let mut out = Vec::new();
        let mut t = *start_s;
        while t < scenario.duration_s {
            out.push((t, t + duration_s));
            t += period;
        }
        out
    } else {
        Vec::new()
    }
}

fn compute_metrics(
    specs: &[MetricSpec],
    log: &[LogRow],
    scenario: &Scenario,
    fall: bool,
) -> Vec<MetricResult> {
    let dt = scenario.sim.dt_ctrl;
    let valid = !log.is_empty();
    let mut results = Vec::new();

    for spec in specs {
        let result = match spec {
            MetricSpec::NoFall => MetricResult {
                name: "no_fall".into(),
                value: if fall { 1.0 } else { 0.0 },
                threshold: 0.0,
                pass: !fall,
                valid,
            },
            MetricSpec::HorizontalForceRmsError {
                max_n,
                settle_s,
                smooth_s,
            } => {
                let skip = (settle_s / dt) as usize;
                let window = ((smooth_s / dt) as usize).max(1);
                let ex: Vec<f64> = log.iter().map(|r| r.f_b_hat[0]).collect();
                let ey: Vec<f64> = log.iter().map(|r| r.f_b_hat[1]).collect();
                let ax: Vec<f64> = log.iter().map(|r| r.f_ext_true[0]).collect();
                let ay: Vec<f64> = log.iter().map(|r| r.f_ext_true[1]).collect();
                let (ex, ey) = (moving_average(&ex, window), moving_average(&ey, window));
                let (ax, ay) = (moving_average(&ax, window), moving_average(&ay, window));
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in skip..log.len() {
                    let dx = ex[i] - ax[i];
                    let dy = ey[i] - ay[i];
                    sum += dx * dx + dy * dy;
                    count += 1;
                }
                // RMS per axis (x and y pooled).
                let rms = if count > 0 {
                    (sum / (2 * count) as f64).sqrt()
                } else {
                    f64::NAN
                };
                MetricResult {
                    name: "horizontal_force_rms_error".into(),
                    value: rms,
                    threshold: *max_n,
                    pass: rms.is_finite() && rms <= *max_n,
                    valid: valid && log.len() > skip,
                }
            }
            MetricSpec::VerticalLoadMeanError {
                expected_n,
                max_err_n,
                settle_s,
            } => {
                let skip = (settle_s / dt) as usize;
                let vals: Vec<f64> = log.iter().skip(skip).map(|r| r.f_b_hat[2]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                let err = (mean - expected_n).abs();
                MetricResult {
                    name: "vertical_load_mean_error".into(),
                    value: err,
                    threshold: *max_err_n,
                    pass: err <= *max_err_n,
                    valid: valid && !vals.is_empty(),
                }
            }
            MetricSpec::VelocityDominantFrequency {
                expected_hz,
                tol_hz,
                settle_s,
            } => {
                let skip = (settle_s / dt) as usize;
                let vx: Vec<f64> = log.iter().skip(skip).map(|r| r.qdot[0]).collect();
                let freq = dominant_frequency(&vx, dt, 2.0);
                MetricResult {
                    name: "velocity_dominant_frequency".into(),
                    value: freq,
                    threshold: *expected_hz,
                    pass: (freq - expected_hz).abs() <= *tol_hz,
                    valid: valid && vx.len() > 100,
                }
            }
            MetricSpec::PushRecovery { max_s } => {
                let pulses = pulse_times(scenario);
                let v_cmd = Vector2::from_row_slice(&scenario.controller.v_cmd);
                let mut worst: f64 = 0.0;
                let mut ok = true;
                for (_, pulse_end) in &pulses {
                    // Only score pulses whose full recovery window fits in
                    // the log.
                    if pulse_end + max_s + 0.5 >= log.len() as f64 * dt {
                        continue;
                    }
                    match recovery_time(log, *pulse_end, v_cmd, dt) {
                        Some(rt) => worst = worst.max(rt),
                        None => ok = false,
                    }
                }
                MetricResult {
                    name: "push_recovery_time".into(),
                    value: worst,
                    threshold: *max_s,
                    pass: ok && worst <= *max_s && !pulses.is_empty(),
                    valid,
                }
            }
            MetricSpec::DeltaV { min_mps } => {
                let pulses = pulse_times(scenario);
                let mut peak: f64 = 0.0;
                for (start, end) in &pulses {
                    let i0 = (start / dt) as usize;
                    let i1 = ((end / dt) as usize + (0.3 / dt) as usize).min(log.len());
                    if i0 >= log.len() {
                        continue;
                    }
                    let v_before = Vector2::new(log[i0].qdot[0], log[i0].qdot[1]);
                    for row in &log[i0..i1] {
                        let dv = (Vector2::new(row.qdot[0], row.qdot[1]) - v_before).norm();
                        peak = peak.max(dv);
                    }
                }
                MetricResult {
                    name: "pulse_delta_v".into(),
                    value: peak,
                    threshold: *min_mps,
                    pass: peak >= *min_mps,
                    valid,
                }
            }
            MetricSpec::HeightDipAndRecover { min_dip_m, band_m } => {
                let pulses = pulse_times(scenario);
                let z_nom = scenario.controller.adapt.z_bounds[1];
                let mut min_dip = f64::INFINITY;
                let mut recovered_all = true;
                for (i, (start, _)) in pulses.iter().enumerate() {
                    let i0 = (start / dt) as usize;
                    let i1 = pulses
                        .get(i + 1)
                        .map(|(s, _)| (s / dt) as usize)
                        .unwrap_or(log.len())
                        .min(log.len());
                    if i0 >= log.len() || i0 >= i1 {
                        continue;
                    }
                    let z_min = log[i0..i1]
                        .iter()
                        .map(|r| r.z_d)
                        .fold(f64::INFINITY, f64::min);
                    min_dip = min_dip.min(z_min);
                    let z_end = log[i1 - 1].z_d;
                    if i1 < log.len() && (z_nom - z_end).abs() > *band_m {
                        recovered_all = false;
                    }
                }
                let dip = z_nom - min_dip;
                MetricResult {
                    name: "height_dip_and_recover".into(),
                    value: dip,
                    threshold: *min_dip_m,
                    pass: dip >= *min_dip_m && recovered_all && !pulses.is_empty(),
                    valid,
                }
            }
            MetricSpec::MinObstacleDistance { min_m } => {
                let min_d = log
                    .iter()
                    .filter(|r| r.obstacle_valid)
                    .map(|r| r.obstacle_dist)
                    .fold(f64::INFINITY, f64::min);
                MetricResult {
                    name: "min_obstacle_distance".into(),
                    value: min_d,
                    threshold: *min_m,
                    pass: min_d >= *min_m,
                    valid: valid && min_d.is_finite(),
                }
            }
            MetricSpec::LateralDisplacement { min_m } => {
                let y0 = log.first().map(|r| r.q[1]).unwrap_or(0.0);
                let max_dy = log
                    .iter()
                    .map(|r| (r.q[1] - y0).abs())
                    .fold(0.0f64, f64::max);
                MetricResult {
                    name: "lateral_displacement".into(),
                    value: max_dy,
                    threshold: *min_m,
                    pass: max_dy >= *min_m,
                    valid,
                }
            }
            MetricSpec::AnchorTracking { max_mean_m } => {
                let mut sum = 0.0;
                let mut n = 0usize;
                if let DisturbanceProfile::LeaderRod { waypoints, .. } = &scenario.disturbance {
                    for row in log {
                        if let Some(anchor) = anchor_at(waypoints, row.time) {
                            sum += (anchor - Vector2::new(row.q[0], row.q[1])).norm();
                            n += 1;
                        }
                    }
                }
                let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
                MetricResult {
                    name: "anchor_tracking".into(),
                    value: mean,
                    threshold: *max_mean_m,
                    pass: mean.is_finite() && mean <= *max_mean_m,
                    valid: valid && n > 0,
                }
            }
        };
        results.push(result);
    }
    results
}

fn anchor_at(waypoints: &[crate::simulator::Waypoint], t: f64) -> Option<Vector2<f64>> {
    if waypoints.is_empty() {
        return None;
    }
    if t <= waypoints[0].t {
        return Some(Vector2::new(waypoints[0].x, waypoints[0].y));
    }
    for w in waypoints.windows(2) {
        if t <= w[1].t {
            let a = (t - w[0].t) / (w[1].t - w[0].t).max(1e-9);
            return Some(Vector2::new(
                w[0].x + a * (w[1].x - w[0].x),
                w[0].y + a * (w[1].y - w[0].y),
            ));
        }
    }
    let last = waypoints.last().unwrap();
    Some(Vector2::new(last.x, last.y))
}

/// First time after `from` at which ‖ṙ̂ − v_cmd‖ < 0.1 m/s holds for 0.5 s,
/// measured from the pulse end. The velocity estimate is smoothed over a
/// gait cycle so stepping ripple does not mask the recovery.
fn recovery_time(log: &[LogRow], from: f64, v_cmd: Vector2<f64>, dt: f64) -> Option<f64> {
    let window = (0.4 / dt) as usize;
    let vx: Vec<f64> = log.iter().map(|r| r.qdot[0]).collect();
    let vy: Vec<f64> = log.iter().map(|r| r.qdot[1]).collect();
    let (vx, vy) = (moving_average(&vx, window), moving_average(&vy, window));
    let start = (from / dt) as usize;
    let hold = (0.5 / dt) as usize;
    let mut run = 0usize;
    for i in start..log.len() {
        let v = Vector2::new(vx[i], vy[i]);
        if (v - v_cmd).norm() < 0.1 {
            run += 1;
            if run >= hold {
                return Some((i + 1 - hold - start) as f64 * dt);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Dominant DFT frequency of the signal below `max_hz`, Hz.
pub fn dominant_frequency(xs: &[f64], dt: f64, max_hz: f64) -> f64 {
    let n = xs.len();
    if n < 8 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let max_bin = ((max_hz * n as f64 * dt) as usize).max(2).min(n / 2);
    let mut best = (0usize, 0.0f64);
    for k in 1..=max_bin {
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
            re += (x - mean) * phase.cos();
            im -= (x - mean) * phase.sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (k, mag);
        }
    }
    best.0 as f64 / (n as f64 * dt)
}

/// Built-in scenario presets mirroring the simulation experiments.
pub fn preset(name: &str) -> Option<Scenario> {
    let base_sim = SimConfig {
        latency_histogram: vec![(0.0, 0.7), (5.0, 0.3)],
        ..SimConfig::default()
    };
    match name {
        "circular_force" => Some(Scenario {
            name: "circular_force".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::CircularForce {
                magnitude: 20.0,
                omega: 1.0,
                fz: -50.0,
                start_s: 4.0,
            },
            obstacle: None,
            duration_s: 30.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::HorizontalForceRmsError {
                    max_n: 3.0,
                    settle_s: 5.0,
                    smooth_s: 0.5,
                },
                MetricSpec::VerticalLoadMeanError {
                    expected_n: -50.0,
                    max_err_n: 5.0,
                    settle_s: 5.0,
                },
                MetricSpec::VelocityDominantFrequency {
                    expected_hz: 1.0 / (2.0 * std::f64::consts::PI),
                    tol_hz: 0.06,
                    settle_s: 5.0,
                },
            ],
        }),
        "push_recovery" => Some(Scenario {
            name: "push_recovery".into(),
            robot: None,
            controller: ControllerParams {
                v_max: [1.3, 1.3],
                a_max: [1.5, 1.5],
                gait: GaitConfig {
                    period: 0.35,
                    stance_fraction: 0.6,
                    offsets: [0.0, 0.5, 0.5, 0.0],
                },
                adapt: AdaptationParams {
                    z_bounds: [0.23, 0.28],
                    ..AdaptationParams::default()
                },
                footstep: FootstepParams {
                    k_cp: 1.2,
                    delta_v: 0.5,
                    step_height: 0.07,
                },
                ..ControllerParams::default()
            },
            sim: base_sim,
            disturbance: DisturbanceProfile::ImpulsePush {
                magnitude: 210.0,
                duration_s: 0.1,
                frequency_hz: 0.3,
                direction: [0.0, 1.0, 0.0],
                start_s: 2.15,
            },
            obstacle: None,
            duration_s: 20.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::DeltaV { min_mps: 1.35 },
                MetricSpec::PushRecovery { max_s: 3.0 },
                MetricSpec::HeightDipAndRecover {
                    min_dip_m: 0.01,
                    band_m: 0.01,
                },
            ],
        }),
        "cbf_box" => Some(Scenario {
            name: "cbf_box".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::ScriptedTimeline {
                entries: vec![crate::simulator::TimelineEntry {
                    t_start: 1.0,
                    t_end: 12.0,
                    force: [30.0, 0.0, 0.0],
                }],
            },
            obstacle: Some(BoxObstacle {
                center: [0.9, 0.0],
                half_extents: [0.3, 0.4],
                height: 0.5,
                spacing: 0.04,
            }),
            duration_s: 12.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::MinObstacleDistance { min_m: 0.28 },
            ],
        }),
        "cbf_oblique" => Some(Scenario {
            name: "cbf_oblique".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::ScriptedTimeline {
                entries: vec![crate::simulator::TimelineEntry {
                    t_start: 1.0,
                    t_end: 12.0,
                    force: [26.0, 15.0, 0.0],
                }],
            },
            obstacle: Some(BoxObstacle {
                center: [0.9, 0.0],
                half_extents: [0.3, 0.4],
                height: 0.5,
                spacing: 0.04,
            }),
            duration_s: 12.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::MinObstacleDistance { min_m: 0.28 },
                MetricSpec::LateralDisplacement { min_m: 0.1 },
            ],
        }),
        "constant_load" => Some(Scenario {
            name: "constant_load".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::ConstantLoad {
                force: [0.0, 0.0, -50.0],
                moment: [0.0, 0.0, 0.0],
            },
            obstacle: None,
            duration_s: 8.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::VerticalLoadMeanError {
                    expected_n: -50.0,
                    max_err_n: 5.0,
                    settle_s: 2.0,
                },
            ],
        }),
        "rod_leader" => Some(Scenario {
            name: "rod_leader".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::LeaderRod {
                stiffness: 120.0,
                waypoints: vec![
                    crate::simulator::Waypoint { t: 0.0, x: 0.0, y: 0.0 },
                    crate::simulator::Waypoint { t: 4.0, x: 0.0, y: 0.0 },
                    crate::simulator::Waypoint { t: 14.0, x: 2.0, y: 0.0 },
                    crate::simulator::Waypoint { t: 22.0, x: 2.0, y: 1.2 },
                ],
                fz: -30.0,
            },
            obstacle: None,
            duration_s: 24.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::AnchorTracking { max_mean_m: 0.6 },
            ],
        }),
        "rod_robot" => Some(Scenario {
            name: "rod_robot".into(),
            robot: None,
            controller: ControllerParams::default(),
            sim: base_sim,
            disturbance: DisturbanceProfile::LeaderRod {
                stiffness: 200.0,
                waypoints: vec![
                    crate::simulator::Waypoint { t: 0.0, x: 0.0, y: 0.0 },
                    crate::simulator::Waypoint { t: 3.0, x: 0.0, y: 0.0 },
                    crate::simulator::Waypoint { t: 10.0, x: 1.2, y: -0.8 },
                    crate::simulator::Waypoint { t: 18.0, x: 2.4, y: 0.4 },
                ],
                fz: 0.0,
            },
            obstacle: None,
            duration_s: 20.0,
            metrics: vec![
                MetricSpec::NoFall,
                MetricSpec::AnchorTracking { max_mean_m: 0.6 },
            ],
        }),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "circular_force",
        "push_recovery",
        "cbf_box",
        "cbf_oblique",
        "constant_load",
        "rod_leader",
        "rod_robot",
    ]
}
