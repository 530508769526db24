//! Reduced-order convex MPC over foot contact forces.
//!
//! The prediction model is a discrete double integrator on the base state
//! `x = [r_b; Φ_b; ṙ_b; ω_b]` with constant `A`, `B`, `b` over the horizon;
//! per-foot friction-pyramid and unilaterality constraints bound the inputs.
//! The QP is solved in condensed form (states eliminated) by a primal-dual
//! interior-point method. Swing-foot forces are eliminated from the problem
//! and returned as exact zeros.
//!
//! Solutions are published to a single-slot mailbox sampled by the control
//! loop; the solver can run synchronously (deterministic tests) or on its
//! own thread.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use thiserror::Error;

use crate::model::{skew, NUM_LEGS};

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 12;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type InputVec = SVector<f64, INPUT_DIM>;
pub type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid MPC problem: {0}")]
    InvalidProblem(String),
    #[error("base inertia is singular")]
    SingularInertia,
}

/// Discrete dynamics `x_{k+1} = A x_k + B u_k + b` for the reduced model.
///
/// `foot_rel` are the foot positions relative to the base; `inertia` is the
/// nominal trunk inertia expressed in the same frame as the forces.
pub fn build_dynamics(
    mass: f64,
    inertia: &Matrix3<f64>,
    gravity: &Vector3<f64>,
    dt: f64,
    foot_rel: &[Vector3<f64>; NUM_LEGS],
) -> Result<(StateMat, StateMat, StateVec), MpcError> {
    if !(dt > 0.0) {
        return Err(MpcError::InvalidProblem("dt must be positive".into()));
    }
    let inertia_inv = inertia.try_inverse().ok_or(MpcError::SingularInertia)?;

    let mut a = StateMat::identity();
    for i in 0..6 {
        a[(i, 6 + i)] = dt;
    }
    let mut b = StateMat::zeros();
    for leg in 0..NUM_LEGS {
        let col = 3 * leg;
        b.fixed_view_mut::<3, 3>(6, col)
            .copy_from(&(Matrix3::identity() * (dt / mass)));
        b.fixed_view_mut::<3, 3>(9, col)
            .copy_from(&(inertia_inv * skew(&foot_rel[leg]) * dt));
    }
    let mut b_vec = StateVec::zeros();
    b_vec.fixed_rows_mut::<3>(6).copy_from(&(dt * gravity));
    Ok((a, b, b_vec))
}

/// Per-foot force constraint data: `lb ≤ D·F ≤ ub`.
#[derive(Debug, Clone)]
pub struct FootConstraint {
    pub d: SMatrix<f64, 5, 3>,
    pub lb: SVector<f64, 5>,
    pub ub: SVector<f64, 5>,
}

/// Unilaterality and friction pyramid rows. A swing foot (`stance = false`)
/// has its normal-force bounds collapsed to `0 ≤ F_z ≤ 0`, which with the
/// pyramid rows admits only `F = 0`.
pub fn build_constraints(mu: f64, stance: bool, f_z_min: f64, f_z_max: f64) -> FootConstraint {
    assert!(mu > 0.0 && f_z_min >= 0.0 && f_z_min <= f_z_max);
    let d = SMatrix::<f64, 5, 3>::from_row_slice(&[
        1.0, 0.0, -mu, //
        0.0, 1.0, -mu, //
        0.0, 1.0, mu, //
        1.0, 0.0, mu, //
        0.0, 0.0, 1.0,
    ]);
    let s = if stance { 1.0 } else { 0.0 };
    let lb = SVector::<f64, 5>::from_column_slice(&[
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        0.0,
        0.0,
        s * f_z_min,
    ]);
    let ub = SVector::<f64, 5>::from_column_slice(&[
        0.0,
        0.0,
        f64::INFINITY,
        f64::INFINITY,
        s * f_z_max,
    ]);
    FootConstraint { d, lb, ub }
}

/// MPC weights and limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcParams {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal state weights: position (3), orientation (3), linear
    /// velocity (3), angular velocity (3).
    pub q_diag: [f64; STATE_DIM],
    /// Diagonal input weights.
    pub r_diag: [f64; INPUT_DIM],
    /// Solver rate in asynchronous mode, Hz.
    pub rate_hz: f64,
    /// Solve in the control loop every `dt / dt_ctrl` ticks when true.
    pub sync_mode: bool,
    pub f_z_min: f64,
    pub f_z_max: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 16,
            dt: 0.03,
            q_diag: [
                50.0, 50.0, 100.0, 60.0, 60.0, 30.0, 12.0, 12.0, 20.0, 3.0, 3.0, 1.0,
            ],
            r_diag: [1e-5; INPUT_DIM],
            rate_hz: 50.0,
            sync_mode: true,
            f_z_min: 2.0,
            f_z_max: 1.8 * 15.0 * 9.81,
        }
    }
}

/// One MPC instance: dynamics, references, weights, and the contact schedule.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub a: StateMat,
    pub b: StateMat,
    pub b_vec: StateVec,
    pub x0: StateVec,
    /// References for nodes 0..=N.
    pub x_ref: Vec<StateVec>,
    /// Input references for nodes 0..N−1.
    pub u_ref: Vec<InputVec>,
    pub q_diag: StateVec,
    pub r_diag: InputVec,
    /// Scheduled stance flags per node, 0..N−1.
    pub stance: Vec<[bool; NUM_LEGS]>,
    pub mu: f64,
    pub f_z_min: f64,
    pub f_z_max: f64,
    pub dt: f64,
}

impl MpcProblem {
    pub fn horizon(&self) -> usize {
        self.u_ref.len()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let n = self.horizon();
        if n == 0 {
            return Err(MpcError::InvalidProblem("empty horizon".into()));
        }
        if self.x_ref.len() != n + 1 || self.stance.len() != n {
            return Err(MpcError::InvalidProblem(
                "reference/schedule length mismatch".into(),
            ));
        }
        if self.q_diag.iter().any(|v| *v < 0.0) {
            return Err(MpcError::InvalidProblem("Q must be PSD".into()));
        }
        if self.r_diag.iter().any(|v| *v <= 0.0) {
            return Err(MpcError::InvalidProblem("R must be PD".into()));
        }
        if !(self.mu > 0.0) || self.f_z_min < 0.0 || self.f_z_min > self.f_z_max {
            return Err(MpcError::InvalidProblem("bad force bounds".into()));
        }
        Ok(())
    }

    /// Gravity-distribution reference input for one node.
    pub fn gravity_distribution(
        mass: f64,
        gravity_norm: f64,
        stance: &[bool; NUM_LEGS],
    ) -> InputVec {
        let n_stance = stance.iter().filter(|s| **s).count();
        let mut u = InputVec::zeros();
        if n_stance > 0 {
            let fz = mass * gravity_norm / n_stance as f64;
            for leg in 0..NUM_LEGS {
                if stance[leg] {
                    u[3 * leg + 2] = fz;
                }
            }
        }
        u
    }

    /// Objective value of the horizon cost under `forces`.
    pub fn objective(&self, forces: &[InputVec]) -> f64 {
        let n = self.horizon();
        let mut cost = 0.0;
        let mut x = self.x0;
        for j in 0..n {
            let du = forces[j] - self.u_ref[j];
            cost += du.component_mul(&self.r_diag).dot(&du);
            x = self.a * x + self.b * forces[j] + self.b_vec;
            let dx = x - self.x_ref[j + 1];
            cost += dx.component_mul(&self.q_diag).dot(&dx);
        }
        cost
    }

    /// Worst violation of the per-foot constraint rows over all nodes.
    pub fn max_constraint_violation(&self, forces: &[InputVec]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, u) in forces.iter().enumerate() {
            for leg in 0..NUM_LEGS {
                let fc =
                    build_constraints(self.mu, self.stance[j][leg], self.f_z_min, self.f_z_max);
                let v = fc.d * u.fixed_rows::<3>(3 * leg).into_owned();
                for r in 0..5 {
                    if fc.lb[r].is_finite() {
                        worst = worst.max(fc.lb[r] - v[r]);
                    }
                    if fc.ub[r].is_finite() {
                        worst = worst.max(v[r] - fc.ub[r]);
                    }
                }
            }
        }
        worst
    }

    /// Predicted states for nodes 1..=N under `forces`.
    pub fn rollout(&self, forces: &[InputVec]) -> Vec<StateVec> {
        let mut states = Vec::with_capacity(self.horizon());
        let mut x = self.x0;
        for u in forces {
            x = self.a * x + self.b * u + self.b_vec;
            states.push(x);
        }
        states
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpcStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Solver output: one force vector per horizon node.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub forces: Vec<InputVec>,
    pub solve_timestamp: f64,
    pub dt: f64,
    pub status: MpcStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time_us: u64,
}

/// Condensed-QP data for one problem instance.
struct Condensed {
    h: DMatrix<f64>,
    g: DVector<f64>,
    /// `G z ≤ h_ineq`.
    g_ineq: DMatrix<f64>,
    h_ineq: DVector<f64>,
    /// (node, leg) of each active 3-variable block.
    active: Vec<(usize, usize)>,
    /// Strictly interior starting point.
    z_init: DVector<f64>,
}

fn condense(p: &MpcProblem) -> Condensed {
    let n = p.horizon();
    let mut active = Vec::new();
    for j in 0..n {
        for leg in 0..NUM_LEGS {
            if p.stance[j][leg] {
                active.push((j, leg));
            }
        }
    }
    let nv = 3 * active.len();

    // Free rollout (zero input) and the input-to-state map Su, built
    // block-row by block-row: x_{j+1} = x_free_{j+1} + su[j]·z.
    let mut x_free = Vec::with_capacity(n + 1);
    x_free.push(p.x0);
    for j in 0..n {
        x_free.push(p.a * x_free[j] + p.b_vec);
    }
    let a_dyn = DMatrix::from_fn(STATE_DIM, STATE_DIM, |r, c| p.a[(r, c)]);
    let mut su = vec![DMatrix::<f64>::zeros(STATE_DIM, nv); n];
    for j in 0..n {
        if j > 0 {
            let prev = su[j - 1].clone();
            su[j] = &a_dyn * prev;
        }
        for (k, &(node, leg)) in active.iter().enumerate() {
            if node == j {
                for r in 0..STATE_DIM {
                    for c in 0..3 {
                        su[j][(r, 3 * k + c)] += p.b[(r, 3 * leg + c)];
                    }
                }
            }
        }
    }

    // H = 2(SuᵀQ̄Su + R̄), g = 2SuᵀQ̄(x_free − x_ref) − 2R̄u_ref.
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);
    for j in 0..n {
        let sj = &su[j];
        let mut qsj = sj.clone();
        for r in 0..STATE_DIM {
            let w = p.q_diag[r];
            for c in 0..nv {
                qsj[(r, c)] *= w;
            }
        }
        h += 2.0 * sj.transpose() * &qsj;
        let dx = x_free[j + 1] - p.x_ref[j + 1];
        let qdx = DVector::from_fn(STATE_DIM, |r, _| 2.0 * p.q_diag[r] * dx[r]);
        g += sj.transpose() * qdx;
    }
    for (k, &(node, leg)) in active.iter().enumerate() {
        for c in 0..3 {
            let w = p.r_diag[3 * leg + c];
            h[(3 * k + c, 3 * k + c)] += 2.0 * w;
            g[3 * k + c] -= 2.0 * w * p.u_ref[node][3 * leg + c];
        }
    }

    // Inequalities: 6 one-sided rows per active foot.
    let rows = 6 * active.len();
    let mut g_ineq = DMatrix::<f64>::zeros(rows, nv);
    let mut h_ineq = DVector::<f64>::zeros(rows);
    for (k, _) in active.iter().enumerate() {
        let base = 6 * k;
        let col = 3 * k;
        let mu = p.mu;
        let pyramid: [[f64; 3]; 4] = [
            [1.0, 0.0, -mu],
            [0.0, 1.0, -mu],
            [-1.0, 0.0, -mu],
            [0.0, -1.0, -mu],
        ];
        for (r, row) in pyramid.iter().enumerate() {
            for c in 0..3 {
                g_ineq[(base + r, col + c)] = row[c];
            }
        }
        g_ineq[(base + 4, col + 2)] = 1.0;
        h_ineq[base + 4] = p.f_z_max;
        g_ineq[(base + 5, col + 2)] = -1.0;
        h_ineq[base + 5] = -p.f_z_min;
    }

    // Strictly interior start: mid-range vertical force per active foot.
    let mut z_init = DVector::<f64>::zeros(nv);
    let fz0 = 0.5 * (p.f_z_min.max(1e-3) + p.f_z_max);
    for k in 0..active.len() {
        z_init[3 * k + 2] = fz0;
    }

    Condensed {
        h,
        g,
        g_ineq,
        h_ineq,
        active,
        z_init,
    }
}

/// Primal-dual interior-point method (Mehrotra predictor-corrector) for
/// `min ½zᵀHz + gᵀz  s.t.  Gz ≤ h` with H positive definite.
fn solve_ipm(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    g_ineq: &DMatrix<f64>,
    h_ineq: &DVector<f64>,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, MpcStatus, usize, f64) {
    let nv = g.len();
    let m = h_ineq.len();
    if nv == 0 {
        return (DVector::zeros(0), MpcStatus::Optimal, 0, 0.0);
    }
    if m == 0 {
        let sol = h
            .clone()
            .cholesky()
            .map(|c| c.solve(&(-g)))
            .unwrap_or_else(|| DVector::zeros(nv));
        return (sol, MpcStatus::Optimal, 0, 0.0);
    }

    let mut z = z0.clone();
    let mut s = h_ineq - g_ineq * &z;
    for v in s.iter_mut() {
        *v = v.max(1e-3);
    }
    let mut lam = DVector::<f64>::from_element(m, 1.0);

    let scale_d = 1.0 + g.amax();
    let scale_p = 1.0 + h_ineq.amax();
    let mut kkt = f64::INFINITY;

    for iter in 0..max_iter {
        let r_d = h * &z + g + g_ineq.transpose() * &lam;
        let r_p = g_ineq * &z + &s - h_ineq;
        let mu = s.dot(&lam) / m as f64;
        kkt = (r_d.amax() / scale_d).max(r_p.amax() / scale_p).max(mu);
        if kkt < tol {
            // Active-set polish: one exact KKT solve on the constraints the
            // interior point identified as active, which removes the O(√μ)
            // solution error in directions where the objective is flat.
            if let Some(polished) = polish(h, g, g_ineq, h_ineq, &s, &lam) {
                return (polished, MpcStatus::Optimal, iter, kkt);
            }
            return (z, MpcStatus::Optimal, iter, kkt);
        }
        if !kkt.is_finite() || mu > 1e12 {
            return (z, MpcStatus::Infeasible, iter, kkt);
        }

        // Reduced system H + Gᵀ·diag(λ/s)·G, factored once per iteration.
        let mut kmat = h.clone();
        for i in 0..m {
            let w = lam[i] / s[i];
            for r in 0..nv {
                let gir = g_ineq[(i, r)];
                if gir == 0.0 {
                    continue;
                }
                for c in 0..nv {
                    kmat[(r, c)] += w * gir * g_ineq[(i, c)];
                }
            }
        }
        let chol = match kmat.cholesky() {
            Some(c) => c,
            None => return (z, MpcStatus::MaxIter, iter, kkt),
        };

        let solve_step =
            |rc_over_s: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
                // rhs = −r_d + Gᵀ(rc/s − (λ/s)·r_p)
                let mut w = DVector::<f64>::zeros(m);
                for i in 0..m {
                    w[i] = rc_over_s[i] - lam[i] / s[i] * r_p[i];
                }
                let rhs = -&r_d + g_ineq.transpose() * w;
                let dz = chol.solve(&rhs);
                let ds = -&r_p - g_ineq * &dz;
                let mut dlam = DVector::<f64>::zeros(m);
                for i in 0..m {
                    dlam[i] = -rc_over_s[i] - lam[i] / s[i] * ds[i];
                }
                (dz, ds, dlam)
            };

        // Affine (predictor) direction: r_c = ΛSe, so rc/s = λ.
        let (_dz_aff, ds_aff, dlam_aff) = solve_step(&lam);

        let step_len = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
            let mut alpha: f64 = 1.0;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    alpha = alpha.min(-v[i] / dv[i]);
                }
            }
            alpha
        };
        let alpha_aff = step_len(&s, &ds_aff)
            .min(step_len(&lam, &dlam_aff))
            .min(1.0);
        let mu_aff =
            (&s + alpha_aff * &ds_aff).dot(&(&lam + alpha_aff * &dlam_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector: r_c = ΛSe − σμe + Δs_aff∘Δλ_aff.
        let mut rc_over_s = DVector::<f64>::zeros(m);
        for i in 0..m {
            rc_over_s[i] = lam[i] + (ds_aff[i] * dlam_aff[i] - sigma * mu) / s[i];
        }
        let (dz, ds, dlam) = solve_step(&rc_over_s);

        let alpha = (0.99 * step_len(&s, &ds).min(step_len(&lam, &dlam))).min(1.0);
        z += alpha * dz;
        s += alpha * ds;
        lam += alpha * dlam;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            lam[i] = lam[i].max(1e-300);
        }
    }
    (z, MpcStatus::MaxIter, max_iter, kkt)
}

/// Reference rollout for one MPC instance: base states extrapolated at the
/// desired velocity (height and yaw from the planner, roll/pitch zero) and
/// input references distributing the weight equally over each node's
/// scheduled stance feet.
#[allow(clippy::too_many_arguments)]
pub fn build_reference(
    r_d: nalgebra::Vector2<f64>,
    rdot_d: nalgebra::Vector2<f64>,
    z_d: f64,
    yaw_d: f64,
    yawrate_d: f64,
    stance: &[[bool; NUM_LEGS]],
    mass: f64,
    gravity_norm: f64,
    dt: f64,
) -> (Vec<StateVec>, Vec<InputVec>) {
    let n = stance.len();
    let mut x_ref = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let tj = j as f64 * dt;
        let mut x = StateVec::zeros();
        let r = r_d + rdot_d * tj;
        x[0] = r.x;
        x[1] = r.y;
        x[2] = z_d;
        x[5] = yaw_d + yawrate_d * tj;
        x[6] = rdot_d.x;
        x[7] = rdot_d.y;
        x[11] = yawrate_d;
        x_ref.push(x);
    }
    let u_ref = stance
        .iter()
        .map(|s| MpcProblem::gravity_distribution(mass, gravity_norm, s))
        .collect();
    (x_ref, u_ref)
}

/// Equality-constrained KKT solve on the active set identified by the
/// interior point. Returns the polished primal iterate when it is feasible
/// and the active multipliers are non-negative.
fn polish(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    g_ineq: &DMatrix<f64>,
    h_ineq: &DVector<f64>,
    s: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<DVector<f64>> {
    let nv = g.len();
    let m = h_ineq.len();
    let active: Vec<usize> = (0..m).filter(|&i| lam[i] > s[i]).collect();
    let na = active.len();
    let dim = nv + na;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
    for (k, &i) in active.iter().enumerate() {
        for c in 0..nv {
            kkt[(nv + k, c)] = g_ineq[(i, c)];
            kkt[(c, nv + k)] = g_ineq[(i, c)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(dim);
    for r in 0..nv {
        rhs[r] = -g[r];
    }
    for (k, &i) in active.iter().enumerate() {
        rhs[nv + k] = h_ineq[i];
    }
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    let z = sol.rows(0, nv).into_owned();
    for k in 0..na {
        if sol[nv + k] < -1e-9 {
            return None;
        }
    }
    for i in 0..m {
        if g_ineq.row(i).transpose().dot(&z) > h_ineq[i] + 1e-9 {
            return None;
        }
    }
    Some(z)
}

/// Solve the condensed MPC. `warm_start` (previous horizon forces) is pulled
/// toward the cone interior before use so the iterates stay strictly feasible.
pub fn solve_mpc(
    problem: &MpcProblem,
    warm_start: Option<&[InputVec]>,
    timestamp: f64,
) -> Result<MpcSolution, MpcError> {
    problem.validate()?;
    let start = std::time::Instant::now();
    let cond = condense(problem);
    let n = problem.horizon();

    let mut z0 = cond.z_init.clone();
    if let Some(ws) = warm_start {
        if ws.len() == n {
            for (k, &(node, leg)) in cond.active.iter().enumerate() {
                for c in 0..3 {
                    z0[3 * k + c] = 0.9 * ws[node][3 * leg + c] + 0.1 * cond.z_init[3 * k + c];
                }
            }
            let slack = &cond.h_ineq - &cond.g_ineq * &z0;
            if slack.iter().any(|v| *v < 1e-6) {
                z0 = cond.z_init.clone();
            }
        }
    }

    let (z, status, iterations, kkt_residual) =
        solve_ipm(&cond.h, &cond.g, &cond.g_ineq, &cond.h_ineq, &z0, 1e-9, 60);

    let mut forces = vec![InputVec::zeros(); n];
    for (k, &(node, leg)) in cond.active.iter().enumerate() {
        for c in 0..3 {
            forces[node][3 * leg + c] = z[3 * k + c];
        }
    }
    Ok(MpcSolution {
        forces,
        solve_timestamp: timestamp,
        dt: problem.dt,
        status,
        iterations,
        kkt_residual,
        solve_time_us: start.elapsed().as_micros() as u64,
    })
}

/// Outcome of sampling the solution mailbox.
#[derive(Debug, Clone)]
pub enum SampleOutcome {
    /// Force vector of the node whose interval contains the sample time.
    Fresh { forces: InputVec, node: usize },
    /// A solution exists but is older than two horizons.
    Stale,
    /// Nothing published yet.
    Empty,
}

/// Single-slot, last-writer-wins mailbox between the solver and the control
/// loop. Publishing replaces the slot atomically; sampling clones the current
/// solution handle without waiting on the solver.
#[derive(Debug, Default)]
pub struct MpcMailbox {
    slot: Mutex<Option<Arc<MpcSolution>>>,
}

impl MpcMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, solution: MpcSolution) {
        *self.slot.lock().expect("mailbox lock") = Some(Arc::new(solution));
    }

    pub fn latest(&self) -> Option<Arc<MpcSolution>> {
        self.slot.lock().expect("mailbox lock").clone()
    }

    /// Sample the force command active at control time `t`. Node intervals
    /// are half-open, so a sample exactly on a boundary takes the later node.
    pub fn sample(&self, t: f64) -> SampleOutcome {
        let Some(sol) = self.latest() else {
            return SampleOutcome::Empty;
        };
        let n = sol.forces.len();
        let age = t - sol.solve_timestamp;
        if age > 2.0 * n as f64 * sol.dt {
            return SampleOutcome::Stale;
        }
        let node = if age <= 0.0 {
            0
        } else {
            ((age / sol.dt).floor() as usize).min(n - 1)
        };
        SampleOutcome::Fresh {
            forces: sol.forces[node],
            node,
        }
    }
}

/// Asynchronous solver runner: pulls problems from a source closure at a
/// fixed rate and publishes solutions to the shared mailbox. Runs are only
/// reproducible in synchronous mode; this exists for rate demonstration.
pub struct AsyncMpc {
    pub mailbox: Arc<MpcMailbox>,
    stop: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl AsyncMpc {
    pub fn spawn<F>(rate_hz: f64, mut problem_source: F) -> Self
    where
        F: FnMut() -> Option<(MpcProblem, f64)> + Send + 'static,
    {
        let mailbox = Arc::new(MpcMailbox::new());
        let stop = Arc::new(AtomicBool::new(false));
        let mb = Arc::clone(&mailbox);
        let st = Arc::clone(&stop);
        let period = std::time::Duration::from_secs_f64(1.0 / rate_hz.max(1.0));
        let handle = std::thread::spawn(move || {
            let mut warm: Option<Vec<InputVec>> = None;
            while !st.load(Ordering::Relaxed) {
                let tick = std::time::Instant::now();
                if let Some((problem, timestamp)) = problem_source() {
                    if let Ok(sol) = solve_mpc(&problem, warm.as_deref(), timestamp) {
                        warm = Some(sol.forces.clone());
                        mb.publish(sol);
                    }
                }
                if let Some(rest) = period.checked_sub(tick.elapsed()) {
                    std::thread::sleep(rest);
                }
            }
        });
        Self {
            mailbox,
            stop,
            handle: Some(handle),
        }
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for AsyncMpc {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_feet() -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.19, 0.125, -0.31),
            Vector3::new(0.19, -0.125, -0.31),
            Vector3::new(-0.19, 0.125, -0.31),
            Vector3::new(-0.19, -0.125, -0.31),
        ]
    }

    fn inertia() -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(0.10, 0.25, 0.30))
    }

    #[test]
    fn dynamics_blocks() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        let (a, b, b_vec) = build_dynamics(15.0, &inertia(), &g, 0.03, &default_feet()).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(a[(i, 6 + i)], 0.03, epsilon = 1e-15);
            assert_abs_diff_eq!(a[(i, i)], 1.0, epsilon = 1e-15);
        }
        for leg in 0..4 {
            for i in 0..3 {
                assert_abs_diff_eq!(b[(6 + i, 3 * leg + i)], 0.002, epsilon = 1e-15);
            }
        }
        let mut expected = StateVec::zeros();
        expected[8] = -0.2943;
        assert!((b_vec - expected).abs().max() < 1e-12);
    }

    #[test]
    fn angular_block_matches_cross_product() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        let feet = [
            Vector3::new(0.2, 0.15, -0.3),
            Vector3::new(0.19, -0.125, -0.31),
            Vector3::new(-0.19, 0.125, -0.31),
            Vector3::new(-0.19, -0.125, -0.31),
        ];
        let inertia = inertia();
        let (_, b, _) = build_dynamics(15.0, &inertia, &g, 0.03, &feet).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let f = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.0..200.0),
            );
            let domega = b.fixed_view::<3, 3>(9, 0) * f;
            let expected = inertia.try_inverse().unwrap() * feet[0].cross(&f) * 0.03;
            assert!((domega - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn constraint_rows_match_pyramid() {
        let fc = build_constraints(0.5, true, 5.0, 250.0);
        // Row 1: Fx − 0.5 Fz ≤ 0 with lb = −∞.
        assert_abs_diff_eq!(fc.d[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fc.d[(0, 2)], -0.5, epsilon = 1e-15);
        assert!(fc.lb[0].is_infinite() && fc.lb[0] < 0.0);
        assert_abs_diff_eq!(fc.ub[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fc.lb[4], 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fc.ub[4], 250.0, epsilon = 1e-15);

        // F = (10, 0, 40) with μ = 0.5 satisfies every row.
        let f = Vector3::new(10.0, 0.0, 40.0);
        let v = fc.d * f;
        for r in 0..5 {
            assert!(
                v[r] >= fc.lb[r] - 1e-12 && v[r] <= fc.ub[r] + 1e-12,
                "row {r}"
            );
        }

        // Swing foot: bounds collapse so only F = 0 is feasible.
        let fc_swing = build_constraints(0.5, false, 5.0, 250.0);
        assert_abs_diff_eq!(fc_swing.lb[4], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fc_swing.ub[4], 0.0, epsilon = 1e-15);
    }

    fn standing_problem(n: usize) -> MpcProblem {
        let mass = 15.0;
        let g = Vector3::new(0.0, 0.0, -9.81);
        let (a, b, b_vec) = build_dynamics(mass, &inertia(), &g, 0.03, &default_feet()).unwrap();
        let mut x0 = StateVec::zeros();
        x0[2] = 0.31;
        let stance = vec![[true; 4]; n];
        let u_ref: Vec<InputVec> = stance
            .iter()
            .map(|s| MpcProblem::gravity_distribution(mass, 9.81, s))
            .collect();
        MpcProblem {
            a,
            b,
            b_vec,
            x0,
            x_ref: vec![x0; n + 1],
            u_ref,
            q_diag: StateVec::from_column_slice(&[
                50.0, 50.0, 50.0, 30.0, 30.0, 30.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0,
            ]),
            r_diag: InputVec::from_element(1e-4),
            stance,
            mu: 0.5,
            f_z_min: 2.0,
            f_z_max: 220.0,
            dt: 0.03,
        }
    }

    #[test]
    fn standing_equilibrium_forces() {
        let p = standing_problem(10);
        let sol = solve_mpc(&p, None, 0.0).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        let mg4 = 15.0 * 9.81 / 4.0;
        for node in &sol.forces {
            for leg in 0..4 {
                assert!(
                    (node[3 * leg + 2] - mg4).abs() < 1e-4,
                    "Fz {}",
                    node[3 * leg + 2]
                );
                assert!(node[3 * leg].abs() < 1e-4);
                assert!(node[3 * leg + 1].abs() < 1e-4);
            }
        }
        assert!(p.max_constraint_violation(&sol.forces) < 1e-6);
    }

    #[test]
    fn swing_nodes_have_zero_force() {
        let mut p = standing_problem(6);
        p.stance[2] = [false; 4];
        p.stance[3] = [false, true, true, false];
        p.u_ref[2] = InputVec::zeros();
        p.u_ref[3] = MpcProblem::gravity_distribution(15.0, 9.81, &p.stance[3]);
        let sol = solve_mpc(&p, None, 0.0).unwrap();
        assert_eq!(sol.forces[2], InputVec::zeros());
        assert_eq!(sol.forces[3].fixed_rows::<3>(0).norm(), 0.0);
        assert_eq!(sol.forces[3].fixed_rows::<3>(9).norm(), 0.0);
    }

    #[test]
    fn warm_start_preserves_solution() {
        let mut p = standing_problem(8);
        p.x0[6] = 0.2;
        p.x_ref.iter_mut().for_each(|x| x[6] = 0.2);
        let cold = solve_mpc(&p, None, 0.0).unwrap();
        let warm = solve_mpc(&p, Some(&cold.forces), 0.0).unwrap();
        for (a, b) in cold.forces.iter().zip(warm.forces.iter()) {
            assert!((a - b).abs().max() < 1e-5);
        }
    }

    #[test]
    fn mailbox_round_trip_and_indexing() {
        let mb = MpcMailbox::new();
        assert!(matches!(mb.sample(0.0), SampleOutcome::Empty));

        let p = standing_problem(4);
        // Exactly representable node length so the boundary cases are exact.
        let mut sol = solve_mpc(&p, None, 10.0).unwrap();
        sol.dt = 0.25;
        mb.publish(sol);

        match mb.sample(10.0 + 1.5 * 0.25) {
            SampleOutcome::Fresh { node, .. } => assert_eq!(node, 1),
            other => panic!("unexpected {other:?}"),
        }
        // Exactly on a node boundary takes the later node.
        match mb.sample(10.25) {
            SampleOutcome::Fresh { node, .. } => assert_eq!(node, 1),
            other => panic!("unexpected {other:?}"),
        }
        match mb.sample(10.0) {
            SampleOutcome::Fresh { node, .. } => assert_eq!(node, 0),
            other => panic!("unexpected {other:?}"),
        }
        // Staleness: more than two horizons old.
        assert!(matches!(
            mb.sample(10.0 + 2.0 * 4.0 * 0.25 + 1e-9),
            SampleOutcome::Stale
        ));
    }

    #[test]
    fn async_runner_publishes() {
        let p = standing_problem(4);
        let mut runner = AsyncMpc::spawn(200.0, move || Some((p.clone(), 0.0)));
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
        loop {
            if runner.mailbox.latest().is_some() {
                break;
            }
            if std::time::Instant::now() > deadline {
                panic!("async solver never published");
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        runner.stop();
    }
}
#[cfg(test)]
mod reference_tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector2;

    #[test]
    fn gravity_split_over_stance_sets() {
        let stance = vec![[true; 4], [true, false, false, true]];
        let (_, u_ref) = build_reference(
            Vector2::zeros(),
            Vector2::zeros(),
            0.31,
            0.0,
            0.0,
            &stance,
            15.0,
            9.81,
            0.03,
        );
        // Four stance feet share the weight equally.
        assert_abs_diff_eq!(u_ref[0][2], 15.0 * 9.81 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u_ref[0][2], 36.7875, epsilon = 1e-4);
        // Trot node: two stance feet carry double.
        assert_abs_diff_eq!(u_ref[1][2], 73.575, epsilon = 1e-4);
        assert_eq!(u_ref[1][5], 0.0);
    }

    #[test]
    fn forward_reference_rolls_out_positions() {
        let stance = vec![[true; 4]; 5];
        let (x_ref, _) = build_reference(
            Vector2::new(1.0, 0.0),
            Vector2::new(0.5, 0.0),
            0.31,
            0.2,
            0.1,
            &stance,
            15.0,
            9.81,
            0.03,
        );
        for j in 0..x_ref.len() {
            assert_abs_diff_eq!(x_ref[j][0], 1.0 + 0.5 * 0.03 * j as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(x_ref[j][5], 0.2 + 0.1 * 0.03 * j as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(x_ref[j][3], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn all_swing_node_reference_is_zero() {
        let stance = vec![[false; 4]];
        let (_, u_ref) = build_reference(
            Vector2::zeros(),
            Vector2::zeros(),
            0.3,
            0.0,
            0.0,
            &stance,
            15.0,
            9.81,
            0.03,
        );
        assert_eq!(u_ref[0], InputVec::zeros());
    }
}
