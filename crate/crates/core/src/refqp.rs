//! Slow, independent reference solvers used by the test suites.
//!
//! These deliberately take different algorithmic routes from the production
//! solvers: the MPC cross-check solves the sparse (non-condensed) problem
//! with a primal active-set method, and the reactive cross-check solves the
//! cone-constrained QP with ADMM. Nothing here is called from the control
//! path.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mpc::{InputVec, MpcProblem, STATE_DIM};
use crate::reactive::{project_truncated_cone, ConeSpec};

#[derive(Debug, Error)]
pub enum RefQpError {
    #[error("KKT system is singular")]
    SingularKkt,
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("initial point is infeasible (violation {0})")]
    InfeasibleStart(f64),
}

/// Dense convex QP: `min ½zᵀHz + gᵀz  s.t.  A z = b,  G z ≤ h`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
}

impl DenseQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }
}

/// Primal active-set method for a convex QP, starting from a feasible point.
///
/// The Hessian only needs to be positive definite on the null space of the
/// equality constraints plus working set; each subproblem is solved through
/// a full-pivot LU of the KKT system.
pub fn solve_active_set(
    qp: &DenseQp,
    z_start: &DVector<f64>,
    max_iter: usize,
) -> Result<DVector<f64>, RefQpError> {
    let nv = qp.g.len();
    let n_eq = qp.b_eq.len();
    let m = qp.h_ineq.len();

    let feas_tol = 1e-8;
    let violation = (0..m)
        .map(|i| (qp.g_ineq.row(i).transpose().dot(z_start) - qp.h_ineq[i]).max(0.0))
        .fold(0.0f64, f64::max);
    if violation > feas_tol {
        return Err(RefQpError::InfeasibleStart(violation));
    }

    let mut z = z_start.clone();
    // Start with the constraints active at z.
    let mut working: Vec<usize> = (0..m)
        .filter(|&i| (qp.g_ineq.row(i).transpose().dot(&z) - qp.h_ineq[i]).abs() < 1e-10)
        .collect();

    for _ in 0..max_iter {
        let nw = working.len();
        let dim = nv + n_eq + nw;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&qp.h);
        for r in 0..n_eq {
            for c in 0..nv {
                kkt[(nv + r, c)] = qp.a_eq[(r, c)];
                kkt[(c, nv + r)] = qp.a_eq[(r, c)];
            }
        }
        for (k, &i) in working.iter().enumerate() {
            for c in 0..nv {
                kkt[(nv + n_eq + k, c)] = qp.g_ineq[(i, c)];
                kkt[(c, nv + n_eq + k)] = qp.g_ineq[(i, c)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(dim);
        let grad = &qp.h * &z + &qp.g;
        for r in 0..nv {
            rhs[r] = -grad[r];
        }

        let lu = kkt.full_piv_lu();
        let sol = lu.solve(&rhs).ok_or(RefQpError::SingularKkt)?;
        let p = sol.rows(0, nv).into_owned();

        if p.amax() < 1e-10 {
            // Stationary on the working set; check multipliers.
            let lambda = sol.rows(nv + n_eq, nw).into_owned();
            let mut worst = (-1e-9, usize::MAX);
            for k in 0..nw {
                if lambda[k] < worst.0 {
                    worst = (lambda[k], k);
                }
            }
            if worst.1 == usize::MAX {
                return Ok(z);
            }
            working.remove(worst.1);
            continue;
        }

        // Step to the nearest blocking constraint.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let gp = qp.g_ineq.row(i).transpose().dot(&p);
            if gp > 1e-12 {
                let room = qp.h_ineq[i] - qp.g_ineq.row(i).transpose().dot(&z);
                let a = room / gp;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some(i);
                }
            }
        }
        z += alpha * &p;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    Err(RefQpError::IterationLimit)
}

/// Reference MPC solve on the sparse formulation: states stay as decision
/// variables tied by equality constraints, cross-checking both the
/// condensation and the interior-point solver. Returns per-node forces with
/// exact zeros on swing feet, plus the solver's own state trajectory.
pub fn solve_mpc_sparse_reference_with_states(
    problem: &MpcProblem,
) -> Result<(Vec<InputVec>, Vec<nalgebra::SVector<f64, STATE_DIM>>), RefQpError> {
    let n = problem.horizon();
    let mut active = Vec::new();
    for j in 0..n {
        for leg in 0..4 {
            if problem.stance[j][leg] {
                active.push((j, leg));
            }
        }
    }
    let n_x = STATE_DIM * n;
    let n_u = 3 * active.len();
    let nv = n_x + n_u;

    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);
    for j in 1..=n {
        for r in 0..STATE_DIM {
            let idx = STATE_DIM * (j - 1) + r;
            h[(idx, idx)] = 2.0 * problem.q_diag[r];
            g[idx] = -2.0 * problem.q_diag[r] * problem.x_ref[j][r];
        }
    }
    for (k, &(node, leg)) in active.iter().enumerate() {
        for c in 0..3 {
            let idx = n_x + 3 * k + c;
            let w = problem.r_diag[3 * leg + c];
            h[(idx, idx)] = 2.0 * w;
            g[idx] = -2.0 * w * problem.u_ref[node][3 * leg + c];
        }
    }

    // Dynamics equalities: x_{j+1} − A x_j − B u_j = b (+ A x0 for j = 0).
    let n_eq = STATE_DIM * n;
    let mut a_eq = DMatrix::<f64>::zeros(n_eq, nv);
    let mut b_eq = DVector::<f64>::zeros(n_eq);
    for j in 0..n {
        for r in 0..STATE_DIM {
            let row = STATE_DIM * j + r;
            a_eq[(row, STATE_DIM * j + r)] = 1.0;
            if j > 0 {
                for c in 0..STATE_DIM {
                    a_eq[(row, STATE_DIM * (j - 1) + c)] -= problem.a[(r, c)];
                }
            }
            for (k, &(node, leg)) in active.iter().enumerate() {
                if node == j {
                    for c in 0..3 {
                        a_eq[(row, n_x + 3 * k + c)] -= problem.b[(r, 3 * leg + c)];
                    }
                }
            }
            b_eq[row] = problem.b_vec[r];
            if j == 0 {
                b_eq[row] += problem.a.row(r).transpose().dot(&problem.x0);
            }
        }
    }

    // Cone rows on the active inputs.
    let m_rows = 6 * active.len();
    let mut g_ineq = DMatrix::<f64>::zeros(m_rows, nv);
    let mut h_ineq = DVector::<f64>::zeros(m_rows);
    let mu = problem.mu;
    for (k, _) in active.iter().enumerate() {
        let base = 6 * k;
        let col = n_x + 3 * k;
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
        h_ineq[base + 4] = problem.f_z_max;
        g_ineq[(base + 5, col + 2)] = -1.0;
        h_ineq[base + 5] = -problem.f_z_min;
    }

    // Feasible start: reference inputs (strictly inside the pyramid) with the
    // states rolled out accordingly.
    let mut z0 = DVector::<f64>::zeros(nv);
    let mut u_nodes = vec![InputVec::zeros(); n];
    for (k, &(node, leg)) in active.iter().enumerate() {
        for c in 0..3 {
            let v = problem.u_ref[node][3 * leg + c];
            z0[n_x + 3 * k + c] = v;
            u_nodes[node][3 * leg + c] = v;
        }
    }
    let states = problem.rollout(&u_nodes);
    for j in 0..n {
        for r in 0..STATE_DIM {
            z0[STATE_DIM * j + r] = states[j][r];
        }
    }

    let qp = DenseQp {
        h,
        g,
        a_eq,
        b_eq,
        g_ineq,
        h_ineq,
    };
    let z = solve_active_set(&qp, &z0, 800)?;

    let mut forces = vec![InputVec::zeros(); n];
    for (k, &(node, leg)) in active.iter().enumerate() {
        for c in 0..3 {
            forces[node][3 * leg + c] = z[n_x + 3 * k + c];
        }
    }
    let mut ref_states = Vec::with_capacity(n);
    for j in 0..n {
        let mut x = nalgebra::SVector::<f64, STATE_DIM>::zeros();
        for r in 0..STATE_DIM {
            x[r] = z[STATE_DIM * j + r];
        }
        ref_states.push(x);
    }
    Ok((forces, ref_states))
}

/// Force-only variant of [`solve_mpc_sparse_reference_with_states`].
pub fn solve_mpc_sparse_reference(problem: &MpcProblem) -> Result<Vec<InputVec>, RefQpError> {
    solve_mpc_sparse_reference_with_states(problem).map(|(forces, _)| forces)
}

/// Cone-constrained QP `min ½FᵀPF + qᵀF  s.t.  F_leg ∈ K_leg` solved by ADMM
/// with the exact truncated-cone projection in the consensus step. Returns
/// the projected (exactly feasible) iterate.
pub fn solve_cone_qp_admm(
    p_mat: &DMatrix<f64>,
    q: &DVector<f64>,
    cones: &[ConeSpec; 4],
    max_iter: usize,
    tol: f64,
) -> DVector<f64> {
    let n = q.len();
    debug_assert_eq!(n, 12);
    let eigs = p_mat.clone().symmetric_eigenvalues();
    let rho = (eigs.max().max(1e-9) * eigs.min().max(1e-9)).sqrt().max(1e-6);
    let factor = {
        let mut m = p_mat.clone();
        for i in 0..n {
            m[(i, i)] += rho;
        }
        m.cholesky().expect("P + ρI is positive definite")
    };

    let mut z = DVector::<f64>::zeros(n);
    let mut u = DVector::<f64>::zeros(n);
    for _ in 0..max_iter {
        let x = factor.solve(&(rho * (&z - &u) - q));
        let z_prev = z.clone();
        let xu = &x + &u;
        for leg in 0..4 {
            let f = nalgebra::Vector3::new(xu[3 * leg], xu[3 * leg + 1], xu[3 * leg + 2]);
            let pf = project_truncated_cone(&f, &cones[leg]);
            z[3 * leg] = pf.x;
            z[3 * leg + 1] = pf.y;
            z[3 * leg + 2] = pf.z;
        }
        u += &x - &z;
        let r_primal = (&x - &z).amax();
        let r_dual = rho * (&z - &z_prev).amax();
        if r_primal < tol && r_dual < tol {
            break;
        }
    }
    z
}
