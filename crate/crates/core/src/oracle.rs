//! Closed-form ground truth for linear dynamics `x' = A x + B u` with
//! quadratic cost: policy evaluation by the discounted Lyapunov recursion,
//! the optimal discounted LQR solution by Riccati value iteration, and a
//! brute-force grid minimizer for box-constrained greedy actions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::valuefn::{ActionBox, CostWeights, QFunction};

const FIXED_POINT_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

fn check_system(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::dim(format!(
            "A must be square and B must have {n} rows, got A {}x{}, B {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if w.state_dim() != n || w.action_dim() != b.ncols() {
        return Err(Error::dim("cost weights do not match (A, B)".to_string()));
    }
    Ok(())
}

/// Q-matrix blocks of a quadratic value `xᵀ P x` propagated one step.
fn q_from_value(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, w: &CostWeights) -> Result<QFunction> {
    let alpha = w.alpha();
    let (n, m) = (a.nrows(), b.ncols());
    let h_xx = w.state_penalty() + a.transpose() * p * a * alpha;
    let h_xu = a.transpose() * p * b * alpha;
    let h_uu = w.action_penalty() + b.transpose() * p * b * alpha;
    let mut h = DMatrix::zeros(n + m, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&h_xx);
    h.view_mut((0, n), (n, m)).copy_from(&h_xu);
    h.view_mut((n, 0), (m, n)).copy_from(&h_xu.transpose());
    h.view_mut((n, n), (m, m)).copy_from(&h_uu);
    let h = (&h + h.transpose()) * 0.5;
    QFunction::from_matrix(&h, n)
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: DMatrix<f64>,
    pub q: QFunction,
    pub sweeps: usize,
}

/// Exact Q-function of `u = L x` (no box) under discount `α`.
pub fn lyapunov_q(a: &DMatrix<f64>, b: &DMatrix<f64>, gain: &DMatrix<f64>, w: &CostWeights) -> Result<LyapunovSolution> {
    check_system(a, b, w)?;
    if gain.shape() != (b.ncols(), a.nrows()) {
        return Err(Error::dim(format!(
            "gain must be {}x{}, got {}x{}",
            b.ncols(),
            a.nrows(),
            gain.nrows(),
            gain.ncols()
        )));
    }
    let alpha = w.alpha();
    let closed = a + b * gain;
    let stage = w.state_penalty() + gain.transpose() * w.action_penalty() * gain;
    let mut p = stage.clone();
    for sweep in 1..=MAX_SWEEPS {
        let next = &stage + closed.transpose() * &p * &closed * alpha;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax();
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e15 {
            return Err(Error::Unstable(
                "Lyapunov recursion diverged: sqrt(alpha)(A + B L) is not stable".into(),
            ));
        }
        p = next;
        if change <= FIXED_POINT_TOL * (1.0 + p.amax()) {
            let q = q_from_value(a, b, &p, w)?;
            return Ok(LyapunovSolution { p, q, sweeps: sweep });
        }
    }
    Err(Error::Unstable("Lyapunov recursion did not converge".into()))
}

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub q: QFunction,
    pub sweeps: usize,
    pub residual: f64,
}

fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, w: &CostWeights) -> Result<DMatrix<f64>> {
    let alpha = w.alpha();
    let s = w.action_penalty() + b.transpose() * p * b * alpha;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numeric("R_a + α BᵀPB is singular".into()))?;
    Ok(-(s_inv * b.transpose() * p * a) * alpha)
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, w: &CostWeights) -> Result<DMatrix<f64>> {
    let alpha = w.alpha();
    let s = w.action_penalty() + b.transpose() * p * b * alpha;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numeric("R_a + α BᵀPB is singular".into()))?;
    let cross = a.transpose() * p * b;
    let next = w.state_penalty() + a.transpose() * p * a * alpha - &cross * s_inv * cross.transpose() * (alpha * alpha);
    Ok((&next + next.transpose()) * 0.5)
}

/// Optimal discounted LQR by Riccati value iteration from `P = 0`.
pub fn dare_optimal(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights) -> Result<DareSolution> {
    check_system(a, b, w)?;
    let n = a.nrows();
    let mut p = DMatrix::zeros(n, n);
    for sweep in 1..=MAX_SWEEPS {
        let next = riccati_map(a, b, &p, w)?;
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e15 {
            return Err(Error::Unstable("Riccati iteration diverged: (A, B) not stabilizable".into()));
        }
        let change = (&next - &p).amax();
        p = next;
        if change <= FIXED_POINT_TOL * (1.0 + p.amax()) {
            let gain = riccati_gain(a, b, &p, w)?;
            let residual = (riccati_map(a, b, &p, w)? - &p).amax();
            let q = lyapunov_q(a, b, &gain, w)?.q;
            return Ok(DareSolution {
                p,
                gain,
                q,
                sweeps: sweep,
                residual,
            });
        }
    }
    Err(Error::Unstable("Riccati iteration did not converge".into()))
}

/// Exhaustive minimizer of `Q(x, ·)` over a uniform grid on the box with
/// `resolution` nodes per axis.
pub fn grid_argmin(q: &QFunction, x: &[f64], resolution: usize, bounds: ActionBox) -> Result<DVector<f64>> {
    if resolution < 11 {
        return Err(Error::InvalidInput(format!("grid resolution must be >= 11, got {resolution}")));
    }
    if x.len() != q.state_dim() {
        return Err(Error::dim(format!("state has length {}, Q expects {}", x.len(), q.state_dim())));
    }
    let m = q.action_dim();
    let node = |k: usize| bounds.lower + (bounds.upper - bounds.lower) * k as f64 / (resolution - 1) as f64;
    let total = resolution.pow(m as u32);
    let mut u = vec![0.0; m];
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for code in 0..total {
        let mut rem = code;
        for ui in u.iter_mut() {
            *ui = node(rem % resolution);
            rem /= resolution;
        }
        let v = q.value(x, &u)?;
        if v < best.0 {
            best = (v, u.clone());
        }
    }
    Ok(DVector::from_vec(best.1))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub optimal_value_matrix: Vec<Vec<f64>>,
    pub optimal_gain: Vec<Vec<f64>>,
    pub optimal_q_matrix: Vec<Vec<f64>>,
    pub optimal_q_coeffs: Vec<f64>,
    pub riccati_residual: f64,
    pub riccati_sweeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_evaluation: Option<PolicyEvaluationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyEvaluationReport {
    pub gain: Vec<Vec<f64>>,
    pub value_matrix: Vec<Vec<f64>>,
    pub q_matrix: Vec<Vec<f64>>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn report(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights, gain: Option<&DMatrix<f64>>) -> Result<OracleReport> {
    let opt = dare_optimal(a, b, w)?;
    let policy_evaluation = match gain {
        Some(l) => {
            let sol = lyapunov_q(a, b, l, w)?;
            Some(PolicyEvaluationReport {
                gain: rows(l),
                value_matrix: rows(&sol.p),
                q_matrix: rows(&sol.q.matrix()),
            })
        }
        None => None,
    };
    Ok(OracleReport {
        optimal_value_matrix: rows(&opt.p),
        optimal_gain: rows(&opt.gain),
        optimal_q_matrix: rows(&opt.q.matrix()),
        optimal_q_coeffs: opt.q.coeffs().iter().copied().collect(),
        riccati_residual: opt.residual,
        riccati_sweeps: opt.sweeps,
        policy_evaluation,
    })
}
