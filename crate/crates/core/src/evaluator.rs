//! Policy evaluation under the PSD constraint.
//!
//! Sample averages give `Â = mean φ(s)(φ(s) - α ρ φ(s'))ᵀ` and
//! `b̂ = mean ρ φ(s) g`, and the projected iteration
//! `r ← Π_E[r - γ_j (Â r - b̂)]` with `E = PSD ∩ ball` is run from a warm
//! start until successive iterates stop moving.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matspace::{self, BallRadius};
use crate::valuefn::{basis_phi, CostWeights, LinearPolicy, QFunction};

/// One observed transition. `u_next` is present for on-policy five-tuples;
/// `behavior_prob` is `ν(u_next | x_next)` for stochastic behavior policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub g: f64,
    pub x_next: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_next: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_prob: Option<f64>,
}

impl TransitionSample {
    pub fn new(x: Vec<f64>, u: Vec<f64>, g: f64, x_next: Vec<f64>) -> Self {
        Self {
            x,
            u,
            g,
            x_next,
            u_next: None,
            behavior_prob: None,
        }
    }

    pub fn with_next_action(mut self, u_next: Vec<f64>) -> Self {
        self.u_next = Some(u_next);
        self
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize) -> std::result::Result<(), String> {
        if self.x.len() != state_dim || self.x_next.len() != state_dim {
            return Err(format!("state vectors must have length {state_dim}"));
        }
        if self.u.len() != action_dim {
            return Err(format!("action must have length {action_dim}"));
        }
        if let Some(un) = &self.u_next {
            if un.len() != action_dim {
                return Err(format!("next action must have length {action_dim}"));
            }
        }
        if !self.g.is_finite() || self.g < 0.0 {
            return Err(format!("stage cost must be finite and non-negative, got {}", self.g));
        }
        if let Some(p) = self.behavior_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("behavior probability must lie in (0, 1], got {p}"));
            }
        }
        let all = self
            .x
            .iter()
            .chain(&self.u)
            .chain(&self.x_next)
            .chain(self.u_next.iter().flatten());
        for v in all {
            if !v.is_finite() {
                return Err("sample has non-finite entries".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimationMode {
    /// Replace `u'` by `π(x')` for every sample; all ratios are 1.
    #[default]
    Retarget,
    /// Keep the stored `u'` and weight by the importance ratio.
    Weighted { tol_match: f64 },
}

/// Left scaling of the gradient step in [`vi_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Plain step `Âr - b̂`.
    Identity,
    /// Step `Âᵀ(Âr - b̂)`, a projected gradient method on `‖Âr - b̂‖²`.
    Normal,
    /// `Normal` when the symmetric part of `Â` is indefinite, else `Identity`.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub gamma0: f64,
    pub max_outer: usize,
    pub tol_inner: f64,
    /// Step sizes follow `γ_j = γ0 / (‖Â‖₂ (1 + j / step_decay))`.
    pub step_decay: f64,
    pub delta: BallRadius,
    /// How many times `gamma0` is halved before a divergence is reported.
    pub max_halvings: u32,
    pub preconditioner: Preconditioner,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma0: 0.5,
            max_outer: 2000,
            tol_inner: 1e-8,
            step_decay: 500.0,
            delta: BallRadius::default(),
            max_halvings: 6,
            preconditioner: Preconditioner::Auto,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        if self.tol_inner.is_nan() || self.tol_inner <= 0.0 {
            return Err(Error::InvalidInput(format!("tol_inner must be positive, got {}", self.tol_inner)));
        }
        if !(self.step_decay > 0.0 && self.step_decay.is_finite()) {
            return Err(Error::InvalidInput("step_decay must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidInput("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VIOperators {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub n_effective: usize,
    pub n_samples: usize,
    pub state_dim: usize,
}

/// `δ(‖u' - π(x')‖_∞ <= tol) / ν(u' | x')`; a missing `ν` means the behavior
/// policy was deterministic.
pub fn importance_ratio(sample: &TransitionSample, target: &LinearPolicy, tol_match: f64) -> Result<f64> {
    let u_next = sample.u_next.as_ref().ok_or_else(|| Error::InvalidSample {
        index: 0,
        reason: "weighted estimation needs u_next".into(),
    })?;
    let pi = target.try_act(&sample.x_next)?;
    let gap = u_next
        .iter()
        .zip(&pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > tol_match {
        return Ok(0.0);
    }
    match sample.behavior_prob {
        None => Ok(1.0),
        Some(p) if p > 0.0 && p.is_finite() => Ok(1.0 / p),
        Some(p) => Err(Error::InvalidSample {
            index: 0,
            reason: format!("behavior probability {p} for a matching action"),
        }),
    }
}

pub fn estimate_operators(
    samples: &[TransitionSample],
    target: &LinearPolicy,
    w: &CostWeights,
    mode: EstimationMode,
) -> Result<VIOperators> {
    let first = samples
        .first()
        .ok_or_else(|| Error::DegenerateBatch("no samples".into()))?;
    let (n, m) = (first.x.len(), first.u.len());
    if n != target.state_dim() || m != target.action_dim() {
        return Err(Error::dim(format!(
            "samples are {n}/{m} but policy is {}/{}",
            target.state_dim(),
            target.action_dim()
        )));
    }
    let dim = matspace::coeff_len(n + m);
    let alpha = w.alpha();
    let mut a_hat = DMatrix::zeros(dim, dim);
    let mut b_hat = DVector::zeros(dim);
    let mut n_effective = 0;

    for (index, s) in samples.iter().enumerate() {
        s.validate(n, m)
            .map_err(|reason| Error::InvalidSample { index, reason })?;
        let (rho, u_next) = match mode {
            EstimationMode::Retarget => (1.0, target.act(&s.x_next)),
            EstimationMode::Weighted { tol_match } => {
                let rho = importance_ratio(s, target, tol_match).map_err(|e| match e {
                    Error::InvalidSample { reason, .. } => Error::InvalidSample { index, reason },
                    other => other,
                })?;
                (rho, s.u_next.clone().expect("checked by importance_ratio"))
            }
        };
        let phi = basis_phi(&s.x, &s.u);
        let diff = if rho != 0.0 {
            n_effective += 1;
            &phi - basis_phi(&s.x_next, &u_next) * (alpha * rho)
        } else {
            phi.clone()
        };
        a_hat.ger(1.0, &phi, &diff, 1.0);
        b_hat.axpy(rho * s.g, &phi, 1.0);
    }

    if n_effective == 0 {
        return Err(Error::DegenerateBatch(
            "every sample has zero importance weight".into(),
        ));
    }
    let scale = 1.0 / samples.len() as f64;
    Ok(VIOperators {
        a_hat: a_hat * scale,
        b_hat: b_hat * scale,
        n_effective,
        n_samples: samples.len(),
        state_dim: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `‖Â r - b̂‖₂` at the returned iterate.
    pub residual: f64,
    /// Iterations in which the projection moved the gradient step.
    pub projection_active: usize,
    pub last_change: f64,
    pub gamma0: f64,
    pub preconditioned: bool,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn vi_solve(ops: &VIOperators, r_init: &DVector<f64>, cfg: &EvalConfig) -> Result<(QFunction, ViDiagnostics)> {
    cfg.validate()?;
    let dim = ops.b_hat.len();
    if r_init.len() != dim || ops.a_hat.shape() != (dim, dim) {
        return Err(Error::dim(format!(
            "operators are {}x{} / {}, initial vector has length {}",
            ops.a_hat.nrows(),
            ops.a_hat.ncols(),
            dim,
            r_init.len()
        )));
    }
    if ops.a_hat.iter().chain(ops.b_hat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("operators have non-finite entries".into()));
    }
    let preconditioned = match cfg.preconditioner {
        Preconditioner::Identity => false,
        Preconditioner::Normal => true,
        Preconditioner::Auto => {
            let sym = (&ops.a_hat + ops.a_hat.transpose()) * 0.5;
            matspace::min_eigenvalue(&sym) < 0.0
        }
    };
    let (op, rhs) = if preconditioned {
        (ops.a_hat.tr_mul(&ops.a_hat), ops.a_hat.tr_mul(&ops.b_hat))
    } else {
        (ops.a_hat.clone(), ops.b_hat.clone())
    };
    let lip = spectral_norm(&op);
    let base = if lip > 0.0 { cfg.gamma0 / lip } else { cfg.gamma0 };

    let project = |r: &DVector<f64>| -> Result<DVector<f64>> {
        let h = matspace::vec_to_mat(r)?;
        matspace::mat_to_vec(&matspace::proj_intersection(&h, cfg.delta)?)
    };

    let mut r = project(r_init)?;
    let mut diag = ViDiagnostics {
        iterations: 0,
        converged: false,
        residual: f64::NAN,
        projection_active: 0,
        last_change: f64::NAN,
        gamma0: cfg.gamma0,
        preconditioned,
    };

    // Preconditioned: FISTA with constant step and gradient restart.
    // Otherwise: decaying step on `r`.
    let mut y = r.clone();
    let mut t = 1.0_f64;
    for j in 0..cfg.max_outer {
        let (step, base_point) = if preconditioned {
            (base, &y)
        } else {
            (base / (1.0 + j as f64 / cfg.step_decay), &r)
        };
        let grad = &op * base_point - &rhs;
        let trial = base_point - grad * step;
        if trial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iterations: j, step });
        }
        let next = project(&trial)?;
        if (&next - &trial).norm() > 1e-12 * (1.0 + trial.norm()) {
            diag.projection_active += 1;
        }
        let change = (&next - &r).norm();
        if preconditioned {
            let restart = (&y - &next).dot(&(&next - &r)) > 0.0;
            let t_next = if restart { 1.0 } else { (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0 };
            let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
            y = &next + (&next - &r) * beta;
            t = t_next;
        }
        r = next;
        diag.iterations = j + 1;
        diag.last_change = change;
        if change < cfg.tol_inner {
            diag.converged = true;
            break;
        }
    }

    diag.residual = (&ops.a_hat * &r - &ops.b_hat).norm();
    let q = QFunction::from_coeffs(r, ops.state_dim)?;
    audit::record(&q, cfg.delta);
    Ok((q, diag))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub q: QFunction,
    pub diagnostics: ViDiagnostics,
    pub n_effective: usize,
}

/// Estimate the operators for `target` and solve the constrained fixed point,
/// warm-started at `r_warm`. A diverging iteration is retried with a halved
/// `gamma0`.
pub fn evaluate_policy(
    samples: &[TransitionSample],
    target: &LinearPolicy,
    w: &CostWeights,
    cfg: &EvalConfig,
    mode: EstimationMode,
    r_warm: &DVector<f64>,
) -> Result<Evaluation> {
    let ops = estimate_operators(samples, target, w, mode)?;
    let mut cfg = *cfg;
    let mut halvings = 0;
    loop {
        match vi_solve(&ops, r_warm, &cfg) {
            Ok((q, diagnostics)) => {
                return Ok(Evaluation {
                    q,
                    diagnostics,
                    n_effective: ops.n_effective,
                })
            }
            Err(Error::Divergence { .. }) if halvings < cfg.max_halvings => {
                cfg.gamma0 /= 2.0;
                halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Process-wide tally of every Q-function produced by [`vi_solve`] and of
/// those that left the constraint set.
pub mod audit {
    use super::*;

    static EMITTED: AtomicU64 = AtomicU64::new(0);
    static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

    pub const EIG_TOL: f64 = 1e-8;
    pub const NORM_TOL: f64 = 1e-8;

    pub(super) fn record(q: &QFunction, delta: BallRadius) {
        EMITTED.fetch_add(1, Ordering::Relaxed);
        if !satisfies_constraint(q, delta) {
            VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn satisfies_constraint(q: &QFunction, delta: BallRadius) -> bool {
        q.min_eigenvalue() >= -EIG_TOL && q.frobenius_norm() <= delta.get() + NORM_TOL
    }

    /// `(emitted, violations)` since process start.
    pub fn snapshot() -> (u64, u64) {
        (EMITTED.load(Ordering::Relaxed), VIOLATIONS.load(Ordering::Relaxed))
    }
}
