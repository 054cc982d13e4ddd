use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use super::{ReplayBuffer, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_policy, EvalConfig, TransitionSample};
use crate::improver::improve_policy;
use crate::plant::{safety_check, PhasePlant, PhaseState, SafetyConfig, SafetyDecision};
use crate::valuefn::{CostWeights, LinearPolicy, QFunction, ACTION_DIM};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineIteration {
    pub index: usize,
    pub r_change: f64,
    pub vi_iterations: usize,
    pub vi_converged: bool,
    pub vi_residual: f64,
    pub min_eigenvalue: f64,
    pub frobenius_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub q: QFunction,
    pub policy: LinearPolicy,
    pub iterations: Vec<OfflineIteration>,
    /// False when the update cap was hit before the tolerance.
    pub converged: bool,
}

impl OfflineOutcome {
    pub fn policy_updates(&self) -> usize {
        self.iterations.len()
    }
}

/// Off-policy PICE on a fixed buffer: evaluate the current target policy,
/// improve greedily, repeat until the coefficients settle.
pub fn offline_train(
    buffer: &ReplayBuffer,
    w: &CostWeights,
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    pi0: &LinearPolicy,
) -> Result<OfflineOutcome> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::DegenerateBatch("offline buffer is empty".into()));
    }
    let (n, m) = (w.state_dim(), w.action_dim());
    let mut policy = pi0.clone();
    let mut r = DVector::zeros(crate::matspace::coeff_len(n + m));
    let mut q = QFunction::zeros(n, m);
    let mut iterations = Vec::new();

    for index in 1..=cfg.max_policy_updates {
        let ev = evaluate_policy(buffer.samples(), &policy, w, eval_cfg, cfg.estimation, &r)?;
        let r_change = (ev.q.coeffs() - &r).norm();
        r = ev.q.coeffs().clone();
        iterations.push(OfflineIteration {
            index,
            r_change,
            vi_iterations: ev.diagnostics.iterations,
            vi_converged: ev.diagnostics.converged,
            vi_residual: ev.diagnostics.residual,
            min_eigenvalue: ev.q.min_eigenvalue(),
            frobenius_norm: ev.q.frobenius_norm(),
        });
        policy = improve_policy(&ev.q, pi0.bounds())?;
        q = ev.q;
        if r_change <= cfg.eps_offline {
            return Ok(OfflineOutcome {
                q,
                policy,
                iterations,
                converged: true,
            });
        }
    }
    Ok(OfflineOutcome {
        q,
        policy,
        iterations,
        converged: false,
    })
}

/// Roll out a uniformly random behavior policy on one phase and record
/// `n` four-tuples, restarting from `initial` whenever the safety bound trips.
pub fn collect_behavior_samples<R: Rng + ?Sized>(
    plant: &PhasePlant,
    initial: &PhaseState,
    n: usize,
    w: &CostWeights,
    safety: &SafetyConfig,
    rng: &mut R,
) -> Result<ReplayBuffer> {
    let mut buf = ReplayBuffer::new(n, super::BufferMode::OfflineFixed);
    let mut state = *initial;
    // Uniform density on [-1, 1]^3.
    let density = 0.5f64.powi(ACTION_DIM as i32);
    for _ in 0..n {
        let u: Vec<f64> = (0..ACTION_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let out = plant.step(&state, &u, w, rng)?;
        let mut s = TransitionSample::new(out.x.to_vec(), out.u, out.g, out.x_next.to_vec());
        s.behavior_prob = Some(density);
        buf.push(s)?;
        state = match safety_check(out.next.errors[0], safety) {
            SafetyDecision::Reset => *initial,
            SafetyDecision::Continue => out.next,
        };
    }
    Ok(buf)
}
