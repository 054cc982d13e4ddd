use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{derive_seed, early_stop, BufferMode, ReplayBuffer, StopReason, TrainConfig};
use crate::error::Result;
use crate::evaluator::{evaluate_policy, EstimationMode, EvalConfig, TransitionSample};
use crate::improver::improve_policy;
use crate::matspace::coeff_len;
use crate::plant::{
    safety_check, ImpedanceParams, Phase, PhasePlant, PhaseState, SafetyConfig, SafetyDecision, SuccessMonitor,
};
use crate::valuefn::{CostWeights, LinearPolicy, QFunction, ACTION_DIM, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineMode {
    Learn,
    /// Replay the initial policies without exploration or updates.
    Frozen,
}

pub struct OnlineSetup<'a> {
    pub plants: &'a [PhasePlant; 4],
    pub initial: [PhaseState; 4],
    pub policies: [LinearPolicy; 4],
    pub weights: &'a CostWeights,
    pub train: &'a TrainConfig,
    pub eval: &'a EvalConfig,
    pub safety: &'a SafetyConfig,
    pub mode: OnlineMode,
    pub seed: u64,
}

/// One phase at one impedance update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRow {
    /// 1-based impedance update index.
    pub k: usize,
    pub phase: Phase,
    /// Raw errors before the update.
    pub errors: [f64; STATE_DIM],
    pub x: [f64; STATE_DIM],
    pub u: [f64; ACTION_DIM],
    pub g: f64,
    pub reset: bool,
    /// Number of policy updates applied to this phase so far.
    pub policy_index: usize,
    pub learning_active: bool,
    pub success: bool,
    /// Impedance after the update (after any reset).
    pub impedance: ImpedanceParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryEvent {
    PolicyUpdate,
    UpdateFailed,
    DeactivateTrend,
    DeactivateLowCost,
    Reactivate,
    StayInactive,
}

impl BoundaryEvent {
    pub fn label(self) -> &'static str {
        match self {
            BoundaryEvent::PolicyUpdate => "policy_update",
            BoundaryEvent::UpdateFailed => "update_failed",
            BoundaryEvent::DeactivateTrend => "deactivate_trend",
            BoundaryEvent::DeactivateLowCost => "deactivate_low_cost",
            BoundaryEvent::Reactivate => "reactivate",
            BoundaryEvent::StayInactive => "stay_inactive",
        }
    }
}

/// One phase at one batch boundary `k = i N_b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub k: usize,
    pub phase: Phase,
    pub event: BoundaryEvent,
    pub policy_index: usize,
    pub batch_mean_cost: f64,
    pub reset_in_window: bool,
    pub r_change: Option<f64>,
    pub vi_iterations: Option<usize>,
    pub vi_residual: Option<f64>,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrialRecord {
    pub updates: Vec<UpdateRow>,
    pub boundaries: Vec<BoundaryRow>,
}

#[derive(Debug, Clone)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub success: bool,
    pub latched_at: Option<usize>,
    pub policy_updates: usize,
    pub resets: usize,
    pub deactivations: usize,
    pub policy: LinearPolicy,
    pub q: Option<QFunction>,
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub success: bool,
    /// Impedance updates until trial success, or the cap on failure.
    pub updates: usize,
    pub phases: Vec<PhaseSummary>,
    pub record: TrialRecord,
}

impl OnlineOutcome {
    pub fn phases_with_policy_updates(&self) -> usize {
        self.phases.iter().filter(|p| p.policy_updates > 0).count()
    }

    pub fn total_policy_updates(&self) -> usize {
        self.phases.iter().map(|p| p.policy_updates).sum()
    }
}

struct PhaseRun<'a> {
    plant: &'a PhasePlant,
    initial: PhaseState,
    state: PhaseState,
    policy: LinearPolicy,
    q: Option<QFunction>,
    r: DVector<f64>,
    buffer: ReplayBuffer,
    active: bool,
    monitor: SuccessMonitor,
    window_costs: Vec<f64>,
    window_k: Vec<f64>,
    window_reset: bool,
    policy_updates: usize,
    resets: usize,
    deactivations: usize,
    plant_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
}

/// Probability that Gaussian exploration lands within `tol` of the target
/// action in every coordinate, ignoring the box.
fn match_probability(tol: f64, std: f64) -> f64 {
    statrs::function::erf::erf(tol / (std * std::f64::consts::SQRT_2)).powi(ACTION_DIM as i32)
}

/// On-policy PICE over the four phases with independent bookkeeping.
pub fn online_train(setup: OnlineSetup<'_>) -> Result<OnlineOutcome> {
    let OnlineSetup {
        plants,
        initial,
        policies,
        weights: w,
        train,
        eval,
        safety,
        mode,
        seed,
    } = setup;
    train.validate()?;
    eval.validate()?;
    let eval = &EvalConfig {
        max_outer: train.online_max_outer,
        preconditioner: train.online_preconditioner,
        ..*eval
    };
    safety.validate()?;
    for (p, s) in plants.iter().zip(&initial) {
        p.validate()?;
        s.validate()?;
    }
    let learning = mode == OnlineMode::Learn;
    let stop_cfg = train.early_stop_config();
    let m = coeff_len(STATE_DIM + ACTION_DIM);

    let mut runs: Vec<PhaseRun> = policies
        .into_iter()
        .enumerate()
        .map(|(i, policy)| PhaseRun {
            plant: &plants[i],
            initial: initial[i],
            state: initial[i],
            policy,
            q: None,
            r: DVector::zeros(m),
            buffer: ReplayBuffer::new(train.batch, BufferMode::OnlineBatch),
            active: learning,
            monitor: SuccessMonitor::new(safety),
            window_costs: Vec::with_capacity(train.batch),
            window_k: Vec::with_capacity(train.batch),
            window_reset: false,
            policy_updates: 0,
            resets: 0,
            deactivations: 0,
            plant_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * i as u64)),
            explore_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * i as u64 + 1)),
        })
        .collect();

    let explore = if train.exploration_std > 0.0 {
        Some(Normal::new(0.0, train.exploration_std).expect("validated std"))
    } else {
        None
    };
    let mut record = TrialRecord::default();
    let mut updates = safety.max_updates;
    let mut success = false;

    for k in 1..=safety.max_updates {
        for run in runs.iter_mut() {
            let x = run.plant.normalized_state(&run.state);
            let target = run.policy.act(&x);
            let exploring = run.active && !run.monitor.succeeded();
            let (u, behavior_prob) = match (&explore, exploring) {
                (Some(dist), true) => {
                    let noise: Vec<f64> = (0..ACTION_DIM).map(|_| dist.sample(&mut run.explore_rng)).collect();
                    let u: Vec<f64> = target.iter().zip(&noise).map(|(a, e)| a + e).collect();
                    let prob = match train.estimation {
                        EstimationMode::Weighted { tol_match } => Some(match_probability(tol_match, train.exploration_std)),
                        EstimationMode::Retarget => None,
                    };
                    (u, prob.filter(|p| *p > 0.0))
                }
                _ => (target, None),
            };
            let out = run.plant.step(&run.state, &u, w, &mut run.plant_rng)?;
            let reset = safety_check(out.next.errors[0], safety) == SafetyDecision::Reset;
            let succeeded = run.monitor.record(safety.in_target(out.next.errors));

            if exploring {
                let u_next = run.policy.act(&out.x_next);
                let mut s = TransitionSample::new(out.x.to_vec(), out.u.clone(), out.g, out.x_next.to_vec())
                    .with_next_action(u_next);
                s.behavior_prob = behavior_prob;
                run.buffer.push(s)?;
            }
            run.window_costs.push(out.g);
            run.window_k.push(k as f64);
            run.window_reset |= reset;

            let errors = run.state.errors;
            run.state = if reset {
                run.resets += 1;
                run.initial
            } else {
                out.next
            };
            record.updates.push(UpdateRow {
                k,
                phase: run.plant.phase,
                errors,
                x: out.x,
                u: [out.u[0], out.u[1], out.u[2]],
                g: out.g,
                reset,
                policy_index: run.policy_updates,
                learning_active: exploring,
                success: succeeded,
                impedance: run.state.impedance,
            });
        }

        if runs.iter().all(|r| r.monitor.succeeded()) {
            updates = k;
            success = true;
            break;
        }

        if k % train.batch != 0 {
            continue;
        }
        for run in runs.iter_mut() {
            let costs = std::mem::take(&mut run.window_costs);
            let ks = std::mem::take(&mut run.window_k);
            let reset_in_window = std::mem::replace(&mut run.window_reset, false);
            if !learning || run.monitor.succeeded() {
                run.buffer.clear();
                continue;
            }
            let mean = costs.iter().sum::<f64>() / costs.len().max(1) as f64;
            let mut row = BoundaryRow {
                k,
                phase: run.plant.phase,
                event: BoundaryEvent::StayInactive,
                policy_index: run.policy_updates,
                batch_mean_cost: mean,
                reset_in_window,
                r_change: None,
                vi_iterations: None,
                vi_residual: None,
                min_eigenvalue: None,
            };
            if !run.active {
                if mean > train.reactivate_factor * train.cost_threshold || reset_in_window {
                    run.active = true;
                    row.event = BoundaryEvent::Reactivate;
                }
                record.boundaries.push(row);
                continue;
            }

            let decision = early_stop(&costs, &ks, reset_in_window, &stop_cfg);
            if let super::EarlyStopDecision::Deactivate(reason) = decision {
                run.active = false;
                run.deactivations += 1;
                row.event = match reason {
                    StopReason::DecreasingTrend => BoundaryEvent::DeactivateTrend,
                    StopReason::LowCost => BoundaryEvent::DeactivateLowCost,
                };
            } else {
                let updated = evaluate_policy(run.buffer.samples(), &run.policy, w, eval, train.estimation, &run.r)
                    .and_then(|ev| Ok((improve_policy(&ev.q, run.policy.bounds())?, ev)));
                match updated {
                    Ok((policy, ev)) => {
                        row.r_change = Some((ev.q.coeffs() - &run.r).norm());
                        row.vi_iterations = Some(ev.diagnostics.iterations);
                        row.vi_residual = Some(ev.diagnostics.residual);
                        row.min_eigenvalue = Some(ev.q.min_eigenvalue());
                        run.r = ev.q.coeffs().clone();
                        run.q = Some(ev.q);
                        run.policy = policy;
                        run.policy_updates += 1;
                        row.policy_index = run.policy_updates;
                        row.event = BoundaryEvent::PolicyUpdate;
                    }
                    Err(_) => row.event = BoundaryEvent::UpdateFailed,
                }
            }
            run.buffer.clear();
            record.boundaries.push(row);
        }
    }

    let phases = runs
        .into_iter()
        .map(|r| PhaseSummary {
            phase: r.plant.phase,
            success: r.monitor.succeeded(),
            latched_at: r.monitor.latched_at(),
            policy_updates: r.policy_updates,
            resets: r.resets,
            deactivations: r.deactivations,
            policy: r.policy,
            q: r.q,
        })
        .collect();
    Ok(OnlineOutcome {
        success,
        updates,
        phases,
        record,
    })
}
