//! Simulated human-prosthesis plant at the gait-feature level.
//!
//! Each of the four impedance-control phases owns a 2x3 sensitivity matrix
//! mapping physical impedance increments `(ΔK, Δθ_e, ΔC)` to changes in the
//! raw feature errors `(peak deg, duration fraction)`. Errors persist between
//! impedance updates and pick up stride noise averaged over the gait cycles
//! of one update:
//!
//! ```text
//! e' = e + S Δ + w,   w = mean of `cycles_per_update` draws of N(0, σ²)
//! ```

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::valuefn::{stage_cost, ActionBox, CostWeights, ACTION_DIM, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    /// Stance flexion.
    Stf,
    /// Stance extension.
    Ste,
    /// Swing flexion.
    Swf,
    /// Swing extension.
    Swe,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Stf, Phase::Ste, Phase::Swf, Phase::Swe];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Stf => "STF",
            Phase::Ste => "STE",
            Phase::Swf => "SWF",
            Phase::Swe => "SWE",
        }
    }

    pub fn from_name(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `τ = K (θ_e - θ) - C ω`.
pub fn impedance_torque(stiffness: f64, equilibrium: f64, damping: f64, theta: f64, omega: f64) -> f64 {
    stiffness * (equilibrium - theta) - damping * omega
}

/// Stiffness (Nm/deg), equilibrium angle (deg) and damping (Nm·s/deg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceParams {
    pub stiffness: f64,
    pub equilibrium: f64,
    pub damping: f64,
}

impl ImpedanceParams {
    pub fn torque(&self, theta: f64, omega: f64) -> f64 {
        impedance_torque(self.stiffness, self.equilibrium, self.damping, theta, omega)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.stiffness, self.equilibrium, self.damping].iter().all(|v| v.is_finite());
        if !ok || self.stiffness < 0.0 || self.damping < 0.0 {
            return Err(Error::InvalidInput(format!("infeasible impedance {self:?}")));
        }
        Ok(())
    }
}

/// The 12 impedance parameters of the four-phase controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceSet(pub [ImpedanceParams; 4]);

impl ImpedanceSet {
    pub fn phase(&self, p: Phase) -> ImpedanceParams {
        self.0[p.index()]
    }
}

impl Default for ImpedanceSet {
    fn default() -> Self {
        let p = |stiffness, equilibrium, damping| ImpedanceParams {
            stiffness,
            equilibrium,
            damping,
        };
        ImpedanceSet([
            p(3.0, 8.0, 0.05),
            p(2.5, 5.0, 0.04),
            p(1.2, 60.0, 0.03),
            p(1.0, 10.0, 0.025),
        ])
    }
}

/// Normalization between raw features / impedance increments and the unit
/// scale the learner works in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Raw error = normalized state × divisor.
    pub state_divisors: [f64; STATE_DIM],
    /// Physical increment = normalized action × multiplier.
    pub action_multipliers: [f64; ACTION_DIM],
}

impl Scaling {
    pub fn for_phase(phase: Phase) -> Self {
        let theta = if phase == Phase::Swf { 1.0 } else { 0.5 };
        Self {
            state_divisors: [8.0, 0.24],
            action_multipliers: [0.05, theta, 0.0005],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.state_divisors.iter().chain(&self.action_multipliers);
        if all.clone().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::InvalidInput("scaling factors must be finite and nonzero".into()));
        }
        Ok(())
    }

    pub fn normalize_state(&self, e: [f64; STATE_DIM]) -> [f64; STATE_DIM] {
        [e[0] / self.state_divisors[0], e[1] / self.state_divisors[1]]
    }

    pub fn physical_increment(&self, u: &[f64]) -> [f64; ACTION_DIM] {
        [
            u[0] * self.action_multipliers[0],
            u[1] * self.action_multipliers[1],
            u[2] * self.action_multipliers[2],
        ]
    }
}

/// Dynamics of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlant {
    pub phase: Phase,
    /// Raw error change per physical impedance increment, rows (peak, duration).
    pub sensitivity: [[f64; ACTION_DIM]; STATE_DIM],
    /// Per-stride standard deviation of (peak deg, duration fraction).
    pub noise_std: [f64; STATE_DIM],
    /// Desired peak angle (deg) and phase duration (fraction of the cycle).
    pub target_peak: f64,
    pub target_duration: f64,
    pub scaling: Scaling,
    pub cycles_per_update: usize,
}

/// Sensitivities expressed in normalized units (state change per unit
/// normalized action); `default_for` converts them to physical units.
const NORMALIZED_GAINS: [[[f64; 3]; 2]; 4] = [
    [[-0.40, 0.06, -0.08], [0.04, 0.015, 0.30]],
    [[-0.36, 0.075, -0.06], [0.06, 0.01, 0.28]],
    [[-0.44, 0.09, -0.10], [0.04, 0.02, 0.32]],
    [[-0.32, 0.05, -0.08], [0.02, 0.015, 0.24]],
];

const TARGETS: [(f64, f64); 4] = [(15.0, 0.15), (3.0, 0.25), (60.0, 0.22), (5.0, 0.18)];

impl PhasePlant {
    pub fn default_for(phase: Phase) -> Self {
        let scaling = Scaling::for_phase(phase);
        let b = NORMALIZED_GAINS[phase.index()];
        let mut sensitivity = [[0.0; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                sensitivity[i][j] = b[i][j] * scaling.state_divisors[i] / scaling.action_multipliers[j];
            }
        }
        let (target_peak, target_duration) = TARGETS[phase.index()];
        Self {
            phase,
            sensitivity,
            noise_std: [0.8, 0.01],
            target_peak,
            target_duration,
            scaling,
            cycles_per_update: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scaling.validate()?;
        if self.sensitivity.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{}: sensitivity has non-finite entries", self.phase)));
        }
        if self.noise_std.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!("{}: noise std must be >= 0", self.phase)));
        }
        if self.cycles_per_update == 0 {
            return Err(Error::InvalidInput("cycles_per_update must be >= 1".into()));
        }
        Ok(())
    }

    /// Sensitivity in normalized coordinates: `x' = x + B u`.
    pub fn normalized_input_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(STATE_DIM, ACTION_DIM, |i, j| {
            self.sensitivity[i][j] * self.scaling.action_multipliers[j] / self.scaling.state_divisors[i]
        })
    }

    pub fn with_sensitivity_scaled(&self, factors: [[f64; ACTION_DIM]; STATE_DIM]) -> Self {
        let mut out = self.clone();
        for (row, f) in out.sensitivity.iter_mut().zip(factors) {
            for (s, f) in row.iter_mut().zip(f) {
                *s *= f;
            }
        }
        out
    }

    pub fn normalized_state(&self, state: &PhaseState) -> [f64; STATE_DIM] {
        self.scaling.normalize_state(state.errors)
    }

    /// Apply one impedance update with normalized action `u` (clipped to the
    /// unit box). Stiffness and damping are kept non-negative; the errors
    /// respond to the increment actually applied.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &PhaseState,
        u: &[f64],
        w: &CostWeights,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if u.len() != ACTION_DIM {
            return Err(Error::dim(format!("action must have length {ACTION_DIM}")));
        }
        let bounds = ActionBox::default();
        let u: Vec<f64> = u.iter().map(|&v| bounds.clip(v)).collect();
        let x = self.normalized_state(state);
        let g = stage_cost(&x, &u, w)?;

        let delta = self.scaling.physical_increment(&u);
        let old = state.impedance;
        let new = ImpedanceParams {
            stiffness: (old.stiffness + delta[0]).max(0.0),
            equilibrium: old.equilibrium + delta[1],
            damping: (old.damping + delta[2]).max(0.0),
        };
        let applied = [
            new.stiffness - old.stiffness,
            new.equilibrium - old.equilibrium,
            new.damping - old.damping,
        ];

        let mut errors = state.errors;
        for (i, e) in errors.iter_mut().enumerate() {
            *e += (0..ACTION_DIM).map(|j| self.sensitivity[i][j] * applied[j]).sum::<f64>();
        }
        let noise = self.stride_noise(rng);
        errors[0] += noise[0];
        errors[1] += noise[1];

        let next = PhaseState { impedance: new, errors };
        Ok(StepOutcome {
            x,
            u,
            g,
            x_next: self.normalized_state(&next),
            next,
        })
    }

    fn stride_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            let sd = self.noise_std[i];
            if sd == 0.0 {
                continue;
            }
            let dist = Normal::new(0.0, sd).expect("validated std");
            let sum: f64 = (0..self.cycles_per_update).map(|_| dist.sample(rng)).sum();
            *o = sum / self.cycles_per_update as f64;
        }
        out
    }
}

/// Complete mutable state of one phase: the impedance and the raw errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub impedance: ImpedanceParams,
    /// Raw (peak deg, duration fraction) errors.
    pub errors: [f64; STATE_DIM],
}

impl PhaseState {
    pub fn validate(&self) -> Result<()> {
        self.impedance.validate()?;
        if self.errors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("initial errors must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: [f64; STATE_DIM],
    pub u: Vec<f64>,
    pub g: f64,
    pub x_next: [f64; STATE_DIM],
    pub next: PhaseState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    pub peak_bound: f64,
    pub target_peak: f64,
    pub target_duration: f64,
    pub success_window: usize,
    pub success_needed: usize,
    pub cycles_per_update: usize,
    pub max_updates: usize,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            peak_bound: 12.0,
            target_peak: 1.5,
            target_duration: 0.03,
            success_window: 10,
            success_needed: 8,
            cycles_per_update: 4,
            max_updates: 135,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.peak_bound, self.target_peak, self.target_duration]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive
            || self.success_window == 0
            || self.success_needed == 0
            || self.cycles_per_update == 0
            || self.max_updates == 0
        {
            return Err(Error::InvalidInput("safety constants must be positive".into()));
        }
        if self.success_needed > self.success_window {
            return Err(Error::InvalidInput("success_needed exceeds success_window".into()));
        }
        Ok(())
    }

    pub fn in_target(&self, errors: [f64; STATE_DIM]) -> bool {
        errors[0].abs() <= self.target_peak && errors[1].abs() <= self.target_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyDecision {
    Continue,
    Reset,
}

pub fn safety_check(peak_error: f64, cfg: &SafetyConfig) -> SafetyDecision {
    if peak_error.abs() > cfg.peak_bound {
        SafetyDecision::Reset
    } else {
        SafetyDecision::Continue
    }
}

/// Rolling "k of the last n updates in target" detector that latches.
#[derive(Debug, Clone)]
pub struct SuccessMonitor {
    window: VecDeque<bool>,
    size: usize,
    needed: usize,
    updates: usize,
    latched_at: Option<usize>,
}

impl SuccessMonitor {
    pub fn new(cfg: &SafetyConfig) -> Self {
        Self {
            window: VecDeque::with_capacity(cfg.success_window),
            size: cfg.success_window,
            needed: cfg.success_needed,
            updates: 0,
            latched_at: None,
        }
    }

    /// Record one update; returns whether the phase has succeeded.
    pub fn record(&mut self, in_target: bool) -> bool {
        self.updates += 1;
        if self.window.len() == self.size {
            self.window.pop_front();
        }
        self.window.push_back(in_target);
        if self.latched_at.is_none() && self.window.iter().filter(|&&b| b).count() >= self.needed {
            self.latched_at = Some(self.updates);
        }
        self.succeeded()
    }

    pub fn succeeded(&self) -> bool {
        self.latched_at.is_some()
    }

    /// 1-based update count at which success latched.
    pub fn latched_at(&self) -> Option<usize> {
        self.latched_at
    }

    pub fn in_target_count(&self) -> usize {
        self.window.iter().filter(|&&b| b).count()
    }
}

/// Per-phase success flags and overall trial success for complete error
/// histories (one entry per impedance update).
pub fn success_flags(histories: &[Vec<[f64; STATE_DIM]>; 4], cfg: &SafetyConfig) -> ([bool; 4], bool) {
    let mut flags = [false; 4];
    for (flag, hist) in flags.iter_mut().zip(histories) {
        let mut mon = SuccessMonitor::new(cfg);
        for e in hist {
            mon.record(cfg.in_target(*e));
        }
        *flag = mon.succeeded();
    }
    (flags, flags.iter().all(|&f| f))
}

/// Linear plant `x' = A x + B u (+ noise)` in normalized coordinates, used to
/// connect the learner to the closed-form oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise_std: f64,
}

impl LqrPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::dim("A must be square with as many rows as B".to_string()));
        }
        Ok(Self { a, b, noise_std: 0.0 })
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R) -> Vec<f64> {
        let xv = nalgebra::DVector::from_column_slice(x);
        let uv = nalgebra::DVector::from_column_slice(u);
        let mut next = &self.a * xv + &self.b * uv;
        if self.noise_std > 0.0 {
            let dist = Normal::new(0.0, self.noise_std).expect("validated std");
            for v in next.iter_mut() {
                *v += dist.sample(rng);
            }
        }
        next.iter().copied().collect()
    }
}
