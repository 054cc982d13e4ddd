//! Offline and online policy iteration loops and the bookkeeping around them.

mod buffer;
mod early_stop;
mod offline;
mod online;

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{EstimationMode, Preconditioner};
use crate::valuefn::{ActionBox, LinearPolicy, ACTION_DIM, STATE_DIM};

pub use buffer::{BufferMode, ReplayBuffer};
pub use early_stop::{
    early_stop, slope_interval, t_critical, ContinueReason, EarlyStopConfig, EarlyStopDecision, SlopeInterval,
    StopReason,
};
pub use offline::{collect_behavior_samples, offline_train, OfflineIteration, OfflineOutcome};
pub use online::{
    online_train, BoundaryEvent, BoundaryRow, OnlineMode, OnlineOutcome, OnlineSetup, PhaseSummary, TrialRecord,
    UpdateRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Offline convergence tolerance on `‖r_i - r_{i-1}‖₂`.
    pub eps_offline: f64,
    /// Online batch size.
    pub batch: usize,
    pub cost_threshold: f64,
    pub ci_level: f64,
    pub max_policy_updates: usize,
    /// Std of the Gaussian noise added to executed actions while learning.
    pub exploration_std: f64,
    /// A deactivated phase resumes learning when its batch mean cost exceeds
    /// `reactivate_factor * cost_threshold`.
    pub reactivate_factor: f64,
    /// VI iteration cap for each online batch. `evaluation.max_outer` applies
    /// to offline training only.
    pub online_max_outer: usize,
    pub online_preconditioner: Preconditioner,
    pub estimation: EstimationMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eps_offline: 1e-4,
            batch: 15,
            cost_threshold: 0.043,
            ci_level: 0.95,
            max_policy_updates: 50,
            exploration_std: 0.1,
            reactivate_factor: 1.0,
            online_max_outer: 300,
            online_preconditioner: Preconditioner::Identity,
            estimation: EstimationMode::Retarget,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.eps_offline) || !pos(self.cost_threshold) || !pos(self.reactivate_factor) {
            return Err(Error::InvalidInput("training tolerances must be positive".into()));
        }
        if self.batch == 0 || self.max_policy_updates == 0 || self.online_max_outer == 0 {
            return Err(Error::InvalidInput(
                "batch, max_policy_updates and online_max_outer must be >= 1".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if !(self.exploration_std.is_finite() && self.exploration_std >= 0.0) {
            return Err(Error::InvalidInput("exploration_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn early_stop_config(&self) -> EarlyStopConfig {
        EarlyStopConfig {
            ci_level: self.ci_level,
            cost_threshold: self.cost_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "kebab-case")]
pub enum InitialPolicy {
    Zero,
    Random,
    PretrainedFile(PathBuf),
}

/// Seed for the `stream`-th independent generator derived from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn random_gain(seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(ACTION_DIM, STATE_DIM, |_, _| rng.random_range(-0.5..=0.5))
}

pub fn make_initial_policy(kind: &InitialPolicy, seed: u64) -> Result<LinearPolicy> {
    match kind {
        InitialPolicy::Zero => Ok(LinearPolicy::zero(STATE_DIM, ACTION_DIM)),
        InitialPolicy::Random => LinearPolicy::from_gain(random_gain(seed), ActionBox::default()),
        InitialPolicy::PretrainedFile(path) => Ok(crate::io::read_policy(path)?.policy),
    }
}
