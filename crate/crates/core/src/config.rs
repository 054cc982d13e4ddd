//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::driver::{InitialPolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::EvalConfig;
use crate::plant::{ImpedanceSet, Phase, PhasePlant, SafetyConfig};
use crate::valuefn::{CostWeights, ACTION_DIM, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseOverride {
    /// Physical sensitivity rows (peak, duration).
    pub sensitivity: Option<[[f64; ACTION_DIM]; STATE_DIM]>,
    pub noise_std: Option<[f64; STATE_DIM]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub noise_std: [f64; STATE_DIM],
    /// Multiplies every sensitivity entry of every phase.
    pub sensitivity_scale: f64,
    /// Initial raw errors are drawn uniformly from `±initial_peak_range` deg
    /// and `±initial_duration_range`.
    pub initial_peak_range: f64,
    pub initial_duration_range: f64,
    /// Keyed by phase name (STF, STE, SWF, SWE).
    pub phases: BTreeMap<String, PhaseOverride>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            noise_std: [0.8, 0.01],
            sensitivity_scale: 1.0,
            initial_peak_range: 8.0,
            initial_duration_range: 0.12,
            phases: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub state_penalty: Vec<Vec<f64>>,
    pub action_penalty: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            state_penalty: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
            action_penalty: vec![vec![0.01, 0.0, 0.0], vec![0.0, 0.01, 0.0], vec![0.0, 0.0, 0.01]],
            alpha: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Offline,
    Online,
    ReplayPolicy,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seeds: Vec<u64>,
    pub initial_policy: InitialPolicy,
    /// Directory holding `policy_<PHASE>.json` files; overrides `initial_policy`.
    pub policy_dir: Option<PathBuf>,
    /// Offline buffer file (JSON lines). Without it, samples are collected
    /// from the simulated plant with a random behavior policy.
    pub buffer: Option<PathBuf>,
    pub buffer_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Online,
            seeds: vec![0],
            initial_policy: InitialPolicy::Random,
            policy_dir: None,
            buffer: None,
            buffer_size: 105,
        }
    }
}

/// Linear plant used by the closed-form oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub gain: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub plant: PlantConfig,
    pub safety: SafetyConfig,
    pub cost: CostConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub run: RunConfig,
    pub oracle: Option<OracleConfig>,
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Syntax and schema errors become [`Error::Parse`] with the offending
    /// line; semantic ones stay [`Error::Config`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            reason: e.message().to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.safety.validate().map_err(cfg_err)?;
        self.training.validate().map_err(cfg_err)?;
        self.evaluation.validate().map_err(cfg_err)?;
        self.weights()?;
        for name in self.plant.phases.keys() {
            if Phase::from_name(name).is_none() {
                return Err(Error::Config(format!("unknown phase {name:?}")));
            }
        }
        if !(self.plant.sensitivity_scale.is_finite() && self.plant.sensitivity_scale > 0.0) {
            return Err(Error::Config("sensitivity_scale must be positive".into()));
        }
        let ranges = [self.plant.initial_peak_range, self.plant.initial_duration_range];
        if ranges.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("initial error ranges must be >= 0".into()));
        }
        if self.plant.initial_peak_range >= self.safety.peak_bound {
            return Err(Error::Config("initial_peak_range must lie inside the safety bound".into()));
        }
        for p in self.plants() {
            p.validate().map_err(cfg_err)?;
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.run.buffer_size == 0 {
            return Err(Error::Config("run.buffer_size must be >= 1".into()));
        }
        if self.run.mode == RunMode::Oracle && self.oracle.is_none() {
            return Err(Error::Config("oracle mode needs an [oracle] block".into()));
        }
        if let Some(o) = &self.oracle {
            let a = matrix(&o.a, "oracle.a")?;
            let b = matrix(&o.b, "oracle.b")?;
            let w = self.weights()?;
            if !a.is_square() || a.nrows() != w.state_dim() || b.nrows() != a.nrows() || b.ncols() != w.action_dim() {
                return Err(Error::Config("oracle A/B shapes do not match the cost penalties".into()));
            }
            if let Some(g) = &o.gain {
                let g = matrix(g, "oracle.gain")?;
                if g.nrows() != b.ncols() || g.ncols() != a.nrows() {
                    return Err(Error::Config("oracle.gain must be action_dim x state_dim".into()));
                }
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<CostWeights> {
        CostWeights::new(
            matrix(&self.cost.state_penalty, "cost.state_penalty")?,
            matrix(&self.cost.action_penalty, "cost.action_penalty")?,
            self.cost.alpha,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn plants(&self) -> [PhasePlant; 4] {
        Phase::ALL.map(|phase| {
            let mut p = PhasePlant::default_for(phase);
            p.noise_std = self.plant.noise_std;
            p.cycles_per_update = self.safety.cycles_per_update;
            if let Some(o) = self.phase_override(phase) {
                if let Some(s) = o.sensitivity {
                    p.sensitivity = s;
                }
                if let Some(n) = o.noise_std {
                    p.noise_std = n;
                }
            }
            for row in p.sensitivity.iter_mut() {
                for v in row.iter_mut() {
                    *v *= self.plant.sensitivity_scale;
                }
            }
            p
        })
    }

    fn phase_override(&self, phase: Phase) -> Option<&PhaseOverride> {
        self.plant
            .phases
            .iter()
            .find(|(k, _)| Phase::from_name(k) == Some(phase))
            .map(|(_, v)| v)
    }

    pub fn impedance(&self) -> ImpedanceSet {
        ImpedanceSet::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::from_toml_str("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.training.batch, 15);
    }

    #[test]
    fn round_trip() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(Config::from_toml_str("[training]\nbatchsize = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml_str("[training]\nci_level = 1.5\n").is_err());
        assert!(Config::from_toml_str("[cost]\nalpha = 1.0\n").is_err());
        assert!(Config::from_toml_str("[plant.phases.XYZ]\n").is_err());
        assert!(Config::from_toml_str("[run]\nmode = \"oracle\"\n").is_err());
    }

    #[test]
    fn phase_override_applies() {
        let text = "[plant.phases.swf]\nsensitivity = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]\n";
        let cfg = Config::from_toml_str(text).unwrap();
        assert_eq!(cfg.plants()[2].sensitivity, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(cfg.plants()[0], PhasePlant::default_for(Phase::Stf));
    }
}
