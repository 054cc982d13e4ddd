//! File formats: policy JSON, replay buffers as JSON lines, CSV traces and
//! run summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::driver::{BoundaryRow, OfflineIteration, ReplayBuffer, TrialRecord};
use crate::error::{Error, Result};
use crate::evaluator::TransitionSample;
use crate::improver::improve_policy;
use crate::plant::Phase;
use crate::valuefn::{ActionBox, LinearPolicy, QFunction};

pub const POLICY_FORMAT: &str = "pice-policy";
pub const POLICY_VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "# pice-trace v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBody {
    /// Greedy policy of a Q-function, stored as its coefficient vector.
    Greedy { coeffs: Vec<f64> },
    /// Clipped linear feedback, gain rows.
    Gain { gain: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub bounds: ActionBox,
    pub policy: PolicyBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedPolicy {
    pub policy: LinearPolicy,
    pub phase: Option<Phase>,
    pub provenance: Option<String>,
}

pub fn policy_to_file(policy: &LinearPolicy, phase: Option<Phase>, provenance: Option<String>) -> PolicyFile {
    let body = match policy.greedy_blocks() {
        Some(b) => PolicyBody::Greedy {
            coeffs: b.q.coeffs().iter().copied().collect(),
        },
        None => PolicyBody::Gain {
            gain: crate::oracle::rows(policy.gain()),
        },
    };
    PolicyFile {
        format: POLICY_FORMAT.into(),
        version: POLICY_VERSION,
        phase,
        state_dim: policy.state_dim(),
        action_dim: policy.action_dim(),
        bounds: policy.bounds(),
        policy: body,
        provenance,
    }
}

pub fn policy_from_file(file: &PolicyFile) -> Result<LinearPolicy> {
    if file.format != POLICY_FORMAT || file.version != POLICY_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported policy format {} v{}",
            file.format, file.version
        )));
    }
    let bounds = ActionBox::new(file.bounds.lower, file.bounds.upper)?;
    let (n, m) = (file.state_dim, file.action_dim);
    let policy = match &file.policy {
        PolicyBody::Greedy { coeffs } => {
            let q = QFunction::from_coeffs(DVector::from_column_slice(coeffs), n)?;
            if q.action_dim() != m {
                return Err(Error::dim("policy coefficients do not match action_dim"));
            }
            improve_policy(&q, bounds)?
        }
        PolicyBody::Gain { gain } => {
            if gain.len() != m || gain.iter().any(|row| row.len() != n) {
                return Err(Error::dim(format!("gain must be {m}x{n}")));
            }
            LinearPolicy::from_gain(DMatrix::from_fn(m, n, |i, j| gain[i][j]), bounds)?
        }
    };
    Ok(policy)
}

pub fn write_policy(path: &Path, policy: &LinearPolicy, phase: Option<Phase>, provenance: Option<String>) -> Result<()> {
    let doc = policy_to_file(policy, phase, provenance);
    let text = serde_json::to_string_pretty(&doc).expect("policy serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_policy(path: &Path) -> Result<LoadedPolicy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    Ok(LoadedPolicy {
        policy: policy_from_file(&doc)?,
        phase: doc.phase,
        provenance: doc.provenance,
    })
}

/// One JSON object per line.
pub fn write_buffer(path: &Path, samples: &[TransitionSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines and lines starting with `#` are skipped.
pub fn read_buffer(path: &Path) -> Result<ReplayBuffer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let s: TransitionSample = serde_json::from_str(t).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        samples.push(s);
    }
    Ok(ReplayBuffer::from_samples(samples))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{TRACE_HEADER}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(out))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-update trace, one row per phase and impedance update.
pub fn write_trace(path: &Path, record: &TrialRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "k", "phase", "e_peak", "e_dur", "x1", "x2", "u1", "u2", "u3", "g", "reset", "policy_index",
        "learning_active", "success", "stiffness", "equilibrium", "damping",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in &record.updates {
        w.write_record([
            r.k.to_string(),
            r.phase.name().to_string(),
            r.errors[0].to_string(),
            r.errors[1].to_string(),
            r.x[0].to_string(),
            r.x[1].to_string(),
            r.u[0].to_string(),
            r.u[1].to_string(),
            r.u[2].to_string(),
            r.g.to_string(),
            u8::from(r.reset).to_string(),
            r.policy_index.to_string(),
            u8::from(r.learning_active).to_string(),
            u8::from(r.success).to_string(),
            r.impedance.stiffness.to_string(),
            r.impedance.equilibrium.to_string(),
            r.impedance.damping.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_boundaries(path: &Path, rows: &[BoundaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "k", "phase", "event", "policy_index", "batch_mean_cost", "reset_in_window", "r_change", "vi_iterations",
        "vi_residual", "min_eigenvalue",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.phase.name().to_string(),
            r.event.label().to_string(),
            r.policy_index.to_string(),
            r.batch_mean_cost.to_string(),
            u8::from(r.reset_in_window).to_string(),
            opt(r.r_change),
            opt(r.vi_iterations),
            opt(r.vi_residual),
            opt(r.min_eigenvalue),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_offline_iterations(path: &Path, phase: Option<Phase>, rows: &[OfflineIteration]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "phase", "i", "r_change", "vi_iterations", "vi_converged", "vi_residual", "min_eigenvalue", "frobenius_norm",
    ])
    .map_err(|e| csv_err(path, e))?;
    let name = phase.map(|p| p.name()).unwrap_or("");
    for r in rows {
        w.write_record([
            name.to_string(),
            r.index.to_string(),
            r.r_change.to_string(),
            r.vi_iterations.to_string(),
            u8::from(r.vi_converged).to_string(),
            r.vi_residual.to_string(),
            r.min_eigenvalue.to_string(),
            r.frobenius_norm.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
