//! Seeded trials built from a [`Config`]: initial conditions, offline
//! pre-training per phase, online tuning and frozen replay.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, RunMode};
use crate::driver::{
    collect_behavior_samples, derive_seed, make_initial_policy, offline_train, online_train, InitialPolicy,
    OfflineOutcome, OnlineMode, OnlineOutcome, OnlineSetup, ReplayBuffer,
};
use crate::error::{Error, Result};
use crate::io;
use crate::plant::{Phase, PhasePlant, PhaseState};
use crate::valuefn::{LinearPolicy, STATE_DIM};

const STREAM_INITIAL: u64 = 1000;
const STREAM_POLICY: u64 = 2000;
const STREAM_BUFFER: u64 = 3000;

/// Initial raw errors drawn uniformly inside the configured ranges, default
/// impedance.
pub fn initial_states(cfg: &Config, seed: u64) -> [PhaseState; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INITIAL));
    let imp = cfg.impedance();
    let (pr, dr) = (cfg.plant.initial_peak_range, cfg.plant.initial_duration_range);
    Phase::ALL.map(|p| {
        let mut errors = [0.0; STATE_DIM];
        errors[0] = if pr > 0.0 { rng.random_range(-pr..=pr) } else { 0.0 };
        errors[1] = if dr > 0.0 { rng.random_range(-dr..=dr) } else { 0.0 };
        PhaseState {
            impedance: imp.phase(p),
            errors,
        }
    })
}

pub fn initial_policies(kind: &InitialPolicy, seed: u64) -> Result<[LinearPolicy; 4]> {
    let mut out = Vec::with_capacity(4);
    for p in Phase::ALL {
        out.push(make_initial_policy(kind, derive_seed(seed, STREAM_POLICY + p.index() as u64))?);
    }
    Ok(out.try_into().expect("four phases"))
}

pub fn policy_path(dir: &Path, phase: Phase) -> PathBuf {
    dir.join(format!("policy_{}.json", phase.name()))
}

pub fn load_policy_dir(dir: &Path) -> Result<[LinearPolicy; 4]> {
    let mut out = Vec::with_capacity(4);
    for p in Phase::ALL {
        out.push(io::read_policy(&policy_path(dir, p))?.policy);
    }
    Ok(out.try_into().expect("four phases"))
}

/// Behavior-policy samples for every phase of `plants`.
pub fn collect_buffers(cfg: &Config, plants: &[PhasePlant; 4], seed: u64, n: usize) -> Result<Vec<ReplayBuffer>> {
    let w = cfg.weights()?;
    let initial = initial_states(cfg, derive_seed(seed, STREAM_BUFFER));
    Phase::ALL
        .iter()
        .map(|p| {
            let i = p.index();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_BUFFER + 1 + i as u64));
            collect_behavior_samples(&plants[i], &initial[i], n, &w, &cfg.safety, &mut rng)
        })
        .collect()
}

/// Offline PICE from the zero policy on each phase's buffer.
pub fn pretrain(cfg: &Config, buffers: &[ReplayBuffer]) -> Result<Vec<OfflineOutcome>> {
    let w = cfg.weights()?;
    let pi0 = LinearPolicy::zero(STATE_DIM, crate::valuefn::ACTION_DIM);
    buffers
        .iter()
        .map(|b| offline_train(b, &w, &cfg.training, &cfg.evaluation, &pi0))
        .collect()
}

pub fn online_trial(
    cfg: &Config,
    plants: &[PhasePlant; 4],
    seed: u64,
    policies: [LinearPolicy; 4],
    mode: OnlineMode,
) -> Result<OnlineOutcome> {
    let w = cfg.weights()?;
    online_train(OnlineSetup {
        plants,
        initial: initial_states(cfg, seed),
        policies,
        weights: &w,
        train: &cfg.training,
        eval: &cfg.evaluation,
        safety: &cfg.safety,
        mode,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub success: bool,
    pub latched_at: Option<usize>,
    pub policy_updates: usize,
    pub resets: usize,
    pub deactivations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub mode: RunMode,
    pub success: bool,
    pub updates: usize,
    pub phases: Vec<PhaseReport>,
    pub wall_seconds: f64,
}

fn summarize(seed: u64, mode: RunMode, out: &OnlineOutcome, wall: f64) -> TrialSummary {
    TrialSummary {
        seed,
        mode,
        success: out.success,
        updates: out.updates,
        phases: out
            .phases
            .iter()
            .map(|p| PhaseReport {
                phase: p.phase,
                success: p.success,
                latched_at: p.latched_at,
                policy_updates: p.policy_updates,
                resets: p.resets,
                deactivations: p.deactivations,
            })
            .collect(),
        wall_seconds: wall,
    }
}

fn start_policies(cfg: &Config, seed: u64) -> Result<[LinearPolicy; 4]> {
    match &cfg.run.policy_dir {
        Some(dir) => load_policy_dir(dir),
        None => initial_policies(&cfg.run.initial_policy, seed),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Online tuning (or frozen replay) for one seed; writes `trace.csv`,
/// `policy_updates.csv`, final policies and `summary.json` into `dir`.
pub fn run_online_seed(cfg: &Config, seed: u64, dir: &Path, mode: OnlineMode) -> Result<TrialSummary> {
    let start = Instant::now();
    ensure_dir(dir)?;
    let plants = cfg.plants();
    let out = online_trial(cfg, &plants, seed, start_policies(cfg, seed)?, mode)?;
    io::write_trace(&dir.join("trace.csv"), &out.record)?;
    io::write_boundaries(&dir.join("policy_updates.csv"), &out.record.boundaries)?;
    for p in &out.phases {
        io::write_policy(
            &policy_path(dir, p.phase),
            &p.policy,
            Some(p.phase),
            Some(format!("online seed {seed}")),
        )?;
    }
    let run_mode = match mode {
        OnlineMode::Learn => RunMode::Online,
        OnlineMode::Frozen => RunMode::ReplayPolicy,
    };
    let summary = summarize(seed, run_mode, &out, start.elapsed().as_secs_f64());
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflineSummary {
    pub seed: u64,
    pub buffer_size: usize,
    pub phases: Vec<OfflinePhaseReport>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflinePhaseReport {
    pub phase: Phase,
    pub converged: bool,
    pub policy_updates: usize,
    pub final_change: f64,
}

/// Offline pre-training for one seed; writes buffers, per-phase policies,
/// the convergence trace and `summary.json` into `dir`.
pub fn run_offline_seed(cfg: &Config, seed: u64, dir: &Path) -> Result<OfflineSummary> {
    let start = Instant::now();
    ensure_dir(dir)?;
    let plants = cfg.plants();
    let buffers = match &cfg.run.buffer {
        Some(path) => {
            let b = io::read_buffer(path)?;
            vec![b; 4]
        }
        None => collect_buffers(cfg, &plants, seed, cfg.run.buffer_size)?,
    };
    let outcomes = pretrain(cfg, &buffers)?;
    let mut phases = Vec::with_capacity(4);
    for ((p, out), buf) in Phase::ALL.iter().zip(&outcomes).zip(&buffers) {
        io::write_buffer(&dir.join(format!("buffer_{}.jsonl", p.name())), buf.samples())?;
        io::write_offline_iterations(&dir.join(format!("offline_{}.csv", p.name())), Some(*p), &out.iterations)?;
        io::write_policy(
            &policy_path(dir, *p),
            &out.policy,
            Some(*p),
            Some(format!("offline seed {seed}, {} samples", buf.len())),
        )?;
        phases.push(OfflinePhaseReport {
            phase: *p,
            converged: out.converged,
            policy_updates: out.policy_updates(),
            final_change: out.iterations.last().map_or(0.0, |i| i.r_change),
        });
    }
    let summary = OfflineSummary {
        seed,
        buffer_size: buffers.first().map_or(0, ReplayBuffer::len),
        phases,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum SeedSummary {
    Online(TrialSummary),
    Offline(OfflineSummary),
}

/// Run every seed of `cfg.run.seeds` in `mode` on a pool of `threads`
/// workers. Outputs go to `out/seed_<n>/`, results are returned in seed order.
pub fn run_seeds(cfg: &Config, mode: RunMode, out: &Path, threads: usize) -> Result<Vec<SeedSummary>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let one = |seed: u64| -> Result<SeedSummary> {
        let dir = seed_dir(out, seed);
        match mode {
            RunMode::Online => run_online_seed(cfg, seed, &dir, OnlineMode::Learn).map(SeedSummary::Online),
            RunMode::ReplayPolicy => run_online_seed(cfg, seed, &dir, OnlineMode::Frozen).map(SeedSummary::Online),
            RunMode::Offline => run_offline_seed(cfg, seed, &dir).map(SeedSummary::Offline),
            RunMode::Oracle => Err(Error::Config("oracle mode has no per-seed runs".into())),
        }
    };
    pool.install(|| cfg.run.seeds.par_iter().map(|&s| one(s)).collect())
}

/// Closed-form oracle report for the `[oracle]` block.
pub fn oracle_report(cfg: &Config) -> Result<crate::oracle::OracleReport> {
    let o = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| Error::Config("no [oracle] block".into()))?;
    let a = crate::config::matrix(&o.a, "oracle.a")?;
    let b = crate::config::matrix(&o.b, "oracle.b")?;
    let gain = o.gain.as_ref().map(|g| crate::config::matrix(g, "oracle.gain")).transpose()?;
    crate::oracle::report(&a, &b, &cfg.weights()?, gain.as_ref())
}

/// Run `cfg.run.mode` and write everything under `out`.
pub fn run(cfg: &Config, out: &Path, threads: usize) -> Result<Vec<SeedSummary>> {
    ensure_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()).map_err(|e| Error::io(out, e))?;
    if cfg.run.mode == RunMode::Oracle {
        io::write_json(&out.join("oracle.json"), &oracle_report(cfg)?)?;
        return Ok(Vec::new());
    }
    let summaries = run_seeds(cfg, cfg.run.mode, out, threads)?;
    io::write_json(&out.join("summary.json"), &summaries)?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_states_are_seeded_and_in_range() {
        let cfg = Config::default();
        let a = initial_states(&cfg, 5);
        assert_eq!(a, initial_states(&cfg, 5));
        assert_ne!(a, initial_states(&cfg, 6));
        for s in a {
            assert!(s.errors[0].abs() <= 8.0 && s.errors[1].abs() <= 0.12);
        }
    }

    #[test]
    fn online_seed_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::default();
        let s = run_online_seed(&cfg, 3, dir.path(), OnlineMode::Learn).unwrap();
        assert!(s.updates <= cfg.safety.max_updates);
        for f in ["trace.csv", "policy_updates.csv", "summary.json", "policy_STF.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
