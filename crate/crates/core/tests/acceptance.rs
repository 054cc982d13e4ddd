//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Everything runs inside a single test so the process-wide evaluation audit
//! (criterion 4) sees every Q-function produced by the other criteria.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{rel_frobenius, LqrInstance};
use pice_core::config::{Config, RunMode};
use pice_core::driver::{
    derive_seed, early_stop, offline_train, ContinueReason, EarlyStopConfig, EarlyStopDecision, InitialPolicy,
    OnlineMode, OnlineOutcome, StopReason, TrainConfig,
};
use pice_core::evaluator::{audit, evaluate_policy, EstimationMode, EvalConfig};
use pice_core::experiment::{collect_buffers, initial_policies, online_trial, pretrain, run};
use pice_core::matspace::{dykstra, proj_ball, proj_intersection, proj_psd, BallRadius, DykstraOptions};
use pice_core::nalgebra::{DMatrix, DVector};
use pice_core::oracle::{dare_optimal, lyapunov_q};
use pice_core::plant::PhasePlant;
use pice_core::valuefn::LinearPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Projector = Box<dyn Fn(&DMatrix<f64>) -> DMatrix<f64>>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-scale..scale));
    (&a + a.transpose()) * 0.5
}

fn projections() -> Outcome {
    const TOL: f64 = 1e-8;
    let delta = BallRadius::new(100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let scale = [1.0, 20.0, 80.0][i % 3];
        let a = random_symmetric(&mut rng, scale);
        let b = random_symmetric(&mut rng, scale);
        let tol = |m: &DMatrix<f64>| TOL * (1.0 + m.norm());
        let projs: [(&str, Projector); 3] = [
            ("psd", Box::new(|m| proj_psd(m).unwrap())),
            ("ball", Box::new(move |m| proj_ball(m, delta))),
            ("intersection", Box::new(move |m| proj_intersection(m, delta).unwrap())),
        ];
        for (name, p) in &projs {
            let pa = p(&a);
            let pb = p(&b);
            let idem = (p(&pa) - &pa).norm();
            if idem > tol(&pa) {
                return Err(format!("{name} not idempotent on case {i}: {idem:e}"));
            }
            let expand = (&pa - &pb).norm() - (&a - &b).norm();
            if expand > tol(&a) {
                return Err(format!("{name} expands distances on case {i} by {expand:e}"));
            }
            if *name != "ball" {
                let eig = pa.clone().symmetric_eigen().eigenvalues.min();
                if eig < -tol(&pa) {
                    return Err(format!("{name} output has eigenvalue {eig:e} on case {i}"));
                }
                worst = worst.max(-eig);
            }
            if *name != "psd" && pa.norm() > delta.get() + TOL {
                return Err(format!("{name} output outside the ball on case {i}"));
            }
        }
        let d = dykstra(&a, delta, DykstraOptions::default()).unwrap();
        let gap = (&d.matrix - proj_intersection(&a, delta).unwrap()).norm();
        if gap > 1e-6 {
            return Err(format!("Dykstra and closed form differ by {gap:e} on case {i}"));
        }
    }
    Ok(format!("1000 matrices, worst negative eigenvalue {worst:.1e}"))
}

fn evaluation_oracle() -> Outcome {
    let inst = LqrInstance::standard();
    let gain = DMatrix::from_row_slice(3, 2, &[-0.5, 0.1, 0.2, 0.0, -0.1, -0.4]);
    let exact = lyapunov_q(&inst.a, &inst.b, &gain, &inst.w).map_err(|e| e.to_string())?.q;
    let pi = LinearPolicy::from_gain(gain.clone(), LqrInstance::bounds()).unwrap();
    let samples = inst.samples(&gain, 500, 1);
    let ev = evaluate_policy(&samples, &pi, &inst.w, &EvalConfig::default(), EstimationMode::Retarget, &DVector::zeros(15))
        .map_err(|e| e.to_string())?;
    let err = rel_frobenius(&ev.q.matrix(), &exact.matrix());
    check(err < 0.02, format!("relative Frobenius error {err:.2e}"))
}

fn optimality_oracle() -> Outcome {
    let inst = LqrInstance::standard();
    let dare = dare_optimal(&inst.a, &inst.b, &inst.w).map_err(|e| e.to_string())?;
    let pi0 = LinearPolicy::from_gain(DMatrix::zeros(3, 2), LqrInstance::bounds()).unwrap();
    let buffer = inst.buffer(&DMatrix::zeros(3, 2), 500, 2);
    let out = offline_train(&buffer, &inst.w, &TrainConfig::default(), &EvalConfig::default(), &pi0)
        .map_err(|e| e.to_string())?;
    let diff = (out.policy.gain() - &dare.gain).amax();
    let last = out.iterations.last().map(|i| i.r_change).unwrap_or(f64::NAN);
    check(
        out.converged && out.policy_updates() <= 20 && diff <= 0.05,
        format!(
            "converged={} after {} policy updates, final change {last:.1e}, max gain error {diff:.1e}",
            out.converged,
            out.policy_updates()
        ),
    )
}

fn psd_audit() -> Outcome {
    let (emitted, violations) = audit::snapshot();
    check(
        emitted > 0 && violations == 0,
        format!("{emitted} Q-functions emitted, {violations} outside PSD ∩ ball"),
    )
}

fn buffer_sweep(cfg: &Config, plants: &[PhasePlant; 4]) -> Outcome {
    let sizes = [15usize, 45, 75, 105, 135];
    let mut medians = Vec::new();
    for &n in &sizes {
        let mut counts = Vec::new();
        for seed in 0..10u64 {
            let buffers = collect_buffers(cfg, plants, seed, n).map_err(|e| e.to_string())?;
            let policies: [LinearPolicy; 4] = pretrain(cfg, &buffers)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|o| o.policy)
                .collect::<Vec<_>>()
                .try_into()
                .unwrap();
            let out = online_trial(cfg, plants, seed, policies, OnlineMode::Frozen).map_err(|e| e.to_string())?;
            counts.push(out.phases.iter().filter(|p| p.success).count() as f64);
        }
        medians.push(median(counts));
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    check(monotone, format!("median successful phases per size {sizes:?}: {medians:?}"))
}

fn random_trials(cfg: &Config, plants: &[PhasePlant; 4]) -> Result<Vec<OnlineOutcome>, String> {
    (0..20u64)
        .map(|seed| {
            let pols = initial_policies(&InitialPolicy::Random, seed).map_err(|e| e.to_string())?;
            online_trial(cfg, plants, seed, pols, OnlineMode::Learn).map_err(|e| e.to_string())
        })
        .collect()
}

fn online_success(random: &[OnlineOutcome], cap: usize) -> Outcome {
    let wins = random.iter().filter(|o| o.success && o.updates <= cap).count();
    check(wins * 5 >= random.len() * 4, format!("{wins}/{} trials tuned all four phases", random.len()))
}

fn warm_start(cfg: &Config, plants: &[PhasePlant; 4], random: &[OnlineOutcome]) -> Outcome {
    let mut fewer = 0;
    let mut pre_phases = Vec::new();
    for (seed, rand_out) in random.iter().enumerate() {
        let seed = seed as u64;
        let buffers = collect_buffers(cfg, plants, seed, cfg.run.buffer_size).map_err(|e| e.to_string())?;
        let policies: [LinearPolicy; 4] = pretrain(cfg, &buffers)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|o| o.policy)
            .collect::<Vec<_>>()
            .try_into()
            .unwrap();
        let out = online_trial(cfg, plants, seed, policies, OnlineMode::Learn).map_err(|e| e.to_string())?;
        if out.updates < rand_out.updates {
            fewer += 1;
        }
        pre_phases.push(out.phases_with_policy_updates() as f64);
    }
    let rand_phases: Vec<f64> = random.iter().map(|o| o.phases_with_policy_updates() as f64).collect();
    let (mp, mr) = (median(pre_phases), median(rand_phases));
    check(
        fewer * 4 >= random.len() * 3 && mp < mr,
        format!(
            "pre-trained needed fewer updates in {fewer}/{} pairs; median phases with policy updates {mp} vs {mr}",
            random.len()
        ),
    )
}

/// Two-sided 97.5% Student-t quantiles from standard tables.
const T_TABLE: [(usize, f64); 4] = [(3, 3.182446), (5, 2.570582), (8, 2.306004), (13, 2.160369)];

fn reference_decision(y: &[f64], slope: f64, sse: f64, reset: bool) -> EarlyStopDecision {
    let n = y.len();
    if n < 3 {
        return EarlyStopDecision::Continue(ContinueReason::InsufficientData);
    }
    let t = T_TABLE.iter().find(|(df, _)| *df == n - 2).unwrap().1;
    let tm = (n as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..n).map(|i| (i as f64 - tm).powi(2)).sum();
    let se = (sse / (n as f64 - 2.0) / sxx).sqrt();
    if !reset && slope + t * se < 0.0 {
        return EarlyStopDecision::Deactivate(StopReason::DecreasingTrend);
    }
    if y.iter().sum::<f64>() / (n as f64) < 0.043 {
        return EarlyStopDecision::Deactivate(StopReason::LowCost);
    }
    EarlyStopDecision::Continue(ContinueReason::NoEvidence)
}

/// Residual pattern orthogonal to the intercept and the index.
fn orthogonal_residual(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let tm = mean(&t);
    let tc: Vec<f64> = t.iter().map(|v| v - tm).collect();
    let rm = mean(&raw);
    let rc: Vec<f64> = raw.iter().map(|v| v - rm).collect();
    let k = rc.iter().zip(&tc).map(|(a, b)| a * b).sum::<f64>() / tc.iter().map(|v| v * v).sum::<f64>();
    rc.iter().zip(&tc).map(|(a, b)| a - k * b).collect()
}

fn early_stopping() -> Outcome {
    let cfg = EarlyStopConfig::default();
    let mut cases = 0;
    let mut seen = BTreeMap::new();
    let slopes = [-0.02, -0.005, 0.0, 0.01];
    let noise = [0.0, 0.01, 0.05];
    for &n in &[5usize, 7, 10, 15] {
        let v = orthogonal_residual(n);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for (k, &b) in slopes.iter().enumerate() {
            for &c in &noise {
                let level = if k % 2 == 0 { 0.03 } else { 0.5 };
                let tm = (n as f64 - 1.0) / 2.0;
                let y: Vec<f64> = (0..n).map(|i| level + b * (i as f64 - tm) + c * v[i]).collect();
                let reset = (cases % 4) == 3;
                let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
                let got = early_stop(&y, &idx, reset, &cfg);
                let want = reference_decision(&y, b, c * c * vv, reset);
                if got != want {
                    return Err(format!("case n={n} slope={b} noise={c} reset={reset}: {got:?} vs {want:?}"));
                }
                *seen.entry(got.label()).or_insert(0) += 1;
                cases += 1;
            }
        }
    }
    for n in 0..3 {
        let y = vec![0.5; n];
        let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let got = early_stop(&y, &idx, false, &cfg);
        if got != reference_decision(&y, 0.0, 0.0, false) {
            return Err(format!("short series of length {n} gave {got:?}"));
        }
        *seen.entry(got.label()).or_insert(0) += 1;
        cases += 1;
    }
    check(
        cases >= 50 && seen.len() == 4,
        format!("{cases} cases agree with the reference, outcomes {seen:?}"),
    )
}

/// Number of reset episodes in which the stage cost climbed from the
/// post-reset value before the reset fired.
fn retry_cycles(out: &OnlineOutcome, phase: usize) -> usize {
    let rows: Vec<_> = out.record.updates.iter().filter(|r| r.phase.index() == phase).collect();
    let mut cycles = 0;
    let mut start = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.reset {
            if i > start && r.g > rows[start].g {
                cycles += 1;
            }
            start = i + 1;
        }
    }
    cycles
}

fn robustness(cfg: &Config, plants: &[PhasePlant; 4], random: &[OnlineOutcome]) -> Outcome {
    let mut replay_updates = Vec::new();
    let mut scratch_updates = Vec::new();
    let mut replay_wins = 0;
    let mut cyclic = 0;
    for seed in 0..10u64 {
        let trained: [LinearPolicy; 4] = random[seed as usize]
            .phases
            .iter()
            .map(|p| p.policy.clone())
            .collect::<Vec<_>>()
            .try_into()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 9000));
        let perturbed: [PhasePlant; 4] = std::array::from_fn(|i| {
            let f: [[f64; 3]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.8..=1.2)));
            plants[i].with_sensitivity_scaled(f)
        });
        let other = seed + 100;
        let replay = online_trial(cfg, &perturbed, other, trained.clone(), OnlineMode::Learn).map_err(|e| e.to_string())?;
        let scratch_pols = initial_policies(&InitialPolicy::Random, other).map_err(|e| e.to_string())?;
        let scratch = online_trial(cfg, &perturbed, other, scratch_pols, OnlineMode::Learn).map_err(|e| e.to_string())?;
        replay_wins += replay.success as usize;
        replay_updates.push(replay.total_policy_updates() as f64);
        scratch_updates.push(scratch.total_policy_updates() as f64);

        let harsh: [PhasePlant; 4] = std::array::from_fn(|i| plants[i].with_sensitivity_scaled([[4.0; 3]; 2]));
        let out = online_trial(cfg, &harsh, other, trained, OnlineMode::Learn).map_err(|e| e.to_string())?;
        if (0..4).any(|p| retry_cycles(&out, p) >= 2) {
            cyclic += 1;
        }
    }
    let (mr, ms) = (median(replay_updates), median(scratch_updates));
    check(
        replay_wins >= 7 && mr <= ms && cyclic >= 8,
        format!(
            "replay on 0.8-1.2 scaled plants: {replay_wins}/10 tuned, median policy updates {mr} vs {ms} from scratch; \
             reset-and-retry cycles under 4x sensitivity in {cyclic}/10 seeds"
        ),
    )
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_seconds");
            m.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if path.file_name().is_some_and(|n| n == "summary.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                strip_wall_time(&mut v);
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut details = Vec::new();
    for mode in [RunMode::Online, RunMode::Offline] {
        let mut cfg = Config::default();
        cfg.run.mode = mode;
        cfg.run.seeds = vec![0, 1, 2, 3];
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        for (dir, threads) in dirs.iter().zip([1, 1, 4]) {
            run(&cfg, dir.path(), threads).map_err(|e| e.to_string())?;
        }
        let trees: Vec<_> = dirs.iter().map(|d| tree(d.path())).collect();
        if trees[0] != trees[1] {
            return Err(format!("{mode:?}: two single-threaded runs differ"));
        }
        if trees[0] != trees[2] {
            return Err(format!("{mode:?}: 1 and 4 worker runs differ"));
        }
        details.push(format!("{mode:?} {} files", trees[0].len()));
    }
    Ok(format!("identical outputs across runs and 1 vs 4 workers ({})", details.join(", ")))
}

fn report(n: usize, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let res = f();
    let took = t.elapsed();
    let in_time = took <= budget;
    let (ok, detail) = match res {
        Ok(d) => (in_time, d),
        Err(d) => (false, d),
    };
    let timing = if in_time { "" } else { " [over budget]" };
    let line = format!(
        "criterion {n:>2}: {} {detail} ({:.1}s of {}s){timing}\n",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    ok
}

#[test]
fn acceptance() {
    let cfg = Config::default();
    let plants = cfg.plants();
    let secs = Duration::from_secs;
    let mut results = BTreeMap::new();

    results.insert(1, report(1, secs(5), projections));
    results.insert(2, report(2, secs(10), evaluation_oracle));
    results.insert(3, report(3, secs(30), optimality_oracle));
    results.insert(5, report(5, secs(120), || buffer_sweep(&cfg, &plants)));

    let t = Instant::now();
    let random = random_trials(&cfg, &plants);
    let random_time = t.elapsed();
    let random = match random {
        Ok(r) => r,
        Err(e) => panic!("random-initialization trials failed: {e}"),
    };
    results.insert(
        6,
        report(6, secs(120).saturating_sub(random_time), || {
            online_success(&random, cfg.safety.max_updates)
        }),
    );
    results.insert(7, report(7, secs(240), || warm_start(&cfg, &plants, &random)));
    results.insert(8, report(8, secs(5), early_stopping));
    results.insert(9, report(9, secs(120), || robustness(&cfg, &plants, &random)));
    results.insert(10, report(10, secs(60), determinism));
    results.insert(4, report(4, secs(1), psd_audit));

    let failed: Vec<_> = results.iter().filter(|(_, ok)| !**ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
