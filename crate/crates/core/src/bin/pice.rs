use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pice_core::config::{Config, RunMode};
use pice_core::experiment;
use pice_core::Error;

#[derive(Parser)]
#[command(name = "pice", version, about = "PSD-constrained policy iteration for prosthesis impedance tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect (or load) buffers and pretrain one policy per phase.
    OfflineTrain(RunArgs),
    /// Tune all four phases online.
    OnlineTrain(RunArgs),
    /// Run fixed policies without learning.
    ReplayPolicy(RunArgs),
    /// Print closed-form Lyapunov/Riccati solutions for the [oracle] block.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run whatever `run.mode` the config selects.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma separated seeds or a half-open range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("cannot parse seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn load(path: Option<&PathBuf>) -> Result<Config, Error> {
    let cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_mode(args: RunArgs, mode: Option<RunMode>) -> Result<(), Error> {
    let mut cfg = load(args.config.as_ref())?;
    if let Some(m) = mode {
        cfg.run.mode = m;
    }
    if let Some(s) = &args.seeds {
        cfg.run.seeds = parse_seeds(s)?;
    }
    cfg.validate()?;
    let summaries = experiment::run(&cfg, &args.out, args.threads)?;
    if cfg.run.mode == RunMode::Oracle {
        let text = std::fs::read_to_string(args.out.join("oracle.json")).map_err(|e| Error::Io {
            path: args.out.join("oracle.json"),
            source: e,
        })?;
        println!("{text}");
    } else {
        println!("{}", serde_json::to_string_pretty(&summaries).expect("summaries serialize"));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Parse { .. } => 3,
        Error::Io { .. } => 4,
        Error::Unstable(_) | Error::Divergence { .. } => 5,
        Error::InvalidSample { .. } | Error::DegenerateBatch(_) => 6,
        Error::Dimension(_) | Error::InvalidInput(_) | Error::Numeric(_) => 7,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Parse { .. } => "parse",
        Error::Io { .. } => "io",
        Error::Unstable(_) => "unstable",
        Error::Divergence { .. } => "divergence",
        Error::InvalidSample { .. } => "invalid-sample",
        Error::DegenerateBatch(_) => "degenerate-batch",
        Error::Dimension(_) => "dimension",
        Error::InvalidInput(_) => "invalid-input",
        Error::Numeric(_) => "numeric",
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::OfflineTrain(a) => run_mode(a, Some(RunMode::Offline)),
        Command::OnlineTrain(a) => run_mode(a, Some(RunMode::Online)),
        Command::ReplayPolicy(a) => run_mode(a, Some(RunMode::ReplayPolicy)),
        Command::Run(a) => run_mode(a, None),
        Command::Oracle { config, out } => {
            let mut cfg = load(Some(&config))?;
            cfg.run.mode = RunMode::Oracle;
            cfg.validate()?;
            match out {
                Some(out) => {
                    experiment::run(&cfg, &out, 1)?;
                }
                None => {
                    let report = experiment::oracle_report(&cfg)?;
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                }
            }
            Ok(())
        }
        Command::ValidateConfig { config } => {
            load(Some(&config))?;
            println!("{{\"status\":\"ok\",\"config\":{}}}", serde_json::to_string(&config).expect("path serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
