//! `qpinn`: solve, evaluate and plot 1-D Schrödinger spectra with PINNs.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid arguments or
//! configuration, 3 some requested state did not converge.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpinn::config::{Preset, SolveConfig};
use qpinn::{run, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

const DEFAULT_OUT: &str = "qpinn-run";

#[derive(Parser)]
#[command(name = "qpinn", version, about = "Unsupervised PINN solver for 1-D Schrödinger eigenproblems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sequence of eigenstates and write a run directory.
    Solve(SolveArgs),
    /// Compare a run with the closed-form solutions and write metrics.csv.
    Evaluate(RunDir),
    /// Write wavefunction overlays and loss/fidelity plots of a run.
    ExportPlots(RunDir),
}

#[derive(Args)]
struct SolveArgs {
    /// Built-in parameter set (well or ring).
    #[arg(long)]
    preset: Option<Preset>,
    /// TOML file overriding preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of states to find.
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunDir {
    /// Run directory written by `solve`.
    #[arg(long, default_value = DEFAULT_OUT)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Usage(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

fn build_config(args: &SolveArgs) -> qpinn::Result<SolveConfig> {
    let mut cfg = match &args.config {
        Some(path) => SolveConfig::from_file(path, args.preset)?,
        None => SolveConfig::preset(args.preset.unwrap_or(Preset::Well)),
    };
    if let Some(k) = args.states {
        cfg.n_states = k;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_epochs {
        cfg.convergence.max_epochs = n;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn solve(args: &SolveArgs) -> qpinn::Result<u8> {
    let cfg = build_config(args)?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    log::info!(
        "solving {} states of the {} (seed {}) into {}",
        cfg.n_states,
        cfg.system.kind,
        cfg.seed,
        out.display()
    );
    let outcome = run::solve(&cfg, &out)?;
    for r in &outcome.records {
        println!(
            "state {}: E = {:.6}, {} after {} epochs",
            r.index,
            r.energy,
            if r.converged { "converged" } else { "not converged" },
            r.epochs_used
        );
    }
    if outcome.complete {
        println!("all {} states converged; results in {}", cfg.n_states, out.display());
        Ok(0)
    } else {
        eprintln!(
            "stopped after {} of {} states: the last state did not converge",
            outcome.records.len(),
            cfg.n_states
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Evaluate(dir) => run::evaluate(&dir.out).map(|rows| {
            print!("{}", run::metrics_summary(&rows));
            0
        }),
        Command::ExportPlots(dir) => run::export_plots(&dir.out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
