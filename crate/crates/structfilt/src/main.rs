//! Command-line test bench for the structure-preserving filter: runs h- and
//! p-convergence sweeps of the bundled PDE problems and writes CSV/JSON
//! artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structfilt::harness::{
    parse_config, parse_values, render_csv, ConfigOverrides, ExperimentConfig, FilterVariant,
    HarnessError, ProblemId, RowOutcome, SweepKind,
};

#[derive(Parser)]
#[command(name = "structfilt", version, about = "Convergence test bench for convex structure-preserving projection filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more convergence experiments.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file ([section] headers with key = value lines);
    /// flags below override every section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// advection-sine | advection-hat | cg-diffusion-reaction
    #[arg(long)]
    problem: Option<String>,
    /// h (mesh refinement) or p (degree elevation)
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values (element counts or degrees)
    #[arg(long)]
    values: Option<String>,
    /// Fixed polynomial degree for h-sweeps
    #[arg(long)]
    degree: Option<usize>,
    /// Fixed element count for p-sweeps
    #[arg(long)]
    elements: Option<usize>,
    /// Timestep; omitted picks a CFL-based default
    #[arg(long)]
    dt: Option<f64>,
    /// Final time
    #[arg(long)]
    tfinal: Option<f64>,
    /// off | P | PF | PFI
    #[arg(long)]
    filter: Option<String>,
    /// Filter termination tolerance on the signed distance
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory for CSV, JSON, and field snapshots
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero timing columns for byte-reproducible artifacts
    #[arg(long)]
    deterministic: bool,
    /// Seed recorded in artifacts for downstream property suites
    #[arg(long)]
    seed: Option<u64>,
}

fn overrides_from(args: &RunArgs) -> Result<ConfigOverrides, HarnessError> {
    Ok(ConfigOverrides {
        problem: args
            .problem
            .as_deref()
            .map(str::parse::<ProblemId>)
            .transpose()?,
        sweep: args
            .sweep
            .as_deref()
            .map(str::parse::<SweepKind>)
            .transpose()?,
        values: args.values.as_deref().map(parse_values).transpose()?,
        degree: args.degree,
        elements: args.elements,
        dt: args.dt,
        t_final: args.tfinal,
        variant: args
            .filter
            .as_deref()
            .map(str::parse::<FilterVariant>)
            .transpose()?,
        tolerance: args.tol,
        out_dir: args.out.clone(),
        deterministic: args.deterministic,
        seed: args.seed,
    })
}

fn build_configs(args: &RunArgs) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let overrides = overrides_from(args)?;
    let mut configs = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => {
            let problem = overrides.problem.ok_or_else(|| {
                HarnessError::Config("--problem is required without --config".into())
            })?;
            vec![ExperimentConfig::new("cli", problem)]
        }
    };
    for cfg in &mut configs {
        overrides.apply(cfg);
        cfg.validate()?;
    }
    Ok(configs)
}

fn run(args: &RunArgs) -> Result<bool, HarnessError> {
    let configs = build_configs(args)?;
    let mut all_ok = true;
    for cfg in &configs {
        println!("== experiment {} ({}, {} sweep, filter {})",
            cfg.name,
            cfg.problem,
            match cfg.sweep { SweepKind::H => "h", SweepKind::P => "p" },
            cfg.variant,
        );
        let outcomes = run_experiment_verbose(cfg)?;
        all_ok &= outcomes
            .iter()
            .all(|o| matches!(o, RowOutcome::Row(_)));
    }
    Ok(all_ok)
}

fn run_experiment_verbose(cfg: &ExperimentConfig) -> Result<Vec<RowOutcome>, HarnessError> {
    let outcomes = structfilt::harness::run_experiment(cfg)?;
    print!("{}", render_csv(&outcomes));
    if let Some(dir) = &cfg.out_dir {
        println!("-- artifacts in {}", dir.display());
    }
    Ok(outcomes)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
