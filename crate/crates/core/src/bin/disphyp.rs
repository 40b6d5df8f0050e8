use clap::{Parser, Subcommand};
use disphyp::runner::{load_config, run, RunOptions, Stage, ALL_STAGES};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "disphyp", version, about = "Dispersive estimates for hyperbolic systems with time-dependent coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and the CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for sampled points.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Neither read nor write the propagator-table cache.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Screen the structural assumptions.
    Check,
    /// Diagonalisation residuals on the regular zone.
    Diagonalize,
    /// Factorised versus direct propagator.
    Propagate,
    /// Fresnel-surface contact indices.
    Geometry,
    /// Model oscillatory integrals.
    Oscillatory,
    /// Dispersive decay on a periodic grid.
    Decay,
    /// Every stage.
    All,
    /// Exactly the stages listed in the config.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(path) = cli.config.as_ref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads.or(cfg.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }
    let stages = match cli.command {
        Command::Check => Some(vec![Stage::Assumptions]),
        Command::Diagonalize => Some(vec![Stage::Diagonalize]),
        Command::Propagate => Some(vec![Stage::Propagate]),
        Command::Geometry => Some(vec![Stage::Geometry]),
        Command::Oscillatory => Some(vec![Stage::Oscillatory]),
        Command::Decay => Some(vec![Stage::Decay]),
        Command::All => Some(ALL_STAGES.to_vec()),
        Command::Run => None,
    };
    let opts = RunOptions { stages, out: cli.out.clone(), seed: cli.seed, no_cache: cli.no_cache };
    match run(cfg, &opts) {
        Ok(outcome) => {
            for s in &outcome.report.stages {
                let verdict = if s.pass { "pass" } else { "FAIL" };
                let note = s.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                let implied = if s.implied { " [prerequisite]" } else { "" };
                println!("{:<12} {verdict}{implied}{note}", s.stage.name());
            }
            println!("report: {}", outcome.out_dir.join("report.json").display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
