//! Command-line front end. Every subcommand reads one JSON run-configuration
//! document, writes its artifacts atomically into the resolved output
//! directory, and prints a one-line JSON summary on success. Errors go to
//! standard error as JSON: bad configs exit 2, failed runs exit 1.

mod commands;
mod config;
mod io;

use clap::{Args, Parser, Subcommand};
use commands::{CliError, Context};
use config::CommandName;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hvdvg", version, about = "HV-DVG cell-culture infection model toolkit")]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides HVDVG_OUT_DIR and the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Titer time series CSV with header `t_hpi,pfu_per_ml`.
    #[arg(long)]
    data: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's batch count; below 2 runs a single pass.
    #[arg(long)]
    batches: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one inoculation and export the trajectory.
    Simulate(CommonArgs),
    /// Classify end states over a two-axis parameter grid.
    Scan(CommonArgs),
    /// Map terminal particle pools over an inoculum grid.
    Cloud(CommonArgs),
    /// Back out lysis and infection rates from a finished run.
    Estimate(CommonArgs),
    /// Integrate a variational system, optionally cross-checked against finite differences.
    Sensitivity(CommonArgs),
    /// Evaluate the closed-form equilibrium spectrum at a state.
    Spectrum(CommonArgs),
    /// Fit model parameters to a titer time series with a genetic algorithm.
    Fit(FitArgs),
}

fn context(a: &CommonArgs, name: CommandName) -> Result<Context, CliError> {
    commands::context(&a.config, name, a.out.clone())
}

fn dispatch(cmd: &Cmd) -> Result<String, CliError> {
    match cmd {
        Cmd::Simulate(a) => commands::simulate(&context(a, CommandName::Simulate)?),
        Cmd::Scan(a) => commands::scan(&context(a, CommandName::Scan)?),
        Cmd::Cloud(a) => commands::cloud(&context(a, CommandName::Cloud)?),
        Cmd::Estimate(a) => commands::estimate(&context(a, CommandName::Estimate)?),
        Cmd::Sensitivity(a) => commands::sensitivity(&context(a, CommandName::Sensitivity)?),
        Cmd::Spectrum(a) => commands::spectrum(&context(a, CommandName::Spectrum)?),
        Cmd::Fit(a) => {
            let ctx = context(&a.common, CommandName::Fit)?;
            commands::fit(&ctx, &a.data, a.seed, a.batches)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Sizing is advisory; a pre-existing global pool is not an error.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli.cmd) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let doc = serde_json::json!({"error": {"kind": e.kind(), "message": e.message()}});
            eprintln!("{doc}");
            ExitCode::from(e.exit_code())
        }
    }
}
