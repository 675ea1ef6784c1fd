use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irs_vlc::{run_ber, run_optimize, run_sweep, ExperimentConfig, Result, RunSummary};

#[derive(Parser)]
#[command(name = "irs-vlc", version, about = "IRS-aided MIMO VLC transceiver and association optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize every configured scheme once and write traces and summaries.
    Optimize(RunArgs),
    /// Re-optimize over the `[sweep]` axis of the configuration.
    Sweep(RunArgs),
    /// Estimate BER against SNR by Monte Carlo simulation.
    Ber(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML, or JSON with a `.json` extension).
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the `seed` key of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 1 when any iterative solve hits its iteration cap.
    #[arg(long)]
    strict: bool,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

type Runner = fn(&ExperimentConfig, &std::path::Path) -> Result<RunSummary>;

fn run(command: &Command) -> Result<RunSummary> {
    let (args, f): (&RunArgs, Runner) = match command {
        Command::Optimize(a) => (a, run_optimize),
        Command::Sweep(a) => (a, run_sweep),
        Command::Ber(a) => (a, run_ber),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| irs_vlc::CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| f(&cfg, &args.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let strict = match &cli.command {
        Command::Optimize(a) | Command::Sweep(a) | Command::Ber(a) => a.strict,
    };
    match run(&cli.command) {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {f}");
            }
            for (label, scheme) in &summary.not_converged {
                eprintln!("warning: {scheme} did not converge ({label})");
            }
            if strict && !summary.all_converged() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
