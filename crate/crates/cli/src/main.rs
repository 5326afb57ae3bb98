use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmsteer_cli::{load_config, run, CliError, Overrides, Stage};

#[derive(clap::Args)]
struct Common {
    /// Preset name (mars_L1, mars_L27, mars_L243) or path to a TOML scenario.
    #[arg(long)]
    scenario: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Chance-constraint scaling (≥ 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Optimizer iteration budget.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Policy file for propagate/montecarlo (default: <out>/policy.txt).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Print solver progress to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Parser)]
#[command(name = "gmsteer", version, about = "Gaussian-mixture distribution steering for chance-constrained transfers")]
struct Args {
    #[command(subcommand)]
    command: WithArgs,
}

#[derive(Subcommand)]
enum WithArgs {
    /// Optimize the feedback policy and write it with the solve report.
    Optimize(Common),
    /// Forward-propagate the moments of a saved policy.
    Propagate(Common),
    /// Monte Carlo validation of a saved policy.
    Montecarlo(Common),
    /// Optimize, propagate and run the Monte Carlo in one go.
    Full(Common),
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (stage, common) = match args.command {
        WithArgs::Optimize(c) => (Stage::Optimize, c),
        WithArgs::Propagate(c) => (Stage::Propagate, c),
        WithArgs::Montecarlo(c) => (Stage::MonteCarlo, c),
        WithArgs::Full(c) => (Stage::Full, c),
    };
    match execute(stage, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmsteer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(stage: Stage, common: Common) -> Result<(), CliError> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let overrides = Overrides {
        seed: common.seed,
        samples: common.samples,
        gamma: common.gamma,
        max_iterations: common.max_iterations,
        policy: common.policy,
        verbose: common.verbose,
    };
    let config = load_config(&common.scenario, &overrides)?;
    run(stage, &config, &common.out, &overrides).map(|_| ())
}
