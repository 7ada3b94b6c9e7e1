use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use binobs_cli::config::ExperimentConfig;
use binobs_cli::{cmd_analyze, cmd_estimate, cmd_recover, cmd_simulate, CliError, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "binobs",
    version,
    about = "Binary-observation network dynamics: simulate, estimate, analyze, recover"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write trajectory.csv
    Simulate(Common),
    /// Run estimation trials in parallel; write trial_XXX.csv and mse.csv
    Estimate(Estimate),
    /// Write kernel.csv, stationary.csv, report.txt, and optionally sweep.csv
    Analyze(Common),
    /// Rebuild parameters from a kernel CSV into recovered.params
    Recover(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat key=value lines, `#` comments)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created on success
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Estimate {
    #[command(flatten)]
    common: Common,
    /// Worker threads for trial parallelism (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: &Cli) -> binobs_cli::Result<String> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(&ExperimentConfig::load(&c.config)?, &c.out),
        Command::Estimate(e) => {
            let cfg = ExperimentConfig::load(&e.common.config)?;
            match e.threads {
                Some(workers) => rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|err| CliError::Usage(format!("cannot build worker pool: {err}")))?
                    .install(|| cmd_estimate(&cfg, &e.common.out)),
                None => cmd_estimate(&cfg, &e.common.out),
            }
        }
        Command::Analyze(c) => cmd_analyze(&ExperimentConfig::load(&c.config)?, &c.out),
        Command::Recover(c) => cmd_recover(&ExperimentConfig::load(&c.config)?, &c.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout with success; real usage
            // errors exit 1, not clap's default 2 (reserved for numerics).
            let code = if e.use_stderr() { EXIT_USAGE as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // Plain write, not println!: a closed pipe (e.g. `binobs ... | head`)
    // must not panic the process.
    match run(&cli) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
