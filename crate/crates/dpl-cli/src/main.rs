use clap::{Args, Parser, Subcommand};
use dpl_cli::{config::ExperimentConfig, runner, runner::CliError};
use std::path::PathBuf;

/// Constrained portfolio duality toolkit.
#[derive(Parser)]
#[command(name = "dpl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dual problem and write the solution report
    Solve(RunArgs),
    /// Verify the optimality conditions and write the verification CSV
    Verify(RunArgs),
    /// Tabulate primal/dual estimates and gaps for candidate strategies
    DualityGap(RunArgs),
    /// Generate Brownian increments and dump them in the DPL1 format
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (overrides config; DPL_THREADS is the fallback)
    #[arg(long)]
    threads: Option<usize>,
    /// RNG seed (overrides config)
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli.command));
}

fn dispatch(command: Command) -> i32 {
    let args = match &command {
        Command::Solve(a) | Command::Verify(a) | Command::DualityGap(a) | Command::Simulate(a) => a,
    };
    let cfg = match load_config(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let threads = args
        .threads
        .or_else(|| {
            std::env::var("DPL_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .or(cfg.run.threads);
    let out = args.out.clone();

    runner::with_threads(threads, move || match command {
        Command::Solve(_) => match runner::run_solve(&cfg, &out) {
            Ok(artifacts) => {
                println!("solution written to {}", artifacts.solution_path.display());
                println!("y_hat = {}", artifacts.solution.y_hat);
                0
            }
            Err(e) => fail(e),
        },
        Command::Verify(_) => match runner::run_verify(&cfg, &out) {
            Ok(artifacts) => {
                println!("verification written to {}", artifacts.csv_path.display());
                print!("{}", artifacts.report.summary());
                if artifacts.report.passed() {
                    0
                } else {
                    10 + artifacts.report.failed_count().min(245) as i32
                }
            }
            Err(e) => fail(e),
        },
        Command::DualityGap(_) => match runner::run_duality_gap(&cfg, &out) {
            Ok(artifacts) => {
                println!("duality gaps written to {}", artifacts.csv_path.display());
                for row in &artifacts.rows {
                    println!(
                        "{:<8} primal {:.6} (se {:.2e})  dual {:.6} (se {:.2e})  gap {:.3e}",
                        row.label,
                        row.primal.mean,
                        row.primal.std_error,
                        row.dual.mean,
                        row.dual.std_error,
                        row.gap
                    );
                }
                0
            }
            Err(e) => fail(e),
        },
        Command::Simulate(_) => match runner::run_simulate(&cfg, &out) {
            Ok(artifacts) => {
                println!("paths written to {}", artifacts.bin_path.display());
                0
            }
            Err(e) => fail(e),
        },
    })
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn fail(e: CliError) -> i32 {
    eprintln!("{e}");
    e.exit_code()
}
