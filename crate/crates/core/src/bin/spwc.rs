use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spwc::harness::{self, RunOptions, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "spwc", version, about = "Continual-learning experiments with self-paced weight consolidation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every method, grid point and seed of a config (or manifest).
    Run {
        /// Experiment config, or a manifest.json from an earlier run.
        config: PathBuf,
        /// Check the config and exit without training.
        #[arg(long)]
        validate_only: bool,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Replace the config's seeds, e.g. `--seed-override 3,4`.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for relative data paths.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
    },
    /// Summarise a run directory and check convergence.
    Report { dir: PathBuf },
    /// Run the numeric self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> spwc::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            validate_only,
            jobs,
            seed_override,
            out,
            data_dir,
        } => {
            let options = RunOptions {
                jobs,
                seed_override,
                data_dir,
                output_dir: out,
            };
            let cfg = harness::prepare(harness::load_run_input(&config)?, &options)?;
            let runs = cfg.runs().len();
            if validate_only {
                println!("config ok: {runs} runs");
                return Ok(ExitCode::SUCCESS);
            }
            let summary = harness::execute(cfg, jobs)?;
            let failed: Vec<_> = summary.failures().collect();
            for f in &failed {
                eprintln!("run {} failed: {}", f.id, f.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} of {runs} runs complete; results in {}",
                runs - failed.len(),
                summary.output_dir.display()
            );
            Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { dir } => {
            let report = harness::report(&dir)?;
            print!("{}", report.text);
            Ok(if report.convergence_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Check { seed } => {
            let report = harness::run_checks(seed)?;
            print!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
