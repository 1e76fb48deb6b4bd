use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unitary_anderson::experiment::{self, ExperimentConfig, RunError, RunOptions};

/// Run unitary Anderson experiments from TOML configs.
#[derive(Parser)]
#[command(name = "ua-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSVs and manifest.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (falls back to the config, then $UA_LAB_OUTPUT_DIR).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config without sampling anything.
    Validate { config: PathBuf },
    /// Run every point of the config's [sweep] grid into one output set.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
    ExperimentConfig::from_path(path).map_err(|e| {
        RunError::Validation(vec![experiment::Violation {
            module: "config".into(),
            message: format!("{}: {e}", path.display()),
        }])
    })
}

fn report(result: Result<experiment::RunReport, RunError>) -> ExitCode {
    match result {
        Ok(r) if r.files.is_empty() => {
            println!("empty grid, nothing written");
            ExitCode::SUCCESS
        }
        Ok(r) => {
            for f in &r.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprint!("{e}");
            if matches!(e, RunError::Runtime(_)) {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let config = match load(&config) {
                Ok(c) => c,
                Err(e) => return report(Err(e)),
            };
            let mut violations = experiment::validate(&config);
            if config.sweep.is_some() {
                violations.extend(experiment::validate_sweep(&config));
            }
            if violations.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                report(Err(RunError::Validation(violations)))
            }
        }
        Command::Run {
            config,
            seed,
            workers,
            output,
        } => {
            let options = RunOptions {
                seed,
                workers,
                output_dir: output,
            };
            report(load(&config).and_then(|c| experiment::run(&c, &options)))
        }
        Command::Sweep {
            config,
            seed,
            workers,
            output,
        } => {
            let options = RunOptions {
                seed,
                workers,
                output_dir: output,
            };
            report(load(&config).and_then(|c| experiment::sweep(&c, &options)))
        }
    }
}
