use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dirac_cli::commands::{self, trajectory_csv};
use dirac_cli::{CliError, ModelFile, RunOptions, SimulateOptions};

/// Generalized Dirac systems from Morse families.
#[derive(Parser)]
#[command(name = "dirac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the energy at the seed.
    Check { file: PathBuf },
    /// Run the constraint ladder and print the report.
    Reduce {
        file: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the reduced system from the seed.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {}", path.display(), e)))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let opts = RunOptions::from_env()?;
    match cli.command {
        Command::Check { file } => commands::check(&ModelFile::load(&file)?, &opts),
        Command::Reduce { file, out } => {
            let (report, _) = commands::reduce(&ModelFile::load(&file)?, &opts)?;
            if let Some(path) = out {
                write(&path, &report.to_json())?;
            }
            Ok(report.to_text())
        }
        Command::Simulate { file, t_final, dt, out } => {
            let model = ModelFile::load(&file)?;
            let (traj, _) = commands::simulate(&model, &opts, &SimulateOptions { t_final, dt })?;
            let csv = trajectory_csv(&model, &traj);
            match out {
                Some(path) => {
                    write(&path, &csv)?;
                    Ok(format!("wrote {} rows to {}\n", traj.len(), path.display()))
                }
                None => Ok(csv),
            }
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are input errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{}", text);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
