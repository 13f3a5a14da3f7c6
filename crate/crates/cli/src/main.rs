use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prv_cli::run::{run_compose, run_curve, run_dpsgd, validate_gaussian, write_report, DpsgdParams};
use prv_cli::{CliError, CliResult, ComposeConfig};

/// Privacy accountant: numerically composes privacy curves with guaranteed
/// error bounds.
#[derive(Parser)]
#[command(name = "prv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compose the mechanisms of a JSON config and answer its query.
    Compose {
        #[arg(long)]
        config: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ε of DP-SGD (subsampled Gaussian, sensitivity 1) after `steps` rounds.
    Dpsgd {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        sampling_prob: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.1)]
        eps_error: f64,
        /// Defaults to delta / 1000, but never below 1e-10.
        #[arg(long)]
        delta_error: Option<f64>,
        /// Account for the reversed pair of distributions.
        #[arg(long)]
        inverted_direction: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the δ(ε) curve of a config with a curve query to CSV.
    Curve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the composed Gaussian bounds against the closed-form curve.
    ValidateGaussian {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        eps_error: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Compose { config, out } => {
            let report = run_compose(&ComposeConfig::load(&config)?)?;
            print!("{report}");
            if let Some(out) = out {
                write_report(&report, &out)?;
            }
        }
        Command::Dpsgd {
            sigma,
            sampling_prob,
            steps,
            delta,
            eps_error,
            delta_error,
            inverted_direction,
            out,
        } => {
            let report = run_dpsgd(&DpsgdParams {
                sigma,
                sampling_prob,
                steps,
                delta,
                eps_error,
                delta_error,
                inverted_direction,
            })?;
            print!("{report}");
            if let Some(out) = out {
                write_report(&report, &out)?;
            }
        }
        Command::Curve { config, out } => {
            let report = run_curve(&ComposeConfig::load(&config)?, &out)?;
            println!(
                "wrote {} (h={} L={} k={})",
                out.display(),
                report.lattice.mesh,
                report.lattice.half_width,
                report.lattice.k
            );
        }
        Command::ValidateGaussian {
            sigma,
            steps,
            eps_error,
            points,
        } => {
            let report = validate_gaussian(sigma, steps, eps_error, points)?;
            print!("{report}");
            if !report.all_pass() {
                return Err(CliError::Numerical(
                    "closed-form curve falls outside the computed bounds".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
