mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

/// Connected-vehicle network simulator: traffic sensing, matrix completion,
/// AHP network recommendation, and fuzzy access control.
#[derive(Parser)]
#[command(name = "trasonet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the end-to-end network simulation and write metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// baseline (cellular only) or trasonet (recommendation + handover).
        #[arg(long, default_value = "trasonet")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fan out N independent seeds and merge metrics by mean/stddev.
        #[arg(long, default_value_t = 1)]
        replicas: usize,
    },
    /// Build a traffic matrix and complete it; reports error and entropy.
    Estimate {
        /// Sample a synthetic low-rank speed field instead of report data.
        #[arg(long)]
        synthetic: bool,
        /// GPS report CSV (vehicle_id,cycle,x,y,speed,heading_x,heading_y).
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Required with --reports; optional with --synthetic.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 0.3)]
        sample_rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// e.g. --sweep sample_rate=0.1,0.2,0.3,0.4,0.5
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit per-cell network recommendations for voice and video.
    Recommend {
        #[arg(long)]
        config: PathBuf,
        /// Completed traffic matrix CSV (segments x cycles).
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Compute the estimate from a fresh probe-vehicle run.
        #[arg(long)]
        fresh: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze a pairwise comparison matrix: weights, lambda_max, CI, CR.
    Ahp {
        /// CSV matrix; entries may be fractions such as 1/3.
        #[arg(long)]
        matrix: PathBuf,
    },
}

/// Output directory: --out wins, then $TRASONET_OUT/<command>, then ./out/<command>.
fn output_dir(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        std::env::var_os("TRASONET_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
            .join(command)
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            mode,
            out,
            replicas,
        } => {
            let out = output_dir(out, "simulate");
            commands::cmd_simulate(&config, seed, &mode, &out, replicas)
        }
        Command::Estimate {
            synthetic,
            reports,
            config,
            rank,
            sample_rate,
            seed,
            sweep,
            out,
        } => {
            let out = output_dir(out, "estimate");
            commands::cmd_estimate(
                synthetic,
                reports.as_deref(),
                config.as_deref(),
                rank,
                sample_rate,
                seed,
                sweep.as_deref(),
                &out,
            )
        }
        Command::Recommend {
            config,
            estimate,
            fresh,
            seed,
            out,
        } => {
            let out = output_dir(out, "recommend");
            commands::cmd_recommend(&config, estimate.as_deref(), fresh, seed, &out)
        }
        Command::Ahp { matrix } => commands::cmd_ahp(&matrix),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
