use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use collider::config::{parse_config, ExperimentConfig};
use collider::experiment::{run_experiment, workers_from_env};
use collider::trainer::Mode;

#[derive(Parser)]
#[command(
    name = "collider",
    about = "Robust training against backdoor poisoning via LID-regularized gradient-space coresets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (all seeds, one mode).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the training mode: vanilla|coreset|collider.
        #[arg(long)]
        mode: Option<String>,
        /// Restrict to a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one collider seed with LID logging enabled and emit the per-epoch
    /// LID histogram dump.
    InspectLid {
        #[arg(long)]
        config: PathBuf,
    },
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    mode: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), collider::ColliderError> {
    if let Some(m) = mode {
        cfg.train.mode = Mode::parse(&m)?;
    }
    if let Some(s) = seed {
        cfg.output.seeds = vec![s];
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    Ok(())
}

fn run() -> Result<(), collider::ColliderError> {
    let cli = Cli::parse();
    let workers = workers_from_env();
    match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            out,
        } => {
            let mut cfg = parse_config(&config)?;
            apply_overrides(&mut cfg, mode, seed, out)?;
            let summary = run_experiment(&cfg, workers)?;
            println!(
                "mode={} acc_mean={:.4} acc_std={:.4} asr_mean={:.4} asr_std={:.4}",
                summary.mode.as_str(),
                summary.acc_mean,
                summary.acc_std,
                summary.asr_mean,
                summary.asr_std
            );
            println!("results written to {}", cfg.output.dir.display());
        }
        Command::InspectLid { config } => {
            let mut cfg = parse_config(&config)?;
            cfg.train.mode = Mode::Collider;
            cfg.output.log_lid = true;
            cfg.output.seeds.truncate(1);
            let summary = run_experiment(&cfg, workers)?;
            let seed = summary.runs[0].seed;
            println!(
                "LID dump written to {}",
                cfg.output
                    .dir
                    .join(format!("lid_seed{seed}.csv"))
                    .display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
