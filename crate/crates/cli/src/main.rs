use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluidport_core::config::RunConfig;
use fluidport_core::pipeline::{self, EvalOptions, TrainOptions};
use fluidport_core::train::EpochRecord;
use fluidport_core::{Error, Result};

/// Fluid-antenna port prediction: generate channel datasets, train the
/// forecaster and evaluate port selection against baselines.
///
/// FLUIDPORT_THREADS caps the number of worker threads.
#[derive(Parser, Debug)]
#[command(name = "fluidport", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (TOML). Omit for the desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the windowed channel-table dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the forecaster on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset sidecar JSON or the directory holding it.
        #[arg(long)]
        dataset: PathBuf,
        /// Number of epochs, overriding the config.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// GPT-2 safetensors file for the frozen backbone.
        #[arg(long)]
        gpt2_weights: Option<PathBuf>,
    },
    /// Sweep speeds, BS arrays and SNRs over the configured baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint; required unless --baselines-only.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Skip the learned predictor.
        #[arg(long)]
        baselines_only: bool,
        /// Also write long-format CSVs for NMSE vs. step and SE vs. SNR.
        #[arg(long)]
        plot_data: bool,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("FLUIDPORT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config("FLUIDPORT_THREADS", format!("`{v}` is not a thread count"))),
        _ => Ok(None),
    }
}

fn print_epoch(r: &EpochRecord) {
    eprintln!(
        "epoch {:>4}  step {:>6}  lr {:.3e}  train {:+.2} dB  val_v {:+.2} dB  val_t {:+.2} dB",
        r.epoch,
        r.step,
        r.lr,
        10.0 * r.train_nmse.log10(),
        10.0 * r.val_nmse_v.log10(),
        10.0 * r.val_nmse_t.log10()
    );
}

fn run(cli: Cli) -> Result<()> {
    pipeline::configure_threads(threads_from_env()?)?;
    match cli.command {
        Command::Generate { common } => {
            let cfg = load(&common)?;
            let s = pipeline::cmd_generate(&cfg, &common.out)?;
            println!(
                "generated {} windows (train {}, test {}, train fraction {})",
                s.samples, s.train, s.test, cfg.scenario.train_fraction
            );
            println!("dataset {}  ->  {}", s.dataset_hash, s.sidecar.display());
        }
        Command::Train {
            common,
            dataset,
            epochs,
            resume,
            gpt2_weights,
        } => {
            let mut cfg = load(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let opts = TrainOptions {
                resume,
                gpt2: gpt2_weights,
                on_epoch: Some(print_epoch),
            };
            let s = pipeline::cmd_train(&cfg, &dataset, &common.out, &opts)?;
            println!("final checkpoint {}", s.final_checkpoint.display());
            println!("best checkpoint  {}", s.best_checkpoint.display());
            println!("metrics          {}", s.metrics.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            baselines_only,
            plot_data,
        } => {
            let cfg = load(&common)?;
            let opts = EvalOptions {
                baselines_only,
                plot_data,
            };
            let s = pipeline::cmd_evaluate(&cfg, checkpoint.as_deref(), &common.out, opts)?;
            println!("{} result rows", s.report.rows.len());
            for p in &s.written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
