//! `maskwatch`: synthesize and ingest face-mask datasets, train and evaluate
//! the classifier, run live detection, and test alert delivery.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{set, CONFIG_ENV};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "maskwatch", version, about = "Face-mask detection: datasets, training, evaluation and live monitoring")]
struct Cli {
    /// JSON or TOML config file (overridden by MASKWATCH_CONFIG and flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for this command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a two-category dataset of unmasked faces and mask overlays.
    Synth(SynthArgs),
    /// Scan a dataset, split it, and write the manifest and tensor caches.
    Ingest(IngestArgs),
    /// Train the classifier on an ingested dataset.
    Train(TrainArgs),
    /// Score a model artifact, or a predictions CSV, and print the report.
    Eval(EvalArgs),
    /// Run live detection on a camera, video, image directory or synthetic spec.
    Run(RunArgs),
    /// Send one synthetic no-mask alert through the configured sinks.
    AlertTest(AlertTestArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Images written per category.
    #[arg(long)]
    per_class: Option<usize>,
    /// Side length of the square images.
    #[arg(long)]
    image_size: Option<u32>,
    /// Share of masked images with the mask worn incorrectly.
    #[arg(long)]
    incorrect_fraction: Option<f64>,
    /// Directory of aligned unmasked face crops; faces are rendered otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Dataset root containing one directory per category.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Share of each category held out for validation.
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    data: PathBuf,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Images per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Train the backbone too (slow on CPU).
    #[arg(long)]
    unfreeze: bool,
    /// torchvision-layout safetensors with `features.*` weights.
    #[arg(long)]
    backbone_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model artifact written by `train`.
    #[arg(long, conflicts_with = "predictions")]
    artifact: Option<PathBuf>,
    /// Output directory of `ingest`; its validation split is scored.
    #[arg(long, requires = "artifact")]
    data: Option<PathBuf>,
    /// CSV with `y_true,y_pred` columns of class ids.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Camera index, video file, image directory, or synthetic spec (.json).
    #[arg(long)]
    source: Option<String>,
    /// Model artifact written by `train`.
    #[arg(long)]
    artifact: Option<PathBuf>,
    /// Stop after this many frames.
    #[arg(long)]
    max_frames: Option<u64>,
    /// OpenCV cascade XML replacing the bundled face detector.
    #[arg(long)]
    cascade: Option<PathBuf>,
    /// Minimum no-mask confidence that raises an alert.
    #[arg(long)]
    threshold: Option<f64>,
    /// Seconds between alerts for the same source.
    #[arg(long)]
    cooldown: Option<f64>,
    /// POST each alert as JSON to this URL.
    #[arg(long)]
    webhook_url: Option<String>,
    /// Write annotated frames to `<out>/frames`.
    #[arg(long)]
    save_frames: bool,
    /// Accepted for compatibility; there is no on-screen display.
    #[arg(long)]
    no_display: bool,
    /// Process frames sequentially on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct AlertTestArgs {
    /// POST the alert as JSON to this URL.
    #[arg(long)]
    webhook_url: Option<String>,
    /// Confidence reported in the test event.
    #[arg(long)]
    confidence: Option<f64>,
}

/// Flag values as a config layer; unset flags are left out.
fn overrides(cli: &Cli) -> Value {
    let mut v = json!({});
    if let Some(s) = cli.seed {
        set(&mut v, "seed", s);
    }
    match &cli.command {
        Command::Synth(a) => {
            if let Some(x) = a.per_class {
                set(&mut v, "synth.per_class", x);
            }
            if let Some(x) = a.image_size {
                set(&mut v, "synth.image_size", x);
            }
            if let Some(x) = a.incorrect_fraction {
                set(&mut v, "synth.incorrect_fraction", x);
            }
            if let Some(x) = &a.corpus {
                set(&mut v, "dataset.corpus", x);
            }
            if let Some(x) = &cli.out {
                set(&mut v, "dataset.root", x);
            }
        }
        Command::Ingest(a) => {
            if let Some(x) = &a.root {
                set(&mut v, "dataset.root", x);
            }
            if let Some(x) = a.validation_fraction {
                set(&mut v, "dataset.validation_fraction", x);
            }
        }
        Command::Train(a) => {
            if let Some(x) = a.epochs {
                set(&mut v, "hyperparams.epochs", x);
            }
            if let Some(x) = a.batch_size {
                set(&mut v, "hyperparams.batch_size", x);
            }
            if let Some(x) = a.learning_rate {
                set(&mut v, "hyperparams.learning_rate", x);
            }
            if a.unfreeze {
                set(&mut v, "model.freeze_backbone", false);
            }
            if let Some(x) = &a.backbone_weights {
                set(&mut v, "model.backbone_weights", x);
            }
        }
        Command::Eval(a) => {
            if let Some(x) = &a.artifact {
                set(&mut v, "model.artifact", x);
            }
        }
        Command::Run(a) => {
            if let Some(x) = &a.source {
                set(&mut v, "source.spec", x);
            }
            if let Some(x) = &a.artifact {
                set(&mut v, "model.artifact", x);
            }
            if let Some(x) = a.max_frames {
                set(&mut v, "source.max_frames", x);
            }
            if let Some(x) = &a.cascade {
                set(&mut v, "pipeline.cascade", x);
            }
            if let Some(x) = a.threshold {
                set(&mut v, "alerts.threshold", x);
            }
            if let Some(x) = a.cooldown {
                set(&mut v, "alerts.cooldown_s", x);
            }
            if let Some(x) = &a.webhook_url {
                set(&mut v, "alerts.webhook_url", x);
            }
            if a.save_frames {
                set(&mut v, "pipeline.save_frames", true);
            }
            if a.sequential {
                set(&mut v, "pipeline.threaded", false);
            }
        }
        Command::AlertTest(a) => {
            if let Some(x) = &a.webhook_url {
                set(&mut v, "alerts.webhook_url", x);
            }
        }
    }
    v
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let env_file = std::env::var_os(CONFIG_ENV).filter(|s| !s.is_empty()).map(PathBuf::from);
    let cfg = config::resolve(cli.config.as_deref(), env_file.as_deref(), overrides(&cli))?;
    let out = cli.out.clone();
    match cli.command {
        Command::Synth(_) => commands::synth(&cfg),
        Command::Ingest(_) => commands::ingest(&cfg, out),
        Command::Train(a) => commands::train(&cfg, &a.data, out),
        Command::Eval(a) => commands::eval(&cfg, a.data.as_deref(), a.predictions.as_deref(), out),
        Command::Run(_) => commands::run(&cfg, out),
        Command::AlertTest(a) => commands::alert_test(&cfg, a.confidence.unwrap_or(0.99), out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(vec![first]).to_json_line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["maskwatch", "ingest", "--bogus"]).is_err());
    }

    #[test]
    fn flags_become_dotted_overrides() {
        let cli = Cli::try_parse_from(["maskwatch", "--seed", "9", "run", "--threshold", "0.5", "--sequential"]).unwrap();
        let v = overrides(&cli);
        assert_eq!(v["seed"], 9);
        assert_eq!(v["alerts"]["threshold"], 0.5);
        assert_eq!(v["pipeline"]["threaded"], false);
    }
}
