//! `wxclass` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 data error (bad manifest, missing class, corrupt file), 5 internal error.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wxclass::imageio::ChannelOrder;
use wxclass::synth::SynthConfig;

use crate::config::{Common, FileConfig, TrainSection};
use crate::exit::{CliResult, Exit, Failure};

#[derive(Parser, Debug)]
#[command(
    name = "wxclass",
    version,
    about = "Hierarchical weather image classifier"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: $WXCLASS_OUT, else wxclass-out].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Single-threaded, sequential execution.
    #[arg(long, global = true)]
    strict: bool,
    /// Taxonomy TOML replacing the built-in one.
    #[arg(long, global = true, value_name = "FILE")]
    taxonomy: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ManifestArgs {
    /// CSV manifest with header path,label[,channel_order].
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    /// Directory relative image paths resolve against [default: the manifest's directory].
    #[arg(long, value_name = "DIR")]
    image_root: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded procedural dataset (PPM images plus manifest.csv).
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().per_class)]
        per_class: usize,
        #[arg(long, default_value_t = SynthConfig::default().size)]
        size: usize,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
    },
    /// Stratified train/val/test split of a manifest.
    Split {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Fraction of each class held out for testing [default: 0.3].
        #[arg(long)]
        test_fraction: Option<f64>,
        /// Fraction of the remaining training images used for validation [default: 0.2].
        #[arg(long)]
        val_fraction: Option<f64>,
        /// Split seed [default: 42].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Standardization statistics of a (training) manifest.
    Stats {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Resize to this square size before measuring [default: 32].
        #[arg(long)]
        input_size: Option<usize>,
        /// One mean/std pair per channel.
        #[arg(long)]
        per_channel: bool,
    },
    /// Resize and standardize images into tensor files.
    Preprocess {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Stats file from `stats`; computed from this manifest when absent.
        #[arg(long, value_name = "FILE")]
        stats: Option<PathBuf>,
        /// Square output size in pixels [default: 32].
        #[arg(long)]
        input_size: Option<usize>,
        /// Fit one mean/std pair per channel when no stats file is given.
        #[arg(long)]
        per_channel: bool,
    },
    /// Train a model bundle.
    Train {
        /// Training manifest.
        #[arg(long = "train", value_name = "CSV")]
        train_manifest: PathBuf,
        /// Validation manifest.
        #[arg(long = "val", value_name = "CSV")]
        val_manifest: Option<PathBuf>,
        /// Directory relative image paths resolve against [default: each manifest's directory].
        #[arg(long, value_name = "DIR")]
        image_root: Option<PathBuf>,
        #[command(flatten)]
        train: TrainSection,
    },
    /// Score a bundle on a labeled manifest.
    Evaluate {
        /// Bundle directory.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
    },
    /// Classify images; prints one JSON object per line.
    Predict {
        /// Bundle directory.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Treat the images as BGR.
        #[arg(long)]
        bgr: bool,
        #[arg(required = true, value_name = "IMAGE")]
        images: Vec<PathBuf>,
    },
    /// Accuracy table for several bundles on one manifest.
    Compare {
        /// NAME=DIR, given at least twice.
        #[arg(long = "model", value_name = "NAME=DIR", value_parser = commands::parse_model_arg, required = true)]
        models: Vec<(String, PathBuf)>,
        #[command(flatten)]
        manifest: ManifestArgs,
    },
}

fn run(cli: Cli) -> CliResult<Exit> {
    let file = match &cli.global.config {
        Some(p) => config::load_file(p)?,
        None => FileConfig::default(),
    };
    let g = cli.global;
    let common = Common::resolve(g.out, g.jobs, g.strict, g.taxonomy, &file)?;
    let input_size = |flag: Option<usize>| -> CliResult<usize> {
        TrainSection {
            input_size: flag,
            ..Default::default()
        }
        .or(file.train.clone())
        .resolve()
        .map(|c| c.arch.input_size)
    };
    match cli.command {
        Command::Synth {
            per_class,
            size,
            seed,
        } => {
            if per_class == 0 {
                return Err(Failure::config("per_class must be positive"));
            }
            commands::synth(
                &common,
                &SynthConfig {
                    per_class,
                    size,
                    seed,
                },
            )?;
        }
        Command::Split {
            manifest,
            test_fraction,
            val_fraction,
            seed,
        } => {
            let spec = config::split_spec(test_fraction, val_fraction, seed, &file.split)?;
            let m = commands::read_manifest(&manifest.manifest, manifest.image_root.as_deref())?;
            commands::split(&common, &m, &spec)?;
        }
        Command::Stats {
            manifest,
            input_size: size,
            per_channel,
        } => {
            let size = input_size(size)?;
            let m = commands::read_manifest(&manifest.manifest, manifest.image_root.as_deref())?;
            commands::stats(
                &common,
                &m,
                size,
                per_channel || file.train.per_channel.unwrap_or(false),
            )?;
        }
        Command::Preprocess {
            manifest,
            stats,
            input_size: size,
            per_channel,
        } => {
            let size = input_size(size)?;
            let m = commands::read_manifest(&manifest.manifest, manifest.image_root.as_deref())?;
            let per_channel = per_channel || file.train.per_channel.unwrap_or(false);
            commands::preprocess(&common, &m, size, stats.as_deref(), per_channel)?;
        }
        Command::Train {
            train_manifest,
            val_manifest,
            image_root,
            train,
        } => {
            let cfg = train.or(file.train.clone()).resolve()?;
            let tm = commands::read_manifest(&train_manifest, image_root.as_deref())?;
            let vm = val_manifest
                .map(|p| commands::read_manifest(&p, image_root.as_deref()))
                .transpose()?;
            commands::train(&common, &tm, vm.as_ref(), &cfg)?;
        }
        Command::Evaluate { model, manifest } => {
            let m = commands::read_manifest(&manifest.manifest, manifest.image_root.as_deref())?;
            commands::evaluate(&common, &model, &m)?;
        }
        Command::Predict { model, bgr, images } => {
            let order = if bgr {
                ChannelOrder::Bgr
            } else {
                ChannelOrder::Rgb
            };
            let (ok, first_err) = commands::predict(&common, &model, &images, order)?;
            if ok == 0 {
                if let Some(e) = first_err {
                    return Err(e.context("no image could be classified"));
                }
            }
        }
        Command::Compare { models, manifest } => {
            if models.len() < 2 {
                return Err(Failure::config(
                    "compare needs at least two --model NAME=DIR entries",
                ));
            }
            let m = commands::read_manifest(&manifest.manifest, manifest.image_root.as_deref())?;
            commands::compare(&common, &models, &m)?;
        }
    }
    Ok(Exit::Success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code.into(),
        Err(f) => {
            eprintln!("error: {f}");
            f.exit.into()
        }
    }
}
