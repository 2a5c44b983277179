//! Run configuration.
//!
//! Values come from three layers: command-line flags, then the TOML file
//! given with `--config`, then built-in defaults. The output directory has
//! one more layer between the file and the default: `WXCLASS_OUT`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wxclass::dataset::SplitSpec;
use wxclass::hierarchy::HierConfig;
use wxclass::nn::TrainConfig;
use wxclass::pipeline::{ArchConfig, Preset};
use wxclass::taxonomy::{default_taxonomy, load_taxonomy};
use wxclass::Taxonomy;

use crate::exit::{CliResult, Context, Failure};

pub const OUT_ENV: &str = "WXCLASS_OUT";
pub const DEFAULT_OUT: &str = "wxclass-out";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub strict: Option<bool>,
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Architecture: softmax-flat, basic-cnn, vgg-style or hierarchical.
    #[arg(long)]
    pub preset: Option<String>,
    /// CNN size for basic-cnn and hierarchical: micro or paper.
    #[arg(long)]
    pub scale: Option<String>,
    /// Channel multiplier for vgg-style.
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Block-count multiplier for vgg-style.
    #[arg(long)]
    pub depth_scale: Option<f64>,
    /// Square model input size in pixels.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Standardize each channel separately.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_channel: Option<bool>,
    /// Passes over the training set [default: 10].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD step size [default: 0.01].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainSection {
    /// Fields set here win over `other`.
    pub fn or(self, other: TrainSection) -> TrainSection {
        TrainSection {
            preset: self.preset.or(other.preset),
            scale: self.scale.or(other.scale),
            width_scale: self.width_scale.or(other.width_scale),
            depth_scale: self.depth_scale.or(other.depth_scale),
            input_size: self.input_size.or(other.input_size),
            per_channel: self.per_channel.or(other.per_channel),
            epochs: self.epochs.or(other.epochs),
            learning_rate: self.learning_rate.or(other.learning_rate),
            momentum: self.momentum.or(other.momentum),
            batch_size: self.batch_size.or(other.batch_size),
            seed: self.seed.or(other.seed),
        }
    }

    pub fn resolve(&self) -> CliResult<HierConfig> {
        let d = HierConfig::default();
        let arch = ArchConfig {
            preset: match &self.preset {
                Some(p) => p.parse::<Preset>()?,
                None => d.arch.preset,
            },
            scale: match &self.scale {
                Some(s) => s.parse()?,
                None => d.arch.scale,
            },
            width_scale: self.width_scale.unwrap_or(d.arch.width_scale),
            depth_scale: self.depth_scale.unwrap_or(d.arch.depth_scale),
            input_size: self.input_size.unwrap_or(d.arch.input_size),
        };
        if arch.input_size == 0 {
            return Err(Failure::config("input_size must be positive"));
        }
        for (name, v) in [
            ("width_scale", arch.width_scale),
            ("depth_scale", arch.depth_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::config(format!("{name} must be positive, got {v}")));
            }
        }
        let train = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.train.learning_rate),
            momentum: self.momentum.unwrap_or(d.train.momentum),
            batch_size: self.batch_size.unwrap_or(d.train.batch_size),
            epochs: self.epochs.unwrap_or(d.train.epochs),
            seed: self.seed.unwrap_or(d.train.seed),
        };
        train.validate()?;
        Ok(HierConfig {
            arch,
            train,
            per_channel: self.per_channel.unwrap_or(d.per_channel),
            ..d
        })
    }
}

pub fn load_file(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).ctx(&path.display().to_string())?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Settings shared by every subcommand after merging.
#[derive(Clone, Debug)]
pub struct Common {
    pub out: PathBuf,
    pub jobs: usize,
    pub strict: bool,
    pub taxonomy: Taxonomy,
}

impl Common {
    pub fn resolve(
        out: Option<PathBuf>,
        jobs: Option<usize>,
        strict: bool,
        taxonomy: Option<PathBuf>,
        file: &FileConfig,
    ) -> CliResult<Self> {
        let out = out
            .or_else(|| file.out.clone())
            .or_else(|| {
                std::env::var_os(OUT_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let strict = strict || file.strict.unwrap_or(false);
        let jobs = if strict {
            1
        } else {
            jobs.or(file.jobs).unwrap_or(0)
        };
        let taxonomy = match taxonomy.or_else(|| file.taxonomy.clone()) {
            Some(p) => {
                let bytes = std::fs::read(&p).ctx(&p.display().to_string())?;
                load_taxonomy(&bytes).ctx(&p.display().to_string())?
            }
            None => default_taxonomy(),
        };
        Ok(Self {
            out,
            jobs,
            strict,
            taxonomy,
        })
    }
}

pub fn split_spec(
    test: Option<f64>,
    val: Option<f64>,
    seed: Option<u64>,
    file: &SplitSection,
) -> CliResult<SplitSpec> {
    let d = SplitSpec::default();
    let spec = SplitSpec {
        test_fraction: test.or(file.test_fraction).unwrap_or(d.test_fraction),
        val_fraction_of_train: val.or(file.val_fraction).unwrap_or(d.val_fraction_of_train),
        seed: seed.or(file.seed).unwrap_or(d.seed),
    };
    spec.validate()?;
    Ok(spec)
}
