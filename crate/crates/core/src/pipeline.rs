//! Loading manifest images into model-ready batches, and the model presets.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::ManifestEntry;
use crate::error::{Error, Result};
use crate::imageio::{decode_ppm, ChannelOrder, ImageU8, Tensor, TensorF32};
use crate::nn::{
    basic_cnn_spec, softmax_regression_spec, vgg_style_spec, CnnScale, ModelSpec, Shape3,
};
use crate::preprocess::{resize_image, Normalizer};
use crate::taxonomy::LeafClass;

/// Where manifest paths are resolved.
pub trait ImageSource: Sync {
    fn load(&self, path: &str) -> Result<ImageU8>;
}

/// PPM files on disk; relative paths are resolved against `root`.
#[derive(Clone, Debug)]
pub struct FsSource {
    root: PathBuf,
}

impl FsSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageSource for FsSource {
    fn load(&self, path: &str) -> Result<ImageU8> {
        decode_ppm(&std::fs::read(self.resolve(path))?)
    }
}

/// Images held in memory, keyed by manifest path.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    images: HashMap<String, ImageU8>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, img: ImageU8) {
        self.images.insert(path.into(), img);
    }
}

impl ImageSource for MemorySource {
    fn load(&self, path: &str) -> Result<ImageU8> {
        self.images.get(path).cloned().ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                path.to_string(),
            ))
        })
    }
}

/// Runs `f` on a pool of `jobs` threads; `0` means one per core.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Resized (not yet standardized) images `[size, size, 3]` with their
/// leaf labels, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub images: Vec<TensorF32>,
    pub leaves: Vec<LeafClass>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Rows for which `keep` holds.
    pub fn filter(&self, keep: impl Fn(LeafClass) -> bool) -> PreparedSet {
        let (images, leaves) = self
            .images
            .iter()
            .zip(&self.leaves)
            .filter(|(_, &l)| keep(l))
            .map(|(i, &l)| (i.clone(), l))
            .unzip();
        PreparedSet { images, leaves }
    }
}

/// Decodes and resizes every entry. Uses the ambient rayon pool; wrap in
/// [`with_jobs`] to cap it. The first failing entry aborts with its path.
pub fn prepare(
    entries: &[ManifestEntry],
    source: &dyn ImageSource,
    size: usize,
) -> Result<PreparedSet> {
    let images = entries
        .par_iter()
        .map(|e| {
            source
                .load(&e.path)
                .and_then(|img| resize_image(&img, e.channel_order, size))
                .map_err(|err| match err {
                    Error::Io(io) => {
                        Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", e.path)))
                    }
                    other => Error::Format(format!("{}: {other}", e.path)),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSet {
        images,
        leaves: entries.iter().map(|e| e.leaf).collect(),
    })
}

/// Decodes and resizes one image.
pub fn prepare_image(img: &ImageU8, order: ChannelOrder, size: usize) -> Result<TensorF32> {
    resize_image(img, order, size)
}

/// Standardizes the selected images and stacks them into `[N, H, W, C]`.
pub fn stack(images: &[&TensorF32], normalizer: &Normalizer) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero images".into()))?;
    let shape = first.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected [H, W, C] images, got {shape:?}"
        )));
    }
    let normalized = images
        .par_iter()
        .map(|t| {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "image shape {:?} differs from {:?}",
                    t.shape(),
                    shape
                )));
            }
            normalizer.apply(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(images.len() * first.len());
    for t in &normalized {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data)
}

/// Model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Multinomial logistic regression on raw pixels (the shallow baseline).
    SoftmaxFlat,
    /// Flat 11-way basic CNN.
    BasicCnn,
    /// Flat 11-way VGG-style network.
    VggStyle,
    /// Primary 3-way CNN plus per-group sub-models.
    Hierarchical,
}

impl Preset {
    pub fn id(self) -> &'static str {
        match self {
            Preset::SoftmaxFlat => "softmax-flat",
            Preset::BasicCnn => "basic-cnn",
            Preset::VggStyle => "vgg-style",
            Preset::Hierarchical => "hierarchical",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "softmax-flat" | "softmax" => Ok(Preset::SoftmaxFlat),
            "basic-cnn" => Ok(Preset::BasicCnn),
            "vgg-style" | "vgg" => Ok(Preset::VggStyle),
            "hierarchical" => Ok(Preset::Hierarchical),
            other => Err(Error::Config(format!(
                "unknown architecture preset `{other}`"
            ))),
        }
    }
}

/// Preset plus its scale knobs and the square model input size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub preset: Preset,
    pub scale: CnnScale,
    pub width_scale: f64,
    pub depth_scale: f64,
    pub input_size: usize,
}

impl Default for ArchConfig {
    /// Hierarchical micro preset on 32x32 inputs.
    fn default() -> Self {
        Self {
            preset: Preset::Hierarchical,
            scale: CnnScale::Micro,
            width_scale: 0.125,
            depth_scale: 1.0,
            input_size: 32,
        }
    }
}

impl ArchConfig {
    pub fn input_shape(&self) -> Shape3 {
        Shape3::new(self.input_size, self.input_size, 3)
    }

    /// Network for an `n_out`-way head. The hierarchical preset builds each
    /// of its models with the basic CNN at `scale`.
    pub fn model_spec(&self, n_out: usize) -> Result<ModelSpec> {
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        let input = self.input_shape();
        match self.preset {
            Preset::SoftmaxFlat => softmax_regression_spec(input, n_out),
            Preset::BasicCnn | Preset::Hierarchical => basic_cnn_spec(input, n_out, self.scale),
            Preset::VggStyle => vgg_style_spec(input, n_out, self.width_scale, self.depth_scale),
        }
    }
}
