//! Resampling, standardization and label encoding.
//!
//! The standard pipeline is: optional BGR to RGB swap, cast to float,
//! Lanczos resize to the model input size, then subtract the training mean
//! and divide by the training standard deviation.

use std::f64::consts::PI;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imageio::{bgr_to_rgb, to_tensor, ChannelOrder, ImageU8, Tensor, TensorF32};

/// Model input side length used by the standard pipeline.
pub const MODEL_INPUT_SIZE: usize = 100;

pub const DEFAULT_LANCZOS_WINDOW: usize = 3;

/// Windowed sinc: `sinc(x) * sinc(x / a)` for `|x| < a`, zero elsewhere.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a {
        return 0.0;
    }
    let px = PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

/// Per-output-pixel taps along one axis: (first source index, weights).
/// Source indices beyond the edge are clamped, so the weights are folded
/// onto the border samples.
struct AxisWeights {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    fn new(src: usize, dst: usize, a: usize) -> Self {
        let scale = src as f64 / dst as f64;
        // Widen the kernel when shrinking so it acts as a low-pass filter.
        let support_scale = scale.max(1.0);
        let radius = a as f64 * support_scale;
        let taps = (0..dst)
            .map(|i| {
                let center = (i as f64 + 0.5) * scale - 0.5;
                let lo = (center - radius).floor() as i64;
                let hi = (center + radius).ceil() as i64;
                let mut weights: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for j in lo..=hi {
                    let w = lanczos_kernel((j as f64 - center) / support_scale, a);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, src as i64 - 1) as usize;
                    total += w;
                    match weights.iter_mut().find(|(k, _)| *k == idx) {
                        Some(slot) => slot.1 += w,
                        None => weights.push((idx, w)),
                    }
                }
                for (_, w) in weights.iter_mut() {
                    *w /= total;
                }
                weights
            })
            .collect();
        Self { taps }
    }
}

/// Lanczos resize of an `[H, W, 3]` tensor with the default window.
pub fn resize_lanczos(img: &TensorF32, out_h: usize, out_w: usize) -> Result<TensorF32> {
    resize_lanczos_with(img, out_h, out_w, DEFAULT_LANCZOS_WINDOW)
}

/// Separable Lanczos resize: horizontal pass then vertical pass.
///
/// Pixel centers are aligned (`src = (dst + 0.5) * scale - 0.5`), edges are
/// clamped, weights are renormalized per output pixel and the result is
/// clamped to `[0, 255]`.
pub fn resize_lanczos_with(
    img: &TensorF32,
    out_h: usize,
    out_w: usize,
    window: usize,
) -> Result<TensorF32> {
    let (h, w, c) = match img.shape() {
        &[h, w, c] if h > 0 && w > 0 && c > 0 => (h, w, c),
        s => {
            return Err(Error::Dimension(format!(
                "expected [H, W, C] image tensor, got {s:?}"
            )))
        }
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!(
            "target size must be positive, got {out_h}x{out_w}"
        )));
    }
    if window == 0 {
        return Err(Error::Dimension("Lanczos window must be at least 1".into()));
    }
    let src = img.data();
    let wx = AxisWeights::new(w, out_w, window);
    let wy = AxisWeights::new(h, out_h, window);

    let mut horiz = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        let row = &src[y * w * c..(y + 1) * w * c];
        for (x, taps) in wx.taps.iter().enumerate() {
            let out = &mut horiz[(y * out_w + x) * c..(y * out_w + x + 1) * c];
            for &(sx, weight) in taps {
                for ch in 0..c {
                    out[ch] += weight * f64::from(row[sx * c + ch]);
                }
            }
        }
    }

    let mut out = vec![0.0f32; out_h * out_w * c];
    let row_len = out_w * c;
    let mut acc = vec![0.0f64; row_len];
    for (y, taps) in wy.taps.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &(sy, weight) in taps {
            let row = &horiz[sy * row_len..(sy + 1) * row_len];
            for (a, r) in acc.iter_mut().zip(row) {
                *a += weight * r;
            }
        }
        for (o, a) in out[y * row_len..(y + 1) * row_len].iter_mut().zip(&acc) {
            *o = a.clamp(0.0, 255.0) as f32;
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Train-set mean and population standard deviation of all scalar samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub sample_count: u64,
}

impl NormalizationStats {
    pub fn new(mean: f64, std: f64, sample_count: u64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::Degenerate(format!(
                "invalid statistics mean={mean} std={std}"
            )));
        }
        if sample_count < 2 {
            return Err(Error::Degenerate(
                "statistics need at least 2 samples".into(),
            ));
        }
        Ok(Self {
            mean,
            std,
            sample_count,
        })
    }
}

/// Welford accumulator; merge order is the caller's responsibility.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(self) -> Result<NormalizationStats> {
        if self.count < 2 {
            return Err(Error::Degenerate(format!(
                "need at least 2 samples, got {}",
                self.count
            )));
        }
        let var = self.m2 / self.count as f64;
        if !(var > 0.0) {
            return Err(Error::Degenerate(
                "all samples are identical (std = 0)".into(),
            ));
        }
        NormalizationStats::new(self.mean, var.sqrt(), self.count)
    }
}

/// Global mean and population std over every sample of every image, in
/// input order.
pub fn compute_stats<'a, I>(train_images: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a TensorF32>,
{
    let mut acc = Welford::default();
    for img in train_images {
        for &v in img.data() {
            acc.push(f64::from(v));
        }
    }
    acc.finish()
}

/// Per-channel variant of [`compute_stats`]; the last tensor axis is the
/// channel axis.
pub fn compute_channel_stats<'a, I>(train_images: I) -> Result<[NormalizationStats; 3]>
where
    I: IntoIterator<Item = &'a TensorF32>,
{
    let mut acc = [Welford::default(); 3];
    for img in train_images {
        if img.shape().last() != Some(&3) {
            return Err(Error::Shape(format!(
                "expected 3 channels, got shape {:?}",
                img.shape()
            )));
        }
        for px in img.data().chunks_exact(3) {
            for (a, &v) in acc.iter_mut().zip(px) {
                a.push(f64::from(v));
            }
        }
    }
    Ok([acc[0].finish()?, acc[1].finish()?, acc[2].finish()?])
}

/// `(x - mean) / std`, elementwise.
pub fn normalize(x: &TensorF32, s: &NormalizationStats) -> TensorF32 {
    let (mean, std) = (s.mean, s.std);
    x.map(|&v| ((f64::from(v) - mean) / std) as f32)
}

pub fn normalize_per_channel(x: &TensorF32, s: &[NormalizationStats; 3]) -> Result<TensorF32> {
    if x.shape().last() != Some(&3) {
        return Err(Error::Shape(format!(
            "expected 3 channels, got shape {:?}",
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let st = &s[i % 3];
            ((f64::from(v) - st.mean) / st.std) as f32
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Standardization stored alongside a model: one global scalar pair (the
/// default) or one pair per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalizer {
    Global(NormalizationStats),
    PerChannel([NormalizationStats; 3]),
}

impl Normalizer {
    pub fn fit<'a, I>(train_images: I, per_channel: bool) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TensorF32>,
    {
        if per_channel {
            compute_channel_stats(train_images).map(Normalizer::PerChannel)
        } else {
            compute_stats(train_images).map(Normalizer::Global)
        }
    }

    pub fn apply(&self, x: &TensorF32) -> Result<TensorF32> {
        match self {
            Normalizer::Global(s) => Ok(normalize(x, s)),
            Normalizer::PerChannel(s) => normalize_per_channel(x, s),
        }
    }

    /// Stats file text. Floats use 17 significant digits.
    pub fn to_stats_file(&self) -> String {
        match self {
            Normalizer::Global(s) => format!(
                "mode = \"global\"\nmean = {:.16e}\nstd = {:.16e}\nsample_count = {}\n",
                s.mean, s.std, s.sample_count
            ),
            Normalizer::PerChannel(s) => format!(
                "mode = \"per_channel\"\nmean = [{:.16e}, {:.16e}, {:.16e}]\n\
                 std = [{:.16e}, {:.16e}, {:.16e}]\nsample_count = [{}, {}, {}]\n",
                s[0].mean,
                s[1].mean,
                s[2].mean,
                s[0].std,
                s[1].std,
                s[2].std,
                s[0].sample_count,
                s[1].sample_count,
                s[2].sample_count
            ),
        }
    }

    pub fn from_stats_file(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Field<T> {
            One(T),
            Three([T; 3]),
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            #[serde(default)]
            mode: Option<String>,
            mean: Field<f64>,
            std: Field<f64>,
            sample_count: Field<u64>,
        }
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match (
            doc.mode.as_deref().unwrap_or("global"),
            doc.mean,
            doc.std,
            doc.sample_count,
        ) {
            ("global", Field::One(m), Field::One(s), Field::One(n)) => {
                Ok(Normalizer::Global(NormalizationStats::new(m, s, n)?))
            }
            ("per_channel", Field::Three(m), Field::Three(s), Field::Three(n)) => {
                Ok(Normalizer::PerChannel([
                    NormalizationStats::new(m[0], s[0], n[0])?,
                    NormalizationStats::new(m[1], s[1], n[1])?,
                    NormalizationStats::new(m[2], s[2], n[2])?,
                ]))
            }
            (mode, ..) => Err(Error::Parse(format!(
                "stats fields do not match mode `{mode}`"
            ))),
        }
    }
}

/// Length-n vector with a single 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotVector(Vec<f32>);

impl OneHotVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

pub fn one_hot(index: usize, n: usize) -> Result<OneHotVector> {
    if index >= n {
        return Err(Error::Index { index, len: n });
    }
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    Ok(OneHotVector(v))
}

/// Channel swap, cast, resize to `size`x`size` and standardize.
pub fn preprocess_to_size(
    img: &ImageU8,
    order: ChannelOrder,
    normalizer: &Normalizer,
    size: usize,
) -> Result<TensorF32> {
    let resized = resize_image(img, order, size)?;
    normalizer.apply(&resized)
}

/// The standard pipeline with a 100x100 output.
pub fn preprocess_pipeline(
    img: &ImageU8,
    order: ChannelOrder,
    stats: &NormalizationStats,
) -> Result<TensorF32> {
    preprocess_to_size(img, order, &Normalizer::Global(*stats), MODEL_INPUT_SIZE)
}

/// Everything up to (not including) standardization; this is what the
/// training statistics are computed on.
pub fn resize_image(img: &ImageU8, order: ChannelOrder, size: usize) -> Result<TensorF32> {
    let tensor = match order {
        ChannelOrder::Rgb => to_tensor(img),
        ChannelOrder::Bgr => to_tensor(&bgr_to_rgb(img)),
    };
    resize_lanczos(&tensor, size, size)
}
