//! `WXM1` model files.
//!
//! Layout (integers and floats little-endian):
//!
//! ```text
//! b"WXM1"
//! input_h: u32 | input_w: u32 | input_c: u32 | n_out: u32 | n_layers: u32
//! n_layers * layer:
//!     tag: u8, then
//!     0 conv       filters, kernel, stride, padding: u32
//!     1 batch_norm epsilon, momentum: f32
//!     2 relu
//!     3 avg_pool   window, stride: u32
//!     4 dropout    rate: f32
//!     5 flatten
//!     6 dense      units: u32
//!     7 softmax
//! n_layers * params:
//!     n_arrays: u32 (0, 2 or 4), then that many WXT1 tensors in the order
//!     weights, bias, running_mean, running_var
//! normalizer:
//!     mode: u8 (0 global, 1 per channel), then 1 or 3 of
//!     mean: f64 | std: f64 | sample_count: u64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::Tensor;
use crate::nn::{LayerParams, LayerSpec, ModelSpec, Network, Params, Shape3};
use crate::preprocess::{NormalizationStats, Normalizer};
use crate::tensor_file::{read_exact, read_tensor, read_u32, write_tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"WXM1";

/// A trained network with the standardization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub network: Network<f32>,
    pub normalizer: Normalizer,
}

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Shape(format!("{what} {v} exceeds u32")))
}

fn write_layer<W: Write>(w: &mut W, layer: &LayerSpec) -> Result<()> {
    match *layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            w.write_all(&[0])?;
            for v in [filters, kernel, stride, padding] {
                w.write_all(&u32_of(v, "conv field")?)?;
            }
        }
        LayerSpec::BatchNorm { epsilon, momentum } => {
            w.write_all(&[1])?;
            w.write_all(&epsilon.to_le_bytes())?;
            w.write_all(&momentum.to_le_bytes())?;
        }
        LayerSpec::ReLU => w.write_all(&[2])?,
        LayerSpec::AvgPool { window, stride } => {
            w.write_all(&[3])?;
            w.write_all(&u32_of(window, "pool window")?)?;
            w.write_all(&u32_of(stride, "pool stride")?)?;
        }
        LayerSpec::Dropout { rate } => {
            w.write_all(&[4])?;
            w.write_all(&rate.to_le_bytes())?;
        }
        LayerSpec::Flatten => w.write_all(&[5])?,
        LayerSpec::Dense { units } => {
            w.write_all(&[6])?;
            w.write_all(&u32_of(units, "dense units")?)?;
        }
        LayerSpec::Softmax => w.write_all(&[7])?,
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    Ok(read_u32(r)? as usize)
}

fn read_layer<R: Read>(r: &mut R) -> Result<LayerSpec> {
    Ok(match read_u8(r)? {
        0 => LayerSpec::Conv {
            filters: read_usize(r)?,
            kernel: read_usize(r)?,
            stride: read_usize(r)?,
            padding: read_usize(r)?,
        },
        1 => LayerSpec::BatchNorm {
            epsilon: read_f32(r)?,
            momentum: read_f32(r)?,
        },
        2 => LayerSpec::ReLU,
        3 => LayerSpec::AvgPool {
            window: read_usize(r)?,
            stride: read_usize(r)?,
        },
        4 => LayerSpec::Dropout { rate: read_f32(r)? },
        5 => LayerSpec::Flatten,
        6 => LayerSpec::Dense {
            units: read_usize(r)?,
        },
        7 => LayerSpec::Softmax,
        t => return Err(Error::Format(format!("unknown layer tag {t}"))),
    })
}

fn write_stats<W: Write>(w: &mut W, s: &NormalizationStats) -> Result<()> {
    w.write_all(&s.mean.to_le_bytes())?;
    w.write_all(&s.std.to_le_bytes())?;
    w.write_all(&s.sample_count.to_le_bytes())?;
    Ok(())
}

fn read_stats<R: Read>(r: &mut R) -> Result<NormalizationStats> {
    let mean = f64::from_bits(read_u64(r)?);
    let std = f64::from_bits(read_u64(r)?);
    let n = read_u64(r)?;
    NormalizationStats::new(mean, std, n).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_model<W: Write>(w: &mut W, model: &ModelFile) -> Result<()> {
    let spec = model.network.spec();
    let input = spec.input();
    w.write_all(MODEL_MAGIC)?;
    for (v, what) in [
        (input.h, "input height"),
        (input.w, "input width"),
        (input.c, "input channels"),
        (spec.n_out(), "n_out"),
        (spec.layers().len(), "layer count"),
    ] {
        w.write_all(&u32_of(v, what)?)?;
    }
    for layer in spec.layers() {
        write_layer(w, layer)?;
    }
    for p in &model.network.params().layers {
        let arrays: Vec<&Tensor<f32>> = if p.is_empty() {
            Vec::new()
        } else if p.running_mean.is_empty() {
            vec![&p.weights, &p.bias]
        } else {
            vec![&p.weights, &p.bias, &p.running_mean, &p.running_var]
        };
        w.write_all(&u32_of(arrays.len(), "array count")?)?;
        for t in arrays {
            write_tensor(w, t)?;
        }
    }
    match &model.normalizer {
        Normalizer::Global(s) => {
            w.write_all(&[0])?;
            write_stats(w, s)?;
        }
        Normalizer::PerChannel(s) => {
            w.write_all(&[1])?;
            for c in s {
                write_stats(w, c)?;
            }
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ModelFile> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MODEL_MAGIC {
        if &magic[..3] == b"WXM" {
            return Err(Error::Version {
                expected: "WXM1".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        return Err(Error::Format("not a WXM model file".into()));
    }
    let (h, w, c) = (read_usize(r)?, read_usize(r)?, read_usize(r)?);
    let n_out = read_usize(r)?;
    let n_layers = read_usize(r)?;
    if n_layers > 4096 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let layers = (0..n_layers)
        .map(|_| read_layer(r))
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec::new(Shape3::new(h, w, c), layers, n_out)
        .map_err(|e| Error::Format(format!("stored model description is invalid: {e}")))?;
    let mut params = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut p = LayerParams::none();
        match read_u32(r)? {
            0 => {}
            n @ (2 | 4) => {
                p.weights = read_tensor(r)?;
                p.bias = read_tensor(r)?;
                if n == 4 {
                    p.running_mean = read_tensor(r)?;
                    p.running_var = read_tensor(r)?;
                }
            }
            n => return Err(Error::Format(format!("bad parameter array count {n}"))),
        }
        params.push(p);
    }
    let network = Network::new(spec, Params { layers: params })
        .map_err(|e| Error::Format(format!("parameters do not match the model: {e}")))?;
    let normalizer = match read_u8(r)? {
        0 => Normalizer::Global(read_stats(r)?),
        1 => Normalizer::PerChannel([read_stats(r)?, read_stats(r)?, read_stats(r)?]),
        m => return Err(Error::Format(format!("unknown normalizer mode {m}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    Ok(ModelFile {
        network,
        normalizer,
    })
}

pub fn encode_model(model: &ModelFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_model(&mut out, model)?;
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut cursor = bytes;
    read_model(&mut cursor)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    decode_model(&std::fs::read(path)?)
}
