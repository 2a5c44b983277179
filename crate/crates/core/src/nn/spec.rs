use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample activation shape (height, width, channels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        epsilon: f32,
        momentum: f32,
    },
    ReLU,
    AvgPool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

pub const DEFAULT_BN_EPSILON: f32 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f32 = 0.1;
pub const DEFAULT_DROPOUT: f32 = 0.25;

impl LayerSpec {
    pub fn conv3(filters: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::ReLU => "relu",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::BatchNorm { .. } | LayerSpec::Dense { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(m));
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return bad(format!("conv needs filters, kernel, stride >= 1: {self:?}"));
                }
            }
            LayerSpec::BatchNorm { epsilon, momentum } => {
                if !(epsilon > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return bad(format!(
                        "batch norm needs epsilon > 0 and momentum in [0, 1]: {self:?}"
                    ));
                }
            }
            LayerSpec::AvgPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad(format!("pooling needs window, stride >= 1: {self:?}"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("dropout rate must be in [0, 1): {rate}"));
                }
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return bad("dense needs at least one unit".into());
                }
            }
            LayerSpec::ReLU | LayerSpec::Flatten | LayerSpec::Softmax => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        self.validate()?;
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (h, w) = window_out(input, kernel, stride, padding, "conv")?;
                Ok(Shape3::new(h, w, filters))
            }
            LayerSpec::AvgPool { window, stride } => {
                let (h, w) = window_out(input, window, stride, 0, "avg_pool")?;
                Ok(Shape3::new(h, w, input.c))
            }
            LayerSpec::Flatten => Ok(Shape3::new(1, 1, input.len())),
            LayerSpec::Dense { units } => {
                if input.h != 1 || input.w != 1 {
                    return Err(Error::Shape(format!(
                        "dense expects a flattened input, got {input}"
                    )));
                }
                Ok(Shape3::new(1, 1, units))
            }
            LayerSpec::Softmax => {
                if input.h != 1 || input.w != 1 {
                    return Err(Error::Shape(format!(
                        "softmax expects a flat input, got {input}"
                    )));
                }
                Ok(input)
            }
            LayerSpec::BatchNorm { .. } | LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input),
        }
    }
}

/// `floor((n + 2 * pad - k) / stride) + 1` along both spatial axes.
pub(crate) fn window_out(
    input: Shape3,
    k: usize,
    stride: usize,
    pad: usize,
    what: &str,
) -> Result<(usize, usize)> {
    let axis = |n: usize| {
        let padded = n + 2 * pad;
        if padded < k {
            Err(Error::Shape(format!(
                "{what}: window {k} does not fit input {input} with padding {pad}"
            )))
        } else {
            Ok((padded - k) / stride + 1)
        }
    };
    Ok((axis(input.h)?, axis(input.w)?))
}

/// A chain of layers ending in `Dense{n_out}` then `Softmax`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    input: Shape3,
    layers: Vec<LayerSpec>,
    n_out: usize,
}

impl ModelSpec {
    pub fn new(input: Shape3, layers: Vec<LayerSpec>, n_out: usize) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Shape(format!(
                "input shape must be non-empty, got {input}"
            )));
        }
        match layers.as_slice() {
            [.., LayerSpec::Dense { units }, LayerSpec::Softmax]
                if *units == n_out && n_out > 0 => {}
            _ => {
                return Err(Error::Shape(format!(
                    "model must end with Dense{{{n_out}}} then Softmax"
                )))
            }
        }
        if layers[..layers.len() - 1].contains(&LayerSpec::Softmax) {
            return Err(Error::Shape(
                "softmax is only allowed as the last layer".into(),
            ));
        }
        let spec = Self {
            input,
            layers,
            n_out,
        };
        shape_infer(&spec)?;
        Ok(spec)
    }

    pub fn input(&self) -> Shape3 {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Layers excluding the trailing `Dense{n_out}` and `Softmax`.
    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn count(&self, pred: impl Fn(&LayerSpec) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(l)).count()
    }
}

/// Output shape of every layer, in order.
pub fn shape_infer(spec: &ModelSpec) -> Result<Vec<Shape3>> {
    let mut shape = spec.input;
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        shape = layer
            .output_shape(shape)
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
        out.push(shape);
    }
    Ok(out)
}

/// Scale presets for the basic CNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnScale {
    /// Two blocks (8 and 16 filters); fast enough for tests.
    Micro,
    /// Five blocks plus flatten: 26 hidden layers.
    Paper,
}

impl std::str::FromStr for CnnScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "micro" => Ok(CnnScale::Micro),
            "paper" => Ok(CnnScale::Paper),
            other => Err(Error::Config(format!("unknown CNN scale `{other}`"))),
        }
    }
}

/// Repeated `[Conv3x3 -> BatchNorm -> ReLU -> AvgPool2 -> Dropout]` blocks,
/// then `Flatten -> Dense{n_out} -> Softmax`.
///
/// The `Paper` preset is a reconstruction: five blocks with 32, 64, 128, 128
/// and 256 filters, which with the flatten layer gives 26 hidden layers.
pub fn basic_cnn_spec(input: Shape3, n_out: usize, scale: CnnScale) -> Result<ModelSpec> {
    let filters: &[usize] = match scale {
        CnnScale::Micro => &[8, 16],
        CnnScale::Paper => &[32, 64, 128, 128, 256],
    };
    let mut layers = Vec::new();
    for &f in filters {
        layers.extend([
            LayerSpec::conv3(f),
            LayerSpec::batch_norm(),
            LayerSpec::ReLU,
            LayerSpec::AvgPool {
                window: 2,
                stride: 2,
            },
            LayerSpec::Dropout {
                rate: DEFAULT_DROPOUT,
            },
        ]);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: n_out },
        LayerSpec::Softmax,
    ]);
    ModelSpec::new(input, layers, n_out)
}

const VGG_STAGES: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
const VGG_DENSE: usize = 4096;

/// VGG16-shaped grammar: five stages of 3x3/stride 1/pad 1 convolutions
/// with ReLU, 2x2 average pooling after each stage, then two hidden dense
/// layers and the output layer. At unit scales this is 13 conv + 3 dense.
pub fn vgg_style_spec(
    input: Shape3,
    n_out: usize,
    width_scale: f64,
    depth_scale: f64,
) -> Result<ModelSpec> {
    if !(width_scale >= 0.125) || !(depth_scale >= 0.125) {
        return Err(Error::Shape(format!(
            "VGG scales must be at least 1/8, got width {width_scale}, depth {depth_scale}"
        )));
    }
    let scaled = |v: usize, s: f64| ((v as f64 * s).round() as usize).max(1);
    let mut layers = Vec::new();
    for (width, convs) in VGG_STAGES {
        for _ in 0..scaled(convs, depth_scale) {
            layers.push(LayerSpec::conv3(scaled(width, width_scale)));
            layers.push(LayerSpec::ReLU);
        }
        layers.push(LayerSpec::AvgPool {
            window: 2,
            stride: 2,
        });
    }
    layers.push(LayerSpec::Flatten);
    for _ in 0..2 {
        layers.push(LayerSpec::Dense {
            units: scaled(VGG_DENSE, width_scale),
        });
        layers.push(LayerSpec::ReLU);
        layers.push(LayerSpec::Dropout {
            rate: DEFAULT_DROPOUT,
        });
    }
    layers.extend([LayerSpec::Dense { units: n_out }, LayerSpec::Softmax]);
    ModelSpec::new(input, layers, n_out)
}

/// Flat multinomial logistic regression on raw pixels.
pub fn softmax_regression_spec(input: Shape3, n_out: usize) -> Result<ModelSpec> {
    ModelSpec::new(
        input,
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: n_out },
            LayerSpec::Softmax,
        ],
        n_out,
    )
}
