//! From-scratch NHWC network engine.
//!
//! Models are strict chains of [`LayerSpec`]s ending in `Dense{n_out}` and
//! `Softmax`. Every kernel is generic over [`Scalar`] so the same code runs
//! in `f32` for training and in `f64` for tight gradient checks.

mod batchnorm;
mod conv;
mod gradcheck;
mod layer;
mod network;
mod ops;
mod params;
mod spec;
mod train;

use std::fmt::Debug;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormCache,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use gradcheck::{
    gradient_check, layer_gradient_check, GradCheckEntry, GradCheckReport, SCALE_FLOOR,
};
pub use layer::{layer_backward, layer_forward, LayerCache};
pub use network::{argmax, Network, Trace};
pub use ops::{
    avgpool_backward, avgpool_forward, cross_entropy, dense_backward, dense_forward, dropout_mask,
    relu_backward, relu_forward, softmax_backward, softmax_cross_entropy, softmax_forward,
};
pub use params::{Grads, LayerGrads, LayerParams, Params};
pub use spec::{
    basic_cnn_spec, shape_infer, softmax_regression_spec, vgg_style_spec, CnnScale, LayerSpec,
    ModelSpec, Shape3,
};
pub use train::{fit, train, EpochRecord, History, LabeledSet, TrainConfig};

/// Floating-point element type of the engine.
pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dropout and batch-norm behaviour for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, dropout disabled.
    Infer,
}

pub(crate) fn dims4<T>(
    t: &crate::Tensor<T>,
    what: &str,
) -> crate::Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, h, w, c] => Ok((n, h, w, c)),
        ref s => Err(crate::Error::Shape(format!(
            "{what}: expected rank-4 tensor, got {s:?}"
        ))),
    }
}
