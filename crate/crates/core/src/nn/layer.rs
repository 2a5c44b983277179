use super::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormCache,
};
use super::conv::{conv2d_backward, conv2d_forward};
use super::ops::*;
use super::params::{LayerGrads, LayerParams};
use super::spec::LayerSpec;
use super::{Mode, Scalar};
use crate::error::{Error, Result};
use crate::imageio::Tensor;

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    None,
    BatchNorm(BatchNormCache<T>),
    Dropout(Vec<T>),
    Softmax(Tensor<T>),
}

pub fn layer_forward<T: Scalar>(
    layer: &LayerSpec,
    params: &LayerParams<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    Ok(match *layer {
        LayerSpec::Conv {
            stride, padding, ..
        } => (
            conv2d_forward(x, &params.weights, params.bias.data(), stride, padding)?,
            LayerCache::None,
        ),
        LayerSpec::BatchNorm { epsilon, .. } => {
            let eps = T::lit(f64::from(epsilon));
            match mode {
                Mode::Train { .. } => {
                    let (y, cache) =
                        batchnorm_forward_train(x, params.weights.data(), params.bias.data(), eps)?;
                    (y, LayerCache::BatchNorm(cache))
                }
                Mode::Infer => (
                    batchnorm_forward_infer(
                        x,
                        params.weights.data(),
                        params.bias.data(),
                        params.running_mean.data(),
                        params.running_var.data(),
                        eps,
                    )?,
                    LayerCache::None,
                ),
            }
        }
        LayerSpec::ReLU => (relu_forward(x), LayerCache::None),
        LayerSpec::AvgPool { window, stride } => {
            (avgpool_forward(x, window, stride)?, LayerCache::None)
        }
        LayerSpec::Dropout { rate } => match mode {
            Mode::Train { dropout_seed } if rate > 0.0 => {
                let mask: Vec<T> = dropout_mask(x.len(), f64::from(rate), dropout_seed);
                let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                (
                    Tensor::new(x.shape().to_vec(), y)?,
                    LayerCache::Dropout(mask),
                )
            }
            _ => (x.clone(), LayerCache::None),
        },
        LayerSpec::Flatten => {
            let n = x.shape().first().copied().unwrap_or(0);
            let f = x.len().checked_div(n).unwrap_or(0);
            (x.clone().reshape(vec![n, 1, 1, f])?, LayerCache::None)
        }
        LayerSpec::Dense { .. } => (
            dense_forward(x, &params.weights, params.bias.data())?,
            LayerCache::None,
        ),
        LayerSpec::Softmax => {
            let y = softmax_forward(x)?;
            (y.clone(), LayerCache::Softmax(y))
        }
    })
}

/// Returns the input gradient and the parameter gradients of one layer.
pub fn layer_backward<T: Scalar>(
    layer: &LayerSpec,
    params: &LayerParams<T>,
    x: &Tensor<T>,
    cache: &LayerCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    Ok(match (*layer, cache) {
        (
            LayerSpec::Conv {
                stride, padding, ..
            },
            _,
        ) => {
            let g = conv2d_backward(x, &params.weights, grad_out, stride, padding)?;
            (
                g.grad_x,
                LayerGrads {
                    weights: g.grad_kernels.into_data(),
                    bias: g.grad_bias,
                },
            )
        }
        (LayerSpec::BatchNorm { .. }, LayerCache::BatchNorm(c)) => {
            let (dx, dg, db) = batchnorm_backward(c, params.weights.data(), grad_out)?;
            (
                dx,
                LayerGrads {
                    weights: dg,
                    bias: db,
                },
            )
        }
        (LayerSpec::BatchNorm { epsilon, .. }, _) => {
            // Inference mode: a fixed per-channel affine map.
            let c = params.weights.len();
            let eps = T::lit(f64::from(epsilon));
            let scale: Vec<T> = params
                .running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            let mut dx = Vec::with_capacity(x.len());
            for (xr, dr) in x
                .data()
                .chunks_exact(c)
                .zip(grad_out.data().chunks_exact(c))
            {
                for ch in 0..c {
                    let xhat = (xr[ch] - params.running_mean.data()[ch]) * scale[ch];
                    dg[ch] = dg[ch] + dr[ch] * xhat;
                    db[ch] = db[ch] + dr[ch];
                    dx.push(dr[ch] * params.weights.data()[ch] * scale[ch]);
                }
            }
            (
                Tensor::new(x.shape().to_vec(), dx)?,
                LayerGrads {
                    weights: dg,
                    bias: db,
                },
            )
        }
        (LayerSpec::ReLU, _) => (relu_backward(x, grad_out)?, LayerGrads::none()),
        (LayerSpec::AvgPool { window, stride }, _) => (
            avgpool_backward(x.shape(), window, stride, grad_out)?,
            LayerGrads::none(),
        ),
        (LayerSpec::Dropout { .. }, LayerCache::Dropout(mask)) => {
            if mask.len() != grad_out.len() {
                return Err(Error::Shape("dropout mask does not match gradient".into()));
            }
            let dx = grad_out
                .data()
                .iter()
                .zip(mask)
                .map(|(&d, &m)| d * m)
                .collect();
            (
                Tensor::new(grad_out.shape().to_vec(), dx)?,
                LayerGrads::none(),
            )
        }
        (LayerSpec::Dropout { .. }, _) => (grad_out.clone(), LayerGrads::none()),
        (LayerSpec::Flatten, _) => {
            if grad_out.len() != x.len() {
                return Err(Error::Shape("flatten gradient size mismatch".into()));
            }
            (
                grad_out.clone().reshape(x.shape().to_vec())?,
                LayerGrads::none(),
            )
        }
        (LayerSpec::Dense { .. }, _) => {
            let (dx, dw, db) = dense_backward(x, &params.weights, grad_out)?;
            (
                dx,
                LayerGrads {
                    weights: dw.into_data(),
                    bias: db,
                },
            )
        }
        (LayerSpec::Softmax, LayerCache::Softmax(y)) => {
            (softmax_backward(y, grad_out)?, LayerGrads::none())
        }
        (LayerSpec::Softmax, _) => {
            let y = softmax_forward(x)?;
            (softmax_backward(&y, grad_out)?, LayerGrads::none())
        }
    })
}
