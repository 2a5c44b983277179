//! Central-difference checks of the analytic gradients.
//!
//! The error of one array is `max|a - n| / max(max|a|, max|n|, floor)` where
//! `a` is the analytic and `n` the numeric gradient, and `floor` is
//! `SCALE_FLOOR` times the largest gradient seen anywhere in the same check.
//! The floor keeps arrays whose true gradient is zero (a conv bias feeding
//! batch norm) from turning rounding noise into a relative error of 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{layer_backward, layer_forward};
use super::network::Network;
use super::ops::softmax_cross_entropy;
use super::params::LayerParams;
use super::spec::{LayerSpec, Shape3};
use super::{Mode, Scalar};
use crate::error::{Error, Result};
use crate::imageio::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    /// Layer index, or `None` for the network input.
    pub layer: Option<usize>,
    pub name: &'static str,
    /// `"weights"`, `"bias"` or `"input"`.
    pub array: &'static str,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    fn from_entries(entries: Vec<GradCheckEntry>) -> Self {
        let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
        Self {
            entries,
            max_rel_err,
        }
    }
}

/// Denominator floor relative to the largest gradient of a check.
pub const SCALE_FLOOR: f64 = 1e-2;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64) {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = max_abs(analytic)
        .max(max_abs(numeric))
        .max(floor)
        .max(f64::MIN_POSITIVE);
    (diff / scale, diff)
}

struct Raw {
    layer: Option<usize>,
    name: &'static str,
    array: &'static str,
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

fn finish(raw: Vec<Raw>) -> GradCheckReport {
    let global = raw
        .iter()
        .map(|r| max_abs(&r.analytic).max(max_abs(&r.numeric)))
        .fold(0.0, f64::max);
    let entries = raw
        .into_iter()
        .map(|r| {
            let (max_rel_err, max_abs_err) = compare(&r.analytic, &r.numeric, SCALE_FLOOR * global);
            GradCheckEntry {
                layer: r.layer,
                name: r.name,
                array: r.array,
                max_rel_err,
                max_abs_err,
                checked: r.analytic.len(),
            }
        })
        .collect();
    GradCheckReport::from_entries(entries)
}

fn central<T: Scalar>(
    values: &mut [T],
    eps: f64,
    mut loss: impl FnMut(&[T]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = T::lit(orig.as_f64() + eps);
        let lp = loss(values)?;
        values[i] = T::lit(orig.as_f64() - eps);
        let lm = loss(values)?;
        values[i] = orig;
        out.push((lp - lm) / (2.0 * eps));
    }
    Ok(out)
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Compares backpropagated gradients of the mean cross-entropy against
/// central differences for every parameter and every input element.
///
/// The analytic side runs in `T`; the numeric side always runs on an `f64`
/// copy, so a 32-bit check measures the 32-bit backward pass rather than
/// 32-bit cancellation in the differences. Runs in training mode with fixed
/// dropout masks, so batch-norm layers are checked through their batch
/// statistics.
pub fn gradient_check<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    epsilon: f64,
    dropout_seed: u64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mode = Mode::Train { dropout_seed };
    let (logits, trace) = net.forward_logits(x, mode)?;
    let (_, _, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let grads = net.backward(&trace, &dlogits)?;

    let loss_of = |n: &Network<f64>, x: &Tensor<f64>| -> Result<f64> { n.loss(x, labels, mode) };
    let x64 = x.map(|v| v.as_f64());
    let mut work: Network<f64> = net.convert();
    let mut raw = Vec::new();
    for (i, layer) in net.spec().layers().iter().enumerate() {
        for array in ["weights", "bias"] {
            let analytic = match array {
                "weights" => &grads.layers[i].weights,
                _ => &grads.layers[i].bias,
            };
            if analytic.is_empty() {
                continue;
            }
            let mut values = match array {
                "weights" => work.params().layers[i].weights.data().to_vec(),
                _ => work.params().layers[i].bias.data().to_vec(),
            };
            let numeric = central(&mut values, epsilon, |v| {
                let target = &mut work.params_mut().layers[i];
                let t = if array == "weights" {
                    &mut target.weights
                } else {
                    &mut target.bias
                };
                t.data_mut().copy_from_slice(v);
                loss_of(&work, &x64)
            })?;
            let p = &mut work.params_mut().layers[i];
            let t = if array == "weights" {
                &mut p.weights
            } else {
                &mut p.bias
            };
            t.data_mut().copy_from_slice(&values);
            raw.push(Raw {
                layer: Some(i),
                name: layer.name(),
                array,
                analytic: to_f64(analytic),
                numeric,
            });
        }
    }
    let mut xin = x64.clone();
    let mut values = x64.data().to_vec();
    let numeric = central(&mut values, epsilon, |v| {
        xin.data_mut().copy_from_slice(v);
        loss_of(&work, &xin)
    })?;
    raw.push(Raw {
        layer: None,
        name: "input",
        array: "input",
        analytic: to_f64(grads.input.data()),
        numeric,
    });
    Ok(finish(raw))
}

/// Random values in `[-1, 1]` with magnitude at least `0.1`, keeping
/// ReLU inputs away from the kink.
fn kink_free<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            T::lit(if rng.random_bool(0.5) { v } else { -v })
        })
        .collect()
}

fn random_params(layer: &LayerSpec, input: Shape3, rng: &mut ChaCha8Rng) -> LayerParams<f64> {
    let tensor = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::new(shape, kink_free(rng, n)).expect("shape matches data")
    };
    match *layer {
        LayerSpec::Conv {
            filters, kernel, ..
        } => LayerParams {
            weights: tensor(vec![kernel, kernel, input.c, filters], rng),
            bias: tensor(vec![filters], rng),
            ..LayerParams::none()
        },
        LayerSpec::BatchNorm { .. } => LayerParams {
            weights: tensor(vec![input.c], rng).map(|v| 1.0 + v * 0.5),
            bias: tensor(vec![input.c], rng),
            running_mean: Tensor::zeros(vec![input.c]),
            running_var: Tensor::full(vec![input.c], 1.0),
        },
        LayerSpec::Dense { units } => LayerParams {
            weights: tensor(vec![input.len(), units], rng),
            bias: tensor(vec![units], rng),
            ..LayerParams::none()
        },
        _ => LayerParams::none(),
    }
}

/// Checks a single layer in isolation against the loss `sum(r * layer(x))`
/// for a fixed random projection `r`. Analytic gradients are computed in
/// `T`, numeric ones in `f64`.
pub fn layer_gradient_check<T: Scalar>(
    layer: &LayerSpec,
    input: Shape3,
    batch: usize,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let out_shape = layer.output_shape(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = random_params(layer, input, &mut rng);
    let x = Tensor::new(
        vec![batch, input.h, input.w, input.c],
        kink_free::<f64>(&mut rng, batch * input.len()),
    )?;
    let r = Tensor::new(
        vec![batch, out_shape.h, out_shape.w, out_shape.c],
        kink_free::<f64>(&mut rng, batch * out_shape.len()),
    )?;
    let mode = Mode::Train { dropout_seed: seed };

    let lit = |t: &Tensor<f64>| t.map(|v| T::lit(*v));
    let params_t = LayerParams {
        weights: lit(&params.weights),
        bias: lit(&params.bias),
        running_mean: lit(&params.running_mean),
        running_var: lit(&params.running_var),
    };
    let x_t = lit(&x);
    let (y, cache) = layer_forward(layer, &params_t, &x_t, mode)?;
    let r_t = lit(&r).reshape(y.shape().to_vec())?;
    let (dx, lg) = layer_backward(layer, &params_t, &x_t, &cache, &r_t)?;

    let project =
        |y: &Tensor<f64>| -> f64 { y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
    let mut raw = Vec::new();

    for array in ["weights", "bias"] {
        let analytic = if array == "weights" {
            &lg.weights
        } else {
            &lg.bias
        };
        if analytic.is_empty() {
            continue;
        }
        let mut values = if array == "weights" {
            params.weights.data().to_vec()
        } else {
            params.bias.data().to_vec()
        };
        let numeric = central(&mut values, epsilon, |v| {
            let t = if array == "weights" {
                &mut params.weights
            } else {
                &mut params.bias
            };
            t.data_mut().copy_from_slice(v);
            Ok(project(&layer_forward(layer, &params, &x, mode)?.0))
        })?;
        let t = if array == "weights" {
            &mut params.weights
        } else {
            &mut params.bias
        };
        t.data_mut().copy_from_slice(&values);
        raw.push(Raw {
            layer: Some(0),
            name: layer.name(),
            array,
            analytic: to_f64(analytic),
            numeric,
        });
    }
    let mut xin = x.clone();
    let mut values = x.data().to_vec();
    let numeric = central(&mut values, epsilon, |v| {
        xin.data_mut().copy_from_slice(v);
        Ok(project(&layer_forward(layer, &params, &xin, mode)?.0))
    })?;
    raw.push(Raw {
        layer: Some(0),
        name: layer.name(),
        array: "input",
        analytic: to_f64(dx.data()),
        numeric,
    });
    Ok(finish(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{basic_cnn_spec, CnnScale};

    #[test]
    fn compare_scales_by_largest() {
        assert_eq!(compare(&[1.0, 0.0], &[1.0, 0.0], 0.0), (0.0, 0.0));
        let (rel, abs) = compare(&[2.0, 0.0], &[1.0, 0.5], 0.0);
        assert!((rel - 0.5).abs() < 1e-12);
        assert!((abs - 1.0).abs() < 1e-12);
        let (rel, _) = compare(&[0.0], &[2e-10], 1e-3);
        assert!(rel < 1e-6);
    }

    #[test]
    fn every_layer_kind_passes() {
        let input = Shape3::new(4, 4, 2);
        for layer in [
            LayerSpec::conv3(3),
            LayerSpec::Conv {
                filters: 2,
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            LayerSpec::batch_norm(),
            LayerSpec::ReLU,
            LayerSpec::AvgPool {
                window: 2,
                stride: 2,
            },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Flatten,
        ] {
            let r = layer_gradient_check::<f64>(&layer, input, 3, 7, 1e-6).unwrap();
            assert!(r.max_rel_err < 1e-6, "{}: {:?}", layer.name(), r);
            let r = layer_gradient_check::<f32>(&layer, input, 3, 7, 1e-6).unwrap();
            assert!(r.max_rel_err < 1e-3, "{}: {:?}", layer.name(), r);
        }
        let flat = Shape3::new(1, 1, 6);
        for layer in [LayerSpec::Dense { units: 4 }, LayerSpec::Softmax] {
            let r = layer_gradient_check::<f64>(&layer, flat, 3, 8, 1e-6).unwrap();
            assert!(r.max_rel_err < 1e-6, "{}: {:?}", layer.name(), r);
        }
    }

    #[test]
    fn small_network_passes() {
        let spec = basic_cnn_spec(Shape3::new(6, 6, 2), 3, CnnScale::Micro).unwrap();
        let net: Network<f64> = Network::init(spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::new(vec![3, 6, 6, 2], kink_free(&mut rng, 216)).unwrap();
        let r = gradient_check(&net, &x, &[0, 2, 1], 1e-6, 9).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        assert!(r.entries.iter().any(|e| e.array == "input"));
        let r32 = gradient_check(
            &net.convert::<f32>(),
            &x.map(|v| *v as f32),
            &[0, 2, 1],
            1e-6,
            9,
        )
        .unwrap();
        assert!(r32.max_rel_err < 1e-3, "{r32:?}");
    }
}
