use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::spec::{shape_infer, LayerSpec, ModelSpec};
use super::Scalar;
use crate::error::{Error, Result};
use crate::imageio::Tensor;
use crate::rng::derive_seed;

/// Trainable and running arrays of one layer. Layers without parameters
/// hold empty tensors.
///
/// | layer      | weights               | bias     | running_mean / running_var |
/// |------------|-----------------------|----------|----------------------------|
/// | Conv       | `[k, k, c_in, c_out]` | `[c_out]`| empty                      |
/// | BatchNorm  | gamma `[c]`           | beta `[c]` | `[c]` each               |
/// | Dense      | `[in, out]`           | `[out]`  | empty                      |
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

fn empty<T>() -> Tensor<T> {
    Tensor::new(vec![0], Vec::new()).expect("empty tensor")
}

impl<T: Scalar> LayerParams<T> {
    pub fn none() -> Self {
        Self {
            weights: empty(),
            bias: empty(),
            running_mean: empty(),
            running_var: empty(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty() && self.bias.is_empty()
    }

    fn convert<U: Scalar>(&self) -> LayerParams<U> {
        let c = |t: &Tensor<T>| t.map(|v| U::lit(v.as_f64()));
        LayerParams {
            weights: c(&self.weights),
            bias: c(&self.bias),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

type ShapeTriple = (Vec<usize>, Vec<usize>, bool);

/// Expected `(weights, bias, running)` shapes for each layer.
pub(crate) fn expected_shapes(spec: &ModelSpec) -> Result<Vec<Option<ShapeTriple>>> {
    let shapes = shape_infer(spec)?;
    let mut input = spec.input();
    let mut out = Vec::with_capacity(shapes.len());
    for (layer, &next) in spec.layers().iter().zip(&shapes) {
        out.push(match *layer {
            LayerSpec::Conv {
                filters, kernel, ..
            } => Some((vec![kernel, kernel, input.c, filters], vec![filters], false)),
            LayerSpec::BatchNorm { .. } => Some((vec![input.c], vec![input.c], true)),
            LayerSpec::Dense { units } => Some((vec![input.len(), units], vec![units], false)),
            _ => None,
        });
        input = next;
    }
    Ok(out)
}

impl<T: Scalar> Params<T> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases, unit
    /// batch-norm scale, zero running mean and unit running variance. Layer
    /// `i` draws from ChaCha8 seeded with `derive_seed(seed, [i])`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.layers().len());
        for (i, shapes) in expected_shapes(spec)?.into_iter().enumerate() {
            let Some((wshape, bshape, running)) = shapes else {
                layers.push(LayerParams::none());
                continue;
            };
            let p = if running {
                let c = wshape[0];
                LayerParams {
                    weights: Tensor::full(wshape, T::one()),
                    bias: Tensor::zeros(bshape),
                    running_mean: Tensor::zeros(vec![c]),
                    running_var: Tensor::full(vec![c], T::one()),
                }
            } else {
                let fan_in: usize = wshape[..wshape.len() - 1].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
                let n: usize = wshape.iter().product();
                let w: Vec<T> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(z * std)
                    })
                    .collect();
                LayerParams {
                    weights: Tensor::new(wshape, w)?,
                    bias: Tensor::zeros(bshape),
                    running_mean: empty(),
                    running_var: empty(),
                }
            };
            layers.push(p);
        }
        Ok(Self { layers })
    }

    /// All-zero parameters of the right shapes (batch-norm running
    /// variance stays 1).
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let mut p = Self::init(spec, 0)?;
        for l in &mut p.layers {
            l.weights.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(p)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let expected = expected_shapes(spec)?;
        if expected.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks for {} layers",
                self.layers.len(),
                expected.len()
            )));
        }
        for (i, (p, e)) in self.layers.iter().zip(expected).enumerate() {
            let ok = match e {
                None => p.is_empty(),
                Some((w, b, running)) => {
                    p.weights.shape() == w.as_slice()
                        && p.bias.shape() == b.as_slice()
                        && (!running
                            || (p.running_mean.shape() == b.as_slice()
                                && p.running_var.shape() == b.as_slice()
                                && p.running_var.data().iter().all(|v| *v >= T::zero())))
                }
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "layer {i}: parameter shapes do not match the model layout"
                )));
            }
        }
        Ok(())
    }

    pub fn convert<U: Scalar>(&self) -> Params<U> {
        Params {
            layers: self.layers.iter().map(LayerParams::convert).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            [&l.weights, &l.bias, &l.running_mean, &l.running_var]
                .iter()
                .all(|t| t.data().iter().all(|v| v.is_finite()))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T> LayerGrads<T> {
    pub fn none() -> Self {
        Self {
            weights: Vec::new(),
            bias: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<LayerGrads<T>>,
    /// Gradient with respect to the network input.
    pub input: Tensor<T>,
}
