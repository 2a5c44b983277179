use super::layer::{layer_backward, layer_forward, LayerCache};
use super::ops::{softmax_cross_entropy, softmax_forward};
use super::params::{Grads, Params};
use super::spec::{LayerSpec, ModelSpec};
use super::{dims4, Mode, Scalar};
use crate::error::{Error, Result};
use crate::imageio::Tensor;
use crate::rng::derive_seed;

/// A model description together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    params: Params<T>,
}

/// Per-layer inputs and caches from a forward pass, consumed by
/// [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Trace<T> {
    steps: Vec<(Tensor<T>, LayerCache<T>)>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: ModelSpec, params: Params<T>) -> Result<Self> {
        params.validate(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = Params::init(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelSpec, Params<T>) {
        (self.spec, self.params)
    }

    pub fn convert<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.convert(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let (n, h, w, c) = dims4(x, "network input")?;
        let s = self.spec.input();
        if (h, w, c) != (s.h, s.w, s.c) || n == 0 {
            return Err(Error::Shape(format!(
                "network expects [N>=1, {}, {}, {}], got {:?}",
                s.h,
                s.w,
                s.c,
                x.shape()
            )));
        }
        Ok(n)
    }

    /// Runs every layer except the final softmax and returns `[N, n_out]`
    /// logits. In training mode dropout layer `i` uses
    /// `derive_seed(dropout_seed, [i])`.
    pub fn forward_logits(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Trace<T>)> {
        let n = self.check_input(x)?;
        let layers = self.spec.layers();
        let body = &layers[..layers.len() - 1];
        let mut steps = Vec::with_capacity(body.len());
        let mut cur = x.clone();
        for (i, (layer, params)) in body.iter().zip(&self.params.layers).enumerate() {
            let layer_mode = match mode {
                Mode::Train { dropout_seed } => Mode::Train {
                    dropout_seed: derive_seed(dropout_seed, &[i as u64]),
                },
                Mode::Infer => Mode::Infer,
            };
            let (y, cache) = layer_forward(layer, params, &cur, layer_mode)?;
            steps.push((cur, cache));
            cur = y;
        }
        let logits = cur.reshape(vec![n, self.spec.n_out()])?;
        Ok((logits, Trace { steps }))
    }

    /// Inference-mode class probabilities, `[N, n_out]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _) = self.forward_logits(x, Mode::Infer)?;
        softmax_forward(&logits)
    }

    /// [`Network::predict`] in chunks of `batch` samples.
    pub fn predict_batched(&self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        let n = self.check_input(x)?;
        let per = x.len() / n;
        let batch = batch.max(1);
        let mut out = Vec::with_capacity(n * self.spec.n_out());
        let s = self.spec.input();
        for start in (0..n).step_by(batch) {
            let end = (start + batch).min(n);
            let chunk = Tensor::new(
                vec![end - start, s.h, s.w, s.c],
                x.data()[start * per..end * per].to_vec(),
            )?;
            out.extend_from_slice(self.predict(&chunk)?.data());
        }
        Tensor::new(vec![n, self.spec.n_out()], out)
    }

    /// Mean cross-entropy in the given mode.
    pub fn loss(&self, x: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<T> {
        let (logits, _) = self.forward_logits(x, mode)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Backpropagates `grad_logits` (`[N, n_out]`) through the trace.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Grads<T>> {
        let layers = self.spec.layers();
        if trace.steps.len() != layers.len() - 1 {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        let n = trace.steps.first().map(|(x, _)| x.shape()[0]).unwrap_or(0);
        if grad_logits.shape() != [n, self.spec.n_out()] {
            return Err(Error::Shape(format!(
                "grad_logits shape {:?}, expected {:?}",
                grad_logits.shape(),
                [n, self.spec.n_out()]
            )));
        }
        let mut grads: Vec<_> = Vec::with_capacity(layers.len());
        let mut g = grad_logits
            .clone()
            .reshape(vec![n, 1, 1, self.spec.n_out()])?;
        for (i, (x, cache)) in trace.steps.iter().enumerate().rev() {
            let (dx, lg) = layer_backward(&layers[i], &self.params.layers[i], x, cache, &g)?;
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        grads.push(super::params::LayerGrads::none());
        Ok(Grads {
            layers: grads,
            input: g,
        })
    }

    /// Folds the batch statistics of a training trace into the running
    /// statistics: `running = (1 - m) * running + m * batch`, using the
    /// unbiased batch variance.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        for (i, (_, cache)) in trace.steps.iter().enumerate() {
            let (LayerSpec::BatchNorm { momentum, .. }, LayerCache::BatchNorm(c)) =
                (&self.spec.layers()[i], cache)
            else {
                continue;
            };
            let m = T::lit(f64::from(*momentum));
            let keep = T::one() - m;
            let unbias = if c.count > 1 {
                T::lit(c.count as f64 / (c.count - 1) as f64)
            } else {
                T::one()
            };
            let p = &mut self.params.layers[i];
            for (r, &b) in p.running_mean.data_mut().iter_mut().zip(&c.batch_mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in p.running_var.data_mut().iter_mut().zip(&c.batch_var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{basic_cnn_spec, CnnScale, Shape3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn predict_rows_sum_to_one() {
        let spec = basic_cnn_spec(Shape3::new(8, 8, 3), 4, CnnScale::Micro).unwrap();
        let net: Network<f32> = Network::init(spec, 1).unwrap();
        let x = random(vec![5, 8, 8, 3], 2);
        let p = net.predict(&x).unwrap();
        assert_eq!(p.shape(), &[5, 4]);
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        assert_eq!(net.predict_batched(&x, 2).unwrap(), p);
    }

    #[test]
    fn duplicate_rows_identical() {
        let spec = basic_cnn_spec(Shape3::new(8, 8, 3), 3, CnnScale::Micro).unwrap();
        let net: Network<f32> = Network::init(spec, 3).unwrap();
        let one = random(vec![1, 8, 8, 3], 4);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let p = net
            .predict(&Tensor::new(vec![2, 8, 8, 3], data).unwrap())
            .unwrap();
        assert_eq!(p.data()[..3], p.data()[3..]);
    }

    #[test]
    fn zero_input_gives_uniform() {
        let spec = basic_cnn_spec(Shape3::new(8, 8, 3), 5, CnnScale::Micro).unwrap();
        let net: Network<f32> = Network::init(spec, 5).unwrap();
        let p = net.predict(&Tensor::zeros(vec![2, 8, 8, 3])).unwrap();
        assert!(p.data().iter().all(|v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn rejects_wrong_input() {
        let spec = basic_cnn_spec(Shape3::new(8, 8, 3), 2, CnnScale::Micro).unwrap();
        let net: Network<f32> = Network::init(spec, 5).unwrap();
        assert!(matches!(
            net.predict(&Tensor::zeros(vec![1, 8, 9, 3])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            net.predict(&Tensor::zeros(vec![8, 8, 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let spec = basic_cnn_spec(Shape3::new(8, 8, 3), 2, CnnScale::Micro).unwrap();
        let mut net: Network<f32> = Network::init(spec, 6).unwrap();
        let x = random(vec![4, 8, 8, 3], 7).map(|v| v + 3.0);
        let (_, trace) = net
            .forward_logits(&x, Mode::Train { dropout_seed: 1 })
            .unwrap();
        net.update_running_stats(&trace);
        let bn = &net.params().layers[1];
        assert!(bn.running_mean.data().iter().any(|v| *v != 0.0));
        assert!(bn.running_var.data().iter().all(|v| *v >= 0.0));
    }
}
