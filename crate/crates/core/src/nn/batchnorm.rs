//! Per-channel batch normalization over the N*H*W positions of an NHWC
//! tensor.

use super::Scalar;
use crate::error::{Error, Result};
use crate::imageio::Tensor;

/// Values saved by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased (population) batch variance.
    pub batch_var: Vec<T>,
    /// Positions averaged per channel (N*H*W).
    pub count: usize,
}

fn channels<T>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<usize> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("batch norm on rank-0 tensor".into()))?;
    if c == 0 || gamma.len() != c || beta.len() != c || x.is_empty() {
        return Err(Error::Shape(format!(
            "batch norm: {} channels but gamma/beta have {}/{}",
            c,
            gamma.len(),
            beta.len()
        )));
    }
    Ok(c)
}

pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    epsilon: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c = channels(x, gamma, beta)?;
    let count = x.len() / c;
    let m = T::lit(count as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (s, &v) in mean.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    mean.iter_mut().for_each(|s| *s = *s / m);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *s = *s + d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s / m);
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + epsilon).sqrt())
        .collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(xh);
            y.push(gamma[ch] * xh + beta[ch]);
        }
    }
    let cache = BatchNormCache {
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
        count,
    };
    Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
}

pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    epsilon: T,
) -> Result<Tensor<T>> {
    let c = channels(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(
            "batch norm running statistics have wrong length".into(),
        ));
    }
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + epsilon).sqrt())
        .collect();
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        for ch in 0..c {
            y.push((row[ch] - running_mean[ch]) * scale[ch] + beta[ch]);
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let c = gamma.len();
    if grad_out.len() != cache.xhat.len() || c == 0 || grad_out.len() != cache.count * c {
        return Err(Error::Shape(
            "batch norm grad_out does not match the forward pass".into(),
        ));
    }
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (dy, xh) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
    {
        for ch in 0..c {
            dbeta[ch] = dbeta[ch] + dy[ch];
            dgamma[ch] = dgamma[ch] + dy[ch] * xh[ch];
        }
    }
    let m = T::lit(cache.count as f64);
    let coef: Vec<T> = (0..c).map(|ch| gamma[ch] * cache.inv_std[ch] / m).collect();
    let mut dx = Vec::with_capacity(grad_out.len());
    for (dy, xh) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
    {
        for ch in 0..c {
            dx.push(coef[ch] * (m * dy[ch] - dbeta[ch] - xh[ch] * dgamma[ch]));
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), dx)?, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-3.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn normalizes_each_channel() {
        let x = random(vec![4, 3, 3, 2], 1);
        let (y, _) = batchnorm_forward_train(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_channel_outputs_beta() {
        let x = Tensor::full(vec![2, 2, 2, 1], 3.5f64);
        let (y, _) = batchnorm_forward_train(&x, &[2.0], &[0.75], 1e-5).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn infer_uses_running_stats() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![3.0f64, -1.0]).unwrap();
        let y =
            batchnorm_forward_infer(&x, &[1.0, 2.0], &[0.0, 1.0], &[1.0, 0.0], &[4.0, 1.0], 0.0)
                .unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn backward_finite_differences() {
        let x = random(vec![3, 2, 2, 2], 2);
        let r = random(vec![3, 2, 2, 2], 3);
        let gamma = [1.3, 0.7];
        let beta = [0.2, -0.4];
        let loss = |x: &Tensor<f64>, g: &[f64], b: &[f64]| -> f64 {
            let (y, _) = batchnorm_forward_train(x, g, b, 1e-5).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = batchnorm_forward_train(&x, &gamma, &beta, 1e-5).unwrap();
        let (dx, dg, db) = batchnorm_backward(&cache, &gamma, &r).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &gamma, &beta) - loss(&m, &gamma, &beta)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{fd} vs {}", dx.data()[i]);
        }
        for ch in 0..2 {
            let mut gp = gamma;
            gp[ch] += eps;
            let mut gm = gamma;
            gm[ch] -= eps;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * eps);
            assert!((fd - dg[ch]).abs() < 1e-6);
            let mut bp = beta;
            bp[ch] += eps;
            let mut bm = beta;
            bm[ch] -= eps;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * eps);
            assert!((fd - db[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_errors() {
        let x = random(vec![1, 2, 2, 3], 4);
        assert!(batchnorm_forward_train(&x, &[1.0; 2], &[0.0; 3], 1e-5).is_err());
        assert!(
            batchnorm_forward_infer(&x, &[1.0; 3], &[0.0; 3], &[0.0; 2], &[1.0; 3], 1e-5).is_err()
        );
    }
}
