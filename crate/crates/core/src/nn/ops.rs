//! Parameter-free layers, the dense layer, softmax and the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{window_out, Shape3};
use super::{dims4, Scalar};
use crate::error::{Error, Result};
use crate::imageio::Tensor;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|&v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(x, grad_out, "relu")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: gradient shape {:?} does not match {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

fn pool_dims(
    x_shape: &[usize],
    window: usize,
    stride: usize,
) -> Result<(usize, Shape3, usize, usize)> {
    let (n, h, w, c) = match *x_shape {
        [n, h, w, c] => (n, h, w, c),
        ref s => {
            return Err(Error::Shape(format!(
                "avg_pool: expected rank-4 input, got {s:?}"
            )))
        }
    };
    if window == 0 || stride == 0 {
        return Err(Error::Shape(
            "avg_pool: window and stride must be at least 1".into(),
        ));
    }
    let input = Shape3::new(h, w, c);
    let (oh, ow) = window_out(input, window, stride, 0, "avg_pool")?;
    Ok((n, input, oh, ow))
}

pub fn avgpool_forward<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, s, oh, ow) = pool_dims(x.shape(), window, stride)?;
    let c = s.c;
    let scale = T::one() / T::lit((window * window) as f64);
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        let xin = &x.data()[b * s.len()..(b + 1) * s.len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out[((b * oh + oy) * ow + ox) * c..][..c];
                for ky in 0..window {
                    for kx in 0..window {
                        let src = ((oy * stride + ky) * s.w + ox * stride + kx) * c;
                        for (d, &v) in dst.iter_mut().zip(&xin[src..src + c]) {
                            *d = *d + v;
                        }
                    }
                }
                dst.iter_mut().for_each(|d| *d = *d * scale);
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out)
}

pub fn avgpool_backward<T: Scalar>(
    x_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, s, oh, ow) = pool_dims(x_shape, window, stride)?;
    let c = s.c;
    if grad_out.shape() != [n, oh, ow, c] {
        return Err(Error::Shape(format!(
            "avg_pool: grad_out shape {:?} does not match {:?}",
            grad_out.shape(),
            [n, oh, ow, c]
        )));
    }
    let scale = T::one() / T::lit((window * window) as f64);
    let mut dx = vec![T::zero(); n * s.len()];
    for b in 0..n {
        let dxb = &mut dx[b * s.len()..(b + 1) * s.len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let dy = &grad_out.data()[((b * oh + oy) * ow + ox) * c..][..c];
                for ky in 0..window {
                    for kx in 0..window {
                        let dst = ((oy * stride + ky) * s.w + ox * stride + kx) * c;
                        for (d, &g) in dxb[dst..dst + c].iter_mut().zip(dy) {
                            *d = *d + g * scale;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Inverted-dropout multipliers: each entry is `0` with probability `rate`
/// and `1 / (1 - rate)` otherwise, drawn from ChaCha8 seeded with `seed`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, seed: u64) -> Vec<T> {
    if rate <= 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// `y = x W + b` on `[N, 1, 1, F]` inputs with `W` laid out `[F, U]`.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (n, f, u) = dense_dims(x, weights, bias.len())?;
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    super::conv::gemm_acc(x.data(), weights.data(), &mut out, n, f, u);
    Tensor::new(vec![n, 1, 1, u], out)
}

fn dense_dims<T>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias_len: usize,
) -> Result<(usize, usize, usize)> {
    let (n, h, w, f) = dims4(x, "dense input")?;
    if h != 1 || w != 1 {
        return Err(Error::Shape(format!(
            "dense expects [N, 1, 1, F], got {:?}",
            x.shape()
        )));
    }
    match *weights.shape() {
        [wf, u] if wf == f && u == bias_len => Ok((n, f, u)),
        ref s => Err(Error::Shape(format!(
            "dense weights {s:?} / bias {bias_len} do not fit {f} input features"
        ))),
    }
}

/// Returns `(grad_x, grad_weights, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let u = weights.shape().get(1).copied().unwrap_or(0);
    let (n, f, u) = dense_dims(x, weights, u)?;
    if grad_out.shape() != [n, 1, 1, u] {
        return Err(Error::Shape(format!(
            "dense grad_out {:?} expected {:?}",
            grad_out.shape(),
            [n, 1, 1, u]
        )));
    }
    let mut dw = vec![T::zero(); f * u];
    super::conv::gemm_at_b_acc(x.data(), grad_out.data(), &mut dw, n, f, u);
    let mut db = vec![T::zero(); u];
    for row in grad_out.data().chunks_exact(u) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let mut dx = vec![T::zero(); n * f];
    super::conv::gemm_a_bt(grad_out.data(), weights.data(), &mut dx, n, f, u);
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(vec![f, u], dw)?,
        db,
    ))
}

fn rows<T>(x: &Tensor<T>) -> Result<usize> {
    match x.shape().last() {
        Some(&k) if k > 0 => Ok(k),
        _ => Err(Error::Shape(format!(
            "softmax needs a non-empty last axis, got {:?}",
            x.shape()
        ))),
    }
}

/// Row-wise softmax over the last axis, with max subtraction.
pub fn softmax_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let k = rows(x)?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / sum);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `dx = y * (dy - sum(dy * y))` per row.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(y, grad_out, "softmax")?;
    let k = rows(y)?;
    let mut dx = Vec::with_capacity(y.len());
    for (yr, dr) in y
        .data()
        .chunks_exact(k)
        .zip(grad_out.data().chunks_exact(k))
    {
        let dot = yr.iter().zip(dr).fold(T::zero(), |s, (&a, &b)| s + a * b);
        dx.extend(yr.iter().zip(dr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(y.shape().to_vec(), dx)
}

/// Mean cross-entropy of probability rows against one-hot rows.
///
/// The returned gradient is with respect to the logits that produced
/// `probs` through softmax: `(probs - targets) / N`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    same_shape(probs, targets, "cross_entropy")?;
    let k = rows(probs)?;
    let n = probs.len() / k;
    let tiny = T::min_positive_value();
    let mut loss = T::zero();
    for (p, t) in probs.data().iter().zip(targets.data()) {
        if *t != T::zero() {
            loss = loss - *t * p.max(tiny).ln();
        }
    }
    let inv_n = T::one() / T::lit(n as f64);
    let grad = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| (p - t) * inv_n)
        .collect();
    Ok((loss * inv_n, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// Fused softmax + cross-entropy on `[N, K]` logits and integer labels.
/// Returns `(mean loss, probabilities, gradient w.r.t. logits)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let k = rows(logits)?;
    let n = logits.len() / k;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let probs = softmax_forward(logits)?;
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = probs.data().to_vec();
    for (i, (&label, row)) in labels.iter().zip(logits.data().chunks_exact(k)).enumerate() {
        if label >= k {
            return Err(Error::LabelRange { label, n: k });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln() + max;
        loss = loss + (lse - row[label]);
        grad[i * k + label] = grad[i * k + label] - T::one();
    }
    grad.iter_mut().for_each(|g| *g = *g * inv_n);
    Ok((
        loss * inv_n,
        probs,
        Tensor::new(logits.shape().to_vec(), grad)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn fd_check(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &[f64]) {
        let eps = 1e-6;
        assert_eq!(analytic.len(), x.len());
        for (i, &want) in analytic.iter().enumerate() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - want).abs() < 1e-7, "index {i}: {fd} vs {want}");
        }
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::new(vec![2], vec![-1.0f64, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::new(vec![2], vec![5.0, 7.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0]);
    }

    #[test]
    fn pool_values_and_gradient() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_forward(&x, 2, 2).unwrap().data(), &[2.5]);
        let x = random(vec![2, 5, 4, 3], 1);
        let r = random(vec![2, 2, 2, 3], 2);
        let g = avgpool_backward(x.shape(), 2, 2, &r).unwrap();
        fd_check(
            |x| dot(&avgpool_forward(x, 2, 2).unwrap(), &r),
            &x,
            g.data(),
        );
    }

    #[test]
    fn dropout_modes() {
        let m: Vec<f64> = dropout_mask(10, 0.0, 1);
        assert!(m.iter().all(|&v| v == 1.0));
        let m: Vec<f64> = dropout_mask(10_000, 0.25, 9);
        let kept = m.iter().filter(|&&v| v != 0.0).count();
        assert!((7300..7700).contains(&kept));
        assert!(m.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        assert_eq!(m, dropout_mask::<f64>(10_000, 0.25, 9));
    }

    #[test]
    fn dense_gradient() {
        let x = random(vec![3, 1, 1, 4], 3);
        let w = random(vec![4, 2], 4);
        let b = [0.5, -0.5];
        let r = random(vec![3, 1, 1, 2], 5);
        let (dx, dw, db) = dense_backward(&x, &w, &r).unwrap();
        fd_check(
            |x| dot(&dense_forward(x, &w, &b).unwrap(), &r),
            &x,
            dx.data(),
        );
        fd_check(
            |w| dot(&dense_forward(&x, w, &b).unwrap(), &r),
            &w,
            dw.data(),
        );
        let sums: Vec<f64> = (0..2)
            .map(|j| r.data().iter().skip(j).step_by(2).sum())
            .collect();
        assert!((db[0] - sums[0]).abs() < 1e-12 && (db[1] - sums[1]).abs() < 1e-12);
        assert!(dense_forward(&random(vec![1, 2, 1, 2], 1), &w, &b).is_err());
    }

    #[test]
    fn softmax_properties() {
        let z = Tensor::new(vec![1, 3], vec![0.0f64, 0.0, 0.0]).unwrap();
        let p = softmax_forward(&z).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let big = Tensor::new(vec![1, 2], vec![1000.0f32, 0.0]).unwrap();
        let p = softmax_forward(&big).unwrap();
        assert!(p.all_finite());
        assert_eq!(p.data()[0], 1.0);
        let x = random(vec![2, 4], 6);
        let shifted = x.map(|v| v + 12.5);
        let (a, b) = (
            softmax_forward(&x).unwrap(),
            softmax_forward(&shifted).unwrap(),
        );
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
        let r = random(vec![2, 4], 7);
        let y = softmax_forward(&x).unwrap();
        let g = softmax_backward(&y, &r).unwrap();
        fd_check(|x| dot(&softmax_forward(x).unwrap(), &r), &x, g.data());
    }

    #[test]
    fn cross_entropy_values() {
        let t = Tensor::new(vec![1, 3], vec![0.0f64, 1.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy(&t, &t).unwrap();
        assert!(loss.abs() <= 1e-6);
        let uniform = Tensor::full(vec![1, 11], 1.0f64 / 11.0);
        let mut target = vec![0.0; 11];
        target[4] = 1.0;
        let target = Tensor::new(vec![1, 11], target).unwrap();
        let (loss, grad) = cross_entropy(&uniform, &target).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
        assert!((loss - 2.3979).abs() < 1e-4);
        assert!((grad.data()[4] - (1.0 / 11.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fused_gradient_matches_fd() {
        let z = random(vec![3, 5], 8);
        let labels = [1, 4, 0];
        let (_, probs, g) = softmax_cross_entropy(&z, &labels).unwrap();
        fd_check(
            |z| softmax_cross_entropy(z, &labels).unwrap().0,
            &z,
            g.data(),
        );
        let mut onehot = vec![0.0; 15];
        for (i, &l) in labels.iter().enumerate() {
            onehot[i * 5 + l] = 1.0;
        }
        let (_, g2) = cross_entropy(&probs, &Tensor::new(vec![3, 5], onehot).unwrap()).unwrap();
        for (a, b) in g.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            softmax_cross_entropy(&z, &[0, 5, 1]),
            Err(Error::LabelRange { .. })
        ));
    }
}
