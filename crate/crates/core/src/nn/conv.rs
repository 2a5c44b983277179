//! 2-D cross-correlation with zero padding, lowered to a matrix product
//! through a per-sample patch matrix (im2col).
//!
//! Kernels are laid out `[k, k, c_in, c_out]`. Row `p` of the patch matrix
//! holds the receptive field of output pixel `p` in `(ky, kx, c_in)` order,
//! so `out[p, :] = patches[p, :] x kernels + bias`.

use super::spec::{window_out, Shape3};
use super::{dims4, Scalar};
use crate::error::{Error, Result};
use crate::imageio::Tensor;

pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_kernels: Tensor<T>,
    pub grad_bias: Vec<T>,
}

struct Geometry {
    input: Shape3,
    out_h: usize,
    out_w: usize,
    k: usize,
    c_out: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.input.c
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry<T>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias_len: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, Geometry)> {
    let (n, h, w, c) = dims4(x, "conv input")?;
    let (k, k2, kc, c_out) = dims4(kernels, "conv kernels")?;
    if k != k2 || k == 0 {
        return Err(Error::Shape(format!(
            "conv kernels must be square, got {k}x{k2}"
        )));
    }
    if kc != c {
        return Err(Error::Shape(format!(
            "conv expects {kc} input channels, got {c}"
        )));
    }
    if bias_len != c_out {
        return Err(Error::Shape(format!(
            "conv bias has {bias_len} entries for {c_out} filters"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv stride must be at least 1".into()));
    }
    let input = Shape3::new(h, w, c);
    let (out_h, out_w) = window_out(input, k, stride, pad, "conv")?;
    Ok((
        n,
        Geometry {
            input,
            out_h,
            out_w,
            k,
            c_out,
            stride,
            pad,
        },
    ))
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let Shape3 { h, w, c } = g.input;
    let k = g.k;
    let plen = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    let dst = &mut row[(ky * k + kx) * c..][..c];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let Shape3 { h, w, c } = g.input;
    let k = g.k;
    let plen = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = &row[(ky * k + kx) * c..][..c];
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[k x n] += a[m x k]^T * b[m x n]`
pub(crate) fn gemm_at_b_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m x k] = a[m x n] * b[k x n]^T`
pub(crate) fn gemm_a_bt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] = arow
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .fold(T::zero(), |s, (&x, &y)| s + x * y);
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, g) = geometry(x, kernels, bias.len(), stride, pad)?;
    let (plen, pixels) = (g.patch_len(), g.pixels());
    let in_len = g.input.len();
    let out_len = pixels * g.c_out;
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = vec![T::zero(); pixels * plen];
    for b in 0..n {
        im2col(&x.data()[b * in_len..(b + 1) * in_len], &g, &mut cols);
        let y = &mut out[b * out_len..(b + 1) * out_len];
        for row in y.chunks_exact_mut(g.c_out) {
            row.copy_from_slice(bias);
        }
        gemm_acc(&cols, kernels.data(), y, pixels, plen, g.c_out);
    }
    Tensor::new(vec![n, g.out_h, g.out_w, g.c_out], out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let c_out = kernels.shape().get(3).copied().unwrap_or(0);
    let (n, g) = geometry(x, kernels, c_out, stride, pad)?;
    if grad_out.shape() != [n, g.out_h, g.out_w, g.c_out] {
        return Err(Error::Shape(format!(
            "conv grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            [n, g.out_h, g.out_w, g.c_out]
        )));
    }
    let (plen, pixels) = (g.patch_len(), g.pixels());
    let in_len = g.input.len();
    let out_len = pixels * g.c_out;
    let mut grad_x = vec![T::zero(); x.len()];
    let mut grad_k = vec![T::zero(); kernels.len()];
    let mut grad_b = vec![T::zero(); g.c_out];
    let mut cols = vec![T::zero(); pixels * plen];
    let mut dcols = vec![T::zero(); pixels * plen];
    for b in 0..n {
        let dy = &grad_out.data()[b * out_len..(b + 1) * out_len];
        im2col(&x.data()[b * in_len..(b + 1) * in_len], &g, &mut cols);
        gemm_at_b_acc(&cols, dy, &mut grad_k, pixels, plen, g.c_out);
        for row in dy.chunks_exact(g.c_out) {
            for (gb, &d) in grad_b.iter_mut().zip(row) {
                *gb = *gb + d;
            }
        }
        gemm_a_bt(dy, kernels.data(), &mut dcols, pixels, plen, g.c_out);
        col2im_add(&dcols, &g, &mut grad_x[b * in_len..(b + 1) * in_len]);
    }
    Ok(ConvGrads {
        grad_x: Tensor::new(x.shape().to_vec(), grad_x)?,
        grad_kernels: Tensor::new(kernels.shape().to_vec(), grad_k)?,
        grad_bias: grad_b,
    })
}
