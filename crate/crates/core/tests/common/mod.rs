//! Slow reference implementations shared by the integration tests.

#![allow(dead_code)]

/// Direct seven-loop convolution over `[N, H, W, C]` input and
/// `[K, K, C, F]` kernels with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    (n, h, w, c): (usize, usize, usize, usize),
    k: &[f64],
    (ks, f): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; n * oh * ow * f];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..f {
                    let mut acc = bias[o];
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for ci in 0..c {
                                let xv = x[((b * h + iy as usize) * w + ix as usize) * c + ci];
                                let kv = k[((ky * ks + kx) * c + ci) * f + o];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * f + o] = acc;
                }
            }
        }
    }
    (out, [n, oh, ow, f])
}

/// `sinc(x) sinc(x/a)` written from the normalized-sinc definition.
pub fn lanczos_ref(x: f64, a: f64) -> f64 {
    let sinc = |t: f64| {
        if t == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        }
    };
    if x.abs() < a {
        sinc(x) * sinc(x / a)
    } else {
        0.0
    }
}

/// Full 2-D weighted sum: every output pixel visits every source pixel
/// whose separable weight is non-zero, edges clamped.
pub fn brute_resize(
    img: &[f64],
    (h, w, c): (usize, usize, usize),
    oh: usize,
    ow: usize,
    a: usize,
) -> Vec<f64> {
    let a = a as f64;
    let axis = |src: usize, dst: usize, i: usize| -> Vec<(i64, f64)> {
        let scale = src as f64 / dst as f64;
        let s = scale.max(1.0);
        let center = (i as f64 + 0.5) * scale - 0.5;
        let reach = (a * s).ceil() as i64 + 2;
        let base = center.floor() as i64;
        ((base - reach)..=(base + reach))
            .map(|j| (j, lanczos_ref((j as f64 - center) / s, a)))
            .collect()
    };
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        let ys = axis(h, oh, oy);
        for ox in 0..ow {
            let xs = axis(w, ow, ox);
            for ch in 0..c {
                let (mut num, mut den) = (0.0, 0.0);
                for &(j, wy) in &ys {
                    for &(i, wx) in &xs {
                        let weight = wy * wx;
                        let sy = j.clamp(0, h as i64 - 1) as usize;
                        let sx = i.clamp(0, w as i64 - 1) as usize;
                        num += weight * img[(sy * w + sx) * c + ch];
                        den += weight;
                    }
                }
                out[(oy * ow + ox) * c + ch] = (num / den).clamp(0.0, 255.0);
            }
        }
    }
    out
}
