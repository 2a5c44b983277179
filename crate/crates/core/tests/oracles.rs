//! Fast paths against slow, independently written reference implementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wxclass::nn::{
    conv2d_forward, gradient_check, softmax_cross_entropy, LayerParams, LayerSpec, Mode, ModelSpec,
    Network, Params, Shape3,
};
use wxclass::preprocess::{lanczos_kernel, resize_lanczos_with};
use wxclass::Tensor;

mod common;
use common::{brute_resize, lanczos_ref, naive_conv};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut cases = 0;
    while cases < 60 {
        let ks = rng.random_range(1..=4usize);
        let stride = rng.random_range(1..=3usize);
        let pad = rng.random_range(0..=2usize);
        let (n, c, f) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=5),
        );
        let (h, w) = (rng.random_range(1..=9usize), rng.random_range(1..=9usize));
        if h + 2 * pad < ks || w + 2 * pad < ks {
            continue;
        }
        let x = random_vec(&mut rng, n * h * w * c);
        let k = random_vec(&mut rng, ks * ks * c * f);
        let bias = random_vec(&mut rng, f);
        let (want, shape) = naive_conv(&x, (n, h, w, c), &k, (ks, f), &bias, stride, pad);

        let xt = Tensor::new(vec![n, h, w, c], x.clone()).unwrap();
        let kt = Tensor::new(vec![ks, ks, c, f], k.clone()).unwrap();
        let got = conv2d_forward(&xt, &kt, &bias, stride, pad).unwrap();
        assert_eq!(got.shape(), shape);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, e) in got.data().iter().zip(&want) {
            assert!(
                (g - e).abs() <= 1e-12 * scale,
                "f64 case {cases}: {g} vs {e}"
            );
        }

        let got32 = conv2d_forward(
            &xt.map(|v| *v as f32),
            &kt.map(|v| *v as f32),
            &bias.iter().map(|v| *v as f32).collect::<Vec<_>>(),
            stride,
            pad,
        )
        .unwrap();
        for (g, e) in got32.data().iter().zip(&want) {
            assert!(
                (f64::from(*g) - e).abs() <= 1e-5 * scale,
                "f32 case {cases}: {g} vs {e}"
            );
        }
        cases += 1;
    }
}

#[test]
fn lanczos_separable_matches_brute_force_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..30 {
        let (h, w) = (rng.random_range(1..=20usize), rng.random_range(1..=20usize));
        let (oh, ow) = (rng.random_range(1..=24usize), rng.random_range(1..=24usize));
        let a = rng.random_range(2..=4usize);
        let img: Vec<f64> = (0..h * w * 3)
            .map(|_| f64::from(rng.random_range(0u8..=255)))
            .collect();
        let t = Tensor::new(vec![h, w, 3], img.iter().map(|&v| v as f32).collect()).unwrap();
        let got = resize_lanczos_with(&t, oh, ow, a).unwrap();
        let want = brute_resize(&img, (h, w, 3), oh, ow, a);
        for (g, e) in got.data().iter().zip(&want) {
            let tol = 1e-5 * e.abs().max(1.0);
            assert!(
                (f64::from(*g) - e).abs() <= tol,
                "case {case} ({h}x{w} -> {oh}x{ow}, a={a}): {g} vs {e}"
            );
        }
    }
}

#[test]
fn lanczos_kernel_matches_reference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for _ in 0..1000 {
        let x = rng.random_range(-4.0..4.0);
        for a in 1..=4 {
            assert!((lanczos_kernel(x, a) - lanczos_ref(x, a as f64)).abs() < 1e-12);
        }
    }
    // sinc(1/2) sinc(1/6) = (2 / pi) (3 / pi)
    let expected = 6.0 / std::f64::consts::PI.powi(2);
    assert!((lanczos_kernel(0.5, 3) - expected).abs() < 1e-14);
    assert!((expected - 0.607927).abs() < 1e-6);
}

fn dense_only_spec() -> ModelSpec {
    ModelSpec::new(
        Shape3::new(1, 1, 5),
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 6 },
            LayerSpec::Dense { units: 4 },
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
        3,
    )
    .unwrap()
}

#[test]
fn dense_only_network_gradients_f64() {
    for seed in 0..10 {
        let net: Network<f64> = Network::init(dense_only_spec(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let x = Tensor::new(vec![4, 1, 1, 5], random_vec(&mut rng, 20)).unwrap();
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let r = gradient_check(&net, &x, &labels, 1e-6, 0).unwrap();
        assert!(r.max_rel_err < 1e-6, "seed {seed}: {r:?}");
    }
}

#[test]
fn dead_relu_passes_exactly_zero_gradient() {
    let spec = ModelSpec::new(
        Shape3::new(1, 1, 5),
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4 },
            LayerSpec::ReLU,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
        3,
    )
    .unwrap();
    let init: Network<f64> = Network::init(spec.clone(), 1).unwrap();
    let (_, mut params): (_, Params<f64>) = init.into_parts();
    let first: &mut LayerParams<f64> = &mut params.layers[1];
    first.bias = Tensor::full(vec![4], -100.0);
    let net = Network::new(spec, params).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::new(vec![3, 1, 1, 5], random_vec(&mut rng, 15)).unwrap();
    let (logits, trace) = net.forward_logits(&x, Mode::Infer).unwrap();
    let (_, _, grad) = softmax_cross_entropy(&logits, &[0, 1, 2]).unwrap();
    let g = net.backward(&trace, &grad).unwrap();
    assert!(g.layers[1].weights.iter().all(|&v| v == 0.0));
    assert!(g.layers[1].bias.iter().all(|&v| v == 0.0));
    assert!(g.input.data().iter().all(|&v| v == 0.0));
    assert!(g.layers[3].bias.iter().any(|&v| v != 0.0));
}
