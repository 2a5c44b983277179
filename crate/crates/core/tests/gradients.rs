use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wxclass::nn::{
    basic_cnn_spec, gradient_check, layer_gradient_check, CnnScale, LayerSpec, Network, Shape3,
};
use wxclass::Tensor;

const SEEDS: u64 = 20;

fn layer_cases() -> Vec<(LayerSpec, Shape3)> {
    let map = Shape3::new(5, 4, 2);
    let flat = Shape3::new(1, 1, 7);
    vec![
        (LayerSpec::conv3(3), map),
        (
            LayerSpec::Conv {
                filters: 2,
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            map,
        ),
        (
            LayerSpec::Conv {
                filters: 3,
                kernel: 3,
                stride: 2,
                padding: 2,
            },
            map,
        ),
        (LayerSpec::batch_norm(), map),
        (LayerSpec::ReLU, map),
        (
            LayerSpec::AvgPool {
                window: 2,
                stride: 2,
            },
            Shape3::new(4, 4, 2),
        ),
        (
            LayerSpec::AvgPool {
                window: 3,
                stride: 1,
            },
            map,
        ),
        (LayerSpec::Dropout { rate: 0.25 }, map),
        (LayerSpec::Flatten, map),
        (LayerSpec::Dense { units: 4 }, flat),
        (LayerSpec::Softmax, flat),
    ]
}

#[test]
fn every_layer_f32_across_seeds() {
    let start = Instant::now();
    for seed in 0..SEEDS {
        for (layer, input) in layer_cases() {
            let r = layer_gradient_check::<f32>(&layer, input, 3, seed, 1e-6).unwrap();
            assert!(r.max_rel_err < 1e-3, "{} seed {seed}: {r:?}", layer.name());
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn every_layer_f64_across_seeds() {
    for seed in 0..SEEDS {
        for (layer, input) in layer_cases() {
            let r = layer_gradient_check::<f64>(&layer, input, 2, seed, 1e-6).unwrap();
            assert!(r.max_rel_err < 1e-6, "{} seed {seed}: {r:?}", layer.name());
        }
    }
}

#[test]
fn micro_cnn_f32_across_seeds() {
    let start = Instant::now();
    for seed in 0..SEEDS {
        let spec = basic_cnn_spec(Shape3::new(6, 6, 2), 3, CnnScale::Micro).unwrap();
        let net: Network<f32> = Network::init(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Tensor::new(
            vec![3, 6, 6, 2],
            (0..216).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
        let r = gradient_check(&net, &x, &labels, 1e-6, seed).unwrap();
        assert!(r.max_rel_err < 1e-3, "seed {seed}: {r:?}");
        assert_eq!(r.entries.iter().filter(|e| e.array == "weights").count(), 5);
    }
    assert!(start.elapsed().as_secs() < 60);
}
