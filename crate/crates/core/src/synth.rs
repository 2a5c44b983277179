//! Seeded procedural weather dataset.
//!
//! Each group has its own base colour and each leaf within a group its own
//! texture (stripe orientation, dots, checkerboard or smooth). Textures use
//! random phase, so a linear model on raw pixels can separate the groups
//! but not the leaves inside a group.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::imageio::{encode_ppm, ImageU8};
use crate::pipeline::MemorySource;
use crate::rng::derive_seed;
use crate::taxonomy::{CoarseGroup, LeafClass, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Smooth,
    StripesH,
    StripesV,
    StripesDiag,
    Dots,
    Checker,
}

pub fn texture_of(leaf: LeafClass) -> Texture {
    match leaf {
        LeafClass::Hail | LeafClass::Dew => Texture::Dots,
        LeafClass::Lightning | LeafClass::Frost => Texture::StripesH,
        LeafClass::Rain | LeafClass::Rime => Texture::StripesV,
        LeafClass::Rainbow | LeafClass::FogSmog | LeafClass::Glaze => Texture::Smooth,
        LeafClass::Sandstorm => Texture::StripesDiag,
        LeafClass::Snow => Texture::Checker,
    }
}

fn base_color(group: CoarseGroup) -> [f64; 3] {
    match group {
        CoarseGroup::Rainy => [70.0, 100.0, 170.0],
        CoarseGroup::Dusty => [170.0, 120.0, 60.0],
        CoarseGroup::Cold => [190.0, 200.0, 210.0],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 50,
            size: 64,
            seed: 2024,
        }
    }
}

/// One image; fully determined by `(leaf, group, size, seed)`.
pub fn synth_image(leaf: LeafClass, group: CoarseGroup, size: usize, seed: u64) -> Result<ImageU8> {
    if size < 8 {
        return Err(Error::Config(format!(
            "synthetic images need size >= 8, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = size as f64 / 64.0;
    let period = rng.random_range(10.0..13.0) * scale;
    let phase_x = rng.random_range(0.0..period);
    let phase_y = rng.random_range(0.0..period);
    let tilt = rng.random_range(-8.0f64..8.0).to_radians();
    let amp = rng.random_range(35.0..50.0);
    let mut color = base_color(group);
    for c in &mut color {
        *c += rng.random_range(-15.0..15.0);
    }
    let grad_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let grad_amp = rng.random_range(0.0..15.0);
    let noise = Normal::new(0.0, 8.0).expect("valid sigma");
    let texture = texture_of(leaf);
    let tau = std::f64::consts::TAU;

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let (rx, ry) = (
                fx * tilt.cos() - fy * tilt.sin(),
                fx * tilt.sin() + fy * tilt.cos(),
            );
            let (u, v) = (rx + phase_x, ry + phase_y);
            let t = match texture {
                Texture::Smooth => 0.0,
                Texture::StripesH => (tau * v / period).sin(),
                Texture::StripesV => (tau * u / period).sin(),
                Texture::StripesDiag => (tau * (u + v) / (period * std::f64::consts::SQRT_2)).sin(),
                Texture::Dots => {
                    let du = (u / period).fract() - 0.5;
                    let dv = (v / period).fract() - 0.5;
                    if du * du + dv * dv < 0.06 {
                        1.0
                    } else {
                        -0.3
                    }
                }
                Texture::Checker => {
                    let s = (tau * u / period).sin() * (tau * v / period).sin();
                    if s >= 0.0 {
                        0.8
                    } else {
                        -0.8
                    }
                }
            };
            let g = grad_amp
                * ((fx - size as f64 / 2.0) * grad_dir.cos()
                    + (fy - size as f64 / 2.0) * grad_dir.sin())
                / size as f64;
            for c in color {
                let v: f64 = c + amp * t + g + noise.sample(&mut rng);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageU8::new(size, size, data)
}

/// `per_class` images of every leaf, leaf-major. Image `i` of `leaf` uses
/// seed `derive_seed(cfg.seed, [leaf, i])`.
pub fn generate(cfg: &SynthConfig, taxonomy: &Taxonomy) -> Result<Vec<(LeafClass, ImageU8)>> {
    let mut out = Vec::with_capacity(cfg.per_class * LeafClass::COUNT);
    for leaf in LeafClass::ALL {
        for i in 0..cfg.per_class {
            let seed = derive_seed(cfg.seed, &[leaf.index() as u64, i as u64]);
            out.push((
                leaf,
                synth_image(leaf, taxonomy.group_of(leaf), cfg.size, seed)?,
            ));
        }
    }
    Ok(out)
}

fn image_name(leaf: LeafClass, i: usize) -> String {
    format!("images/{}_{:03}.ppm", leaf.id(), i)
}

/// Writes `images/*.ppm` and `manifest.csv` under `dir`.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    taxonomy: &Taxonomy,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut entries = Vec::new();
    let mut counts = [0usize; LeafClass::COUNT];
    for (leaf, img) in generate(cfg, taxonomy)? {
        let name = image_name(leaf, counts[leaf.index()]);
        counts[leaf.index()] += 1;
        std::fs::write(dir.join(&name), encode_ppm(&img))?;
        entries.push(ManifestEntry::new(name, leaf));
    }
    std::fs::write(dir.join("manifest.csv"), write_manifest(&entries))?;
    Ok(entries)
}

/// The same dataset held in memory.
pub fn memory_dataset(
    cfg: &SynthConfig,
    taxonomy: &Taxonomy,
) -> Result<(Vec<ManifestEntry>, MemorySource)> {
    let mut src = MemorySource::new();
    let mut entries = Vec::new();
    let mut counts = [0usize; LeafClass::COUNT];
    for (leaf, img) in generate(cfg, taxonomy)? {
        let name = image_name(leaf, counts[leaf.index()]);
        counts[leaf.index()] += 1;
        src.insert(name.clone(), img);
        entries.push(ManifestEntry::new(name, leaf));
    }
    Ok((entries, src))
}
