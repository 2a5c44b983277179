//! Model bundles: a directory holding every file a trained model needs.
//!
//! ```text
//! bundle.toml     manifest (format, format_version, kind, preset, input_size, file roles)
//! taxonomy.toml   taxonomy the model was trained with
//! stats.toml      shared standardization statistics
//! <role>.wxm      one WXM1 file per network
//! ```
//!
//! A hierarchical bundle has the roles `primary`, `rainy`, `dusty`,
//! `cold_fine` and `cold_safety`; a flat bundle has the single role `flat`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hierarchy::{FlatModel, HierarchicalModel, Role};
use crate::model_file::{decode_model, encode_model, ModelFile};
use crate::pipeline::Preset;
use crate::preprocess::Normalizer;
use crate::taxonomy::{load_taxonomy, CoarseGroup};

pub const BUNDLE_FORMAT: &str = "wxclass-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "bundle.toml";
const TAXONOMY_FILE: &str = "taxonomy.toml";
const STATS_FILE: &str = "stats.toml";
const FLAT_ROLE: &str = "flat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    format_version: u32,
    kind: String,
    preset: String,
    input_size: usize,
    taxonomy: String,
    stats: String,
    models: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Bundle {
    Hierarchical(HierarchicalModel),
    Flat(FlatModel),
}

impl Bundle {
    pub fn kind(&self) -> &'static str {
        match self {
            Bundle::Hierarchical(_) => "hierarchical",
            Bundle::Flat(_) => "flat",
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Bundle::Hierarchical(m) => m.input_size(),
            Bundle::Flat(m) => m.input_size(),
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        match self {
            Bundle::Hierarchical(m) => m.normalizer(),
            Bundle::Flat(m) => &m.normalizer,
        }
    }
}

/// Every file of a bundle as `(name, bytes)`, manifest first.
fn render(bundle: &Bundle) -> Result<Vec<(String, Vec<u8>)>> {
    let (taxonomy, normalizer, preset, models): (_, _, _, Vec<(String, ModelFile)>) = match bundle {
        Bundle::Hierarchical(m) => (
            m.taxonomy(),
            *m.normalizer(),
            Preset::Hierarchical,
            Role::ALL
                .into_iter()
                .map(|r| {
                    let file = ModelFile {
                        network: m.network(r).clone(),
                        normalizer: *m.normalizer(),
                    };
                    (r.id().to_string(), file)
                })
                .collect(),
        ),
        Bundle::Flat(m) => (
            &m.taxonomy,
            m.normalizer,
            m.preset,
            vec![(
                FLAT_ROLE.to_string(),
                ModelFile {
                    network: m.network.clone(),
                    normalizer: m.normalizer,
                },
            )],
        ),
    };
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        format_version: BUNDLE_VERSION,
        kind: bundle.kind().into(),
        preset: preset.id().into(),
        input_size: bundle.input_size(),
        taxonomy: TAXONOMY_FILE.into(),
        stats: STATS_FILE.into(),
        models: models
            .iter()
            .map(|(role, _)| (role.clone(), format!("{role}.wxm")))
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let mut files = vec![
        (MANIFEST_FILE.to_string(), text.into_bytes()),
        (
            TAXONOMY_FILE.to_string(),
            taxonomy.to_config_string().into_bytes(),
        ),
        (
            STATS_FILE.to_string(),
            normalizer.to_stats_file().into_bytes(),
        ),
    ];
    for (role, file) in &models {
        files.push((format!("{role}.wxm"), encode_model(file)?));
    }
    Ok(files)
}

fn hash_files(files: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the bundle into `dir` (created if needed) and returns its hash.
pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<String> {
    let files = render(bundle)?;
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(hash_files(&files))
}

fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let value: toml::Table =
        toml::from_str(text).map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(BUNDLE_FORMAT) {
        return Err(Error::Format(format!(
            "{MANIFEST_FILE} is not a {BUNDLE_FORMAT} manifest"
        )));
    }
    match value.get("format_version").and_then(|v| v.as_integer()) {
        Some(v) if v == i64::from(BUNDLE_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                expected: BUNDLE_VERSION.to_string(),
                found: v.to_string(),
            });
        }
        None => {
            return Err(Error::Format(format!(
                "{MANIFEST_FILE} lacks format_version"
            )))
        }
    }
    toml::from_str(text).map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))
}

fn file_name(name: &str) -> Result<&str> {
    let p = Path::new(name);
    if p.components().count() != 1 || p.is_absolute() || name == ".." {
        return Err(Error::Format(format!(
            "bundle file `{name}` must be a plain file name"
        )));
    }
    Ok(name)
}

/// Loads a bundle and returns it with its hash.
pub fn load_bundle(dir: &Path) -> Result<(Bundle, String)> {
    let read = |name: &str| -> Result<(String, Vec<u8>)> {
        let name = file_name(name)?;
        Ok((name.to_string(), std::fs::read(dir.join(name))?))
    };
    let manifest_file = read(MANIFEST_FILE)?;
    let manifest = parse_manifest(&manifest_file.1)?;
    let taxonomy_file = read(&manifest.taxonomy)?;
    let stats_file = read(&manifest.stats)?;
    let taxonomy =
        load_taxonomy(&taxonomy_file.1).map_err(|e| Error::Format(format!("taxonomy: {e}")))?;
    let normalizer = Normalizer::from_stats_file(&stats_file.1)
        .map_err(|e| Error::Format(format!("stats: {e}")))?;
    let preset: Preset = manifest
        .preset
        .parse()
        .map_err(|e| Error::Format(format!("{e}")))?;

    let roles: Vec<&str> = match manifest.kind.as_str() {
        "hierarchical" => Role::ALL.iter().map(|r| r.id()).collect(),
        "flat" => vec![FLAT_ROLE],
        other => return Err(Error::Format(format!("unknown bundle kind `{other}`"))),
    };
    if manifest.models.len() != roles.len() {
        return Err(Error::Format(format!(
            "{} bundle needs roles {}",
            manifest.kind,
            roles.join(", ")
        )));
    }
    let mut files = vec![manifest_file, taxonomy_file, stats_file];
    let mut nets = Vec::with_capacity(roles.len());
    for role in &roles {
        let name = manifest
            .models
            .get(*role)
            .ok_or_else(|| Error::Format(format!("bundle is missing the `{role}` model")))?;
        let file = read(name)?;
        let model = decode_model(&file.1)?;
        if model.normalizer != normalizer {
            return Err(Error::Format(format!(
                "{name}: statistics differ from {}",
                manifest.stats
            )));
        }
        if model.network.spec().input().h != manifest.input_size {
            return Err(Error::Format(format!(
                "{name}: input size differs from the manifest"
            )));
        }
        nets.push(model.network);
        files.push(file);
    }
    let bundle = if roles.len() == 1 {
        let network = nets.pop().expect("one network");
        Bundle::Flat(FlatModel {
            network,
            taxonomy,
            normalizer,
            preset,
        })
    } else {
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("five networks");
        let (primary, rainy, dusty, cold, safety) = (next(), next(), next(), next(), next());
        let model =
            HierarchicalModel::new(primary, [rainy, dusty, cold], safety, taxonomy, normalizer)
                .map_err(|e| Error::Format(e.to_string()))?;
        Bundle::Hierarchical(model)
    };
    Ok((bundle, hash_files(&files)))
}

pub fn save_hierarchical(dir: &Path, model: &HierarchicalModel) -> Result<String> {
    save_bundle(dir, &Bundle::Hierarchical(model.clone()))
}

pub fn load_hierarchical(dir: &Path) -> Result<HierarchicalModel> {
    match load_bundle(dir)?.0 {
        Bundle::Hierarchical(m) => Ok(m),
        Bundle::Flat(_) => Err(Error::Format("bundle holds a flat model".into())),
    }
}

/// Sub-model class lists, for reports: `group -> leaf ids`.
pub fn class_lists(model: &HierarchicalModel) -> BTreeMap<String, Vec<String>> {
    CoarseGroup::ALL
        .into_iter()
        .map(|g| {
            (
                g.id().to_string(),
                model
                    .classes(g)
                    .iter()
                    .map(|l| l.id().to_string())
                    .collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Tensor;
    use crate::nn::Network;
    use crate::pipeline::ArchConfig;
    use crate::preprocess::NormalizationStats;
    use crate::taxonomy::default_taxonomy;

    fn model() -> HierarchicalModel {
        let n = Normalizer::Global(NormalizationStats::new(117.123456789, 61.5, 40).unwrap());
        let arch = ArchConfig {
            input_size: 8,
            ..Default::default()
        };
        HierarchicalModel::random(&arch, default_taxonomy(), n, 9).unwrap()
    }

    #[test]
    fn hierarchical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let hash = save_hierarchical(dir.path(), &m).unwrap();
        assert_eq!(hash.len(), 64);
        let (loaded, hash2) = load_bundle(dir.path()).unwrap();
        assert_eq!(hash, hash2);
        assert_eq!(loaded, Bundle::Hierarchical(m.clone()));
        let x = Tensor::full(vec![3, 8, 8, 3], 0.3f32);
        assert_eq!(
            load_hierarchical(dir.path())
                .unwrap()
                .predict_batch(&x)
                .unwrap(),
            m.predict_batch(&x).unwrap()
        );
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".wxm"))
            .collect();
        assert_eq!(names.len(), 5);
    }

    #[test]
    fn flat_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchConfig {
            input_size: 8,
            preset: Preset::SoftmaxFlat,
            ..Default::default()
        };
        let flat = FlatModel {
            network: Network::init(arch.model_spec(11).unwrap(), 1).unwrap(),
            taxonomy: default_taxonomy(),
            normalizer: Normalizer::Global(NormalizationStats::new(1.0, 2.0, 3).unwrap()),
            preset: Preset::SoftmaxFlat,
        };
        save_bundle(dir.path(), &Bundle::Flat(flat.clone())).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap().0, Bundle::Flat(flat));
        assert!(matches!(
            load_hierarchical(dir.path()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        save_hierarchical(dir.path(), &model()).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(
            &manifest,
            text.replace("format_version = 1", "format_version = 2"),
        )
        .unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::Version { .. })
        ));
        std::fs::write(&manifest, &text).unwrap();

        let wxm = dir.path().join("rainy.wxm");
        let bytes = std::fs::read(&wxm).unwrap();
        std::fs::write(&wxm, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Format(_))));
        std::fs::remove_file(&wxm).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io(_))));
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m = model();
        let h1 = save_hierarchical(d1.path(), &m).unwrap();
        assert_eq!(h1, save_hierarchical(d2.path(), &m).unwrap());
        let other = HierarchicalModel::random(
            &ArchConfig {
                input_size: 8,
                ..Default::default()
            },
            default_taxonomy(),
            *m.normalizer(),
            10,
        )
        .unwrap();
        assert_ne!(h1, save_hierarchical(d2.path(), &other).unwrap());
    }
}
