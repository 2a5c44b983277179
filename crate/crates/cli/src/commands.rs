use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use wxclass::bundle::{load_bundle, save_bundle, Bundle};
use wxclass::dataset::{
    load_manifest, split_report_csv, stratified_split, write_manifest, ManifestEntry,
};
use wxclass::eval::{
    compare_models, evaluate_flat, evaluate_hierarchical, format_percent, ComparisonRow,
    ConfusionMatrix,
};
use wxclass::hierarchy::{train_flat, train_hierarchical, HierConfig, HierPrediction};
use wxclass::imageio::{decode_ppm, ChannelOrder};
use wxclass::nn::History;
use wxclass::pipeline::{prepare, prepare_image, with_jobs, FsSource, PreparedSet, Preset};
use wxclass::preprocess::Normalizer;
use wxclass::synth::{write_dataset, SynthConfig};
use wxclass::tensor_file::encode_tensor;
use wxclass::{CoarseGroup, LeafClass, SafetyLevel, TensorF32};

use crate::config::Common;
use crate::exit::{CliResult, Context, Failure};

fn write_out(common: &Common, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    let path = common.out.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).ctx(&parent.display().to_string())?;
    }
    std::fs::write(&path, bytes).ctx(&path.display().to_string())?;
    Ok(path)
}

/// A manifest together with the directory its relative paths resolve against.
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

pub fn read_manifest(path: &Path, image_root: Option<&Path>) -> CliResult<Manifest> {
    let label = path.display().to_string();
    let bytes = std::fs::read(path).ctx(&label)?;
    let entries = load_manifest(&bytes).ctx(&label)?;
    if entries.is_empty() {
        return Err(Failure::from(wxclass::Error::EmptyManifest).context(&label));
    }
    let root = match image_root {
        Some(r) => r.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    Ok(Manifest { entries, root })
}

fn load_set(common: &Common, m: &Manifest, size: usize) -> CliResult<PreparedSet> {
    let source = FsSource::new(&m.root);
    with_jobs(common.jobs, || prepare(&m.entries, &source, size))?.ctx("loading images")
}

pub fn synth(common: &Common, cfg: &SynthConfig) -> CliResult<()> {
    let entries =
        write_dataset(&common.out, cfg, &common.taxonomy).ctx(&common.out.display().to_string())?;
    println!(
        "wrote {} images and manifest.csv to {}",
        entries.len(),
        common.out.display()
    );
    Ok(())
}

/// Writes `train.csv`, `val.csv`, `test.csv` and `split_summary.csv`. Image
/// paths are rewritten as absolute paths so the new manifests work from the
/// output directory.
pub fn split(common: &Common, m: &Manifest, spec: &wxclass::dataset::SplitSpec) -> CliResult<()> {
    let root = std::path::absolute(&m.root).ctx(&m.root.display().to_string())?;
    let entries: Vec<ManifestEntry> = m
        .entries
        .iter()
        .map(|e| {
            let p = Path::new(&e.path);
            let path = if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            };
            ManifestEntry {
                path: path.to_string_lossy().into_owned(),
                ..e.clone()
            }
        })
        .collect();
    let result = stratified_split(&entries, spec)?;
    write_out(common, "train.csv", write_manifest(&result.train))?;
    write_out(common, "val.csv", write_manifest(&result.val))?;
    write_out(common, "test.csv", write_manifest(&result.test))?;
    write_out(
        common,
        "split_summary.csv",
        split_report_csv(&result, &common.taxonomy),
    )?;
    println!(
        "train {} / val {} / test {} written to {}",
        result.train.len(),
        result.val.len(),
        result.test.len(),
        common.out.display()
    );
    Ok(())
}

pub fn stats(
    common: &Common,
    m: &Manifest,
    size: usize,
    per_channel: bool,
) -> CliResult<Normalizer> {
    let set = load_set(common, m, size)?;
    let normalizer = Normalizer::fit(&set.images, per_channel)?;
    let path = write_out(common, "stats.toml", normalizer.to_stats_file())?;
    println!("wrote {}", path.display());
    Ok(normalizer)
}

/// Resized and standardized tensors as `tensors/NNNNN.wxt` plus
/// `tensors/index.csv`.
pub fn preprocess(
    common: &Common,
    m: &Manifest,
    size: usize,
    stats_file: Option<&Path>,
    per_channel: bool,
) -> CliResult<()> {
    let set = load_set(common, m, size)?;
    let normalizer = match stats_file {
        Some(p) => {
            let bytes = std::fs::read(p).ctx(&p.display().to_string())?;
            Normalizer::from_stats_file(&bytes).ctx(&p.display().to_string())?
        }
        None => {
            let n = Normalizer::fit(&set.images, per_channel)?;
            write_out(common, "stats.toml", n.to_stats_file())?;
            n
        }
    };
    let mut index = String::from("tensor,path,label\n");
    for (i, (img, entry)) in set.images.iter().zip(&m.entries).enumerate() {
        let name = format!("{i:05}.wxt");
        write_out(
            common,
            &format!("tensors/{name}"),
            encode_tensor(&normalizer.apply(img)?),
        )?;
        index.push_str(&format!(
            "{name},{},{}\n",
            csv_field(&entry.path),
            entry.leaf.id()
        ));
    }
    write_out(common, "tensors/index.csv", index)?;
    println!(
        "wrote {} tensors to {}",
        set.len(),
        common.out.join("tensors").display()
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Trains a bundle into `<out>/model`. Returns the validation accuracy when
/// a validation set was given.
pub fn train(
    common: &Common,
    train_m: &Manifest,
    val_m: Option<&Manifest>,
    cfg: &HierConfig,
) -> CliResult<Option<f64>> {
    let size = cfg.arch.input_size;
    let train_set = load_set(common, train_m, size)?;
    let val_set = val_m.map(|m| load_set(common, m, size)).transpose()?;
    let cfg = HierConfig {
        parallel_models: cfg.parallel_models && !common.strict,
        ..cfg.clone()
    };
    let taxonomy = &common.taxonomy;
    let (bundle, histories) = with_jobs(
        common.jobs,
        || -> wxclass::Result<(Bundle, Vec<(String, History)>)> {
            if cfg.arch.preset == Preset::Hierarchical {
                let (model, hs) = train_hierarchical(&train_set, val_set.as_ref(), taxonomy, &cfg)?;
                Ok((
                    Bundle::Hierarchical(model),
                    hs.into_iter()
                        .map(|(r, h)| (r.id().to_string(), h))
                        .collect(),
                ))
            } else {
                let (model, h) = train_flat(&train_set, val_set.as_ref(), taxonomy, &cfg)?;
                Ok((Bundle::Flat(model), vec![("flat".to_string(), h)]))
            }
        },
    )?
    .ctx("training")?;
    for (name, h) in &histories {
        write_out(common, &format!("history_{name}.csv"), h.to_csv())?;
    }
    let dir = common.out.join("model");
    let hash = save_bundle(&dir, &bundle).ctx(&dir.display().to_string())?;
    println!(
        "saved {} bundle to {} (sha256 {hash})",
        bundle.kind(),
        dir.display()
    );
    let val_acc = match &val_set {
        Some(v) if !v.is_empty() => Some(accuracy_of(&bundle, v)?),
        _ => None,
    };
    match val_acc {
        Some(a) => println!("final validation accuracy: {}", format_percent(a)),
        None => println!("no validation set; final validation accuracy not available"),
    }
    Ok(val_acc)
}

fn accuracy_of(bundle: &Bundle, set: &PreparedSet) -> CliResult<f64> {
    Ok(match bundle {
        Bundle::Hierarchical(m) => evaluate_hierarchical(m, set)?.end_to_end_accuracy,
        Bundle::Flat(m) => evaluate_flat(m, set)?.accuracy,
    })
}

fn open_bundle(dir: &Path) -> CliResult<(Bundle, String)> {
    load_bundle(dir).ctx(&dir.display().to_string())
}

/// Writes `metrics.json` and the confusion matrices.
pub fn evaluate(common: &Common, model_dir: &Path, m: &Manifest) -> CliResult<f64> {
    let (bundle, hash) = open_bundle(model_dir)?;
    let set = load_set(common, m, bundle.input_size())?;
    let (accuracy, report, confusions): (f64, Value, Vec<(String, ConfusionMatrix)>) = match &bundle
    {
        Bundle::Hierarchical(model) => {
            let ev = evaluate_hierarchical(model, &set)?;
            let mut cms = vec![
                ("leaf".into(), ev.leaf.clone()),
                ("group".into(), ev.primary.clone()),
                ("safety".into(), ev.safety.clone()),
            ];
            let subs = ev
                .sub_models
                .iter()
                .map(|s| (s.group.to_ascii_lowercase(), s));
            for (name, s) in subs.chain(std::iter::once((
                "cold_safety".to_string(),
                &ev.cold_safety,
            ))) {
                cms.push((format!("{name}_routed"), s.routed.clone()));
                cms.push((format!("{name}_oracle"), s.oracle.clone()));
            }
            (
                ev.end_to_end_accuracy,
                serde_json::to_value(&ev).expect("evaluation serializes"),
                cms,
            )
        }
        Bundle::Flat(model) => {
            let ev = evaluate_flat(model, &set)?;
            let cms = vec![
                ("leaf".into(), ev.leaf.clone()),
                ("group".into(), ev.group.clone()),
                ("safety".into(), ev.safety.clone()),
            ];
            (
                ev.accuracy,
                serde_json::to_value(&ev).expect("evaluation serializes"),
                cms,
            )
        }
    };
    for (name, cm) in &confusions {
        write_out(common, &format!("confusion_{name}.csv"), cm.to_csv())?;
    }
    let doc = json!({
        "bundle_hash": hash,
        "kind": bundle.kind(),
        "samples": set.len(),
        "accuracy": accuracy,
        "accuracy_percent": format_percent(accuracy),
        "evaluation": report,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json") + "\n";
    let path = write_out(common, "metrics.json", text)?;
    println!(
        "accuracy {} on {} images; wrote {}",
        format_percent(accuracy),
        set.len(),
        path.display()
    );
    Ok(accuracy)
}

/// f32 values go through their shortest decimal form so the JSON does not
/// carry widening noise.
fn probs(v: &[f32]) -> Value {
    Value::Array(
        v.iter()
            .map(|p| json!(p.to_string().parse::<f64>().expect("float round-trips")))
            .collect(),
    )
}

fn ids<T: Copy>(v: &[T], id: impl Fn(T) -> &'static str) -> Value {
    Value::Array(v.iter().map(|&x| json!(id(x))).collect())
}

fn hier_json(path: &str, p: &HierPrediction) -> Value {
    let mut obj = json!({
        "path": path,
        "group": p.group.id(),
        "group_probs": probs(&p.group_probs),
        "leaf": p.leaf.id(),
        "leaf_classes": ids(&p.leaf_classes, LeafClass::id),
        "leaf_probs": probs(&p.leaf_probs),
        "safety": p.safety.id(),
        "safety_source": p.safety_source.id(),
    });
    if let Some(sp) = &p.safety_probs {
        obj["safety_classes"] = ids(&wxclass::hierarchy::COLD_SAFETY_CLASSES, SafetyLevel::id);
        obj["safety_probs"] = probs(sp);
    }
    obj
}

/// One JSON object per image on stdout. Returns the number of successes
/// and the first failure, if any.
pub fn predict(
    common: &Common,
    model_dir: &Path,
    images: &[PathBuf],
    order: ChannelOrder,
) -> CliResult<(usize, Option<Failure>)> {
    let (bundle, _) = open_bundle(model_dir)?;
    let size = bundle.input_size();
    let loaded: Vec<CliResult<TensorF32>> = with_jobs(common.jobs, || {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|p| {
                let label = p.display().to_string();
                let bytes = std::fs::read(p).ctx(&label)?;
                let img = decode_ppm(&bytes).ctx(&label)?;
                prepare_image(&img, order, size).ctx(&label)
            })
            .collect()
    })?;
    let ok: Vec<&TensorF32> = loaded.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mut lines: Vec<Value> = match &bundle {
        Bundle::Hierarchical(m) => {
            let preds = m.predict_prepared(&ok)?;
            preds.iter().map(|p| hier_json("", p)).collect()
        }
        Bundle::Flat(m) => {
            let preds = m.predict_prepared(&ok)?;
            preds
                .iter()
                .map(|p| {
                    let mut group_probs = [0.0f32; CoarseGroup::COUNT];
                    for (leaf, &pr) in LeafClass::ALL.iter().zip(&p.leaf_probs) {
                        group_probs[m.taxonomy.group_of(*leaf).index()] += pr;
                    }
                    json!({
                        "path": "",
                        "group": p.group.id(),
                        "group_probs": probs(&group_probs),
                        "leaf": p.leaf.id(),
                        "leaf_classes": ids(&LeafClass::ALL, LeafClass::id),
                        "leaf_probs": probs(&p.leaf_probs),
                        "safety": p.safety.id(),
                        "safety_source": "taxonomy",
                    })
                })
                .collect()
        }
    };
    lines.reverse();
    let mut first_err = None;
    let mut successes = 0;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    use std::io::Write;
    for (path, r) in images.iter().zip(loaded) {
        let path = path.to_string_lossy();
        let line = match r {
            Ok(_) => {
                successes += 1;
                let mut v = lines.pop().expect("one prediction per decoded image");
                v["path"] = json!(path);
                v
            }
            Err(e) => {
                let v = json!({ "path": path, "error": e.message });
                first_err.get_or_insert(e);
                v
            }
        };
        writeln!(out, "{line}").ctx("stdout")?;
    }
    Ok((successes, first_err))
}

/// Evaluates every named bundle on one manifest and writes
/// `comparison.csv` and `comparison.json`.
pub fn compare(common: &Common, models: &[(String, PathBuf)], m: &Manifest) -> CliResult<()> {
    if models.len() < 2 {
        return Err(Failure::config(
            "compare needs at least two --model NAME=DIR entries",
        ));
    }
    let mut sets: BTreeMap<usize, PreparedSet> = BTreeMap::new();
    let mut rows = Vec::new();
    for (name, dir) in models {
        let (bundle, hash) = open_bundle(dir)?;
        let size = bundle.input_size();
        let set = match sets.entry(size) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(load_set(common, m, size)?),
        };
        let accuracy = accuracy_of(&bundle, set)?;
        rows.push(ComparisonRow {
            model: name.clone(),
            accuracy,
            bundle_hash: Some(hash),
        });
    }
    let table = compare_models(rows);
    write_out(common, "comparison.csv", table.to_csv())?;
    write_out(
        common,
        "comparison.json",
        serde_json::to_string_pretty(&table.to_json()).expect("json") + "\n",
    )?;
    for r in &table.rows {
        println!("{:<24} {}", r.model, format_percent(r.accuracy));
    }
    Ok(())
}

pub fn parse_model_arg(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => {
            Ok((name.to_string(), PathBuf::from(dir)))
        }
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}
