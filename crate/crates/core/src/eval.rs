//! Confusion matrices, precision/recall, hierarchical metrics and model
//! comparison tables.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{
    cold_safety_label, FlatModel, HierarchicalModel, Role, COLD_SAFETY_CLASSES, PREDICT_BATCH,
};
use crate::imageio::TensorF32;
use crate::nn::argmax;
use crate::pipeline::{stack, PreparedSet};
use crate::taxonomy::{CoarseGroup, LeafClass, SafetyLevel};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    /// Labels `0..n` named by their index.
    pub fn with_size(n: usize) -> Self {
        Self::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], labels: Vec<String>) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} true labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(labels);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n();
        for label in [truth, pred] {
            if label >= n {
                return Err(Error::LabelRange { label, n });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    /// Elementwise sum; labels must agree.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::Shape(
                "cannot merge confusion matrices with different labels".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// CSV grid with a `true\pred` corner cell and label headers.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\pred".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    /// `None` when the class has no samples.
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn confusion(truth: &[usize], pred: &[usize], n: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(truth, pred, ConfusionMatrix::with_size(n).labels)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let per_class = (0..cm.n())
        .map(|i| ClassMetrics {
            label: cm.labels[i].clone(),
            precision: ratio(cm.counts[i][i], cols[i]),
            recall: ratio(cm.counts[i][i], rows[i]),
            support: rows[i],
        })
        .collect();
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        total,
        per_class,
    })
}

fn leaf_labels() -> Vec<String> {
    LeafClass::ALL.iter().map(|l| l.id().to_string()).collect()
}

fn group_labels() -> Vec<String> {
    CoarseGroup::ALL
        .iter()
        .map(|g| g.id().to_string())
        .collect()
}

fn safety_labels() -> Vec<String> {
    SafetyLevel::ALL
        .iter()
        .map(|s| s.id().to_string())
        .collect()
}

/// Per-group sub-model scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubModelEval {
    pub group: String,
    /// Samples of this group that the primary model routed correctly.
    pub routed: ConfusionMatrix,
    /// Every sample of this group, regardless of the primary model.
    pub oracle: ConfusionMatrix,
    pub routed_accuracy: Option<f64>,
    pub oracle_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierarchicalEvaluation {
    pub samples: usize,
    pub primary: ConfusionMatrix,
    pub primary_accuracy: f64,
    pub sub_models: Vec<SubModelEval>,
    /// Cold safety model on correctly routed and on all cold samples; the
    /// target folds Dangerous into PotentiallyHazardous.
    pub cold_safety: SubModelEval,
    /// 11x11 end-to-end leaf matrix.
    pub leaf: ConfusionMatrix,
    pub end_to_end_accuracy: f64,
    /// 3x3 safety matrix against the taxonomy safety of the true leaf.
    pub safety: ConfusionMatrix,
    pub safety_accuracy: f64,
    /// Fraction of samples whose oracle-routed sub-model picks the right leaf.
    pub oracle_leaf_accuracy: f64,
    /// Fraction of samples sent to the wrong group.
    pub routing_error_rate: f64,
    pub leaf_metrics: MetricsReport,
}

fn sub_eval(group: String, routed: ConfusionMatrix, oracle: ConfusionMatrix) -> SubModelEval {
    SubModelEval {
        group,
        routed_accuracy: routed.accuracy(),
        oracle_accuracy: oracle.accuracy(),
        routed,
        oracle,
    }
}

/// Scores a hierarchical model on a prepared set.
pub fn evaluate_hierarchical(
    model: &HierarchicalModel,
    set: &PreparedSet,
) -> Result<HierarchicalEvaluation> {
    if set.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let taxonomy = model.taxonomy();
    let refs: Vec<&TensorF32> = set.images.iter().collect();
    let x = stack(&refs, model.normalizer())?;
    let preds = model.predict_batch(&x)?;

    let mut primary = ConfusionMatrix::new(group_labels());
    let mut leaf = ConfusionMatrix::new(leaf_labels());
    let mut safety = ConfusionMatrix::new(safety_labels());
    for (p, &truth) in preds.iter().zip(&set.leaves) {
        primary.add(taxonomy.group_of(truth).index(), p.group.index())?;
        leaf.add(truth.index(), p.leaf.index())?;
        safety.add(taxonomy.safety_of(truth).index(), p.safety.index())?;
    }

    let mut sub_models = Vec::new();
    let mut oracle_hits = 0u64;
    let cold_idx: Vec<usize> = (0..set.len())
        .filter(|&i| taxonomy.group_of(set.leaves[i]) == CoarseGroup::Cold)
        .collect();
    for group in CoarseGroup::ALL {
        let classes = model.classes(group);
        let labels: Vec<String> = classes.iter().map(|l| l.id().to_string()).collect();
        let mut routed = ConfusionMatrix::new(labels.clone());
        let mut oracle = ConfusionMatrix::new(labels);
        let idx: Vec<usize> = (0..set.len())
            .filter(|&i| taxonomy.group_of(set.leaves[i]) == group)
            .collect();
        if !idx.is_empty() {
            let sub: Vec<&TensorF32> = idx.iter().map(|&i| &set.images[i]).collect();
            let probs = model
                .network(Role::for_group(group))
                .predict_batched(&stack(&sub, model.normalizer())?, PREDICT_BATCH)?;
            let k = classes.len();
            for (&i, row) in idx.iter().zip(probs.data().chunks_exact(k)) {
                let truth = classes
                    .iter()
                    .position(|&l| l == set.leaves[i])
                    .expect("leaf in its group");
                let pred = argmax(row);
                oracle.add(truth, pred)?;
                if pred == truth {
                    oracle_hits += 1;
                }
                if preds[i].group == group {
                    routed.add(truth, pred)?;
                }
            }
        }
        sub_models.push(sub_eval(group.id().to_string(), routed, oracle));
    }

    let safety_names: Vec<String> = COLD_SAFETY_CLASSES
        .iter()
        .map(|s| s.id().to_string())
        .collect();
    let mut cs_routed = ConfusionMatrix::new(safety_names.clone());
    let mut cs_oracle = ConfusionMatrix::new(safety_names);
    if !cold_idx.is_empty() {
        let sub: Vec<&TensorF32> = cold_idx.iter().map(|&i| &set.images[i]).collect();
        let probs = model
            .network(Role::ColdSafety)
            .predict_batched(&stack(&sub, model.normalizer())?, PREDICT_BATCH)?;
        for (&i, row) in cold_idx
            .iter()
            .zip(probs.data().chunks_exact(COLD_SAFETY_CLASSES.len()))
        {
            let truth = cold_safety_label(taxonomy.safety_of(set.leaves[i]));
            let pred = argmax(row);
            cs_oracle.add(truth, pred)?;
            if preds[i].group == CoarseGroup::Cold {
                cs_routed.add(truth, pred)?;
            }
        }
    }

    let n = set.len() as f64;
    let primary_accuracy = primary.accuracy().expect("non-empty");
    Ok(HierarchicalEvaluation {
        samples: set.len(),
        primary_accuracy,
        sub_models,
        cold_safety: sub_eval(CoarseGroup::Cold.id().to_string(), cs_routed, cs_oracle),
        end_to_end_accuracy: leaf.accuracy().expect("non-empty"),
        safety_accuracy: safety.accuracy().expect("non-empty"),
        oracle_leaf_accuracy: oracle_hits as f64 / n,
        routing_error_rate: (primary.total() - primary.trace()) as f64 / n,
        leaf_metrics: metrics(&leaf)?,
        primary,
        leaf,
        safety,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlatEvaluation {
    pub samples: usize,
    pub leaf: ConfusionMatrix,
    pub accuracy: f64,
    /// Groups implied by the predicted leaves.
    pub group: ConfusionMatrix,
    pub group_accuracy: f64,
    pub safety: ConfusionMatrix,
    pub leaf_metrics: MetricsReport,
}

pub fn evaluate_flat(model: &FlatModel, set: &PreparedSet) -> Result<FlatEvaluation> {
    if set.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let refs: Vec<&TensorF32> = set.images.iter().collect();
    let preds = model.predict_prepared(&refs)?;
    let t = &model.taxonomy;
    let mut leaf = ConfusionMatrix::new(leaf_labels());
    let mut group = ConfusionMatrix::new(group_labels());
    let mut safety = ConfusionMatrix::new(safety_labels());
    for (p, &truth) in preds.iter().zip(&set.leaves) {
        leaf.add(truth.index(), p.leaf.index())?;
        group.add(t.group_of(truth).index(), p.group.index())?;
        safety.add(t.safety_of(truth).index(), p.safety.index())?;
    }
    Ok(FlatEvaluation {
        samples: set.len(),
        accuracy: leaf.accuracy().expect("non-empty"),
        group_accuracy: group.accuracy().expect("non-empty"),
        leaf_metrics: metrics(&leaf)?,
        leaf,
        group,
        safety,
    })
}

/// Percentage with two decimals, e.g. `80.38%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: f64,
    /// Hash of the bundle the accuracy was measured on, when known.
    pub bundle_hash: Option<String>,
}

/// Model-vs-accuracy table; rows keep their input order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_models(rows: Vec<ComparisonRow>) -> Comparison {
    Comparison { rows }
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "accuracy", "bundle_hash"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.model.as_str(),
                &format_percent(r.accuracy),
                r.bundle_hash.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "model": r.model,
                        "accuracy": format_percent(r.accuracy),
                        "accuracy_fraction": r.accuracy,
                        "bundle_hash": r.bundle_hash,
                    })
                })
                .collect(),
        )
    }
}
