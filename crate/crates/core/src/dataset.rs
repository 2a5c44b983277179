//! Manifest-driven datasets, stratified splits and class distributions.

use crate::error::{Error, Result};
use crate::imageio::ChannelOrder;
use crate::rng::{SplitMix64, GOLDEN_GAMMA};
use crate::taxonomy::{CoarseGroup, LeafClass, Taxonomy};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub leaf: LeafClass,
    pub channel_order: ChannelOrder,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, leaf: LeafClass) -> Self {
        Self {
            path: path.into(),
            leaf,
            channel_order: ChannelOrder::Rgb,
        }
    }
}

/// Parses a CSV manifest with header `path,label[,channel_order]`.
pub fn load_manifest(bytes: &[u8]) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let names: Vec<String> = headers
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let has_order = match names
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["path", "label"] => false,
        ["path", "label", "channel_order"] => true,
        [] | [""] => return Err(Error::Parse("manifest is missing its header".into())),
        other => {
            return Err(Error::Parse(format!(
                "manifest header must be path,label[,channel_order], got {}",
                other.join(",")
            )))
        }
    };
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let path = record.get(0).unwrap_or("").trim();
        if path.is_empty() {
            return Err(Error::Parse(format!("row {}: empty path", line + 2)));
        }
        let leaf: LeafClass = record.get(1).unwrap_or("").parse()?;
        let channel_order = if has_order {
            record.get(2).unwrap_or("").parse()?
        } else {
            ChannelOrder::Rgb
        };
        entries.push(ManifestEntry {
            path: path.to_string(),
            leaf,
            channel_order,
        });
    }
    Ok(entries)
}

/// Writes a manifest with the three-column header.
pub fn write_manifest(entries: &[ManifestEntry]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "label", "channel_order"])
        .expect("in-memory write");
    for e in entries {
        w.write_record([e.path.as_str(), e.leaf.id(), e.channel_order.id()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.30,
            val_fraction_of_train: 0.20,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// `floor(n * fraction)`, tolerant of representation error such as
/// `10 * 0.3 = 2.9999999999999996`.
pub fn floor_fraction(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 1e-9).floor() as usize
}

/// Per-leaf stratified split.
///
/// For every leaf class (in index order) the indices of its entries are
/// shuffled with `SplitMix64::new(seed ^ ((leaf_index + 1) * GOLDEN_GAMMA))`
/// using [`SplitMix64::shuffle`]. The first `floor(n * test_fraction)` go to
/// test; of the remaining `m`, the first `floor(m * val_fraction)` go to
/// validation and the rest to training. Each output list keeps the
/// original manifest order.
pub fn stratified_split(entries: &[ManifestEntry], spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    if entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    // 0 = train, 1 = val, 2 = test
    let mut assignment = vec![0u8; entries.len()];
    for leaf in LeafClass::ALL {
        let mut idx: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.leaf == leaf)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let stream = spec.seed ^ (leaf.index() as u64 + 1).wrapping_mul(GOLDEN_GAMMA);
        SplitMix64::new(stream).shuffle(&mut idx);
        let n_test = floor_fraction(idx.len(), spec.test_fraction);
        let pool = idx.len() - n_test;
        let n_val = floor_fraction(pool, spec.val_fraction_of_train);
        for &i in &idx[..n_test] {
            assignment[i] = 2;
        }
        for &i in &idx[n_test..n_test + n_val] {
            assignment[i] = 1;
        }
    }
    let mut out = SplitResult::default();
    for (e, a) in entries.iter().zip(assignment) {
        match a {
            0 => out.train.push(e.clone()),
            1 => out.val.push(e.clone()),
            _ => out.test.push(e.clone()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassDistribution {
    pub per_leaf: [usize; 11],
    pub per_group: [usize; 3],
    pub total: usize,
}

impl ClassDistribution {
    pub fn leaf(&self, leaf: LeafClass) -> usize {
        self.per_leaf[leaf.index()]
    }

    pub fn group(&self, group: CoarseGroup) -> usize {
        self.per_group[group.index()]
    }
}

pub fn class_distribution(entries: &[ManifestEntry], taxonomy: &Taxonomy) -> ClassDistribution {
    let mut d = ClassDistribution::default();
    for e in entries {
        d.per_leaf[e.leaf.index()] += 1;
        d.per_group[taxonomy.group_of(e.leaf).index()] += 1;
        d.total += 1;
    }
    d
}

/// CSV rows `leaf,count,group,split` for every leaf in each split, the
/// data behind a nested train/val/test pie chart.
pub fn split_report_csv(split: &SplitResult, taxonomy: &Taxonomy) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["leaf", "count", "group", "split"])
        .expect("in-memory write");
    for (name, part) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        let d = class_distribution(part, taxonomy);
        for leaf in LeafClass::ALL {
            w.write_record([
                leaf.id(),
                &d.leaf(leaf).to_string(),
                taxonomy.group_of(leaf).id(),
                name,
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn subset_for_group(
    entries: &[ManifestEntry],
    taxonomy: &Taxonomy,
    group: CoarseGroup,
) -> Vec<ManifestEntry> {
    entries
        .iter()
        .filter(|e| taxonomy.group_of(e.leaf) == group)
        .cloned()
        .collect()
}
