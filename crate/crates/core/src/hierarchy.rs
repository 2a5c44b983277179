//! Two-level classification: a primary model picks the weather group, then
//! that group's sub-model picks the leaf class. Cold images also go through
//! a two-way safety model; other groups take safety from the taxonomy.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{ChannelOrder, ImageU8, Tensor, TensorF32};
use crate::nn::{argmax, train, History, LabeledSet, Network, TrainConfig};
use crate::pipeline::{prepare_image, stack, ArchConfig, PreparedSet, Preset};
use crate::preprocess::Normalizer;
use crate::rng::derive_seed;
use crate::taxonomy::{CoarseGroup, LeafClass, SafetyLevel, Taxonomy};

/// Batch size used for inference.
pub const PREDICT_BATCH: usize = 64;

/// The five networks of a hierarchical model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Primary,
    Rainy,
    Dusty,
    ColdFine,
    ColdSafety,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Primary,
        Role::Rainy,
        Role::Dusty,
        Role::ColdFine,
        Role::ColdSafety,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Role::Primary => "primary",
            Role::Rainy => "rainy",
            Role::Dusty => "dusty",
            Role::ColdFine => "cold_fine",
            Role::ColdSafety => "cold_safety",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.id() == id)
            .ok_or_else(|| Error::Format(format!("unknown model role `{id}`")))
    }

    /// The leaf sub-model for a group.
    pub fn for_group(group: CoarseGroup) -> Self {
        match group {
            CoarseGroup::Rainy => Role::Rainy,
            CoarseGroup::Dusty => Role::Dusty,
            CoarseGroup::Cold => Role::ColdFine,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Output classes of the cold safety model.
pub const COLD_SAFETY_CLASSES: [SafetyLevel; 2] =
    [SafetyLevel::Safe, SafetyLevel::PotentiallyHazardous];

/// Training label for the cold safety model. `Dangerous` has no output of
/// its own and is folded into `PotentiallyHazardous`.
pub fn cold_safety_label(level: SafetyLevel) -> usize {
    match level {
        SafetyLevel::Safe => 0,
        SafetyLevel::PotentiallyHazardous | SafetyLevel::Dangerous => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalModel {
    primary: Network<f32>,
    subs: [Network<f32>; 3],
    cold_safety: Network<f32>,
    taxonomy: Taxonomy,
    normalizer: Normalizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafetySource {
    Taxonomy,
    ColdModel,
}

impl SafetySource {
    pub fn id(self) -> &'static str {
        match self {
            SafetySource::Taxonomy => "taxonomy",
            SafetySource::ColdModel => "cold_model",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierPrediction {
    pub group: CoarseGroup,
    /// Rainy, Dusty, Cold.
    pub group_probs: Vec<f32>,
    pub leaf: LeafClass,
    /// Over [`HierPrediction::leaf_classes`].
    pub leaf_probs: Vec<f32>,
    /// Classes of the routed sub-model, in output order.
    pub leaf_classes: Vec<LeafClass>,
    pub safety: SafetyLevel,
    pub safety_source: SafetySource,
    /// Safe, PotentiallyHazardous; present on Cold routes.
    pub safety_probs: Option<Vec<f32>>,
}

fn rows(probs: &Tensor<f32>) -> impl Iterator<Item = &[f32]> {
    let k = probs.shape()[1];
    probs.data().chunks_exact(k)
}

fn select_rows(x: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let s = x.shape();
    let per: usize = s[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(vec![idx.len(), s[1], s[2], s[3]], data)
}

impl HierarchicalModel {
    pub fn new(
        primary: Network<f32>,
        subs: [Network<f32>; 3],
        cold_safety: Network<f32>,
        taxonomy: Taxonomy,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let input = primary.spec().input();
        let check = |net: &Network<f32>, role: Role, n_out: usize| {
            if net.spec().n_out() != n_out {
                return Err(Error::Shape(format!(
                    "{} model has {} outputs, expected {n_out}",
                    role.id(),
                    net.spec().n_out()
                )));
            }
            if net.spec().input() != input {
                return Err(Error::Shape(format!(
                    "{} model input differs from the primary model",
                    role.id()
                )));
            }
            Ok(())
        };
        check(&primary, Role::Primary, CoarseGroup::COUNT)?;
        for g in CoarseGroup::ALL {
            check(
                &subs[g.index()],
                Role::for_group(g),
                taxonomy.leaves_of(g).len(),
            )?;
        }
        check(&cold_safety, Role::ColdSafety, COLD_SAFETY_CLASSES.len())?;
        Ok(Self {
            primary,
            subs,
            cold_safety,
            taxonomy,
            normalizer,
        })
    }

    /// Untrained model with He-initialized networks.
    pub fn random(
        arch: &ArchConfig,
        taxonomy: Taxonomy,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        let net = |role: Role, n: usize| {
            Network::init(
                arch.model_spec(n)?,
                derive_seed(seed, &[role.index() as u64]),
            )
        };
        let subs = [
            net(Role::Rainy, taxonomy.leaves_of(CoarseGroup::Rainy).len())?,
            net(Role::Dusty, taxonomy.leaves_of(CoarseGroup::Dusty).len())?,
            net(Role::ColdFine, taxonomy.leaves_of(CoarseGroup::Cold).len())?,
        ];
        Self::new(
            net(Role::Primary, CoarseGroup::COUNT)?,
            subs,
            net(Role::ColdSafety, COLD_SAFETY_CLASSES.len())?,
            taxonomy,
            normalizer,
        )
    }

    pub fn network(&self, role: Role) -> &Network<f32> {
        match role {
            Role::Primary => &self.primary,
            Role::Rainy => &self.subs[0],
            Role::Dusty => &self.subs[1],
            Role::ColdFine => &self.subs[2],
            Role::ColdSafety => &self.cold_safety,
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn input_size(&self) -> usize {
        self.primary.spec().input().h
    }

    /// Classes of a group's sub-model, in output order.
    pub fn classes(&self, group: CoarseGroup) -> Vec<LeafClass> {
        self.taxonomy.leaves_of(group)
    }

    /// Hard routing over standardized inputs `[N, H, W, 3]`.
    pub fn predict_batch(&self, x: &Tensor<f32>) -> Result<Vec<HierPrediction>> {
        let group_probs = self.primary.predict_batched(x, PREDICT_BATCH)?;
        let mut out: Vec<HierPrediction> = rows(&group_probs)
            .map(|p| {
                let group = CoarseGroup::ALL[argmax(p)];
                let leaf = self.classes(group)[0];
                HierPrediction {
                    group,
                    group_probs: p.to_vec(),
                    leaf,
                    leaf_probs: Vec::new(),
                    leaf_classes: Vec::new(),
                    safety: self.taxonomy.safety_of(leaf),
                    safety_source: SafetySource::Taxonomy,
                    safety_probs: None,
                }
            })
            .collect();
        for group in CoarseGroup::ALL {
            let idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].group == group).collect();
            if idx.is_empty() {
                continue;
            }
            let sub_x = select_rows(x, &idx)?;
            let classes = self.classes(group);
            let probs = self
                .network(Role::for_group(group))
                .predict_batched(&sub_x, PREDICT_BATCH)?;
            for (&i, p) in idx.iter().zip(rows(&probs)) {
                let leaf = classes[argmax(p)];
                let pred = &mut out[i];
                pred.leaf = leaf;
                pred.leaf_probs = p.to_vec();
                pred.leaf_classes = classes.clone();
                pred.safety = self.taxonomy.safety_of(leaf);
            }
            if group == CoarseGroup::Cold {
                let probs = self.cold_safety.predict_batched(&sub_x, PREDICT_BATCH)?;
                for (&i, p) in idx.iter().zip(rows(&probs)) {
                    let pred = &mut out[i];
                    pred.safety = COLD_SAFETY_CLASSES[argmax(p)];
                    pred.safety_source = SafetySource::ColdModel;
                    pred.safety_probs = Some(p.to_vec());
                }
            }
        }
        Ok(out)
    }

    /// Standardizes resized images and predicts them.
    pub fn predict_prepared(&self, images: &[&TensorF32]) -> Result<Vec<HierPrediction>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(images, &self.normalizer)?;
        self.predict_batch(&x)
    }

    /// `p(leaf) = p(group) * p(leaf | group)` over all groups, indexed by
    /// [`LeafClass::index`]. Every sub-model runs on every input.
    pub fn joint_leaf_distribution(&self, x: &Tensor<f32>) -> Result<Vec<[f64; LeafClass::COUNT]>> {
        let group_probs = self.primary.predict_batched(x, PREDICT_BATCH)?;
        let mut out: Vec<[f64; LeafClass::COUNT]> = vec![[0.0; LeafClass::COUNT]; x.shape()[0]];
        for group in CoarseGroup::ALL {
            let classes = self.classes(group);
            let probs = self
                .network(Role::for_group(group))
                .predict_batched(x, PREDICT_BATCH)?;
            for ((joint, pg), pl) in out.iter_mut().zip(rows(&group_probs)).zip(rows(&probs)) {
                for (leaf, &p) in classes.iter().zip(pl) {
                    joint[leaf.index()] += f64::from(pg[group.index()]) * f64::from(p);
                }
            }
        }
        Ok(out)
    }
}

/// Resizes, standardizes and routes one decoded image.
pub fn predict_hierarchical(
    model: &HierarchicalModel,
    img: &ImageU8,
    order: ChannelOrder,
) -> Result<HierPrediction> {
    let t = prepare_image(img, order, model.input_size())?;
    let mut preds = model.predict_prepared(&[&t])?;
    Ok(preds.remove(0))
}

pub fn joint_leaf_distribution(
    model: &HierarchicalModel,
    img: &ImageU8,
    order: ChannelOrder,
) -> Result<[f64; 11]> {
    let t = prepare_image(img, order, model.input_size())?;
    let x = stack(&[&t], model.normalizer())?;
    Ok(model.joint_leaf_distribution(&x)?[0])
}

#[derive(Clone, Debug)]
pub struct HierConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Per-channel instead of global standardization.
    pub per_channel: bool,
    /// Train the five networks concurrently on the ambient rayon pool.
    pub parallel_models: bool,
}

impl Default for HierConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            per_channel: false,
            parallel_models: true,
        }
    }
}

/// Fails with `MissingClass` naming the first leaf that has no image.
pub fn require_all_leaves(leaves: &[LeafClass]) -> Result<()> {
    let mut seen = [false; LeafClass::COUNT];
    leaves.iter().for_each(|l| seen[l.index()] = true);
    match LeafClass::ALL.into_iter().find(|l| !seen[l.index()]) {
        Some(missing) => Err(Error::MissingClass(missing.id().to_string())),
        None => Ok(()),
    }
}

/// Labels of every role's training view: row indices into the full set and
/// the class index for each row.
fn role_view(role: Role, leaves: &[LeafClass], taxonomy: &Taxonomy) -> (Vec<usize>, Vec<usize>) {
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    for (i, &leaf) in leaves.iter().enumerate() {
        let group = taxonomy.group_of(leaf);
        let label = match role {
            Role::Primary => Some(group.index()),
            Role::ColdSafety => {
                (group == CoarseGroup::Cold).then(|| cold_safety_label(taxonomy.safety_of(leaf)))
            }
            sub => (Role::for_group(group) == sub).then(|| {
                taxonomy
                    .leaves_of(group)
                    .iter()
                    .position(|&l| l == leaf)
                    .expect("leaf is in its group")
            }),
        };
        if let Some(label) = label {
            idx.push(i);
            labels.push(label);
        }
    }
    (idx, labels)
}

fn labeled(all: &LabeledSet, idx: &[usize], labels: Vec<usize>) -> Result<LabeledSet> {
    let x = select_rows(&all.x, idx)?;
    LabeledSet::new(x, labels)
}

/// Training histories of a hierarchical run, in [`Role::ALL`] order.
pub type RoleHistories = Vec<(Role, History)>;

/// Trains all five networks. Each role trains with seed
/// `derive_seed(cfg.train.seed, [role])`; one normalizer is fitted on the
/// whole training set and shared.
pub fn train_hierarchical(
    train_set: &PreparedSet,
    val_set: Option<&PreparedSet>,
    taxonomy: &Taxonomy,
    cfg: &HierConfig,
) -> Result<(HierarchicalModel, RoleHistories)> {
    cfg.train.validate()?;
    require_all_leaves(&train_set.leaves)?;
    let normalizer = Normalizer::fit(&train_set.images, cfg.per_channel)?;
    let refs: Vec<&TensorF32> = train_set.images.iter().collect();
    let all = LabeledSet::new(stack(&refs, &normalizer)?, vec![0; train_set.len()])?;
    let val_all = match val_set {
        Some(v) if !v.is_empty() => {
            let refs: Vec<&TensorF32> = v.images.iter().collect();
            Some((
                LabeledSet::new(stack(&refs, &normalizer)?, vec![0; v.len()])?,
                &v.leaves,
            ))
        }
        _ => None,
    };

    let run = |role: Role| -> Result<(Network<f32>, History)> {
        let (idx, labels) = role_view(role, &train_set.leaves, taxonomy);
        let n_out = match role {
            Role::Primary => CoarseGroup::COUNT,
            Role::ColdSafety => COLD_SAFETY_CLASSES.len(),
            _ => {
                let g = CoarseGroup::ALL
                    .into_iter()
                    .find(|&g| Role::for_group(g) == role)
                    .expect("sub role");
                taxonomy.leaves_of(g).len()
            }
        };
        let data = labeled(&all, &idx, labels)?;
        let val = match &val_all {
            Some((set, leaves)) => {
                let (vidx, vlabels) = role_view(role, leaves, taxonomy);
                if vidx.is_empty() {
                    None
                } else {
                    Some(labeled(set, &vidx, vlabels)?)
                }
            }
            None => None,
        };
        let tcfg = TrainConfig {
            seed: derive_seed(cfg.train.seed, &[role.index() as u64]),
            ..cfg.train
        };
        train(cfg.arch.model_spec(n_out)?, &data, val.as_ref(), &tcfg)
    };
    let results: Vec<Result<(Network<f32>, History)>> = if cfg.parallel_models {
        Role::ALL.par_iter().map(|&r| run(r)).collect()
    } else {
        Role::ALL.iter().map(|&r| run(r)).collect()
    };
    let mut nets = Vec::with_capacity(5);
    let mut histories = Vec::with_capacity(5);
    for (role, r) in Role::ALL.into_iter().zip(results) {
        let (net, hist) = r?;
        nets.push(net);
        histories.push((role, hist));
    }
    let mut it = nets.into_iter();
    let mut next = || it.next().expect("five networks");
    let (primary, rainy, dusty, cold, safety) = (next(), next(), next(), next(), next());
    let model = HierarchicalModel::new(
        primary,
        [rainy, dusty, cold],
        safety,
        taxonomy.clone(),
        normalizer,
    )?;
    Ok((model, histories))
}

/// A single 11-way network; group and safety follow from the taxonomy.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatModel {
    pub network: Network<f32>,
    pub taxonomy: Taxonomy,
    pub normalizer: Normalizer,
    pub preset: Preset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatPrediction {
    pub leaf: LeafClass,
    /// Indexed by [`LeafClass::index`].
    pub leaf_probs: Vec<f32>,
    pub group: CoarseGroup,
    pub safety: SafetyLevel,
}

impl FlatModel {
    pub fn input_size(&self) -> usize {
        self.network.spec().input().h
    }

    pub fn predict_batch(&self, x: &Tensor<f32>) -> Result<Vec<FlatPrediction>> {
        let probs = self.network.predict_batched(x, PREDICT_BATCH)?;
        Ok(rows(&probs)
            .map(|p| {
                let leaf = LeafClass::ALL[argmax(p)];
                FlatPrediction {
                    leaf,
                    leaf_probs: p.to_vec(),
                    group: self.taxonomy.group_of(leaf),
                    safety: self.taxonomy.safety_of(leaf),
                }
            })
            .collect())
    }

    pub fn predict_prepared(&self, images: &[&TensorF32]) -> Result<Vec<FlatPrediction>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.predict_batch(&stack(images, &self.normalizer)?)
    }
}

/// Trains one 11-way network of the configured preset.
pub fn train_flat(
    train_set: &PreparedSet,
    val_set: Option<&PreparedSet>,
    taxonomy: &Taxonomy,
    cfg: &HierConfig,
) -> Result<(FlatModel, History)> {
    cfg.train.validate()?;
    require_all_leaves(&train_set.leaves)?;
    let normalizer = Normalizer::fit(&train_set.images, cfg.per_channel)?;
    let to_set = |s: &PreparedSet| -> Result<LabeledSet> {
        let refs: Vec<&TensorF32> = s.images.iter().collect();
        LabeledSet::new(
            stack(&refs, &normalizer)?,
            s.leaves.iter().map(|l| l.index()).collect(),
        )
    };
    let data = to_set(train_set)?;
    let val = match val_set {
        Some(v) if !v.is_empty() => Some(to_set(v)?),
        _ => None,
    };
    let (network, hist) = train(
        cfg.arch.model_spec(LeafClass::COUNT)?,
        &data,
        val.as_ref(),
        &cfg.train,
    )?;
    Ok((
        FlatModel {
            network,
            taxonomy: taxonomy.clone(),
            normalizer,
            preset: cfg.arch.preset,
        },
        hist,
    ))
}
