use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{argmax, Network};
use super::ops::softmax_cross_entropy;
use super::spec::ModelSpec;
use super::{dims4, Mode};
use crate::error::{Error, Result};
use crate::imageio::Tensor;
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 10,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Images `[N, H, W, C]` with one class index per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let (n, ..) = dims4(&x, "training images")?;
        if n != labels.len() {
            return Err(Error::Shape(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given rows into a new set.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let shape = self.x.shape();
        let per: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * per);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::Index {
                    index: r,
                    len: self.len(),
                });
            }
            data.extend_from_slice(&self.x.data()[r * per..(r + 1) * per]);
            labels.push(self.labels[r]);
        }
        let x = Tensor::new(vec![rows.len(), shape[1], shape[2], shape[3]], data)?;
        Ok(Self { x, labels })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,train_acc,val_acc`; an absent validation accuracy
    /// is an empty field.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
        for r in &self.epochs {
            let val = r.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.epoch, r.train_loss, r.train_acc, val
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Fraction of rows whose argmax matches the label.
pub(crate) fn accuracy(net: &Network<f32>, set: &LabeledSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let probs = net.predict_batched(&set.x, batch)?;
    let k = net.spec().n_out();
    let hits = probs
        .data()
        .chunks_exact(k)
        .zip(&set.labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / set.len() as f64)
}

/// Mini-batch SGD with momentum from a He-initialized network.
///
/// Epoch `e` shuffles with ChaCha8 seeded by `derive_seed(seed, [1, e])`;
/// batch `b` of epoch `e` draws dropout masks from `derive_seed(seed, [2, e, b])`.
/// The update is `v = momentum * v + g; w -= lr * v`.
pub fn train(
    spec: ModelSpec,
    data: &LabeledSet,
    val: Option<&LabeledSet>,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, History)> {
    cfg.validate()?;
    let net = Network::init(spec, derive_seed(cfg.seed, &[0]))?;
    fit(net, data, val, cfg)
}

/// Continues training an existing network.
pub fn fit(
    mut net: Network<f32>,
    data: &LabeledSet,
    val: Option<&LabeledSet>,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, History)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n_out = net.spec().n_out();
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= n_out) {
        return Err(Error::LabelRange {
            label: bad,
            n: n_out,
        });
    }
    let s = net.spec().input();
    if data.x.shape()[1..] != [s.h, s.w, s.c] {
        return Err(Error::Shape(format!(
            "training images {:?} do not match model input {}x{}x{}",
            data.x.shape(),
            s.h,
            s.w,
            s.c
        )));
    }

    let lr = cfg.learning_rate as f32;
    let mu = cfg.momentum as f32;
    let mut velocity: Vec<(Vec<f32>, Vec<f32>)> = net
        .params()
        .layers
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut hits = 0usize;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(rows)?;
            let mode = Mode::Train {
                dropout_seed: derive_seed(cfg.seed, &[2, epoch as u64, b as u64]),
            };
            let (logits, trace) = net.forward_logits(&batch.x, mode)?;
            let (loss, probs, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += f64::from(loss) * rows.len() as f64;
            hits += probs
                .data()
                .chunks_exact(n_out)
                .zip(&batch.labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let grads = net.backward(&trace, &dlogits)?;
            net.update_running_stats(&trace);
            for ((p, g), (vw, vb)) in net
                .params_mut()
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut velocity)
            {
                for ((w, &gw), v) in p
                    .weights
                    .data_mut()
                    .iter_mut()
                    .zip(&g.weights)
                    .zip(vw.iter_mut())
                {
                    *v = mu * *v + gw;
                    *w -= lr * *v;
                }
                for ((w, &gb), v) in p.bias.data_mut().iter_mut().zip(&g.bias).zip(vb.iter_mut()) {
                    *v = mu * *v + gb;
                    *w -= lr * *v;
                }
            }
        }
        if !net.params().all_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
        let val_acc = match val {
            Some(v) if !v.is_empty() => Some(accuracy(&net, v, cfg.batch_size.max(64))?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / data.len() as f64,
            train_acc: hits as f64 / data.len() as f64,
            val_acc,
        });
    }
    Ok((net, history))
}
