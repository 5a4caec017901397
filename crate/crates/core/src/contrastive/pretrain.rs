use serde::{Deserialize, Serialize};

use super::loss::info_nce;
use super::queue::NegativeQueue;
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{cosine_lr, EncoderConfig, EncoderModel, OptimizerState};
use crate::rng;
use crate::tensor::{normalize_rows, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub queue_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub encoder: EncoderConfig,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            queue_size: 256,
            batch_size: 64,
            epochs: 200,
            base_lr: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.queue_size < self.batch_size {
            return Err(Error::Config(format!(
                "queue size {} smaller than batch size {}",
                self.queue_size, self.batch_size
            )));
        }
        if !(self.base_lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("invalid optimiser settings".into()));
        }
        Ok(())
    }

    /// `ln(K+1)`, the loss of a query that cannot tell its key from negatives.
    pub fn uniform_loss(&self) -> f64 {
        ((self.queue_size + 1) as f64).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    pub mean_loss: f64,
    pub uniform_loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub radio: EncoderModel,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
    /// Queue contents after the last step.
    pub queue: NegativeQueue,
}

/// Unit-norm vision keys for the given samples.
pub fn encode_keys(vision: &EncoderModel, ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    normalize_rows(&vision.embed(&ds.images(idx))?)
}

/// Trains a radio encoder so its normalised embedding picks out the frozen
/// vision key of the same scene against a queue of past keys. Reads
/// heatmaps and images of the train split only; labels are never touched.
pub fn pretrain(dataset: &Dataset, vision: &EncoderModel, cfg: &ContrastiveConfig, seed: u64) -> Result<PretrainOutput> {
    pretrain_from(dataset, vision, cfg, seed, None)
}

/// As [`pretrain`], optionally starting from an existing radio encoder.
pub fn pretrain_from(
    dataset: &Dataset,
    vision: &EncoderModel,
    cfg: &ContrastiveConfig,
    seed: u64,
    init: Option<EncoderModel>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    if !vision.is_frozen() {
        return Err(Error::Contract("vision encoder must be frozen before contrastive training".into()));
    }
    if vision.in_dim() != dataset.image_len() {
        return Err(Error::Dimension {
            op: "pretrain",
            lhs: vec![dataset.image_len()],
            rhs: vec![vision.in_dim()],
        });
    }
    let train = dataset.indices(Split::Train);
    let n = train.len();
    if n == 0 {
        return Err(Error::Usage("empty training split".into()));
    }
    // The teacher is frozen, so every key is fixed for the whole run.
    let keys = encode_keys(vision, dataset, train)?;
    let heatmaps = dataset.heatmaps(train);
    let d = vision.embed_dim();

    let mut radio = match init {
        Some(m) => m,
        None => EncoderModel::new(&cfg.encoder.dims(dataset.heatmap_len()), seed, "radio-init")?,
    };
    if radio.embed_dim() != d {
        return Err(Error::Config(format!(
            "radio embedding dim {} differs from vision embedding dim {d}",
            radio.embed_dim()
        )));
    }
    let mut opt = OptimizerState::new(&radio.params(), cfg.base_lr, cfg.momentum, cfg.weight_decay);
    let mut queue = NegativeQueue::new(cfg.queue_size, d)?;

    let shuffled = |epoch: usize| {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(seed, "pretrain-shuffle", epoch as u64));
        order
    };

    // Warm start: fill the queue from the first ⌈K/B⌉ batches of epoch 0.
    let first = shuffled(0);
    for batch in first.chunks(cfg.batch_size).take(cfg.queue_size.div_ceil(cfg.batch_size)) {
        queue.enqueue(&keys.select_rows(batch)?)?;
    }

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = (steps_per_epoch * cfg.epochs) as u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = if epoch == 0 { first.clone() } else { shuffled(epoch) };
        let epoch_lr = cosine_lr(opt.step_count, total, cfg.base_lr)?;
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let k_plus = keys.select_rows(batch)?;
            let x = heatmaps.select_rows(batch)?;
            radio.zero_grad();
            let mut g = Graph::new();
            let bound = radio.bind(&mut g);
            let xv = g.constant(x);
            let raw = radio.forward(&mut g, &bound, xv)?;
            let q = g.l2_normalize(raw).map_err(|e| Error::Numeric {
                epoch,
                step,
                what: e.to_string(),
            })?;
            let loss = info_nce(&mut g, q, &k_plus, &queue, cfg.tau)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    step,
                    what: "non-finite contrastive loss".into(),
                });
            }
            g.backward(loss)?;
            radio.collect_grads(&g, &bound);
            opt.lr = cosine_lr(opt.step_count, total, cfg.base_lr)?;
            opt.step(&mut radio.params_mut())?;
            queue.enqueue(&k_plus)?;
            loss_sum += lv * batch.len() as f64;
        }
        history.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            mean_loss: loss_sum / n as f64,
            uniform_loss: cfg.uniform_loss(),
        });
    }
    radio.zero_grad();
    Ok(PretrainOutput {
        radio,
        optimizer: opt,
        history,
        queue,
    })
}

/// Forward-only InfoNCE of `radio` on a fixed batch.
pub fn evaluate_info_nce(
    radio: &EncoderModel,
    heatmaps: &Tensor,
    keys: &Tensor,
    queue: &NegativeQueue,
    tau: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let q = normalize_rows(&radio.embed(heatmaps)?)?;
    let qv = g.constant(q);
    let loss = info_nce(&mut g, qv, keys, queue, tau)?;
    Ok(g.value(loss).data()[0])
}
