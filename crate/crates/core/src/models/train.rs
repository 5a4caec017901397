//! Supervised softmax classification on top of an optional encoder.

use serde::{Deserialize, Serialize};

use super::encoder::{ClassifierHead, EncoderModel, FeatureNorm};
use super::optim::{cosine_lr, OptimizerState};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::tensor::{logsumexp, normalize_rows, softmax_rows, Tensor};

/// Inputs and labels that may drive gradients.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub x: Tensor,
    pub y: Vec<usize>,
}

/// Inputs and labels that are only ever evaluated, never trained on.
#[derive(Clone, Debug)]
pub struct HeldOutSet {
    pub x: Tensor,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine decay over all steps; constant learning rate otherwise.
    pub cosine: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 32,
            batch_size: 16,
            cosine: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid fit config {self:?}")));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("invalid fit config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// `mean_b [ logsumexp(logits_b) − logits_b[y_b] ]`
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let lse = g.logsumexp_row(logits)?;
    let picked = g.gather(logits, labels)?;
    let nll = g.sub(lse, picked)?;
    Ok(g.mean(nll))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// Trained jointly unless frozen; `None` means inputs are already features.
    pub encoder: Option<EncoderModel>,
    /// Project features onto the unit sphere before `norm`.
    pub unit_norm: bool,
    pub norm: Option<FeatureNorm>,
    pub head: ClassifierHead,
}

impl Classifier {
    /// Features the head sees, computed without recording.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let f = match &self.encoder {
            Some(e) => e.embed(x)?,
            None => x.clone(),
        };
        let f = if self.unit_norm { normalize_rows(&f)? } else { f };
        match &self.norm {
            Some(n) => n.apply(&f),
            None => Ok(f),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.logits(&self.features(x)?)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let l = self.logits(x)?;
        Tensor::new(l.shape().to_vec(), softmax_rows(l.data(), self.head.classes()))
    }

    /// Mean cross-entropy and top-1 accuracy.
    pub fn evaluate(&self, set: &HeldOutSet) -> Result<(f64, f64)> {
        let l = self.logits(&set.x)?;
        let c = self.head.classes();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (row, &y) in l.data().chunks(c).zip(&set.y) {
            loss += logsumexp(row) - row[y];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            correct += (pred == y) as usize;
        }
        let n = set.y.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    fn trainable_params(&mut self) -> Vec<&mut Tensor> {
        let mut ps: Vec<&mut Tensor> = match &mut self.encoder {
            Some(e) if !e.is_frozen() => e.params_mut(),
            _ => Vec::new(),
        };
        ps.extend(self.head.params_mut());
        ps
    }

    fn zero_grads(&mut self) {
        self.trainable_params().into_iter().for_each(Tensor::clear_grad);
    }

    /// Minibatch SGD on softmax cross-entropy. `seed` fixes the shuffles.
    pub fn fit(
        &mut self,
        train: &LabeledSet,
        held_out: Option<&HeldOutSet>,
        cfg: &FitConfig,
        seed: u64,
    ) -> Result<Vec<EpochStats>> {
        cfg.validate()?;
        let (n, _) = train.x.dims2()?;
        if n != train.y.len() || n == 0 {
            return Err(Error::Usage("inputs and labels differ in length".into()));
        }
        if train.y.iter().any(|&y| y >= self.head.classes()) {
            return Err(Error::Usage("label out of range".into()));
        }
        let mut opt = {
            let ps = self.trainable_params();
            let refs: Vec<&Tensor> = ps.iter().map(|p| &**p).collect();
            OptimizerState::new(&refs, cfg.lr, cfg.momentum, cfg.weight_decay)
        };
        let steps_per_epoch = n.div_ceil(cfg.batch_size);
        let total = (steps_per_epoch * cfg.epochs) as u64;
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(seed, "fit-shuffle", epoch as u64));
            let mut loss_sum = 0.0;
            for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
                let x = train.x.select_rows(batch)?;
                let y: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
                let loss = self.train_step(&x, &y)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric {
                        epoch,
                        step,
                        what: "non-finite training loss".into(),
                    });
                }
                loss_sum += loss * batch.len() as f64;
                if cfg.cosine {
                    opt.lr = cosine_lr(opt.step_count, total, cfg.lr)?;
                }
                opt.step(&mut self.trainable_params())?;
            }
            let (test_loss, test_accuracy) = match held_out {
                Some(h) => {
                    let (l, a) = self.evaluate(h)?;
                    (Some(l), Some(a))
                }
                None => (None, None),
            };
            history.push(EpochStats {
                epoch: epoch + 1,
                train_loss: loss_sum / n as f64,
                test_loss,
                test_accuracy,
            });
        }
        Ok(history)
    }

    /// Forward, backward and gradient collection for one batch; returns the loss.
    fn train_step(&mut self, x: &Tensor, y: &[usize]) -> Result<f64> {
        self.zero_grads();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (mut h, bound) = match &self.encoder {
            Some(e) => {
                let b = e.bind(&mut g);
                (e.forward(&mut g, &b, xv)?, Some(b))
            }
            None => (xv, None),
        };
        if self.unit_norm {
            h = g.l2_normalize(h)?;
        }
        if let Some(nrm) = &self.norm {
            h = nrm.apply_graph(&mut g, h)?;
        }
        let hv = self.head.bind(&mut g);
        let logits = ClassifierHead::forward(&mut g, hv, h)?;
        let loss = softmax_cross_entropy(&mut g, logits, y)?;
        g.backward(loss)?;
        if let (Some(e), Some(b)) = (&mut self.encoder, &bound) {
            e.collect_grads(&g, b);
        }
        self.head.collect_grads(&g, hv);
        Ok(g.value(loss).data()[0])
    }
}
