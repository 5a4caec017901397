//! InfoNCE mutual-information lower bounds, checked against correlated
//! Gaussians whose MI is known in closed form.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contrastive::{info_nce, info_nce_joint, NegativeQueue};
use crate::datagen::{analytic_mi, gen_gaussian_pairs, GaussianPairConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{cosine_lr, EncoderModel, OptimizerState};
use crate::rng;
use crate::tensor::{normalize_rows, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiEstimate {
    pub k_negatives: usize,
    /// Held-out InfoNCE loss, nats.
    pub mean_loss: f64,
    /// `ln K − mean_loss`.
    pub mi_lower_bound: f64,
    pub true_mi: Option<f64>,
}

/// `ln k − mean_loss`, unclamped.
pub fn mi_lower_bound(mean_loss: f64, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("need at least one negative".into()));
    }
    if !(mean_loss >= 0.0) {
        return Err(Error::Domain(format!("loss must be >= 0, got {mean_loss}")));
    }
    Ok((k as f64).ln() - mean_loss)
}

/// Two linear encoders `dim → embed_dim` scored by cosine similarity over
/// `tau`, trained jointly with SGD on fresh-epoch shuffles of the train pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub embed_dim: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub train_pairs: usize,
    pub eval_pairs: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            tau: 0.1,
            batch_size: 32,
            steps: 3000,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            train_pairs: 16384,
            eval_pairs: 4096,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.embed_dim < 2 || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("critic needs embed_dim >= 2 and positive batch/steps".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if k < self.batch_size {
            return Err(Error::Config(format!("K = {k} smaller than batch size {}", self.batch_size)));
        }
        if self.train_pairs < self.batch_size || self.eval_pairs <= k {
            return Err(Error::Config("too few train or eval pairs".into()));
        }
        Ok(())
    }
}

/// Mean held-out InfoNCE of the critic `(fx, gy)`. Each batch is scored
/// against the `k` held-out keys that precede it.
fn held_out_loss(fx: &EncoderModel, gy: &EncoderModel, x: &Tensor, y: &Tensor, k: usize, b: usize, tau: f64) -> Result<f64> {
    let (n, _) = x.dims2()?;
    let q = normalize_rows(&fx.embed(x)?)?;
    let keys = normalize_rows(&gy.embed(y)?)?;
    let mut queue = NegativeQueue::new(k, keys.dims2()?.1)?;
    let warm: Vec<usize> = (0..k).collect();
    for chunk in warm.chunks(b) {
        queue.enqueue(&keys.select_rows(chunk)?)?;
    }
    let rest: Vec<usize> = (k..n).collect();
    let mut total = 0.0;
    for chunk in rest.chunks(b) {
        let kp = keys.select_rows(chunk)?;
        let mut g = Graph::new();
        let qv = g.constant(q.select_rows(chunk)?);
        let l = info_nce(&mut g, qv, &kp, &queue, tau)?;
        total += g.value(l).data()[0] * chunk.len() as f64;
        queue.enqueue(&kp)?;
    }
    Ok(total / rest.len() as f64)
}

/// Trains a critic on pairs from `pairs` and reports the held-out bound with
/// `k` negatives. Held-out pairs come from a separate stream.
pub fn estimate_mi_gaussian(pairs: &GaussianPairConfig, critic: &CriticConfig, k: usize) -> Result<MiEstimate> {
    pairs.validate()?;
    critic.validate(k)?;
    let seed = pairs.seed;
    let train = gen_gaussian_pairs(&GaussianPairConfig {
        count: critic.train_pairs,
        seed: rng::child_seed(seed, "mi-train", 0),
        ..pairs.clone()
    })?;
    let eval = gen_gaussian_pairs(&GaussianPairConfig {
        count: critic.eval_pairs,
        seed: rng::child_seed(seed, "mi-eval", 0),
        ..pairs.clone()
    })?;
    let dims = [pairs.dim, critic.embed_dim];
    let mut fx = EncoderModel::new(&dims, seed, "mi-critic-x")?;
    let mut gy = EncoderModel::new(&dims, seed, "mi-critic-y")?;
    let mut opt = {
        let mut ps = fx.params();
        ps.extend(gy.params());
        OptimizerState::new(&ps, critic.lr, critic.momentum, critic.weight_decay)
    };
    let b = critic.batch_size;
    let n = critic.train_pairs;
    let mut queue = NegativeQueue::new(k, critic.embed_dim)?;
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut cursor = 0usize;
    let mut next_batch = |order: &mut Vec<usize>| -> Vec<usize> {
        if cursor + b > order.len() {
            *order = (0..n).collect();
            order.shuffle(&mut rng::stream(seed, "mi-shuffle", epoch));
            epoch += 1;
            cursor = 0;
        }
        cursor += b;
        order[cursor - b..cursor].to_vec()
    };
    while !queue.is_full() {
        let idx = next_batch(&mut order);
        let keys = normalize_rows(&gy.embed(&train.y.select_rows(&idx)?)?)?;
        queue.enqueue(&keys)?;
    }
    for step in 0..critic.steps {
        let idx = next_batch(&mut order);
        fx.zero_grad();
        gy.zero_grad();
        let mut g = Graph::new();
        let bx = fx.bind(&mut g);
        let by = gy.bind(&mut g);
        let xv = g.constant(train.x.select_rows(&idx)?);
        let yv = g.constant(train.y.select_rows(&idx)?);
        let ex = fx.forward(&mut g, &bx, xv)?;
        let q = g.l2_normalize(ex)?;
        let ey = gy.forward(&mut g, &by, yv)?;
        let kp = g.l2_normalize(ey)?;
        let loss = info_nce_joint(&mut g, q, kp, &queue, critic.tau)?;
        let lv = g.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::Numeric {
                epoch: 0,
                step,
                what: "non-finite critic loss".into(),
            });
        }
        let keys = g.value(kp).clone();
        g.backward(loss)?;
        fx.collect_grads(&g, &bx);
        gy.collect_grads(&g, &by);
        opt.lr = cosine_lr(step as u64, critic.steps as u64, critic.lr)?;
        let mut ps = fx.params_mut();
        ps.extend(gy.params_mut());
        opt.step(&mut ps)?;
        queue.enqueue(&keys)?;
    }
    let mean_loss = held_out_loss(&fx, &gy, &eval.x, &eval.y, k, b, critic.tau)?;
    Ok(MiEstimate {
        k_negatives: k,
        mean_loss,
        mi_lower_bound: mi_lower_bound(mean_loss, k)?,
        true_mi: Some(analytic_mi(pairs.rho, pairs.dim)?),
    })
}

/// One row of the MI table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiRow {
    pub rho: f64,
    pub dim: usize,
    pub k: usize,
    pub seed: u64,
    pub estimate: MiEstimate,
}

/// `rho,dim,K,seed,mean_loss,mi_lower_bound,true_mi`
pub fn mi_csv(rows: &[MiRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
    w.write_record(["rho", "dim", "K", "seed", "mean_loss", "mi_lower_bound", "true_mi"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.rho.to_string(),
            r.dim.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            r.estimate.mean_loss.to_string(),
            r.estimate.mi_lower_bound.to_string(),
            r.estimate.true_mi.map_or(String::new(), |v| v.to_string()),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_arithmetic() {
        assert_eq!(mi_lower_bound(256f64.ln(), 256).unwrap(), 0.0);
        assert!((mi_lower_bound(2.0, 256).unwrap() - 3.5452).abs() < 5e-5);
        let uniform = mi_lower_bound(257f64.ln(), 256).unwrap();
        assert!(uniform < 0.0);
        assert!((uniform - (256.0f64 / 257.0).ln()).abs() < 1e-15);
        assert!(matches!(mi_lower_bound(1.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn estimate_identity_and_cap() {
        let est = estimate_mi_gaussian(
            &GaussianPairConfig {
                dim: 1,
                rho: 0.5,
                count: 1,
                seed: 3,
            },
            &CriticConfig {
                steps: 50,
                train_pairs: 512,
                eval_pairs: 256,
                ..CriticConfig::default()
            },
            32,
        )
        .unwrap();
        assert_eq!(est.mi_lower_bound, (32f64).ln() - est.mean_loss);
        assert!(est.mi_lower_bound <= (32f64).ln());
        assert!((est.true_mi.unwrap() - 0.1438410362).abs() < 1e-9);
    }

    #[test]
    fn queue_smaller_than_batch_rejected() {
        let r = estimate_mi_gaussian(
            &GaussianPairConfig {
                dim: 1,
                rho: 0.5,
                count: 1,
                seed: 3,
            },
            &CriticConfig::default(),
            16,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
