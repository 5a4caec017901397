use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{Class, Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{
    Classifier, ClassifierHead, EncoderConfig, EncoderModel, EpochStats, FeatureNorm, FitConfig, HeldOutSet,
    LabeledSet,
};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    LinearProbe,
    FineTune,
    SupervisedBaseline,
}

impl ProbeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeMode::LinearProbe => "linear-probe",
            ProbeMode::FineTune => "fine-tune",
            ProbeMode::SupervisedBaseline => "supervised-baseline",
        }
    }
}

/// Downstream training settings shared by the probe, fine-tune and baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub fit: FitConfig,
    /// Feed the head unit-norm embeddings, the geometry pre-training shapes.
    pub unit_norm: bool,
    /// Standardise head inputs with statistics of the unlabelled train split.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            unit_norm: true,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    /// The baseline default: same optimiser, 128 epochs, raw embeddings.
    pub fn baseline() -> Self {
        Self {
            fit: FitConfig {
                epochs: 128,
                ..FitConfig::default()
            },
            unit_norm: false,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub label_fraction: f64,
    pub mode: ProbeMode,
    pub seed: u64,
    pub n_labels: usize,
    /// Accuracy after the last epoch, on the test split.
    pub test_accuracy: f64,
    /// `(epoch, test loss)`, epochs 1-based.
    pub test_loss_curve: Vec<(usize, f64)>,
    /// Epoch with the lowest test loss, and the accuracy there.
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

impl ProbeResult {
    fn from_history(mode: ProbeMode, fraction: f64, seed: u64, n_labels: usize, hist: &[EpochStats]) -> Self {
        let curve: Vec<(usize, f64)> = hist.iter().map(|s| (s.epoch, s.test_loss.unwrap())).collect();
        let best = hist
            .iter()
            .min_by(|a, b| a.test_loss.unwrap().total_cmp(&b.test_loss.unwrap()))
            .unwrap();
        Self {
            label_fraction: fraction,
            mode,
            seed,
            n_labels,
            test_accuracy: hist.last().unwrap().test_accuracy.unwrap(),
            test_loss_curve: curve,
            best_epoch: best.epoch,
            best_accuracy: best.test_accuracy.unwrap(),
        }
    }
}

/// Embeddings of every sample in `split`, in split order, with their labels.
pub fn extract_features(encoder: &EncoderModel, ds: &Dataset, split: Split) -> Result<(Tensor, Vec<usize>)> {
    let idx = ds.indices(split);
    Ok((encoder.embed(&ds.heatmaps(idx))?, ds.labels(idx)))
}

/// Number of labels used at `fraction` of `n` training samples.
pub fn label_budget(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    // Guard against 0.01 * 1600 = 16.000000000000004 rounding up.
    let raw = fraction * n as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    Ok((k as usize).clamp(1, n))
}

/// Smallest fraction that still leaves one label per class.
pub fn min_feasible_fraction(n_train: usize) -> f64 {
    (Class::COUNT as f64 / n_train as f64).min(1.0)
}

/// Replaces fractions too small to cover every class with the smallest
/// feasible one, dropping duplicates and keeping order.
pub fn feasible_fractions(fractions: &[f64], n_train: usize) -> Vec<f64> {
    let lo = min_feasible_fraction(n_train);
    let mut out: Vec<f64> = Vec::new();
    for &f in fractions {
        let f = if label_budget(f, n_train).map_or(true, |k| k < Class::COUNT) { lo } else { f };
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

/// Positions into `labels` forming a class-stratified subsample of
/// `⌈fraction·N⌉` items. Per-class counts differ by at most one.
pub fn stratified_subsample(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let total = label_budget(fraction, labels.len())?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); Class::COUNT];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut r = rng::stream(seed, "subsample", 0);
    for c in by_class.iter_mut() {
        c.shuffle(&mut r);
    }
    let base = total / Class::COUNT;
    let extra = total % Class::COUNT;
    // Which classes get the extra label is itself a seeded choice.
    let mut order: Vec<usize> = (0..Class::COUNT).collect();
    order.shuffle(&mut r);
    let mut want = vec![base; Class::COUNT];
    for &c in order.iter().take(extra) {
        want[c] += 1;
    }
    let mut picked = Vec::with_capacity(total);
    for (c, pool) in by_class.iter().enumerate() {
        if want[c] == 0 || pool.len() < want[c] {
            return Err(Error::Stratification { class: c });
        }
        picked.extend_from_slice(&pool[..want[c]]);
    }
    picked.sort_unstable();
    Ok(picked)
}

fn labeled_subset(x: &Tensor, y: &[usize], fraction: f64, seed: u64) -> Result<LabeledSet> {
    let pick = stratified_subsample(y, fraction, seed)?;
    Ok(LabeledSet {
        x: x.select_rows(&pick)?,
        y: pick.iter().map(|&i| y[i]).collect(),
    })
}

/// Trains a softmax linear layer on frozen features. Standardisation
/// statistics come from all train-split features, unlabelled.
pub fn linear_probe(
    train: &LabeledSet,
    test: &HeldOutSet,
    fraction: f64,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let (_, d) = train.x.dims2()?;
    let sub = labeled_subset(&train.x, &train.y, fraction, seed)?;
    let mut clf = Classifier {
        encoder: None,
        unit_norm: cfg.unit_norm,
        norm: None,
        head: ClassifierHead::zeros(d, Class::COUNT),
    };
    if cfg.standardize {
        clf.norm = Some(FeatureNorm::fit(&clf.features(&train.x)?)?);
    }
    let hist = clf.fit(&sub, Some(test), &cfg.fit, seed)?;
    Ok(ProbeResult::from_history(
        ProbeMode::LinearProbe,
        fraction,
        seed,
        sub.y.len(),
        &hist,
    ))
}

fn split_sets(ds: &Dataset) -> (LabeledSet, HeldOutSet) {
    let tr = ds.indices(Split::Train);
    let te = ds.indices(Split::Test);
    (
        LabeledSet {
            x: ds.heatmaps(tr),
            y: ds.labels(tr),
        },
        HeldOutSet {
            x: ds.heatmaps(te),
            y: ds.labels(te),
        },
    )
}

fn train_end_to_end(
    encoder: EncoderModel,
    ds: &Dataset,
    fraction: f64,
    cfg: &ProbeConfig,
    seed: u64,
    mode: ProbeMode,
) -> Result<(ProbeResult, Classifier)> {
    let (train, test) = split_sets(ds);
    let sub = labeled_subset(&train.x, &train.y, fraction, seed)?;
    if encoder.is_frozen() {
        return Err(Error::Contract("cannot fine-tune a frozen encoder".into()));
    }
    let d = encoder.embed_dim();
    let mut clf = Classifier {
        encoder: Some(encoder),
        unit_norm: cfg.unit_norm,
        norm: None,
        head: ClassifierHead::zeros(d, Class::COUNT),
    };
    if cfg.standardize {
        clf.norm = Some(FeatureNorm::fit(&clf.features(&train.x)?)?);
    }
    let hist = clf.fit(&sub, Some(&test), &cfg.fit, seed)?;
    let res = ProbeResult::from_history(mode, fraction, seed, sub.y.len(), &hist);
    Ok((res, clf))
}

/// Trains encoder and head together, starting from `encoder`.
pub fn finetune(
    encoder: &EncoderModel,
    ds: &Dataset,
    fraction: f64,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ProbeResult, Classifier)> {
    train_end_to_end(encoder.clone(), ds, fraction, cfg, seed, ProbeMode::FineTune)
}

/// Same architecture and protocol as [`finetune`], from a fresh random
/// encoder.
pub fn supervised_baseline(
    ds: &Dataset,
    fraction: f64,
    enc: &EncoderConfig,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ProbeResult, Classifier)> {
    let encoder = EncoderModel::new(&enc.dims(ds.heatmap_len()), seed, "baseline-init")?;
    train_end_to_end(encoder, ds, fraction, cfg, seed, ProbeMode::SupervisedBaseline)
}

/// Linear probe of `encoder` on the dataset's own splits.
pub fn probe_encoder(
    encoder: &EncoderModel,
    ds: &Dataset,
    fraction: f64,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let (xtr, ytr) = extract_features(encoder, ds, Split::Train)?;
    let (xte, yte) = extract_features(encoder, ds, Split::Test)?;
    linear_probe(&LabeledSet { x: xtr, y: ytr }, &HeldOutSet { x: xte, y: yte }, fraction, cfg, seed)
}
