use rayon::prelude::*;
use serde::Serialize;

use super::probe::{feasible_fractions, finetune, probe_encoder, supervised_baseline, ProbeConfig, ProbeMode, ProbeResult};
use crate::contrastive::{pretrain, ContrastiveConfig};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{EncoderConfig, EncoderModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    QueueSize,
    LabelFraction,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds.
    pub std_accuracy: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub mode: ProbeMode,
    pub rows: Vec<SweepRow>,
    /// Every individual run, ordered by axis value then seed.
    pub runs: Vec<ProbeResult>,
}

impl SweepTable {
    pub fn row(&self, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

pub const MIN_SEEDS: usize = 3;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn aggregate(axis: SweepAxis, mode: ProbeMode, values: &[f64], runs: Vec<(f64, ProbeResult)>) -> SweepTable {
    let rows = values
        .iter()
        .map(|&v| {
            let accs: Vec<f64> = runs.iter().filter(|(k, _)| *k == v).map(|(_, r)| r.test_accuracy).collect();
            let (m, s) = mean_std(&accs);
            SweepRow {
                value: v,
                mean_accuracy: m,
                std_accuracy: s,
                seeds: accs.len(),
            }
        })
        .collect();
    SweepTable {
        axis,
        mode,
        rows,
        runs: runs.into_iter().map(|(_, r)| r).collect(),
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::Config(format!("sweeps need at least {MIN_SEEDS} seeds, got {}", seeds.len())));
    }
    Ok(())
}

/// Runs `f` over `items` on a pool of `jobs` threads; results keep input order.
pub fn run_pool<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Batch size shared by every arm of a queue sweep: the configured one,
/// capped at the smallest queue so all arms see the same number of steps.
pub fn batch_for_queue(cfg: &ContrastiveConfig, ks: &[usize]) -> usize {
    ks.iter().fold(cfg.batch_size, |b, &k| b.min(k))
}

/// Pre-trains one radio encoder per `(K, seed)` and linear-probes it with all
/// training labels.
pub fn sweep_queue(
    ds: &Dataset,
    vision: &EncoderModel,
    base: &ContrastiveConfig,
    probe: &ProbeConfig,
    ks: &[usize],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepTable> {
    check_seeds(seeds)?;
    let batch_size = batch_for_queue(base, ks);
    let arms: Vec<(usize, u64)> = ks.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let runs = run_pool(jobs, &arms, |&(k, seed)| {
        let cfg = ContrastiveConfig {
            queue_size: k,
            batch_size,
            ..base.clone()
        };
        let out = pretrain(ds, vision, &cfg, seed)?;
        Ok((k as f64, probe_encoder(&out.radio, ds, 1.0, probe, seed)?))
    })?;
    let values: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    Ok(aggregate(SweepAxis::QueueSize, ProbeMode::LinearProbe, &values, runs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelSweep {
    pub fine_tune: SweepTable,
    pub baseline: SweepTable,
}

/// Fine-tunes pre-trained encoders and trains fresh baselines at each label
/// fraction. `encoders` holds one encoder shared by all seeds, or one per seed.
#[allow(clippy::too_many_arguments)]
pub fn sweep_labels(
    ds: &Dataset,
    encoders: &[EncoderModel],
    fractions: &[f64],
    seeds: &[u64],
    finetune_cfg: &ProbeConfig,
    baseline_cfg: &ProbeConfig,
    baseline_encoder: &EncoderConfig,
    jobs: usize,
) -> Result<LabelSweep> {
    check_seeds(seeds)?;
    if encoders.len() != 1 && encoders.len() != seeds.len() {
        return Err(Error::Usage(format!(
            "{} encoders for {} seeds; pass one or one per seed",
            encoders.len(),
            seeds.len()
        )));
    }
    let fr = feasible_fractions(fractions, ds.indices(Split::Train).len());
    let mut arms = Vec::new();
    for &f in &fr {
        for (i, &s) in seeds.iter().enumerate() {
            for mode in [ProbeMode::FineTune, ProbeMode::SupervisedBaseline] {
                arms.push((f, i, s, mode));
            }
        }
    }
    let runs = run_pool(jobs, &arms, |&(f, i, s, mode)| {
        let res = match mode {
            ProbeMode::FineTune => finetune(&encoders[i % encoders.len()], ds, f, finetune_cfg, s)?.0,
            _ => supervised_baseline(ds, f, baseline_encoder, baseline_cfg, s)?.0,
        };
        Ok((f, res))
    })?;
    let (ft, bl): (Vec<_>, Vec<_>) = runs.into_iter().partition(|(_, r)| r.mode == ProbeMode::FineTune);
    Ok(LabelSweep {
        fine_tune: aggregate(SweepAxis::LabelFraction, ProbeMode::FineTune, &fr, ft),
        baseline: aggregate(SweepAxis::LabelFraction, ProbeMode::SupervisedBaseline, &fr, bl),
    })
}
