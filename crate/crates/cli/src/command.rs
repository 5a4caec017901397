use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xmc_core::config::ExperimentConfig;
use xmc_core::contrastive::pretrain;
use xmc_core::datagen::{make_dataset, make_vision_dataset, split_path, Dataset, GaussianPairConfig, Split};
use xmc_core::eval::{
    extract_features, finetune, loss_curves_csv, pretrain_history_csv, probe_encoder, probe_results_csv, project_2d,
    projection_csv, run_pool, separation_score, supervised_baseline, sweep_csv, sweep_labels, sweep_queue,
};
use xmc_core::mi::{estimate_mi_gaussian, mi_csv, MiRow};
use xmc_core::models::{pretrain_vision, Checkpoint, EncoderModel};
use xmc_core::tensor::normalize_rows;
use xmc_core::{Error, Result};

use crate::artifacts::RunDir;

pub const DATASET: &str = "dataset.xmcd";
pub const VISION_DATA: &str = "vision.xmcd";
pub const VISION_CKPT: &str = "vision.xmck";
pub const RADIO_CKPT: &str = "radio.xmck";
pub const FINETUNED_CKPT: &str = "finetuned.xmck";

/// A command with every input path resolved. Stored in manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    GenData,
    PretrainVision { dataset: PathBuf, vision_data: PathBuf },
    Pretrain { dataset: PathBuf, vision: PathBuf },
    Probe { dataset: PathBuf, encoder: PathBuf },
    Finetune { dataset: PathBuf, encoder: PathBuf },
    Baseline { dataset: PathBuf },
    SweepK { dataset: PathBuf, vision: PathBuf },
    SweepLabels { dataset: PathBuf, encoder: PathBuf },
    EstimateMi,
    Project { dataset: PathBuf, encoder: PathBuf },
}

fn split_name(name: &str) -> String {
    split_path(Path::new(name)).to_string_lossy().into_owned()
}

fn owned(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::PretrainVision { .. } => "pretrain-vision",
            Command::Pretrain { .. } => "pretrain",
            Command::Probe { .. } => "probe",
            Command::Finetune { .. } => "finetune",
            Command::Baseline { .. } => "baseline",
            Command::SweepK { .. } => "sweep-k",
            Command::SweepLabels { .. } => "sweep-labels",
            Command::EstimateMi => "estimate-mi",
            Command::Project { .. } => "project",
        }
    }

    /// Files written into the run directory, manifest excluded.
    pub fn outputs(&self) -> Vec<String> {
        match self {
            Command::GenData => vec![
                DATASET.into(),
                split_name(DATASET),
                VISION_DATA.into(),
                split_name(VISION_DATA),
            ],
            Command::PretrainVision { .. } => owned(&[VISION_CKPT, "vision_report.json"]),
            Command::Pretrain { .. } => owned(&[RADIO_CKPT, "pretrain_history.csv"]),
            Command::Probe { .. } => owned(&["probe.csv", "probe_curve.csv"]),
            Command::Finetune { .. } => owned(&["finetune.csv", "finetune_curve.csv", FINETUNED_CKPT]),
            Command::Baseline { .. } => owned(&["baseline.csv", "baseline_curve.csv"]),
            Command::SweepK { .. } => owned(&["sweep_k.csv", "sweep_k_runs.csv"]),
            Command::SweepLabels { .. } => {
                owned(&["sweep_labels.csv", "sweep_labels_runs.csv", "sweep_labels_curves.csv"])
            }
            Command::EstimateMi => owned(&["mi.csv"]),
            Command::Project { .. } => owned(&["projection.csv", "projection.json"]),
        }
    }

    pub fn run(&self, cfg: &ExperimentConfig, run: &mut RunDir, jobs: usize) -> Result<()> {
        let seed = cfg.seed;
        match self {
            Command::GenData => {
                let ds = make_dataset(&cfg.datagen.sim, cfg.datagen.n, seed)?;
                let vds = make_vision_dataset(&cfg.datagen.sim, cfg.datagen.n, seed)?;
                for (name, d) in [(DATASET, &ds), (VISION_DATA, &vds)] {
                    run.output(name, d.encode());
                    run.output(&split_name(name), d.encode_split());
                }
            }
            Command::PretrainVision { dataset, vision_data } => {
                let ds = load_dataset(run, dataset)?;
                let vds = load_dataset(run, vision_data)?;
                let (model, report) = pretrain_vision(&vds, &ds, &cfg.vision, seed)?;
                if let Some(acc) = report.held_out_accuracy {
                    eprintln!("vision teacher held-out accuracy {acc:.4}");
                }
                run.output(VISION_CKPT, Checkpoint { model, optimizer: None }.encode());
                let report = serde_json::json!({ "held_out_accuracy": report.held_out_accuracy });
                run.output("vision_report.json", json_bytes(&report));
            }
            Command::Pretrain { dataset, vision } => {
                let ds = load_dataset(run, dataset)?;
                let teacher = load_encoder(run, vision)?;
                let out = pretrain(&ds, &teacher, &cfg.contrastive, seed)?;
                if let Some(h) = out.history.last() {
                    eprintln!("final epoch loss {:.4} (uniform {:.4})", h.mean_loss, h.uniform_loss);
                }
                run.output(
                    RADIO_CKPT,
                    Checkpoint {
                        model: out.radio,
                        optimizer: Some(out.optimizer),
                    }
                    .encode(),
                );
                run.output("pretrain_history.csv", pretrain_history_csv(&out.history)?);
            }
            Command::Probe { dataset, encoder } => {
                let ds = load_dataset(run, dataset)?;
                let enc = load_encoder(run, encoder)?;
                let r = probe_encoder(&enc, &ds, cfg.eval.fraction, &cfg.eval.probe, seed)?;
                eprintln!("linear probe accuracy {:.4}", r.test_accuracy);
                let runs = [r];
                run.output("probe.csv", probe_results_csv(&runs)?);
                run.output("probe_curve.csv", loss_curves_csv(&runs)?);
            }
            Command::Finetune { dataset, encoder } => {
                let ds = load_dataset(run, dataset)?;
                let enc = load_encoder(run, encoder)?;
                let (r, clf) = finetune(&enc, &ds, cfg.eval.fraction, &cfg.eval.finetune, seed)?;
                eprintln!("fine-tune accuracy {:.4}", r.test_accuracy);
                let runs = [r];
                run.output("finetune.csv", probe_results_csv(&runs)?);
                run.output("finetune_curve.csv", loss_curves_csv(&runs)?);
                let model = clf.encoder.expect("fine-tuning keeps its encoder");
                run.output(FINETUNED_CKPT, Checkpoint { model, optimizer: None }.encode());
            }
            Command::Baseline { dataset } => {
                let ds = load_dataset(run, dataset)?;
                let (r, _) =
                    supervised_baseline(&ds, cfg.eval.fraction, &cfg.contrastive.encoder, &cfg.eval.baseline, seed)?;
                eprintln!("supervised baseline accuracy {:.4}", r.test_accuracy);
                let runs = [r];
                run.output("baseline.csv", probe_results_csv(&runs)?);
                run.output("baseline_curve.csv", loss_curves_csv(&runs)?);
            }
            Command::SweepK { dataset, vision } => {
                let ds = load_dataset(run, dataset)?;
                let teacher = load_encoder(run, vision)?;
                let t = sweep_queue(
                    &ds,
                    &teacher,
                    &cfg.contrastive,
                    &cfg.eval.probe,
                    &cfg.eval.queue_sizes,
                    &cfg.eval.seeds,
                    jobs,
                )?;
                run.output("sweep_k.csv", sweep_csv(&[&t])?);
                run.output("sweep_k_runs.csv", probe_results_csv(&t.runs)?);
            }
            Command::SweepLabels { dataset, encoder } => {
                let ds = load_dataset(run, dataset)?;
                let enc = load_encoder(run, encoder)?;
                let s = sweep_labels(
                    &ds,
                    &[enc],
                    &cfg.eval.fractions,
                    &cfg.eval.seeds,
                    &cfg.eval.finetune,
                    &cfg.eval.baseline,
                    &cfg.contrastive.encoder,
                    jobs,
                )?;
                let runs: Vec<_> = s.fine_tune.runs.iter().chain(&s.baseline.runs).cloned().collect();
                run.output("sweep_labels.csv", sweep_csv(&[&s.fine_tune, &s.baseline])?);
                run.output("sweep_labels_runs.csv", probe_results_csv(&runs)?);
                run.output("sweep_labels_curves.csv", loss_curves_csv(&runs)?);
            }
            Command::EstimateMi => {
                let mi = &cfg.mi;
                let mut arms = Vec::new();
                for &rho in &mi.rhos {
                    for &k in &mi.queue_sizes {
                        for &s in &mi.seeds {
                            arms.push((rho, k, s));
                        }
                    }
                }
                let rows = run_pool(jobs, &arms, |&(rho, k, s)| {
                    let pairs = GaussianPairConfig {
                        dim: mi.dim,
                        rho,
                        count: 1,
                        seed: s,
                    };
                    Ok(MiRow {
                        rho,
                        dim: mi.dim,
                        k,
                        seed: s,
                        estimate: estimate_mi_gaussian(&pairs, &mi.critic, k)?,
                    })
                })?;
                run.output("mi.csv", mi_csv(&rows)?);
            }
            Command::Project { dataset, encoder } => {
                let ds = load_dataset(run, dataset)?;
                let enc = load_encoder(run, encoder)?;
                let random = EncoderModel::new(&enc.dims(), seed, "radio-init")?;
                let (x, y) = extract_features(&enc, &ds, Split::Test)?;
                let p = project_2d(&normalize_rows(&x)?)?;
                let score = separation_score(&p.coords, &y)?;
                let (xr, _) = extract_features(&random, &ds, Split::Test)?;
                let random_score = separation_score(&project_2d(&normalize_rows(&xr)?)?.coords, &y)?;
                eprintln!("separation {score:.4}, random-init encoder {random_score:.4}");
                run.output("projection.csv", projection_csv(&p.coords, &y)?);
                let summary = serde_json::json!({
                    "separation_score": score,
                    "random_encoder_separation_score": random_score,
                    "explained_variance_ratio": p.explained_variance_ratio,
                });
                run.output("projection.json", json_bytes(&summary));
            }
        }
        Ok(())
    }
}

fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json value serialises");
    b.push(b'\n');
    b
}

fn load_dataset(run: &mut RunDir, path: &Path) -> Result<Dataset> {
    run.input(path)?;
    run.input(&split_path(path))?;
    Dataset::load(path)
}

fn load_encoder(run: &mut RunDir, path: &Path) -> Result<EncoderModel> {
    let bytes = run.input(path)?;
    let ckpt = Checkpoint::decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })?;
    Ok(ckpt.model)
}
