//! `xmc`: data generation, pre-training, evaluation and MI estimation.
//!
//! Every command reads a TOML config (`--config`, all keys optional), writes
//! its outputs into a run directory (`--out`) atomically, and leaves a
//! `<command>.manifest.json` next to them. `xmc replay` re-executes a
//! manifest.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing input file, 3 bad
//! configuration, 4 numeric failure during training.

mod artifacts;
mod command;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xmc_core::config::ExperimentConfig;
use xmc_core::{Error, Result};

use artifacts::{Manifest, RunDir};
use command::{Command, DATASET, FINETUNED_CKPT, RADIO_CKPT, VISION_CKPT, VISION_DATA};

#[derive(Parser)]
#[command(name = "xmc", version, about = "Cross-modal radio-visual contrastive learning experiments")]
struct Cli {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for outputs (and default location of inputs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "XMC_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate the paired dataset and the disjoint teacher set.
    GenData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train (or randomly initialise) and freeze the vision teacher.
    PretrainVision {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vision_data: Option<PathBuf>,
    },
    /// Contrastive pre-training of the radio encoder.
    Pretrain {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vision: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        queue_size: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Linear probe on frozen radio embeddings.
    Probe {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Fine-tune the pre-trained radio encoder with a classifier head.
    Finetune {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train the same architecture from scratch on labels only.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Linear-probe accuracy against negative-queue size.
    SweepK {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vision: Option<PathBuf>,
    },
    /// Fine-tune and baseline accuracy against label fraction.
    SweepLabels {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// InfoNCE lower bounds on correlated Gaussians with known MI.
    EstimateMi {
        /// Dimension of each Gaussian variable
        #[arg(long)]
        dim: Option<usize>,
        /// Comma-separated correlations
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
        /// Comma-separated negative counts
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// 2-D PCA of test embeddings and a cluster-separation score.
    Project {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
    /// Print the resolved config as TOML.
    ShowConfig,
}

fn pick(given: Option<PathBuf>, dir: &Path, default: &str) -> PathBuf {
    let p = given.unwrap_or_else(|| dir.join(default));
    std::path::absolute(&p).unwrap_or(p)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn resolve(cli: Cli) -> Result<Option<(Command, ExperimentConfig, PathBuf, bool, usize)>> {
    if let Sub::Replay { manifest } = &cli.cmd {
        let m = Manifest::load(manifest)?;
        m.check_inputs()?;
        let cfg = ExperimentConfig::from_toml(&m.config)?;
        let out = cli
            .out
            .ok_or_else(|| Error::Usage("replay needs --out".into()))?;
        return Ok(Some((m.command, cfg, out, cli.force, cli.jobs)));
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    let dir = cli.out.clone().unwrap_or_else(|| cfg.io.out_dir.clone());
    let cmd = match cli.cmd {
        Sub::GenData { n } => {
            set(&mut cfg.datagen.n, n);
            Command::GenData
        }
        Sub::PretrainVision { dataset, vision_data } => Command::PretrainVision {
            dataset: pick(dataset, &dir, DATASET),
            vision_data: pick(vision_data, &dir, VISION_DATA),
        },
        Sub::Pretrain {
            dataset,
            vision,
            epochs,
            queue_size,
            tau,
        } => {
            set(&mut cfg.contrastive.epochs, epochs);
            set(&mut cfg.contrastive.queue_size, queue_size);
            set(&mut cfg.contrastive.tau, tau);
            Command::Pretrain {
                dataset: pick(dataset, &dir, DATASET),
                vision: pick(vision, &dir, VISION_CKPT),
            }
        }
        Sub::Probe {
            dataset,
            encoder,
            fraction,
        } => {
            set(&mut cfg.eval.fraction, fraction);
            Command::Probe {
                dataset: pick(dataset, &dir, DATASET),
                encoder: pick(encoder, &dir, RADIO_CKPT),
            }
        }
        Sub::Finetune {
            dataset,
            encoder,
            fraction,
        } => {
            set(&mut cfg.eval.fraction, fraction);
            Command::Finetune {
                dataset: pick(dataset, &dir, DATASET),
                encoder: pick(encoder, &dir, RADIO_CKPT),
            }
        }
        Sub::Baseline { dataset, fraction } => {
            set(&mut cfg.eval.fraction, fraction);
            Command::Baseline {
                dataset: pick(dataset, &dir, DATASET),
            }
        }
        Sub::SweepK { dataset, vision } => Command::SweepK {
            dataset: pick(dataset, &dir, DATASET),
            vision: pick(vision, &dir, VISION_CKPT),
        },
        Sub::SweepLabels { dataset, encoder } => Command::SweepLabels {
            dataset: pick(dataset, &dir, DATASET),
            encoder: pick(encoder, &dir, RADIO_CKPT),
        },
        Sub::EstimateMi { dim, rho, k } => {
            set(&mut cfg.mi.dim, dim);
            set(&mut cfg.mi.rhos, rho);
            set(&mut cfg.mi.queue_sizes, k);
            Command::EstimateMi
        }
        Sub::Project { dataset, encoder } => Command::Project {
            dataset: pick(dataset, &dir, DATASET),
            encoder: pick(encoder, &dir, FINETUNED_CKPT),
        },
        Sub::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            return Ok(None);
        }
        Sub::Replay { .. } => unreachable!(),
    };
    cfg.validate()?;
    Ok(Some((cmd, cfg, dir, cli.force, cli.jobs)))
}

fn execute(cli: Cli) -> Result<()> {
    let Some((cmd, cfg, dir, force, jobs)) = resolve(cli)? else {
        return Ok(());
    };
    let mut run = RunDir::new(&dir, force);
    let mut names = cmd.outputs();
    names.push(format!("{}.manifest.json", cmd.name()));
    run.claim(&names)?;
    cmd.run(&cfg, &mut run, jobs.max(1))?;
    let manifest = run.commit(&cmd, cfg.to_toml())?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Config(_) => 3,
        Error::Numeric { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = match &cli.cmd {
        Sub::Replay { .. } => "replay",
        Sub::ShowConfig => "show-config",
        Sub::GenData { .. } => "gen-data",
        Sub::PretrainVision { .. } => "pretrain-vision",
        Sub::Pretrain { .. } => "pretrain",
        Sub::Probe { .. } => "probe",
        Sub::Finetune { .. } => "finetune",
        Sub::Baseline { .. } => "baseline",
        Sub::SweepK { .. } => "sweep-k",
        Sub::SweepLabels { .. } => "sweep-labels",
        Sub::EstimateMi { .. } => "estimate-mi",
        Sub::Project { .. } => "project",
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xmc {stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
