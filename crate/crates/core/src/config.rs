//! TOML experiment configuration. Every field has a default, so an empty
//! file (or none at all) is a complete configuration; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::datagen::SimConfig;
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, MIN_SEEDS};
use crate::mi::CriticConfig;
use crate::models::VisionConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; every stochastic stage derives its streams from it.
    pub seed: u64,
    pub datagen: DatagenSection,
    pub vision: VisionConfig,
    pub contrastive: ContrastiveConfig,
    pub eval: EvalSection,
    pub mi: MiSection,
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenSection {
    /// Paired samples in the main dataset. The teacher set adds `ceil(n/4)`.
    pub n: usize,
    pub sim: SimConfig,
}

impl Default for DatagenSection {
    fn default() -> Self {
        Self {
            n: 2000,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub probe: ProbeConfig,
    pub finetune: ProbeConfig,
    pub baseline: ProbeConfig,
    /// Label fraction for single `probe`, `finetune` and `baseline` runs.
    pub fraction: f64,
    pub fractions: Vec<f64>,
    pub queue_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            finetune: ProbeConfig::default(),
            baseline: ProbeConfig::baseline(),
            fraction: 1.0,
            fractions: vec![0.01, 0.05, 0.1, 0.5, 1.0],
            queue_sizes: vec![8, 32, 128, 256],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiSection {
    pub dim: usize,
    pub rhos: Vec<f64>,
    pub queue_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub critic: CriticConfig,
}

impl Default for MiSection {
    fn default() -> Self {
        Self {
            dim: 1,
            rhos: vec![0.0, 0.3, 0.6, 0.9],
            queue_sizes: vec![256],
            seeds: vec![0, 1, 2, 3, 4],
            critic: CriticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Run directory used when `--out` is not given.
    pub out_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn distinct<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().all(|(i, x)| !xs[..i].contains(x))
}

impl ExperimentConfig {
    /// Parses `text` laid over the defaults: a partial table keeps the
    /// section's own defaults for the keys it omits.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| err(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| err(&e))?;
        overlay(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.datagen.n < 8 {
            return Err(Error::Config(format!("datagen.n must be >= 8, got {}", self.datagen.n)));
        }
        self.datagen.sim.validate()?;
        self.vision.fit.validate()?;
        self.contrastive.validate()?;
        for p in [&self.eval.probe, &self.eval.finetune, &self.eval.baseline] {
            p.fit.validate()?;
        }
        let frac_ok = |f: &f64| *f > 0.0 && *f <= 1.0;
        if !frac_ok(&self.eval.fraction) || self.eval.fractions.is_empty() || !self.eval.fractions.iter().all(frac_ok) {
            return Err(Error::Config("label fractions must lie in (0, 1]".into()));
        }
        if self.eval.queue_sizes.is_empty() || self.eval.queue_sizes.contains(&0) {
            return Err(Error::Config("eval.queue_sizes must be non-empty and positive".into()));
        }
        for (name, seeds) in [("eval.seeds", &self.eval.seeds), ("mi.seeds", &self.mi.seeds)] {
            if seeds.len() < MIN_SEEDS || !distinct(seeds) {
                return Err(Error::Config(format!("{name} needs at least {MIN_SEEDS} distinct seeds")));
            }
        }
        if self.mi.dim == 0 || self.mi.rhos.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::Config("mi.dim must be positive and every |rho| < 1".into()));
        }
        for &k in &self.mi.queue_sizes {
            self.mi.critic.validate(k)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[contrastive]\ntua = 0.1", "[datagen.sim]\nnoise = 2"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[contrastive]\ntau = 0.2\nepochs = 3").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.contrastive.tau, 0.2);
        assert_eq!(cfg.contrastive.epochs, 3);
        assert_eq!(cfg.contrastive.base_lr, 0.03);
        assert_eq!(cfg.datagen, DatagenSection::default());
    }

    #[test]
    fn partial_nested_table_keeps_section_defaults() {
        let cfg = ExperimentConfig::from_toml("[vision.fit]\nepochs = 3\n[eval.baseline.fit]\nepochs = 5").unwrap();
        let want = VisionConfig::default().fit;
        assert_eq!(cfg.vision.fit.epochs, 3);
        assert_eq!((cfg.vision.fit.lr, cfg.vision.fit.cosine), (want.lr, want.cosine));
        assert_eq!(cfg.eval.baseline.fit.epochs, 5);
        assert!(!cfg.eval.baseline.unit_norm);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "[eval]\nseeds = [1, 2]",
            "[eval]\nseeds = [1, 1, 2]",
            "[eval]\nfractions = [0.0]",
            "[contrastive]\ntau = -1.0",
            "[contrastive]\nqueue_size = 16",
            "[mi]\nrhos = [1.0]",
            "[datagen]\nn = 3",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
