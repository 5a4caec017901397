//! The frozen vision teacher.

use serde::{Deserialize, Serialize};

use super::encoder::{ClassifierHead, EncoderModel};
use super::train::{Classifier, FitConfig, HeldOutSet, LabeledSet};
use super::EncoderConfig;
use crate::datagen::{Class, Dataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisionMode {
    /// Supervised image→class training on a disjoint split, then frozen.
    Supervised,
    /// Untrained, frozen encoder (ablation).
    RandomFrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub mode: VisionMode,
    pub encoder: EncoderConfig,
    pub fit: FitConfig,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            mode: VisionMode::Supervised,
            encoder: EncoderConfig::default(),
            fit: FitConfig {
                lr: 0.01,
                momentum: 0.9,
                weight_decay: 1e-4,
                epochs: 30,
                batch_size: 32,
                cosine: true,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionReport {
    /// Accuracy of encoder + head on the vision split's own test images.
    pub held_out_accuracy: Option<f64>,
}

/// Trains (or just initialises) the image encoder on `vision`, then freezes
/// it. `vision` must not share any sample with `contrastive`.
pub fn pretrain_vision(
    vision: &Dataset,
    contrastive: &Dataset,
    cfg: &VisionConfig,
    seed: u64,
) -> Result<(EncoderModel, VisionReport)> {
    if vision.overlaps(contrastive) {
        return Err(Error::Config(format!(
            "vision split {:?} overlaps contrastive split {:?}",
            vision.index_range(),
            contrastive.index_range()
        )));
    }
    let dims = cfg.encoder.dims(vision.image_len());
    let mut enc = EncoderModel::new(&dims, seed, "vision-init")?;
    let report = match cfg.mode {
        VisionMode::RandomFrozen => VisionReport {
            held_out_accuracy: None,
        },
        VisionMode::Supervised => {
            let mut clf = Classifier {
                encoder: Some(enc),
                unit_norm: false,
                norm: None,
                head: ClassifierHead::new(cfg.encoder.embed_dim, Class::COUNT, seed),
            };
            let train = LabeledSet {
                x: vision.images(vision.indices(Split::Train)),
                y: vision.labels(vision.indices(Split::Train)),
            };
            let test = HeldOutSet {
                x: vision.images(vision.indices(Split::Test)),
                y: vision.labels(vision.indices(Split::Test)),
            };
            clf.fit(&train, None, &cfg.fit, seed)?;
            let (_, acc) = clf.evaluate(&test)?;
            enc = clf.encoder.take().unwrap();
            VisionReport {
                held_out_accuracy: Some(acc),
            }
        }
    };
    enc.freeze();
    Ok((enc, report))
}
