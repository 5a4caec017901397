//! Encoders, classifier heads, SGD, learning-rate schedule, checkpoints and
//! the vision teacher.

mod checkpoint;
mod encoder;
mod optim;
mod train;
mod vision;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{Bound, ClassifierHead, EncoderModel, FeatureNorm, Linear};
pub use optim::{cosine_lr, sgd_step, OptimizerState};
pub use train::{softmax_cross_entropy, Classifier, EpochStats, FitConfig, HeldOutSet, LabeledSet};
pub use vision::{pretrain_vision, VisionConfig, VisionMode, VisionReport};

/// MLP shape: `input → hidden… → embed_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            embed_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(self.embed_dim);
        d
    }
}
