//! InfoNCE against a frozen teacher with a FIFO queue of past keys.

mod loss;
mod pretrain;
mod queue;

pub use crate::tensor::normalize_rows;
pub use loss::{info_nce, info_nce_joint};
pub use pretrain::{
    encode_keys, evaluate_info_nce, pretrain, pretrain_from, ContrastiveConfig, EpochRecord, PretrainOutput,
};
pub use queue::{NegativeQueue, UNIT_TOL};
