//! Label-free radio representation learning against a frozen vision teacher.
//!
//! The crate holds everything below the command line: a small reverse-mode
//! differentiation engine, a paired radar/camera scene simulator, MLP encoders
//! with SGD, the InfoNCE objective with a FIFO negative queue, InfoNCE-based
//! mutual-information bounds, and the downstream evaluation battery.

pub mod config;
pub mod contrastive;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mi;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
