//! Synthetic data: correlated Gaussian pairs for the MI oracle, and paired
//! radar heatmaps / camera images with a four-class hidden label.

mod dataset;
mod gaussian;
mod scene;

pub use dataset::{
    generate_sample, make_dataset, make_dataset_at, make_vision_dataset, split_path, Dataset, PairedSample,
    Split, SplitFile, DATASET_MAGIC, DATASET_VERSION,
};
pub use gaussian::{analytic_mi, gen_gaussian_pairs, GaussianPairConfig, GaussianPairs};
pub use scene::{
    image_signal, radar_signal, render_image, render_radar, sample_scene, Class, SceneLatent, SimConfig, Target,
    AZIMUTH_MAX_RAD, RANGE_MAX_M, RANGE_MIN_M,
};
