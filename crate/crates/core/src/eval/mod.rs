//! Downstream evaluation: linear probe, fine-tuning, supervised baseline,
//! label and queue-size sweeps, and 2-D projection.

mod csv_out;
mod probe;
mod project;
mod sweep;

pub use csv_out::{loss_curves_csv, pretrain_history_csv, probe_results_csv, projection_csv, sweep_csv};
pub use probe::{
    extract_features, feasible_fractions, finetune, label_budget, linear_probe, min_feasible_fraction,
    probe_encoder, stratified_subsample, supervised_baseline, ProbeConfig, ProbeMode, ProbeResult,
};
pub use project::{project_2d, separation_score, Projection};
pub use sweep::{
    batch_for_queue, run_pool, sweep_labels, sweep_queue, LabelSweep, SweepAxis, SweepRow, SweepTable, MIN_SEEDS,
};
