//! Inputs shared by the criterion benches.

use rand::Rng;
use xmc_core::contrastive::NegativeQueue;
use xmc_core::rng;
use xmc_core::tensor::normalize_rows;
use xmc_core::Tensor;

pub fn uniform(rows: usize, cols: usize, label: &str) -> Tensor {
    let mut r = rng::stream(0, label, 0);
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn unit_rows(rows: usize, cols: usize, label: &str) -> Tensor {
    normalize_rows(&uniform(rows, cols, label)).unwrap()
}

/// A full queue of `k` unit keys of width `d`.
pub fn full_queue(k: usize, d: usize) -> NegativeQueue {
    let mut q = NegativeQueue::new(k, d).unwrap();
    q.enqueue(&unit_rows(k, d, "queue")).unwrap();
    q
}
