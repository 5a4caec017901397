//! Correlated Gaussian pairs with closed-form mutual information.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairConfig {
    pub dim: usize,
    pub rho: f64,
    pub count: usize,
    pub seed: u64,
}

impl GaussianPairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.dim == 0 || self.count == 0 {
            return Err(Error::Config("dim and count must be positive".into()));
        }
        Ok(())
    }
}

/// `count` pairs stacked row-wise: row `i` of `x` is paired with row `i` of `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPairs {
    pub x: Tensor,
    pub y: Tensor,
}

/// Per coordinate, `(x, y)` is a standard bivariate normal with correlation
/// `rho`; coordinates and samples are independent. Sample `i` draws from its
/// own stream so any prefix of a longer draw is identical.
pub fn gen_gaussian_pairs(cfg: &GaussianPairConfig) -> Result<GaussianPairs> {
    cfg.validate()?;
    let s = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut xs = Vec::with_capacity(cfg.count * cfg.dim);
    let mut ys = Vec::with_capacity(cfg.count * cfg.dim);
    for i in 0..cfg.count {
        let mut r = rng::stream(cfg.seed, "gaussian-pair", i as u64);
        for _ in 0..cfg.dim {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            xs.push(a);
            ys.push(cfg.rho * a + s * b);
        }
    }
    Ok(GaussianPairs {
        x: Tensor::new(vec![cfg.count, cfg.dim], xs)?,
        y: Tensor::new(vec![cfg.count, cfg.dim], ys)?,
    })
}

/// Mutual information in nats between `x` and `y` of [`gen_gaussian_pairs`].
pub fn analytic_mi(rho: f64, dim: usize) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(-(dim as f64) / 2.0 * (1.0 - rho * rho).ln() + 0.0)
}
