use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_count: u64,
}

impl OptimizerState {
    /// Zero velocity buffers shaped like `params`.
    pub fn new(params: &[&Tensor], lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            lr,
            momentum,
            weight_decay,
            step_count: 0,
        }
    }

    /// `v ← μ·v + (g + λ·p)`, then `p ← p − lr·v`, for every trainable
    /// parameter. Frozen parameters are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (i, (p, v)) in params.iter().zip(&self.velocity).enumerate() {
            if p.numel() != v.len() {
                return Err(Error::Dimension {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![v.len()],
                });
            }
            if p.requires_grad() && p.grad().is_none() {
                return Err(Error::Usage(format!("parameter {i} is trainable but has no gradient")));
            }
        }
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().unwrap().to_vec();
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *vv = mu * *vv + (gv + wd * *pv);
                *pv -= lr * *vv;
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn sgd_step(params: &mut [&mut Tensor], st: &mut OptimizerState) -> Result<()> {
    st.step(params)
}

/// `base · ½(1 + cos(π t / T))`.
pub fn cosine_lr(t: u64, total: u64, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Domain("cosine schedule needs T >= 1".into()));
    }
    if t > total {
        return Err(Error::Domain(format!("step {t} beyond schedule length {total}")));
    }
    Ok(base * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn param(v: &[f64], g: &[f64]) -> Tensor {
        let mut t = Tensor::new(vec![v.len()], v.to_vec()).unwrap().with_grad();
        t.accumulate_grad(g);
        t
    }

    #[test]
    fn plain_sgd() {
        let mut p = param(&[1.0, -2.0], &[0.5, 0.25]);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.0, 0.0);
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.025]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_momentum_step_uses_raw_gradient_plus_decay() {
        let mut p = param(&[2.0], &[0.5]);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9, 0.01);
        st.step(&mut [&mut p]).unwrap();
        let v = 0.5 + 0.01 * 2.0;
        assert_eq!(st.velocity[0][0], v);
        assert_eq!(p.data()[0], 2.0 - 0.1 * v);
    }

    #[test]
    fn two_hand_computed_steps() {
        // p0 = 1, g = 2p (gradient of p²), lr 0.1, μ 0.9, λ 0
        // step 1: v = 2, p = 0.8; step 2: g = 1.6, v = 1.8 + 1.6 = 3.4, p = 0.46
        let mut p = param(&[1.0], &[2.0]);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9, 0.0);
        st.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
        p.clear_grad();
        let g = 2.0 * p.data()[0];
        p.accumulate_grad(&[g]);
        st.step(&mut [&mut p]).unwrap();
        assert!((st.velocity[0][0] - 3.4).abs() < 1e-12);
        assert!((p.data()[0] - 0.46).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut p = Tensor::new(vec![1], vec![1.0]).unwrap().with_grad();
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9, 0.0);
        assert!(matches!(st.step(&mut [&mut p]), Err(Error::Usage(_))));
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut p = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9, 0.1);
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.03).unwrap(), 0.03);
        assert!(cosine_lr(10, 10, 0.03).unwrap().abs() < 1e-18);
        assert!((cosine_lr(5, 10, 0.03).unwrap() - 0.015).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 0.03).is_err());
        assert!(cosine_lr(0, 0, 0.03).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_monotone(total in 1u64..500, base in 0.0f64..1.0) {
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = cosine_lr(t, total, base).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }

        #[test]
        fn zero_lr_leaves_params(vals in prop::collection::vec(-10.0f64..10.0, 1..8), mu in 0.0f64..1.0) {
            let g: Vec<f64> = vals.iter().map(|v| v * 0.3 + 1.0).collect();
            let mut p = param(&vals, &g);
            let mut st = OptimizerState::new(&[&p], 0.0, mu, 1e-4);
            st.step(&mut [&mut p]).unwrap();
            prop_assert_eq!(p.data(), vals.as_slice());
        }

        #[test]
        fn weight_decay_shrinks_exactly(vals in prop::collection::vec(-10.0f64..10.0, 1..8),
                                        lr in 0.0f64..0.5, wd in 0.0f64..0.1) {
            let mut p = param(&vals, &vec![0.0; vals.len()]);
            let mut st = OptimizerState::new(&[&p], lr, 0.0, wd);
            st.step(&mut [&mut p]).unwrap();
            for (after, before) in p.data().iter().zip(&vals) {
                let expected = before * (1.0 - lr * wd);
                prop_assert!((after - expected).abs() <= 1e-15 * before.abs().max(1.0));
            }
        }
    }
}
