use super::queue::{check_unit_rows, NegativeQueue};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::softmax_cross_entropy;
use crate::tensor::Tensor;

/// InfoNCE over `K+1` logits per query: the paired key at index 0 and every
/// queue entry after it, all divided by `tau`.
///
/// `loss = mean_b −log( exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σ_i exp(q·k_i⁻/τ)) )`
///
/// Only `q` receives gradient; `k_plus` and the queue enter as constants.
pub fn info_nce(g: &mut Graph, q: Var, k_plus: &Tensor, queue: &NegativeQueue, tau: f64) -> Result<Var> {
    let kp = g.constant(k_plus.clone());
    info_nce_impl(g, q, kp, queue, tau)
}

/// As [`info_nce`], but the positive keys are a graph node and receive
/// gradient too. Used when both encoders are trained, as in the MI critic.
pub fn info_nce_joint(g: &mut Graph, q: Var, k_plus: Var, queue: &NegativeQueue, tau: f64) -> Result<Var> {
    info_nce_impl(g, q, k_plus, queue, tau)
}

fn info_nce_impl(g: &mut Graph, q: Var, kp: Var, queue: &NegativeQueue, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if queue.is_empty() {
        return Err(Error::Usage("negative queue is empty".into()));
    }
    if g.shape(q) != g.shape(kp) {
        return Err(Error::Dimension {
            op: "info_nce",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(kp).to_vec(),
        });
    }
    let (b, d) = g.value(q).dims2()?;
    if d != queue.dim() {
        return Err(Error::Dimension {
            op: "info_nce",
            lhs: vec![b, d],
            rhs: vec![queue.len(), queue.dim()],
        });
    }
    check_unit_rows(g.value(q).data(), d, "query")?;
    check_unit_rows(g.value(kp).data(), d, "positive key")?;

    let pos = g.row_dot(q, kp)?;
    let negs_t = g.constant(queue.to_tensor_transposed()?);
    let neg = g.matmul(q, negs_t)?;
    let logits = g.concat_cols(pos, neg)?;
    let scaled = g.scale(logits, 1.0 / tau);
    softmax_cross_entropy(g, scaled, &vec![0; b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::normalize_rows;

    fn unit(dim: usize, axis: usize, sign: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = sign;
        v
    }

    fn loss_of(q: &[Vec<f64>], kp: &[Vec<f64>], negs: &[Vec<f64>], tau: f64) -> f64 {
        let mut queue = NegativeQueue::new(negs.len(), q[0].len()).unwrap();
        queue.enqueue(&Tensor::from_rows(negs).unwrap()).unwrap();
        let mut g = Graph::new();
        let qv = g.input(&Tensor::from_rows(q).unwrap());
        let l = info_nce(&mut g, qv, &Tensor::from_rows(kp).unwrap(), &queue, tau).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn uniform_scores_give_log_k_plus_one() {
        // q ⟂ every key ⇒ all K+1 scores are 0
        let q = vec![unit(4, 0, 1.0)];
        let kp = vec![unit(4, 1, 1.0)];
        let negs: Vec<Vec<f64>> = (0..7).map(|i| unit(4, 1 + i % 3, 1.0)).collect();
        let l = loss_of(&q, &kp, &negs, 0.07);
        assert!((l - 8f64.ln()).abs() < 1e-12);
        assert!((l - 2.07944).abs() < 5e-6);
    }

    #[test]
    fn saturated_positive() {
        // s⁺/τ = 10, s⁻/τ = −10 with τ = 0.1
        let q = vec![unit(3, 0, 1.0)];
        let negs = vec![unit(3, 0, -1.0); 256];
        let l = loss_of(&q, &q, &negs, 0.1);
        let expected = (256.0 * (-20f64).exp()).ln_1p();
        assert!((l - expected).abs() < 1e-12);
        assert!(l < 1e-6 && l > 5.2e-7);
    }

    #[test]
    fn single_negative_hand_value() {
        let q = vec![unit(2, 0, 1.0)];
        let negs = vec![unit(2, 1, 1.0)];
        let l = loss_of(&q, &q, &negs, 1.0);
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.31326).abs() < 5e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut queue = NegativeQueue::new(2, 2).unwrap();
        let mut g = Graph::new();
        let q = g.input(&Tensor::from_rows(&[unit(2, 0, 1.0)]).unwrap());
        let kp = Tensor::from_rows(&[unit(2, 0, 1.0)]).unwrap();
        assert!(matches!(info_nce(&mut g, q, &kp, &queue, 0.1), Err(Error::Usage(_))));
        queue.enqueue(&kp).unwrap();
        let q_bad = g.input(&Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap());
        assert!(matches!(info_nce(&mut g, q_bad, &kp, &queue, 0.1), Err(Error::Contract(_))));
        assert!(matches!(info_nce(&mut g, q, &kp, &queue, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn positive_and_queue_are_detached() {
        let mut queue = NegativeQueue::new(2, 2).unwrap();
        queue.enqueue(&Tensor::from_rows(&[unit(2, 1, 1.0)]).unwrap()).unwrap();
        let mut g = Graph::new();
        let raw = g.input(&Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap().with_grad());
        let q = g.l2_normalize(raw).unwrap();
        let kp = Tensor::from_rows(&[unit(2, 0, 1.0)]).unwrap().with_grad();
        let l = info_nce(&mut g, q, &kp, &queue, 0.5).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(raw).is_some());
        assert!(kp.grad().is_none());
        // positives as a graph node with gradient: the joint variant propagates into it
        let mut g = Graph::new();
        let raw = g.input(&Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap().with_grad());
        let q = g.l2_normalize(raw).unwrap();
        let kv = g.input(&kp);
        let l = info_nce_joint(&mut g, q, kv, &queue, 0.5).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(kv).is_some());
    }

    #[test]
    fn normalize_rows_matches_graph_op() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 7.0]]).unwrap();
        let mut g = Graph::new();
        let v = g.input(&x);
        let n = g.l2_normalize(v).unwrap();
        assert_eq!(normalize_rows(&x).unwrap().data(), g.value(n).data());
    }
}
