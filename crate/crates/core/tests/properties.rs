use std::collections::VecDeque;

use proptest::prelude::*;
use xmc_core::contrastive::{info_nce, NegativeQueue};
use xmc_core::eval::{label_budget, stratified_subsample};
use xmc_core::mi::mi_lower_bound;
use xmc_core::models::cosine_lr;
use xmc_core::tensor::{logsumexp, normalize_rows};
use xmc_core::{Graph, Tensor};

fn unit_rows(rows: usize, d: usize, raw: &[f64]) -> Option<Tensor> {
    normalize_rows(&Tensor::new(vec![rows, d], raw.to_vec()).unwrap()).ok()
}

fn loss(q: &Tensor, kp: &Tensor, queue: &NegativeQueue, tau: f64) -> f64 {
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let l = info_nce(&mut g, qv, kp, queue, tau).unwrap();
    g.value(l).data()[0]
}

fn queue_of(keys: &Tensor) -> NegativeQueue {
    let (k, d) = keys.dims2().unwrap();
    let mut q = NegativeQueue::new(k, d).unwrap();
    q.enqueue(keys).unwrap();
    q
}

/// Unit vector at angle `theta` in the first two coordinates of `d`.
fn at_angle(theta: f64, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = theta.cos();
    v[1] = theta.sin();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn logsumexp_bounds(row in prop::collection::vec(-500.0f64..500.0, 1..40)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = logsumexp(&row);
        prop_assert!(l >= m - 1e-12);
        prop_assert!(l <= m + (row.len() as f64).ln() + 1e-12);
        let shifted: Vec<f64> = row.iter().map(|v| v + 3.5).collect();
        prop_assert!((logsumexp(&shifted) - l - 3.5).abs() < 1e-9);
    }

    #[test]
    fn queue_matches_reference_deque(
        cap in 1usize..12,
        batches in prop::collection::vec(1usize..12, 1..30),
    ) {
        let d = 3;
        let mut q = NegativeQueue::new(cap, d).unwrap();
        let mut model: VecDeque<Vec<f64>> = VecDeque::new();
        let mut next = 0u32;
        for b in batches {
            let b = b.min(cap);
            let mut rows = Vec::new();
            for _ in 0..b {
                // distinct unit vectors, tagged by their angle
                let key = at_angle(f64::from(next) * 0.001, d);
                next += 1;
                rows.extend_from_slice(&key);
                model.push_back(key);
                if model.len() > cap {
                    model.pop_front();
                }
            }
            q.enqueue(&Tensor::new(vec![b, d], rows).unwrap()).unwrap();
            prop_assert!(q.len() <= cap);
            prop_assert_eq!(q.len(), model.len());
            let got: Vec<Vec<f64>> = q.iter().map(|r| r.to_vec()).collect();
            let want: Vec<Vec<f64>> = model.iter().cloned().collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn loss_ignores_queue_order(
        raw in prop::collection::vec(-1.0f64..1.0, 14 * 6),
        perm_seed in any::<u64>(),
        tau in 0.05f64..1.0,
    ) {
        let d = 6;
        let (Some(q), Some(kp), Some(negs)) = (
            unit_rows(3, d, &raw[..18]),
            unit_rows(3, d, &raw[18..36]),
            unit_rows(8, d, &raw[36..84]),
        ) else { return Ok(()) };
        let mut order: Vec<usize> = (0..8).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut xmc_core::rng::stream(perm_seed, "perm", 0));
        let shuffled = negs.select_rows(&order).unwrap();
        let a = loss(&q, &kp, &queue_of(&negs), tau);
        let b = loss(&q, &kp, &queue_of(&shuffled), tau);
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn batch_loss_is_mean_of_row_losses(
        raw in prop::collection::vec(-1.0f64..1.0, 18 * 4),
        tau in 0.05f64..1.0,
    ) {
        let d = 4;
        let (Some(q), Some(kp), Some(negs)) = (
            unit_rows(5, d, &raw[..20]),
            unit_rows(5, d, &raw[20..40]),
            unit_rows(8, d, &raw[40..72]),
        ) else { return Ok(()) };
        let queue = queue_of(&negs);
        let whole = loss(&q, &kp, &queue, tau);
        let head = loss(&q.select_rows(&[0, 1]).unwrap(), &kp.select_rows(&[0, 1]).unwrap(), &queue, tau);
        let tail = loss(&q.select_rows(&[2, 3, 4]).unwrap(), &kp.select_rows(&[2, 3, 4]).unwrap(), &queue, tau);
        prop_assert!((whole - (2.0 * head + 3.0 * tail) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn loss_positive_and_decreasing_in_positive_score(
        neg_angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..16),
        a in 0.0f64..std::f64::consts::PI,
        gap in 1e-3f64..1.0,
        tau in 0.05f64..1.0,
    ) {
        let d = 3;
        let negs: Vec<f64> = neg_angles.iter().flat_map(|&t| {
            // keep negatives off the query/key plane so s⁺ alone varies
            let mut v = at_angle(t, d);
            v[0] *= 0.6; v[1] *= 0.6; v[2] = 0.8;
            v
        }).collect();
        let queue = queue_of(&Tensor::new(vec![neg_angles.len(), d], negs).unwrap());
        let q = Tensor::new(vec![1, d], at_angle(0.0, d)).unwrap();
        let far = Tensor::new(vec![1, d], at_angle(a.max(gap), d)).unwrap();
        let near = Tensor::new(vec![1, d], at_angle(a.max(gap) - gap, d)).unwrap();
        let l_far = loss(&q, &far, &queue, tau);
        let l_near = loss(&q, &near, &queue, tau);
        prop_assert!(l_far > 0.0 && l_near > 0.0);
        prop_assert!(l_near < l_far, "{} !< {}", l_near, l_far);
    }

    #[test]
    fn mi_bound_identity(loss in 0.0f64..20.0, k in 1usize..5000) {
        let b = mi_lower_bound(loss, k).unwrap();
        prop_assert_eq!(b, (k as f64).ln() - loss);
        prop_assert!(b <= (k as f64).ln());
    }

    #[test]
    fn cosine_schedule_bounds(total in 1u64..10_000, base in 1e-5f64..1.0, frac in 0.0f64..1.0) {
        let t = ((total as f64) * frac) as u64;
        let lr = cosine_lr(t, total, base).unwrap();
        prop_assert!(lr >= 0.0 && lr <= base);
        if t + 1 < total {
            prop_assert!(cosine_lr(t + 1, total, base).unwrap() <= lr);
        }
    }

    #[test]
    fn stratified_subsample_is_balanced(per_class in 4usize..60, frac in 0.01f64..1.0, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..4 * per_class).map(|i| i % 4).collect();
        let Ok(pick) = stratified_subsample(&labels, frac, seed) else { return Ok(()) };
        prop_assert_eq!(pick.len(), label_budget(frac, labels.len()).unwrap());
        let mut counts = [0usize; 4];
        for &i in &pick { counts[labels[i]] += 1; }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1 && *lo >= 1, "{:?}", counts);
    }
}

#[test]
fn uniform_scores_give_log_k_plus_one() {
    for k in [1usize, 7, 255] {
        let d = 2;
        let q = Tensor::new(vec![1, d], vec![1.0, 0.0]).unwrap();
        let kp = Tensor::new(vec![1, d], vec![0.0, 1.0]).unwrap();
        let negs = Tensor::new(vec![k, d], [0.0, 1.0].repeat(k)).unwrap();
        let l = loss(&q, &kp, &queue_of(&negs), 0.07);
        assert!((l - ((k + 1) as f64).ln()).abs() < 1e-9, "K={k}: {l}");
    }
}

#[test]
fn saturated_positive_gives_near_zero_loss() {
    let (k, d, tau) = (256, 2, 0.07);
    // positive score 1, negatives 1 − 20τ: a gap of 20 in logit units
    let s_neg: f64 = 1.0 - 20.0 * tau;
    let q = Tensor::new(vec![1, d], vec![1.0, 0.0]).unwrap();
    let kp = q.clone();
    let neg = [s_neg, (1.0 - s_neg * s_neg).sqrt()];
    let negs = Tensor::new(vec![k, d], neg.repeat(k)).unwrap();
    let l = loss(&q, &kp, &queue_of(&negs), tau);
    assert!(l < 1e-6, "{l}");
}
