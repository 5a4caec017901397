//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `XMC_ACCEPTANCE=3,4` runs a subset.

use std::collections::VecDeque;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;
use xmc_core::config::ExperimentConfig;
use xmc_core::contrastive::{encode_keys, evaluate_info_nce, info_nce, pretrain, ContrastiveConfig, NegativeQueue, PretrainOutput};
use xmc_core::datagen::{make_dataset, make_vision_dataset, Dataset, GaussianPairConfig, Split};
use xmc_core::eval::{
    extract_features, feasible_fractions, finetune, project_2d, separation_score, sweep_labels, sweep_queue,
};
use xmc_core::mi::estimate_mi_gaussian;
use xmc_core::models::{pretrain_vision, Checkpoint, EncoderModel};
use xmc_core::tensor::normalize_rows;
use xmc_core::{rng, Graph, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64, detail: String) -> Outcome {
    if elapsed.as_secs_f64() < limit_secs as f64 {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {:.0} s, limit {limit_secs} s", elapsed.as_secs_f64()))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// shared fixture: default dataset, teacher, and one pre-trained radio
// encoder per evaluation seed

struct Fixture {
    cfg: ExperimentConfig,
    ds: Dataset,
    teacher: EncoderModel,
    teacher_bytes: Vec<u8>,
    teacher_accuracy: Option<f64>,
    encoders: Vec<PretrainOutput>,
    build_time: Duration,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn checkpoint_bytes(model: &EncoderModel) -> Vec<u8> {
    Checkpoint {
        model: model.clone(),
        optimizer: None,
    }
    .encode()
}

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let t = Instant::now();
        let cfg = ExperimentConfig::default();
        let ds = make_dataset(&cfg.datagen.sim, cfg.datagen.n, cfg.seed).unwrap();
        let vds = make_vision_dataset(&cfg.datagen.sim, cfg.datagen.n, cfg.seed).unwrap();
        let (teacher, report) = pretrain_vision(&vds, &ds, &cfg.vision, cfg.seed).unwrap();
        let teacher_bytes = checkpoint_bytes(&teacher);
        let encoders = cfg
            .eval
            .seeds
            .iter()
            .map(|&s| pretrain(&ds, &teacher, &cfg.contrastive, s).unwrap())
            .collect();
        eprintln!("  fixture built in {:.0} s", t.elapsed().as_secs_f64());
        Fixture {
            cfg,
            ds,
            teacher,
            teacher_bytes,
            teacher_accuracy: report.held_out_accuracy,
            encoders,
            build_time: t.elapsed(),
        }
    })
}

// ---------------------------------------------------------------------------
// 1

fn random(rows: usize, cols: usize, label: &str) -> Tensor {
    let mut r = rng::stream(17, label, 0);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let (b, input, d, k, tau, h) = (4, 10, 16, 8, 0.07, 1e-6);
    let mut model = EncoderModel::new(&[input, 24, d], 1, "acceptance").unwrap();
    let x = random(b, input, "x");
    let kp = normalize_rows(&random(b, d, "kp")).unwrap();
    let mut queue = NegativeQueue::new(k, d).unwrap();
    queue.enqueue(&normalize_rows(&random(k, d, "queue")).unwrap()).unwrap();
    let loss_at = |m: &EncoderModel| {
        let mut g = Graph::new();
        let q = g.constant(normalize_rows(&m.embed(&x).unwrap()).unwrap());
        let l = info_nce(&mut g, q, &kp, &queue, tau).unwrap();
        g.value(l).data()[0]
    };

    model.zero_grad();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.constant(x.clone());
    let e = model.forward(&mut g, &bound, xv).unwrap();
    let q = g.l2_normalize(e).unwrap();
    let l = info_nce(&mut g, q, &kp, &queue, tau).unwrap();
    g.backward(l).unwrap();
    model.collect_grads(&g, &bound);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + h;
            let up = loss_at(&model);
            model.params_mut()[pi].data_mut()[j] = orig - h;
            let down = loss_at(&model);
            model.params_mut()[pi].data_mut()[j] = orig;
            let n = (up - down) / (2.0 * h);
            let scale = a.abs().max(n.abs());
            if scale > 1e-7 {
                worst = worst.max((a - n).abs() / scale);
            }
            checked += 1;
        }
    }
    let detail = format!("{checked} parameters, worst relative error {worst:.2e} (tolerance 1e-4)");
    check(worst < 1e-4, detail.clone())?;
    within(t.elapsed(), 10, detail)
}

// ---------------------------------------------------------------------------
// 2

fn loss_of(q: &Tensor, kp: &Tensor, negs: &Tensor, tau: f64) -> f64 {
    let (k, d) = negs.dims2().unwrap();
    let mut queue = NegativeQueue::new(k, d).unwrap();
    queue.enqueue(negs).unwrap();
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let l = info_nce(&mut g, qv, kp, &queue, tau).unwrap();
    g.value(l).data()[0]
}

fn loss_identities() -> Outcome {
    let q = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let side = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
    let mut errs = Vec::new();
    for k in [1usize, 7, 255] {
        let negs = Tensor::new(vec![k, 2], [0.0, 1.0].repeat(k)).unwrap();
        errs.push((loss_of(&q, &side, &negs, 0.07) - ((k + 1) as f64).ln()).abs());
    }
    let tau = 0.07;
    let s_neg: f64 = 1.0 - 20.0 * tau;
    let negs = Tensor::new(vec![256, 2], [s_neg, (1.0 - s_neg * s_neg).sqrt()].repeat(256)).unwrap();
    let saturated = loss_of(&q, &q, &negs, tau);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    check(
        worst < 1e-9 && saturated < 1e-6,
        format!("uniform |L - ln(K+1)| max {worst:.1e} over K in {{1,7,255}}; saturated K=256 loss {saturated:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3, 4

fn mi_means(cfg: &ExperimentConfig, rho: f64, dim: usize, k: usize) -> Vec<f64> {
    cfg.mi
        .seeds
        .iter()
        .map(|&s| {
            let pairs = GaussianPairConfig {
                dim,
                rho,
                count: 1,
                seed: s,
            };
            estimate_mi_gaussian(&pairs, &cfg.mi.critic, k).unwrap().mi_lower_bound
        })
        .collect()
}

fn mi_oracle() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let rhos = [0.0, 0.3, 0.6, 0.9];
    let means: Vec<f64> = rhos.iter().map(|&r| mean(&mi_means(&cfg, r, 1, 256))).collect();
    let truth: Vec<f64> = rhos.iter().map(|&r| -0.5 * (1.0 - r * r).ln()).collect();
    let a = means[0].abs() <= 0.05;
    let b = (0.55..=0.88).contains(&means[3]);
    let c = means[1] < means[2] && means[2] < means[3];
    let d = means.iter().zip(&truth).all(|(m, t)| *m <= t + 0.1);
    let detail = format!(
        "means over {} seeds at rho {:?}: {} vs true {}; (a) {a} (b) {b} (c) {c} (d) {d}",
        cfg.mi.seeds.len(),
        rhos,
        fmt(&means),
        fmt(&truth)
    );
    check(a && b && c && d, detail.clone())?;
    within(t.elapsed(), 300, detail)
}

fn mi_saturation() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let small = mean(&mi_means(&cfg, 0.99, 4, 32));
    let large = mean(&mi_means(&cfg, 0.99, 4, 256));
    let detail = format!(
        "rho 0.99 dim 4: K=32 {small:.4} (ln 32 = {:.4}), K=256 {large:.4} (ln 256 = {:.4})",
        32f64.ln(),
        256f64.ln()
    );
    check(large > small, detail.clone())?;
    within(t.elapsed(), 300, detail)
}

// ---------------------------------------------------------------------------
// 5

/// Pre-training epochs for each arm of the queue-size sweep.
const SWEEP_EPOCHS: usize = 100;

fn queue_size_trend() -> Outcome {
    let f = fixture();
    let t = Instant::now();
    let base = ContrastiveConfig {
        epochs: SWEEP_EPOCHS,
        ..f.cfg.contrastive.clone()
    };
    let table = sweep_queue(&f.ds, &f.teacher, &base, &f.cfg.eval.probe, &[8, 256], &f.cfg.eval.seeds, 1).unwrap();
    let acc = |k: f64| table.row(k).unwrap().mean_accuracy;
    let per_seed = |k: usize| -> Vec<f64> {
        table
            .runs
            .iter()
            .skip(if k == 8 { 0 } else { f.cfg.eval.seeds.len() })
            .take(f.cfg.eval.seeds.len())
            .map(|r| r.test_accuracy)
            .collect()
    };
    let (a8, a256) = (acc(8.0), acc(256.0));
    let detail = format!(
        "probe accuracy K=8 {a8:.4} {} vs K=256 {a256:.4} {} (batch 8, {SWEEP_EPOCHS} epochs); margin {:+.4}, tolerance -0.01",
        fmt(&per_seed(8)),
        fmt(&per_seed(256)),
        a256 - a8
    );
    check(a256 >= a8 - 0.01, detail.clone())?;
    within(t.elapsed(), 900, detail)
}

// ---------------------------------------------------------------------------
// 6

fn label_efficiency() -> Outcome {
    let f = fixture();
    let t = Instant::now();
    let lowest = feasible_fractions(&f.cfg.eval.fractions, f.ds.indices(Split::Train).len())[0];
    let encoders: Vec<EncoderModel> = f.encoders.iter().map(|o| o.radio.clone()).collect();
    let s = sweep_labels(
        &f.ds,
        &encoders,
        &[lowest, 1.0],
        &f.cfg.eval.seeds,
        &f.cfg.eval.finetune,
        &f.cfg.eval.baseline,
        &f.cfg.contrastive.encoder,
        1,
    )
    .unwrap();
    let ft = |x: f64| s.fine_tune.row(x).unwrap().mean_accuracy;
    let bl = |x: f64| s.baseline.row(x).unwrap().mean_accuracy;
    let low_ok = ft(lowest) >= bl(lowest);
    let full_ok = (ft(1.0) - bl(1.0)).abs() <= 0.02;
    let detail = format!(
        "fraction {lowest}: fine-tune {:.4} vs baseline {:.4}; fraction 1.0: fine-tune {:.4} vs baseline {:.4}",
        ft(lowest),
        bl(lowest),
        ft(1.0),
        bl(1.0)
    );
    check(low_ok && full_ok, detail.clone())?;
    within(t.elapsed() + f.build_time, 1200, detail)
}

// ---------------------------------------------------------------------------
// 7

fn separation_of(enc: &EncoderModel, ds: &Dataset) -> f64 {
    let (x, y) = extract_features(enc, ds, Split::Test).unwrap();
    let p = project_2d(&normalize_rows(&x).unwrap()).unwrap();
    separation_score(&p.coords, &y).unwrap()
}

fn embedding_separation() -> Outcome {
    let f = fixture();
    let mut tuned = Vec::new();
    let mut random = Vec::new();
    for (out, &s) in f.encoders.iter().zip(&f.cfg.eval.seeds) {
        let (_, clf) = finetune(&out.radio, &f.ds, 1.0, &f.cfg.eval.finetune, s).unwrap();
        tuned.push(separation_of(clf.encoder.as_ref().unwrap(), &f.ds));
        let mut r = EncoderModel::new(&out.radio.dims(), s, "radio-init").unwrap();
        r.freeze();
        random.push(separation_of(&r, &f.ds));
    }
    let ratios: Vec<f64> = tuned.iter().zip(&random).map(|(a, b)| a / b).collect();
    check(
        ratios.iter().all(|r| *r >= 1.5),
        format!("fine-tuned {} vs random-frozen {}; ratios {}", fmt(&tuned), fmt(&random), fmt(&ratios)),
    )
}

// ---------------------------------------------------------------------------
// 8

fn freeze_contract() -> Outcome {
    let f = fixture();
    let after = checkpoint_bytes(&f.teacher);
    check(
        after == f.teacher_bytes && f.teacher.is_frozen(),
        format!(
            "teacher ({} bytes, held-out accuracy {:?}) unchanged after {} full pre-training runs",
            after.len(),
            f.teacher_accuracy,
            f.encoders.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

const CLI_CONFIG: &str = r#"
seed = 5
[datagen]
n = 96
[vision.encoder]
hidden = [32]
embed_dim = 16
[vision.fit]
epochs = 2
[contrastive]
epochs = 2
queue_size = 32
batch_size = 16
[contrastive.encoder]
hidden = [32]
embed_dim = 16
[eval]
fractions = [0.1, 1.0]
queue_sizes = [16, 32]
[eval.probe.fit]
epochs = 2
[eval.finetune.fit]
epochs = 2
[eval.baseline.fit]
epochs = 2
[mi]
rhos = [0.0, 0.6]
queue_sizes = [32]
seeds = [0, 1, 2]
[mi.critic]
steps = 30
train_pairs = 256
eval_pairs = 128
"#;

fn xmc(args: &[&std::ffi::OsStr]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_xmc"))
        .args(args)
        .env_remove("XMC_JOBS")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("xmc {:?}: {}", args, String::from_utf8_lossy(&o.stderr)))
    }
}

fn manifest_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let config = root.join("run.toml");
    fs::write(&config, CLI_CONFIG).unwrap();
    let first = root.join("first");
    let commands = [
        "gen-data",
        "pretrain-vision",
        "pretrain",
        "probe",
        "finetune",
        "baseline",
        "sweep-k",
        "sweep-labels",
        "estimate-mi",
        "project",
    ];
    for c in commands {
        xmc(&["--config".as_ref(), config.as_os_str(), "--out".as_ref(), first.as_os_str(), c.as_ref()])?;
    }
    let mut compared = 0;
    for c in commands {
        let manifest = first.join(format!("{c}.manifest.json"));
        let again = root.join(format!("replay-{c}"));
        xmc(&["--out".as_ref(), again.as_os_str(), "replay".as_ref(), manifest.as_os_str()])?;
        let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
        for out in m["outputs"].as_array().unwrap() {
            let name = out["path"].as_str().unwrap();
            if !same_file(&first.join(name), &again.join(name)) {
                return Err(format!("{c}: {name} differs on replay"));
            }
            compared += 1;
        }
        if fs::read(&manifest).unwrap() != fs::read(again.join(format!("{c}.manifest.json"))).unwrap() {
            return Err(format!("{c}: manifest differs on replay"));
        }
    }
    Ok(format!(
        "{} commands replayed from their manifests; {compared} outputs byte-identical",
        commands.len()
    ))
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

// ---------------------------------------------------------------------------
// 10

fn queue_semantics() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 512,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..24, prop::collection::vec(1usize..30, 1..60));
    let result = runner.run(&strategy, |(cap, batches)| {
        let d = 2;
        let mut q = NegativeQueue::new(cap, d).unwrap();
        let mut model: VecDeque<Vec<f64>> = VecDeque::new();
        let mut next = 0u32;
        for b in batches {
            let b = b.min(cap);
            let mut rows = Vec::with_capacity(b * d);
            for _ in 0..b {
                let a = f64::from(next) * 1e-3;
                next += 1;
                let key = vec![a.cos(), a.sin()];
                rows.extend_from_slice(&key);
                model.push_back(key);
                if model.len() > cap {
                    model.pop_front();
                }
            }
            q.enqueue(&Tensor::new(vec![b, d], rows).unwrap()).unwrap();
            prop_assert!(q.len() <= cap);
            let got: Vec<&[f64]> = q.iter().collect();
            let want: Vec<&[f64]> = model.iter().map(|v| v.as_slice()).collect();
            prop_assert_eq!(got, want);
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok("512 random insert sequences match a reference deque; size never exceeds K".into()),
        Err(e) => Err(e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// 11

fn checkpoint_round_trip() -> Outcome {
    let f = fixture();
    let out = &f.encoders[0];
    let idx = &f.ds.indices(Split::Test)[..64];
    let x = f.ds.heatmaps(idx);
    let keys = encode_keys(&f.teacher, &f.ds, idx).unwrap();
    let tau = f.cfg.contrastive.tau;
    let before = evaluate_info_nce(&out.radio, &x, &keys, &out.queue, tau).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("radio.xmck");
    Checkpoint {
        model: out.radio.clone(),
        optimizer: Some(out.optimizer.clone()),
    }
    .save(&path)
    .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let after = evaluate_info_nce(&loaded.model, &x, &keys, &out.queue, tau).unwrap();
    check(
        before.to_bits() == after.to_bits() && loaded.optimizer.as_ref() == Some(&out.optimizer),
        format!("loss before {before:.17} after {after:.17}"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 11] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "loss identities", loss_identities),
        (3, "MI oracle", mi_oracle),
        (4, "MI bound saturation", mi_saturation),
        (10, "queue semantics", queue_semantics),
        (9, "manifest determinism", manifest_determinism),
        (8, "freeze contract", freeze_contract),
        (11, "checkpoint round trip", checkpoint_round_trip),
        (6, "label-efficiency trend", label_efficiency),
        (7, "embedding separation", embedding_separation),
        (5, "queue-size trend", queue_size_trend),
    ];
    let only: Option<Vec<u8>> = std::env::var("XMC_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut lines = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let line = format!(
            "[{tag}] criterion {id:>2} {name}: {detail} ({:.1} s)",
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((id, outcome.is_ok(), line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nacceptance summary");
    for (_, _, l) in &lines {
        println!("{l}");
    }
    let failed = lines.iter().filter(|l| !l.1).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
