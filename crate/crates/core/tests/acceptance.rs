//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

mod support;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use collabres::data::{
    build_vocab_and_binarize, clean, generate_synthetic, split_sizes, stratified_split, CleanConfig, Dataset,
    EpisodeRecord, Medication, SyntheticConfig, DEFAULT_RATIOS,
};
use collabres::metrics::{
    primary_accuracy, ranking_metrics, set_metrics, top1, PredictionBatch,
};
use collabres::nn::{
    build_baseline_scaled, build_collabres, forward_logits, init_params, predict_scores, BaselineId, CollabResConfig,
    LayerSpec, Mode, ModelSpec, Parameters,
};
use collabres::tensor::{DenseMatrix, SeededRng, SparseBinaryMatrix};
use collabres::train::{
    initial_params, load_checkpoint, predict, run_protocol, save_checkpoint, train, train_from, EarlyStopMetric,
    EpochRunner, StopReason, TrainConfig,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use support::{brute_force_ranking, gradient_check, random_sparse};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = CollabResConfig::uniform(2, 8, 6, vec![0.0, 0.0], 6);
    let spec = build_collabres(20, 10, &cfg).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(31);
    let params: Parameters<f64> = init_params(&spec, &mut rng).map_err(|e| e.to_string())?;
    let x = random_sparse(&mut rng, 6, 20, 0.3);
    let y = random_sparse(&mut rng, 6, 10, 0.3);
    let check = gradient_check(&spec, &params, &x, &y, 150, 1e-5, 7);
    ensure(check.checked >= 100, || format!("only {} coordinates", check.checked))?;
    ensure(check.max_rel_err < 1e-4, || format!("collabres: {}", check.worst))?;
    let mut worst = check.max_rel_err;
    for id in BaselineId::ALL {
        let spec = build_baseline_scaled(id, 30, 6, 50).map_err(|e| e.to_string())?;
        let mut rng = SeededRng::new(id as u64 + 100);
        let params: Parameters<f64> = init_params(&spec, &mut rng).map_err(|e| e.to_string())?;
        let x = random_sparse(&mut rng, 5, 30, 0.25);
        let y = random_sparse(&mut rng, 5, 6, 0.4);
        let check = gradient_check(&spec, &params, &x, &y, 100, 1e-5, 3);
        ensure(check.checked >= 100, || format!("{id}: only {} coordinates", check.checked))?;
        ensure(check.max_rel_err < 1e-4, || format!("{id}: {}", check.worst))?;
        worst = worst.max(check.max_rel_err);
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("collabres micro + M1-M8 at 1/50, max rel err {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let grid = [0.0f32, 0.2, 0.4, 0.5, 0.8, 1.0];
    let mut rng = SeededRng::new(2024);
    let mut compared = 0;
    let mut ties = 0;
    for batch_no in 0..1000 {
        let n = 1 + rng.below(50);
        let l = 1 + rng.below(8);
        let scores: Vec<Vec<f32>> = (0..n).map(|_| (0..l).map(|_| grid[rng.below(grid.len())]).collect()).collect();
        let truth: Vec<Vec<u32>> = (0..n)
            .map(|_| (0..l as u32).filter(|_| rng.bernoulli(0.4)).collect())
            .collect();
        ties += scores
            .iter()
            .filter(|s| (0..s.len()).any(|i| (i + 1..s.len()).any(|j| s[i] == s[j])))
            .count();
        let dense = DenseMatrix::from_rows(&scores).map_err(|e| e.to_string())?;
        let y = SparseBinaryMatrix::new(l, truth.clone()).map_err(|e| e.to_string())?;
        let batch = PredictionBatch::new(&dense, &y, None, 0.5).map_err(|e| e.to_string())?;
        let got = ranking_metrics(&batch).ok();
        match (brute_force_ranking(&scores, &truth), got) {
            (None, None) => {}
            (Some((lrap, cov, rl, evaluable)), Some(m)) => {
                ensure(
                    m.lrap == lrap && m.coverage_error == cov && m.ranking_loss == rl && m.evaluable == evaluable,
                    || format!("batch {batch_no}: got {m:?}, brute force ({lrap}, {cov}, {rl}, {evaluable})"),
                )?;
                compared += 1;
            }
            (b, g) => return Err(format!("batch {batch_no}: evaluability differs ({b:?} vs {g:?})")),
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("1000 batches, {compared} evaluable, {ties} samples with tied scores, exact agreement"))
}

// ---------------------------------------------------------------------------

fn worked_example() -> Outcome {
    let scores = DenseMatrix::from_rows(&[vec![0.9f32, 0.5, 0.2]]).map_err(|e| e.to_string())?;
    let truth = SparseBinaryMatrix::new(3, vec![vec![0, 2]]).map_err(|e| e.to_string())?;
    let principal = [0u32];
    let batch = PredictionBatch::new(&scores, &truth, Some(&principal), 0.5).map_err(|e| e.to_string())?;
    let r = ranking_metrics(&batch).map_err(|e| e.to_string())?;
    let s = set_metrics(&batch);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure(close(r.lrap, 5.0 / 6.0), || format!("lrap {}", r.lrap))?;
    ensure(r.coverage_error == 3.0, || format!("coverage {}", r.coverage_error))?;
    ensure(r.ranking_loss == 0.5, || format!("ranking loss {}", r.ranking_loss))?;
    ensure(close(s.jaccard, 1.0 / 3.0), || format!("jaccard {}", s.jaccard))?;
    ensure(s.sample_f1 == 0.5, || format!("f1 {}", s.sample_f1))?;
    ensure(top1(scores.row(0)) == Some(0), || "top-1 is not label 0".into())?;
    let acc = primary_accuracy(&batch).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, || format!("primary accuracy {acc}"))?;
    Ok("lrap 5/6, coverage 3, ranking loss 1/2, jaccard 1/3, f1 1/2, primary correct".into())
}

// ---------------------------------------------------------------------------

fn test_f1(ckpt: &collabres::train::Checkpoint, test: &Dataset) -> Result<f64, String> {
    let p = predict(ckpt, &test.x, None).map_err(|e| e.to_string())?;
    let batch = PredictionBatch::new(&p.scores, &test.y, None, ckpt.threshold).map_err(|e| e.to_string())?;
    Ok(set_metrics(&batch).sample_f1)
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticConfig::default().to_spec().map_err(|e| e.to_string())?;
    let (ds, _) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let splits = stratified_split(&ds, &DEFAULT_RATIOS, 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: 256,
        max_epochs: 50,
        early_stop_metric: EarlyStopMetric::SampleF1,
        threads: 1,
        ..TrainConfig::default()
    };
    let (d_in, d_out) = (ds.input_dim(), ds.output_dim());
    let collab = build_collabres(d_in, d_out, &CollabResConfig::default()).map_err(|e| e.to_string())?;
    let (ckpt, hist) = train(&collab, &splits.train, &splits.dev, &cfg).map_err(|e| e.to_string())?;
    let f1_c = test_f1(&ckpt, &splits.test)?;
    let m1 = build_baseline_scaled(BaselineId::M1, d_in, d_out, 1).map_err(|e| e.to_string())?;
    let (ckpt_m1, _) = train(&m1, &splits.train, &splits.dev, &cfg).map_err(|e| e.to_string())?;
    let f1_m1 = test_f1(&ckpt_m1, &splits.test)?;
    let detail = format!(
        "collabres test F1 {f1_c:.4} (best epoch {}/{}), M1 {f1_m1:.4}, {:.0}s",
        hist.best_epoch,
        hist.epochs.len(),
        start.elapsed().as_secs_f64()
    );
    ensure(hist.epochs.len() <= 50, || format!("{detail}: ran past 50 epochs"))?;
    ensure(f1_c >= 0.90, || format!("{detail}: below 0.90"))?;
    ensure(f1_c >= f1_m1 - 0.02, || format!("{detail}: more than 0.02 below M1"))?;
    within(start.elapsed(), 300.0).map_err(|e| format!("{detail}: {e}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

struct Scripted {
    metrics: Vec<f64>,
    at: usize,
    kept: Vec<usize>,
}

impl EpochRunner for Scripted {
    fn train_epoch(&mut self, epoch: usize) -> collabres::Result<(f64, usize)> {
        self.at = epoch;
        Ok((0.0, 1))
    }
    fn validate(&mut self) -> collabres::Result<f64> {
        Ok(self.metrics[self.at - 1])
    }
    fn keep_best(&mut self) {
        self.kept.push(self.at);
    }
}

/// Stop at the first epoch that is `patience` epochs past the best so far;
/// otherwise run to the cap. Returns (epochs run, best epoch, improvements).
fn expected_stop(metrics: &[f64], patience: usize, cap: usize) -> (usize, usize, Vec<usize>) {
    let mut best = 0;
    let mut improvements = vec![];
    for e in 1..=cap {
        if best == 0 || metrics[e - 1] > metrics[best - 1] {
            best = e;
            improvements.push(e);
        }
        if e - best == patience {
            return (e, best, improvements);
        }
    }
    (cap, best, improvements)
}

fn protocol() -> Outcome {
    let d = TrainConfig::default();
    ensure(
        d.batch_size == 2048 && d.max_epochs == 100 && d.early_stop_patience == 10,
        || format!("defaults {}/{}/{}", d.batch_size, d.max_epochs, d.early_stop_patience),
    )?;

    // A flat sequence after epoch 1 stops at 11; a rising one hits the cap.
    let mut flat = Scripted { metrics: vec![0.5; 100], at: 0, kept: vec![] };
    let h = run_protocol(&d, &mut flat).map_err(|e| e.to_string())?;
    ensure(h.epochs.len() == 11 && h.best_epoch == 1 && h.stop_reason == StopReason::EarlyStopped, || {
        format!("flat: {} epochs, best {}", h.epochs.len(), h.best_epoch)
    })?;
    let mut rising = Scripted { metrics: (0..100).map(|e| e as f64).collect(), at: 0, kept: vec![] };
    let h = run_protocol(&d, &mut rising).map_err(|e| e.to_string())?;
    ensure(h.epochs.len() == 100 && h.stop_reason == StopReason::MaxEpochs, || {
        format!("rising: {} epochs", h.epochs.len())
    })?;

    let mut runner = TestRunner::new(PtConfig {
        cases: 500,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let strategy = prop::collection::vec(0u8..6, 100).prop_map(|v| v.into_iter().map(|x| x as f64 / 5.0).collect::<Vec<_>>());
    runner
        .run(&strategy, |metrics| {
            let mut r = Scripted { metrics: metrics.clone(), at: 0, kept: vec![] };
            let h = run_protocol(&TrainConfig::default(), &mut r).unwrap();
            let (epochs, best, improvements) = expected_stop(&metrics, 10, 100);
            prop_assert_eq!(h.epochs.len(), epochs);
            prop_assert_eq!(h.best_epoch, best);
            prop_assert_eq!(&r.kept, &improvements);
            Ok(())
        })
        .map_err(|e| format!("early-stop property: {e}"))?;

    // The real trainer with defaults: 2048-row batches, 10-epoch patience.
    let syn = SyntheticConfig {
        n_samples: 5000,
        n_med_tokens: 40,
        n_labels: 6,
        meds_per_sample: 4.0,
        support_size: 4,
        ..SyntheticConfig::default()
    }
    .to_spec()
    .map_err(|e| e.to_string())?;
    let (ds, _) = generate_synthetic(&syn).map_err(|e| e.to_string())?;
    let rows: Vec<usize> = (0..ds.x.rows()).collect();
    let (tr, dev) = (ds.select(&rows[..4500]), ds.select(&rows[4500..]));
    let spec = build_baseline_scaled(BaselineId::M1, 40, 6, 50).map_err(|e| e.to_string())?;
    let (_, h) = train(&spec, &tr, &dev, &d).map_err(|e| e.to_string())?;
    ensure(h.epochs.iter().all(|e| e.steps == 3), || "expected 3 steps of 2048 rows per epoch".into())?;
    let metrics: Vec<f64> = h.epochs.iter().map(|e| e.dev_metric).collect();
    let (epochs, best, _) = expected_stop(&metrics, 10, 100);
    ensure(h.epochs.len() == epochs && h.best_epoch == best, || {
        format!("trainer ran {} epochs (best {}), rule says {epochs} (best {best})", h.epochs.len(), h.best_epoch)
    })?;
    Ok(format!(
        "defaults 2048/100/10, 500 injected sequences, trainer stopped at epoch {} (best {})",
        h.epochs.len(),
        h.best_epoch
    ))
}

// ---------------------------------------------------------------------------

/// The same network with every residual block unrolled into plain layers
/// and the skip edges removed, plus the matching parameters.
fn skip_free(spec: &ModelSpec, params: &Parameters<f32>) -> Result<(ModelSpec, Parameters<f32>), String> {
    let [LayerSpec::Concat { branches }, LayerSpec::ResidualBlock(fusion), LayerSpec::SigmoidHead { in_dim, out_dim }] =
        spec.layers.as_slice()
    else {
        return Err("unexpected collabres layout".into());
    };
    let get = |n: &str| params.get(n).cloned().map_err(|e| e.to_string());
    let mut out = Parameters::new();
    let mut plain = vec![];
    for (b, branch) in branches.iter().enumerate() {
        let [LayerSpec::ResidualBlock(r)] = branch.as_slice() else {
            return Err("unexpected branch layout".into());
        };
        plain.push(vec![
            LayerSpec::Dense { in_dim: r.in_dim, out_dim: r.hidden_dim },
            LayerSpec::ReLU,
            LayerSpec::Dropout { rate: r.dropout_rate },
            LayerSpec::Dense { in_dim: r.hidden_dim, out_dim: r.out_dim },
            LayerSpec::ReLU,
        ]);
        for (from, to) in [("fc1", "l0"), ("fc2", "l3")] {
            for kind in ["main", "bias"] {
                out.insert(format!("l0.b{b}.{to}.{kind}"), get(&format!("l0.b{b}.l0.{from}.{kind}"))?);
            }
        }
    }
    for (from, to) in [("l1.fc1", "l1"), ("l1.fc2", "l3"), ("l2", "l5")] {
        for kind in ["main", "bias"] {
            out.insert(format!("{to}.{kind}"), get(&format!("{from}.{kind}"))?);
        }
    }
    let plain_spec = ModelSpec {
        name: "skip-free".into(),
        input_dim: spec.input_dim,
        output_dim: spec.output_dim,
        layers: vec![
            LayerSpec::Concat { branches: plain },
            LayerSpec::Dense { in_dim: fusion.in_dim, out_dim: fusion.hidden_dim },
            LayerSpec::ReLU,
            LayerSpec::Dense { in_dim: fusion.hidden_dim, out_dim: fusion.out_dim },
            LayerSpec::ReLU,
            LayerSpec::SigmoidHead { in_dim: *in_dim, out_dim: *out_dim },
        ],
    };
    out.check_against(&plain_spec).map_err(|e| e.to_string())?;
    Ok((plain_spec, out))
}

fn same_bits(a: &DenseMatrix<f32>, b: &DenseMatrix<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn residual_degeneracy() -> Outcome {
    let mut rng = SeededRng::new(6);
    for instance in 0..10 {
        let input_dim = 5 + rng.below(20);
        let labels = 2 + rng.below(8);
        let k = 1 + rng.below(4);
        let cfg = CollabResConfig {
            branch_hidden: (0..k).map(|_| 2 + rng.below(10)).collect(),
            branch_out: (0..k).map(|_| 2 + rng.below(8)).collect(),
            dropout_rates: (0..k).map(|b| 0.1 * (b + 1) as f32).collect(),
            fusion_width: 2 + rng.below(10),
        };
        let spec = build_collabres(input_dim, labels, &cfg).map_err(|e| e.to_string())?;
        let syn = SyntheticConfig {
            n_samples: 120,
            n_med_tokens: input_dim,
            n_labels: labels,
            meds_per_sample: 3.0,
            support_size: 2,
            seed: instance,
            ..SyntheticConfig::default()
        }
        .to_spec()
        .map_err(|e| e.to_string())?;
        let (ds, _) = generate_synthetic(&syn).map_err(|e| e.to_string())?;

        let mut params = initial_params(&spec, instance).map_err(|e| e.to_string())?;
        params.zero_skips();
        let compare = |params: &Parameters<f32>, what: &str| -> Result<(), String> {
            let (plain_spec, plain) = skip_free(&spec, params)?;
            let a = predict_scores(&spec, params, &ds.x).map_err(|e| e.to_string())?;
            let b = predict_scores(&plain_spec, &plain, &ds.x).map_err(|e| e.to_string())?;
            ensure(same_bits(&a, &b), || format!("instance {instance}: {what} inference differs"))?;
            let ta = forward_logits(&spec, params, &ds.x, Mode::Train, &mut SeededRng::new(instance)).map_err(|e| e.to_string())?;
            let tb = forward_logits(&plain_spec, &plain, &ds.x, Mode::Train, &mut SeededRng::new(instance)).map_err(|e| e.to_string())?;
            ensure(same_bits(&ta.logits, &tb.logits), || format!("instance {instance}: {what} train-mode logits differ"))
        };
        compare(&params, "zeroed")?;

        let frozen: Vec<String> = params.names().filter(|n| n.ends_with(".skip")).cloned().collect();
        let rows: Vec<usize> = (0..ds.x.rows()).collect();
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 3,
            early_stop_metric: EarlyStopMetric::SampleF1,
            seed: instance,
            ..TrainConfig::default()
        };
        let (ckpt, _) = train_from(&spec, params, &ds.select(&rows[..90]), &ds.select(&rows[90..]), &cfg, &frozen)
            .map_err(|e| e.to_string())?;
        for name in &frozen {
            let t = ckpt.params.get(name).map_err(|e| e.to_string())?;
            ensure(t.data().iter().all(|&v| v.to_bits() == 0), || format!("instance {instance}: {name} moved"))?;
        }
        compare(&ckpt.params, "frozen-trained")?;
    }
    Ok("10 micro-instances, zeroed and frozen skips, inference and train-mode logits bitwise equal".into())
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let syn = SyntheticConfig {
        n_samples: 1500,
        n_med_tokens: 60,
        n_labels: 8,
        meds_per_sample: 5.0,
        support_size: 5,
        seed: 11,
        ..SyntheticConfig::default()
    }
    .to_spec()
    .map_err(|e| e.to_string())?;
    let (ds, _) = generate_synthetic(&syn).map_err(|e| e.to_string())?;
    let splits = stratified_split(&ds, &DEFAULT_RATIOS, 11).map_err(|e| e.to_string())?;
    let spec = build_collabres(60, 8, &CollabResConfig::uniform(4, 24, 16, vec![0.1, 0.2, 0.3, 0.4], 24))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: 300,
        max_epochs: 4,
        seed: 11,
        threads: 1,
        ..TrainConfig::default()
    };
    let run = || -> Result<Vec<u8>, String> {
        let (ckpt, _) = train(&spec, &splits.train, &splits.dev, &cfg).map_err(|e| e.to_string())?;
        ckpt.to_bytes().map_err(|e| e.to_string())
    };
    let first = run()?;
    let second = run()?;
    ensure(first == second, || "two runs produced different checkpoints".into())?;

    let ckpt = collabres::train::Checkpoint::from_bytes(&first).map_err(|e| e.to_string())?;
    let before = predict(&ckpt, &splits.test.x, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let after = predict(&loaded, &splits.test.x, None).map_err(|e| e.to_string())?;
    ensure(same_bits(&before.scores, &after.scores), || "scores changed across save/load".into())?;
    ensure(before.label_sets == after.label_sets && before.top1 == after.top1, || {
        "label sets changed across save/load".into()
    })?;
    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure(on_disk == first, || "saved file differs from the in-memory encoding".into())?;
    Ok(format!("two runs byte-identical ({} bytes), save/load/predict bitwise", first.len()))
}

// ---------------------------------------------------------------------------

fn episode(id: &str, meds: &[(&str, &str)], codes: &[&str]) -> EpisodeRecord {
    let mut r = EpisodeRecord::new(id);
    r.medications = meds.iter().map(|(c, s)| Medication::new(*c, "10mg", *s)).collect();
    r.icd10_codes = codes.iter().map(|c| c.to_string()).collect();
    r
}

fn fixture() -> Vec<EpisodeRecord> {
    vec![
        episode("e01", &[("A", "active"), ("B", "active")], &["E119", "I10"]),
        episode("e02", &[("A", "active")], &["E110"]),
        episode("e03", &[("B", "active")], &["E11", "J45"]),
        episode("e04", &[("C", "active")], &["I10", "J45"]),
        episode("e05", &[("A", "active"), ("C", "completed")], &["I10"]),
        episode("e06", &[("B", "active")], &["J45", "E119"]),
        // Only medication cancelled: the episode goes, taking K21 to two.
        episode("e07", &[("C", "Cancelled")], &["K21"]),
        episode("e08", &[("D", "active")], &["K21", "E11", "E119"]),
        episode("e09", &[("D", "active")], &["K21", "I10"]),
        // Every label rare: dropped once Z99 is removed.
        episode("e10", &[("E", "active")], &["Z99"]),
        episode("e11", &[("A", "cancelled"), ("E", "active")], &["Z99", "J45"]),
        episode("e12", &[("F", "active")], &["R51", "I10"]),
    ]
}

fn pipeline() -> Outcome {
    let (out, rep) = clean(fixture(), &CleanConfig::default());
    let ids: Vec<&str> = out.iter().map(|r| r.episode_id.as_str()).collect();
    let want_ids = ["e01", "e02", "e03", "e04", "e05", "e06", "e08", "e09", "e11", "e12"];
    ensure(ids == want_ids, || format!("surviving episodes {ids:?}"))?;
    let codes: Vec<Vec<String>> = out.iter().map(|r| r.icd10_codes.clone()).collect();
    let want_codes: Vec<Vec<&str>> = vec![
        vec!["E11", "I10"],
        vec!["E11"],
        vec!["E11", "J45"],
        vec!["I10", "J45"],
        vec!["I10"],
        vec!["J45", "E11"],
        vec!["E11"],
        vec!["I10"],
        vec!["J45"],
        vec!["I10"],
    ];
    ensure(codes == want_codes, || format!("cleaned codes {codes:?}"))?;
    let e11 = &out[8];
    ensure(e11.medications.len() == 1 && e11.medications[0].code == "E", || "cancelled medication kept".into())?;
    ensure(rep.cancelled_medications == 2, || format!("cancelled {}", rep.cancelled_medications))?;
    ensure(rep.truncated_codes == 4 && rep.merged_duplicate_codes == 1, || {
        format!("truncated {} merged {}", rep.truncated_codes, rep.merged_duplicate_codes)
    })?;
    ensure(rep.rare_labels == ["K21", "R51", "Z99"], || format!("rare labels {:?}", rep.rare_labels))?;
    ensure(rep.episodes_without_medications == 1 && rep.episodes_without_labels == 1, || {
        format!("dropped {} / {}", rep.episodes_without_medications, rep.episodes_without_labels)
    })?;
    ensure(clean(out.clone(), &CleanConfig::default()).0 == out, || "clean is not idempotent".into())?;

    let ds = build_vocab_and_binarize(&out).map_err(|e| e.to_string())?;
    ensure(ds.labels.tokens() == ["E11", "I10", "J45"], || format!("labels {:?}", ds.labels.tokens()))?;
    for seed in 0..20 {
        let s = stratified_split(&ds, &DEFAULT_RATIOS, seed).map_err(|e| e.to_string())?;
        let mut seen: Vec<String> = [&s.train, &s.dev, &s.test].iter().flat_map(|d| d.episode_ids.clone()).collect();
        let sizes = [s.train.episode_ids.len(), s.dev.episode_ids.len(), s.test.episode_ids.len()];
        ensure(sizes == split_sizes(10, &DEFAULT_RATIOS) && sizes == [7, 1, 2], || format!("seed {seed}: sizes {sizes:?}"))?;
        seen.sort();
        let mut all: Vec<String> = want_ids.iter().map(|s| s.to_string()).collect();
        all.sort();
        ensure(seen == all, || format!("seed {seed}: splits are not an exact partition"))?;
        let covered = s.train.y.column_counts();
        ensure(covered.iter().all(|&c| c > 0), || format!("seed {seed}: train label counts {covered:?}"))?;
    }
    Ok("cancelled filter, E119->E11, <3-instance fixpoint, 20 seeded splits partition with full train coverage".into())
}

// ---------------------------------------------------------------------------

fn main() {
    // Keep panic messages out of the report; they are folded into FAIL lines.
    panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradients),
        ("metric oracle equivalence", metric_oracle),
        ("worked example", worked_example),
        ("synthetic learnability", learnability),
        ("protocol conformance", protocol),
        ("residual degeneracy", residual_degeneracy),
        ("determinism and round trip", determinism),
        ("pipeline fidelity", pipeline),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
