use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use collabres::data::{
    binarize_with, build_vocab_and_binarize, clean, generate_synthetic, ingest, label_frequency_report, load_split,
    load_splits, save_splits, stratified_split, CleanConfig, Dataset, DemographicKey, SyntheticConfig,
};
use collabres::metrics::{group_table_tsv, metric_rows_tsv, model_table_tsv, render_text, set_metrics, PredictionBatch};
use collabres::nn::{build_baseline_scaled, build_collabres, BaselineId, CollabResConfig, ModelSpec};
use collabres::tensor::SparseBinaryMatrix;
use collabres::train::{
    evaluate, load_checkpoint, predict, save_checkpoint, train, AdamConfig, EvalOptions, StopReason, TrainConfig,
    CHAPTER_GROUPING,
};

use crate::args::{EvaluateArgs, GlobalArgs, PredictArgs, PrepareArgs, ReportArgs, SynthArgs, TrainArgs};
use crate::failure::Failure;

pub const ECHO_FILE: &str = "run_config.txt";

type Outcome = Result<(), Failure>;

fn required_out(global: &GlobalArgs) -> Result<&Path, Failure> {
    global
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("--out is required for this command".into()))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Writes `text` to `out` (plus the echo beside it) or to stdout.
fn emit(out: Option<&Path>, text: &str, echo: &str) -> Outcome {
    match out {
        Some(path) => {
            write_file(path, text)?;
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".config.txt");
            write_file(&PathBuf::from(sidecar), echo)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Usage(format!("stdout: {e}")))
        }
    }
}

fn ratios(v: &[f64]) -> Result<[f64; 3], Failure> {
    let r: [f64; 3] = v
        .try_into()
        .map_err(|_| Failure::Usage(format!("--ratios needs three values, got {}", v.len())))?;
    if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 || r[0] == 0.0 {
        return Err(Failure::Usage(format!(
            "--ratios {r:?}: fractions must lie in [0, 1], sum to 1, with a non-empty train share"
        )));
    }
    Ok(r)
}

fn usage<T>(r: collabres::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

// ---------------------------------------------------------------------------

pub fn prepare(global: &GlobalArgs, args: &PrepareArgs, echo: &str) -> Outcome {
    let out = required_out(global)?;
    let ratios = ratios(&args.ratios)?;
    if args.min_instances == 0 || args.min_token_count == 0 || args.code_length == 0 {
        return Err(Failure::Usage(
            "--min-instances, --min-token-count and --code-length must be at least 1".into(),
        ));
    }
    let cfg = CleanConfig {
        min_instances: args.min_instances,
        min_token_count: args.min_token_count,
        cancelled_statuses: args.cancelled_status.clone(),
        code_length: args.code_length,
    };
    let records = ingest(&args.input)?;
    let (cleaned, report) = clean(records, &cfg);
    if cleaned.is_empty() {
        return Err(Failure::Data(format!(
            "no episodes survive cleaning ({} read, min instances {})",
            report.input_episodes, cfg.min_instances
        )));
    }
    let ds = build_vocab_and_binarize(&cleaned)?;
    let splits = stratified_split(&ds, &ratios, global.seed)?;
    save_splits(out, &splits)?;
    write_file(&out.join("clean_report.tsv"), &report.to_tsv())?;
    let freq = label_frequency_report(&ds.y, &ds.labels, ds.labels.len(), cfg.min_instances);
    write_file(&out.join("label_frequency.tsv"), &freq.to_tsv())?;
    write_file(&out.join(ECHO_FILE), echo)?;
    println!(
        "prepared {} of {} episodes: {} features, {} labels; train {}, dev {}, test {}",
        ds.x.rows(),
        report.input_episodes,
        ds.input_dim(),
        ds.output_dim(),
        splits.train.x.rows(),
        splits.dev.x.rows(),
        splits.test.x.rows()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn build_model(args: &TrainArgs, input_dim: usize, output_dim: usize) -> Result<ModelSpec, Failure> {
    if args.model.eq_ignore_ascii_case("collabres") {
        let dropouts = if args.dropouts.is_empty() {
            (1..=args.branches).map(|i| i as f32 * 0.1).collect()
        } else {
            args.dropouts.clone()
        };
        if dropouts.len() != args.branches {
            return Err(Failure::Usage(format!(
                "--dropouts has {} rates for {} branches",
                dropouts.len(),
                args.branches
            )));
        }
        let cfg = CollabResConfig::uniform(args.branches, args.branch_hidden, args.branch_out, dropouts, args.fusion_width);
        return usage(build_collabres(input_dim, output_dim, &cfg));
    }
    let id: BaselineId = args
        .model
        .parse()
        .map_err(|_| Failure::Usage(format!("unknown model '{}' (valid: M1..M8, collabres)", args.model)))?;
    usage(build_baseline_scaled(id, input_dim, output_dim, args.width_divisor))
}

pub fn train_cmd(global: &GlobalArgs, args: &TrainArgs, echo: &str) -> Outcome {
    let out = required_out(global)?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        early_stop_patience: args.patience,
        early_stop_metric: args.metric,
        seed: global.seed,
        shuffle: !args.no_shuffle,
        adam: AdamConfig {
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            epsilon: args.epsilon,
        },
        threads: global.threads as usize,
        threshold: args.threshold,
    };
    usage(cfg.validate())?;
    // Model flags are checked before any data is read.
    build_model(args, 1, 1)?;
    let splits = load_splits(&args.data)?;
    let spec = build_model(args, splits.train.input_dim(), splits.train.output_dim())?;
    let (ckpt, history) = train(&spec, &splits.train, &splits.dev, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    save_checkpoint(&ckpt, &out.join("model.ckpt"))?;
    let spec_json = serde_json::to_string_pretty(&ckpt.spec).map_err(|e| Failure::Internal(e.to_string()))?;
    write_file(&out.join("model.json"), &(spec_json + "\n"))?;
    write_file(&out.join("history.tsv"), &history.to_tsv(false))?;
    write_file(&out.join(ECHO_FILE), echo)?;
    let reason = match history.stop_reason {
        StopReason::EarlyStopped => "early stop",
        StopReason::MaxEpochs => "epoch cap",
    };
    println!(
        "{}: {} parameters, {} epochs ({reason}), best dev {} {:.4} at epoch {}",
        spec.name,
        spec.parameter_count(),
        history.epochs.len(),
        history.metric,
        history.best_metric(),
        history.best_epoch
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn evaluate_cmd(global: &GlobalArgs, args: &EvaluateArgs, echo: &str) -> Outcome {
    let out = required_out(global)?;
    let group_by = args
        .group_by
        .iter()
        .map(|s| s.parse::<DemographicKey>().map_err(Failure::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(t) = args.threshold {
        usage(collabres::metrics::check_threshold(t))?;
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_split(&args.data, &args.split)?;
    let mut deferred = None;
    let group_by = if !group_by.is_empty() && !ds.has_demographics() {
        let failure = Failure::Data(format!(
            "--group-by {}: split '{}' has no demographic rows",
            args.group_by.join(","),
            args.split
        ));
        if !args.keep_going {
            return Err(failure);
        }
        log::warn!("{failure}; writing the other reports");
        deferred = Some(failure);
        Vec::new()
    } else {
        group_by
    };
    let opts = EvalOptions {
        threshold: args.threshold,
        group_by,
    };
    let report = evaluate(&ckpt, &ds, &opts)?;
    let name = args.name.clone().unwrap_or_else(|| ckpt.spec.name.clone());
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    write_file(&out.join("metrics.tsv"), &model_table_tsv(&[(&name, &report)]))?;
    write_file(&out.join("metric_rows.tsv"), &metric_rows_tsv(&report))?;
    for g in &report.groupings {
        let (file, top_k) = if g.name == CHAPTER_GROUPING {
            ("chapters.tsv".to_string(), Some(args.top_k))
        } else {
            (format!("groups_{}.tsv", file_stem(&g.name)), None)
        };
        write_file(&out.join(file), &group_table_tsv(g, top_k))?;
    }
    let text = render_text(&name, &report, Some(args.top_k));
    write_file(&out.join("report.txt"), &text)?;
    write_file(&out.join(ECHO_FILE), echo)?;
    print!("{text}");
    match deferred {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------

pub fn predict_cmd(global: &GlobalArgs, args: &PredictArgs, echo: &str) -> Outcome {
    if let Some(t) = args.threshold {
        usage(collabres::metrics::check_threshold(t))?;
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut records = ingest(&args.input)?;
    let cancelled = CleanConfig::default();
    for r in &mut records {
        r.medications.retain(|m| !cancelled.is_cancelled(&m.status));
        r.icd10_codes.clear();
    }
    let (ds, unknown) = binarize_with(&records, &ckpt.features, &ckpt.labels)?;
    if unknown.tokens > 0 {
        log::warn!("{} medication tokens are not in the model vocabulary and were ignored", unknown.tokens);
    }
    let pred = predict(&ckpt, &ds.x, args.threshold)?;
    let code = |j: u32| ckpt.labels.token(j).unwrap_or("?");
    let mut text = String::from("episode_id\tprincipal\tprincipal_score\tpredicted_codes\tranked\n");
    for (i, id) in ds.episode_ids.iter().enumerate() {
        let scores = pred.scores.row(i);
        let mut order: Vec<u32> = (0..scores.len() as u32).collect();
        // Stable sort keeps equal scores in label order.
        order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]));
        let top = pred.top1[i];
        let mut rank = vec![0usize; order.len()];
        for (r, &j) in order.iter().enumerate() {
            rank[j as usize] = r;
        }
        let mut set: Vec<u32> = pred.label_sets[i].clone();
        set.sort_by_key(|&j| rank[j as usize]);
        let set: Vec<&str> = set.iter().map(|&j| code(j)).collect();
        let ranked: Vec<String> = order
            .iter()
            .take(args.top_k)
            .map(|&j| format!("{}:{:.4}", code(j), scores[j as usize]))
            .collect();
        let _ = writeln!(
            text,
            "{id}\t{}\t{:.4}\t{}\t{}",
            code(top),
            scores[top as usize],
            set.join(","),
            ranked.join(",")
        );
    }
    emit(global.out.as_deref(), &text, echo)
}

// ---------------------------------------------------------------------------

pub fn synth(global: &GlobalArgs, args: &SynthArgs, echo: &str) -> Outcome {
    let out = required_out(global)?;
    let ratios = ratios(&args.ratios)?;
    let cfg = SyntheticConfig {
        n_samples: args.samples,
        n_med_tokens: args.tokens,
        n_labels: args.labels,
        meds_per_sample: args.meds_per_sample,
        support_size: args.support_size,
        noise: args.noise,
        seed: global.seed,
    };
    let spec = usage(cfg.to_spec())?;
    let (ds, oracle) = generate_synthetic(&spec)?;
    let splits = stratified_split(&ds, &ratios, global.seed)?;
    save_splits(out, &splits)?;
    let json = serde_json::to_string_pretty(&oracle).map_err(|e| Failure::Internal(e.to_string()))?;
    write_file(&out.join("oracle.json"), &(json + "\n"))?;
    write_file(&out.join(ECHO_FILE), echo)?;
    let bayes = spec.bayes_scores(&splits.test.x);
    let bayes_f1 = set_metrics(&PredictionBatch::new(&bayes, &splits.test.y, None, 0.5)?).sample_f1;
    println!(
        "{} samples ({} tokens, {} labels), flip rate {:.4}, Bayes-optimal test F1 {bayes_f1:.4}",
        ds.x.rows(),
        args.tokens,
        args.labels,
        oracle.flip_rate()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn all_labels(dir: &Path) -> Result<Dataset, Failure> {
    let s = load_splits(dir)?;
    let rows: Vec<Vec<u32>> = [&s.train, &s.dev, &s.test]
        .iter()
        .flat_map(|d| d.y.row_lists().iter().cloned())
        .collect();
    let mut ds = s.train.clone();
    ds.y = SparseBinaryMatrix::new(ds.labels.len(), rows)?;
    Ok(ds)
}

pub fn report(global: &GlobalArgs, args: &ReportArgs, echo: &str) -> Outcome {
    if args.min_instances == 0 {
        return Err(Failure::Usage("--min-instances must be at least 1".into()));
    }
    let ds = if args.split == "all" {
        all_labels(&args.data)?
    } else {
        load_split(&args.data, &args.split)?
    };
    let freq = label_frequency_report(&ds.y, &ds.labels, args.top_k, args.min_instances);
    let text = if args.long_tail {
        freq.long_tail_tsv()
    } else {
        freq.to_tsv()
    };
    emit(global.out.as_deref(), &text, echo)
}
