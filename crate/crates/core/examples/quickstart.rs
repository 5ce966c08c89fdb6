//! Trains a small collaborative residual model on synthetic data and prints
//! the held-out report.
//!
//! `cargo run --release -p collabres --example quickstart`

use collabres::data::{generate_synthetic, stratified_split, SyntheticConfig, DEFAULT_RATIOS};
use collabres::metrics::render_text;
use collabres::nn::{build_collabres, CollabResConfig};
use collabres::train::{evaluate, train, EarlyStopMetric, EvalOptions, TrainConfig};

fn main() -> collabres::Result<()> {
    let spec = SyntheticConfig {
        n_samples: 3000,
        n_med_tokens: 120,
        n_labels: 20,
        meds_per_sample: 8.0,
        support_size: 8,
        ..SyntheticConfig::default()
    }
    .to_spec()?;
    let (ds, oracle) = generate_synthetic(&spec)?;
    println!("synthetic data: {} samples, label flip rate {:.3}", ds.x.rows(), oracle.flip_rate());
    let splits = stratified_split(&ds, &DEFAULT_RATIOS, 0)?;

    let model = build_collabres(
        ds.input_dim(),
        ds.output_dim(),
        &CollabResConfig::uniform(4, 128, 64, vec![0.1, 0.2, 0.3, 0.4], 128),
    )?;
    let cfg = TrainConfig {
        batch_size: 128,
        max_epochs: 30,
        early_stop_metric: EarlyStopMetric::SampleF1,
        ..TrainConfig::default()
    };
    let (ckpt, history) = train(&model, &splits.train, &splits.dev, &cfg)?;
    println!("best epoch {} of {}\n", history.best_epoch, history.epochs.len());

    let report = evaluate(&ckpt, &splits.test, &EvalOptions::default())?;
    print!("{}", render_text("collabres", &report, Some(5)));
    Ok(())
}
