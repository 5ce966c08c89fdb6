use std::ops::Range;

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::inference::{predict_chunked, validation_metric};
use super::protocol::{run_protocol, EpochRunner, TrainConfig, TrainHistory};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::layers::sigmoid_bce_sum;
use crate::nn::{forward_logits, init_params, model_backward, Gradients, ModelSpec, Mode, Parameters};
use crate::tensor::{SeededRng, SparseBinaryMatrix};

/// Rows per gradient shard. Shards are the unit of parallel work and of
/// dropout randomness.
pub const SHARD_ROWS: usize = 256;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_KEY: u64 = 0x5DEE_CE66_D1CE_4E5B;

/// Contiguous batch ranges over `n` rows.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(n)).collect()
}

/// Loss sum and gradients for one shard; gradients are scaled by the
/// whole batch's cell count.
fn shard_grads(
    spec: &ModelSpec,
    params: &Parameters<f32>,
    x: &SparseBinaryMatrix,
    y: &SparseBinaryMatrix,
    denom: f64,
    rng: &mut SeededRng,
) -> Result<(f64, Gradients<f32>)> {
    let trace = forward_logits(spec, params, x, Mode::Train, rng)?;
    let (loss, dlogits) = sigmoid_bce_sum(&trace.logits, y, denom)?;
    let grads = model_backward(spec, params, &trace, &dlogits)?;
    Ok((loss, grads))
}

/// Loss sum and gradients of a run of shards; `None` for an empty run.
type ShardSum = Option<(f64, Gradients<f32>)>;

/// Loss sum and gradients of one batch. Shards are summed left to right;
/// with several threads each thread sums a contiguous run of shards and the
/// partial sums are then added in thread order.
pub fn batch_gradients(
    spec: &ModelSpec,
    params: &Parameters<f32>,
    x: &SparseBinaryMatrix,
    y: &SparseBinaryMatrix,
    seed: u64,
    step: u64,
    threads: usize,
) -> Result<(f64, Gradients<f32>)> {
    let denom = (x.rows() * y.cols()).max(1) as f64;
    let shards = batch_ranges(x.rows(), SHARD_ROWS);
    let run = |ids: Range<usize>| -> Result<Option<(f64, Gradients<f32>)>> {
        let mut acc: Option<(f64, Gradients<f32>)> = None;
        for s in ids {
            let r = &shards[s];
            let mut rng = SeededRng::derive(seed ^ DROPOUT_KEY, (step << 20) | s as u64);
            let (loss, g) = shard_grads(
                spec,
                params,
                &x.slice_rows(r.start, r.end),
                &y.slice_rows(r.start, r.end),
                denom,
                &mut rng,
            )?;
            match &mut acc {
                None => acc = Some((loss, g)),
                Some((l, a)) => {
                    *l += loss;
                    a.accumulate(&g)?;
                }
            }
        }
        Ok(acc)
    };
    let threads = threads.clamp(1, shards.len().max(1));
    let partials: Vec<Result<ShardSum>> = if threads == 1 {
        vec![run(0..shards.len())]
    } else {
        let per = shards.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let ids = (t * per).min(shards.len())..((t + 1) * per).min(shards.len());
                    let run = &run;
                    scope.spawn(move || run(ids))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidModel("worker thread panicked".into()))))
                .collect()
        })
    };
    let mut total: ShardSum = None;
    for p in partials {
        if let Some((loss, g)) = p? {
            match &mut total {
                None => total = Some((loss, g)),
                Some((l, a)) => {
                    *l += loss;
                    a.accumulate(&g)?;
                }
            }
        }
    }
    match total {
        Some(t) => Ok(t),
        None => Ok((0.0, Parameters::zeros_like(spec))),
    }
}

struct Runner<'a> {
    spec: &'a ModelSpec,
    train: &'a Dataset,
    dev: &'a Dataset,
    cfg: &'a TrainConfig,
    params: Parameters<f32>,
    best: Option<Parameters<f32>>,
    adam: AdamState,
    order: Vec<usize>,
    shuffle_rng: SeededRng,
    step: u64,
}

impl EpochRunner for Runner<'_> {
    fn train_epoch(&mut self, _epoch: usize) -> Result<(f64, usize)> {
        if self.cfg.shuffle {
            self.shuffle_rng.shuffle(&mut self.order);
        }
        let mut loss = 0.0;
        let batches = batch_ranges(self.order.len(), self.cfg.batch_size);
        for r in &batches {
            let rows = &self.order[r.clone()];
            let x = self.train.x.select_rows(rows);
            let y = self.train.y.select_rows(rows);
            let (l, grads) = batch_gradients(self.spec, &self.params, &x, &y, self.cfg.seed, self.step, self.cfg.threads)?;
            adam_step(&mut self.params, &grads, &mut self.adam)?;
            self.step += 1;
            loss += l;
        }
        let cells = (self.train.len() * self.train.output_dim()) as f64;
        Ok((loss / cells, batches.len()))
    }

    fn validate(&mut self) -> Result<f64> {
        let scores = predict_chunked(self.spec, &self.params, &self.dev.x)?;
        validation_metric(self.cfg.early_stop_metric, &scores, self.dev, self.cfg.threshold)
    }

    fn keep_best(&mut self) {
        self.best = Some(self.params.clone());
    }
}

fn check_split(spec: &ModelSpec, ds: &Dataset, name: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data(format!("{name} split is empty")));
    }
    if ds.input_dim() != spec.input_dim || ds.output_dim() != spec.output_dim {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: (ds.input_dim(), ds.output_dim()),
            right: (spec.input_dim, spec.output_dim),
        });
    }
    Ok(())
}

/// He-initialized parameters for `spec` under `seed`, as `train` draws them.
pub fn initial_params(spec: &ModelSpec, seed: u64) -> Result<Parameters<f32>> {
    init_params(spec, &mut SeededRng::derive(seed, INIT_STREAM))
}

/// Trains `spec` on `train`, early-stopping on `dev`, and returns the best
/// epoch's parameters packaged as a checkpoint.
pub fn train(spec: &ModelSpec, train: &Dataset, dev: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, TrainHistory)> {
    train_from(spec, initial_params(spec, cfg.seed)?, train, dev, cfg, &[])
}

/// As [`train`], starting from `params` and never updating the tensors
/// named in `frozen`.
pub fn train_from(
    spec: &ModelSpec,
    params: Parameters<f32>,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    frozen: &[String],
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    spec.validate()?;
    params.check_against(spec)?;
    check_split(spec, train, "train")?;
    check_split(spec, dev, "dev")?;
    if train.features != dev.features || train.labels != dev.labels {
        return Err(Error::Data("train and dev vocabularies differ".into()));
    }
    if cfg.early_stop_metric == super::EarlyStopMetric::PrimaryAccuracy && dev.principal.is_none() {
        return Err(Error::MissingPrincipal);
    }
    let mut adam = AdamState::new(&params, cfg.adam);
    for name in frozen {
        params.get(name)?;
        adam.freeze(name.clone());
    }
    let mut runner = Runner {
        spec,
        train,
        dev,
        cfg,
        params,
        best: None,
        adam,
        order: (0..train.len()).collect(),
        shuffle_rng: SeededRng::derive(cfg.seed, SHUFFLE_STREAM),
        step: 0,
    };
    let history = run_protocol(cfg, &mut runner)?;
    let params = runner.best.take().unwrap_or(runner.params);
    let ckpt = Checkpoint {
        spec: spec.clone(),
        params,
        features: train.features.clone(),
        labels: train.labels.clone(),
        train_config: cfg.clone(),
        threshold: cfg.threshold,
    };
    Ok((ckpt, history))
}
