//! Training configuration, early stopping and the epoch loop that ties
//! them together, independent of what an epoch actually computes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    /// Top-1 label equals the principal label.
    PrimaryAccuracy,
    /// Thresholded set equals the true set.
    SubsetAccuracy,
    SampleF1,
}

impl std::str::FromStr for EarlyStopMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "primary_accuracy" | "primary" => Ok(EarlyStopMetric::PrimaryAccuracy),
            "subset_accuracy" | "subset" => Ok(EarlyStopMetric::SubsetAccuracy),
            "sample_f1" | "f1" => Ok(EarlyStopMetric::SampleF1),
            other => Err(Error::invalid(format!(
                "unknown early-stop metric '{other}' (expected primary_accuracy, subset_accuracy, sample_f1)"
            ))),
        }
    }
}

impl std::fmt::Display for EarlyStopMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EarlyStopMetric::PrimaryAccuracy => "primary_accuracy",
            EarlyStopMetric::SubsetAccuracy => "subset_accuracy",
            EarlyStopMetric::SampleF1 => "sample_f1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
    /// Worker threads per step. Results are bitwise reproducible for a
    /// fixed value.
    pub threads: usize,
    /// Decision threshold for set metrics and predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2048,
            max_epochs: 100,
            early_stop_patience: 10,
            early_stop_metric: EarlyStopMetric::PrimaryAccuracy,
            seed: 0,
            shuffle: true,
            adam: AdamConfig::default(),
            threads: 1,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        crate::metrics::check_threshold(self.threshold)?;
        self.adam.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub steps: usize,
    /// Milliseconds since training started.
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub metric: EarlyStopMetric,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_metric(&self) -> f64 {
        self.epochs[self.best_epoch - 1].dev_metric
    }

    /// Tab-separated per-epoch table. Timings are wall-clock and therefore
    /// only included on request.
    pub fn to_tsv(&self, with_timing: bool) -> String {
        let mut out = format!("epoch\ttrain_loss\tdev_{}\tsteps\tbest", self.metric);
        if with_timing {
            out.push_str("\telapsed_ms");
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\t{}",
                e.epoch,
                e.train_loss,
                e.dev_metric,
                e.steps,
                if e.epoch == self.best_epoch { "*" } else { "" }
            ));
            if with_timing {
                out.push_str(&format!("\t{}", e.elapsed_ms));
            }
            out.push('\n');
        }
        let reason = match self.stop_reason {
            StopReason::EarlyStopped => "early_stopped",
            StopReason::MaxEpochs => "max_epochs",
        };
        out.push_str(&format!("# best_epoch={} stop_reason={reason}\n", self.best_epoch));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counter. Only strictly greater values improve, so the first
/// epoch reaching the maximum wins ties. Non-finite values never improve.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        let improved = metric.is_finite() && self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::NoImprovement
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// What one epoch of a concrete model does.
pub trait EpochRunner {
    /// Trains for one epoch; returns mean training loss and step count.
    fn train_epoch(&mut self, epoch: usize) -> Result<(f64, usize)>;
    /// Early-stopping metric on the validation split.
    fn validate(&mut self) -> Result<f64>;
    /// Called whenever the validation metric improves.
    fn keep_best(&mut self);
}

/// Runs epochs until patience runs out or `max_epochs` is reached.
pub fn run_protocol<R: EpochRunner>(cfg: &TrainConfig, runner: &mut R) -> Result<TrainHistory> {
    cfg.validate()?;
    let start = Instant::now();
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let (train_loss, steps) = runner.train_epoch(epoch)?;
        let dev_metric = runner.validate()?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric,
            steps,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        let verdict = stopper.observe(epoch, dev_metric);
        log::info!("epoch {epoch}: loss {train_loss:.6}, dev {} {dev_metric:.4}", cfg.early_stop_metric);
        match verdict {
            Verdict::Improved => runner.keep_best(),
            Verdict::NoImprovement => {}
            Verdict::Stop => {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }
    let best_epoch = stopper
        .best()
        .map(|(e, _)| e)
        .ok_or_else(|| Error::Data("validation metric was never finite".into()))?;
    Ok(TrainHistory {
        metric: cfg.early_stop_metric,
        epochs,
        best_epoch,
        stop_reason,
    })
}
