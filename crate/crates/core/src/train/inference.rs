use super::checkpoint::Checkpoint;
use super::protocol::EarlyStopMetric;
use crate::data::{chapter_groups, demographic_groups, Dataset, DemographicKey};
use crate::error::{Error, Result};
use crate::metrics::{
    check_threshold, group_reports, predicted_set, primary_accuracy, set_metrics, top1, MetricsReport, PredictionBatch,
};
use crate::nn::{predict_scores, ModelSpec, Parameters};
use crate::tensor::{DenseMatrix, SparseBinaryMatrix};

/// Rows per inference chunk.
const INFER_ROWS: usize = 4096;

/// Infer-mode scores, computed chunk by chunk to bound memory.
pub fn predict_chunked(spec: &ModelSpec, params: &Parameters<f32>, x: &SparseBinaryMatrix) -> Result<DenseMatrix<f32>> {
    if x.cols() != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "predict",
            left: (x.rows(), x.cols()),
            right: (spec.input_dim, spec.output_dim),
        });
    }
    let mut data = Vec::with_capacity(x.rows() * spec.output_dim);
    for start in (0..x.rows()).step_by(INFER_ROWS) {
        let end = (start + INFER_ROWS).min(x.rows());
        data.extend(predict_scores(spec, params, &x.slice_rows(start, end))?.into_data());
    }
    Ok(DenseMatrix::from_parts(x.rows(), spec.output_dim, data))
}

/// Early-stopping metric of `scores` against `ds`.
pub fn validation_metric(metric: EarlyStopMetric, scores: &DenseMatrix<f32>, ds: &Dataset, threshold: f64) -> Result<f64> {
    let batch = PredictionBatch::new(scores, &ds.y, ds.principal.as_deref(), threshold)?;
    match metric {
        EarlyStopMetric::PrimaryAccuracy => primary_accuracy(&batch),
        EarlyStopMetric::SubsetAccuracy => Ok(set_metrics(&batch).subset_accuracy),
        EarlyStopMetric::SampleF1 => Ok(set_metrics(&batch).sample_f1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub scores: DenseMatrix<f32>,
    /// Labels with `score >= threshold`, ascending.
    pub label_sets: Vec<Vec<u32>>,
    /// Highest-scoring label per sample (principal-diagnosis prediction).
    pub top1: Vec<u32>,
}

/// Scores, thresholded sets and top-1 labels. `threshold` defaults to the
/// checkpoint's.
pub fn predict(ckpt: &Checkpoint, batch: &SparseBinaryMatrix, threshold: Option<f64>) -> Result<Prediction> {
    let threshold = threshold.unwrap_or(ckpt.threshold);
    check_threshold(threshold)?;
    let scores = predict_chunked(&ckpt.spec, &ckpt.params, batch)?;
    let label_sets = (0..scores.rows()).map(|i| predicted_set(scores.row(i), threshold)).collect();
    let top1 = (0..scores.rows()).map(|i| top1(scores.row(i)).unwrap_or(0)).collect();
    Ok(Prediction {
        scores,
        label_sets,
        top1,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub threshold: Option<f64>,
    /// Demographic columns to group by, one grouping each.
    pub group_by: Vec<DemographicKey>,
}

pub const CHAPTER_GROUPING: &str = "ICD10 chapter";

/// Full metric suite on `ds`, grouped by the chapter of the principal label
/// and optionally by demographics. Without principal labels, primary
/// accuracy and the chapter grouping are omitted with a warning.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    if ds.features != ckpt.features || ds.labels != ckpt.labels {
        return Err(Error::Data("dataset vocabularies differ from the checkpoint's".into()));
    }
    let demo = opts
        .group_by
        .iter()
        .map(|&key| {
            demographic_groups(ds, &[key]).ok_or_else(|| {
                Error::Data("cannot group by demographics: the dataset has no demographic rows".into())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = opts.threshold.unwrap_or(ckpt.threshold);
    let pred = predict(ckpt, &ds.x, Some(threshold))?;
    if ds.principal.is_none() {
        log::warn!("no principal labels: primary-diagnosis accuracy omitted");
    }
    let batch = PredictionBatch::new(&pred.scores, &ds.y, ds.principal.as_deref(), threshold)?;
    let mut report = MetricsReport::compute(&batch);
    if let Some(chapters) = chapter_groups(ds) {
        report.groupings.push(group_reports(&batch, CHAPTER_GROUPING, &chapters)?);
    }
    for (name, values) in demo {
        report.groupings.push(group_reports(&batch, &name, &values)?);
    }
    Ok(report)
}
