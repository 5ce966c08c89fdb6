//! Multi-label evaluation: ranking metrics, thresholded set metrics,
//! principal-diagnosis accuracy and grouped breakdowns.
//!
//! Conventions shared by every ranking metric:
//!
//! * `rank(j) = |{k : score_k >= score_j}|`, so tied labels all take the
//!   worst rank of their tie group.
//! * Samples whose true set is empty or contains every label are
//!   degenerate: they are skipped by ranking metrics (and counted), but
//!   still contribute to set metrics.
//! * A label is predicted when `score >= threshold`.
//! * The top-1 label is the highest score, lowest index on ties.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseBinaryMatrix};

/// Scores, ground truth and decision threshold for a set of samples.
#[derive(Clone, Copy, Debug)]
pub struct PredictionBatch<'a> {
    scores: &'a DenseMatrix<f32>,
    truth: &'a SparseBinaryMatrix,
    principal: Option<&'a [u32]>,
    threshold: f64,
}

impl<'a> PredictionBatch<'a> {
    pub fn new(
        scores: &'a DenseMatrix<f32>,
        truth: &'a SparseBinaryMatrix,
        principal: Option<&'a [u32]>,
        threshold: f64,
    ) -> Result<Self> {
        if scores.shape() != (truth.rows(), truth.cols()) {
            return Err(Error::ShapeMismatch {
                op: "PredictionBatch",
                left: scores.shape(),
                right: (truth.rows(), truth.cols()),
            });
        }
        scores.check_finite("PredictionBatch")?;
        check_threshold(threshold)?;
        if let Some(p) = principal {
            if p.len() != truth.rows() {
                return Err(Error::invalid(format!(
                    "{} principal labels for {} samples",
                    p.len(),
                    truth.rows()
                )));
            }
            if let Some(i) = (0..p.len()).find(|&i| !truth.contains(i, p[i])) {
                return Err(Error::invalid(format!("sample {i}: principal label not in its true set")));
            }
        }
        Ok(PredictionBatch {
            scores,
            truth,
            principal,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.rows() == 0
    }

    pub fn n_labels(&self) -> usize {
        self.truth.cols()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn has_principal(&self) -> bool {
        self.principal.is_some()
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {threshold} must lie strictly inside (0, 1)")))
    }
}

/// Per-sample ranking statistics, or `None` for degenerate samples.
struct SampleRanks {
    lrap: f64,
    coverage: f64,
    ranking_loss: f64,
}

fn sample_ranks(scores: &[f32], truth: &[u32]) -> Option<SampleRanks> {
    let n_true = truth.len();
    let n_labels = scores.len();
    if n_true == 0 || n_true == n_labels {
        return None;
    }
    let mut all: Vec<f32> = scores.to_vec();
    all.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut positives: Vec<f32> = truth.iter().map(|&j| scores[j as usize]).collect();
    positives.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut lrap = 0.0;
    let mut coverage = 0usize;
    let mut violations = 0usize;
    for &j in truth {
        let s = scores[j as usize];
        let rank = all.partition_point(|&v| v >= s);
        let true_rank = positives.partition_point(|&v| v >= s);
        lrap += true_rank as f64 / rank as f64;
        coverage = coverage.max(rank);
        // Negatives scored at or above this positive.
        violations += rank - true_rank;
    }
    Some(SampleRanks {
        lrap: lrap / n_true as f64,
        coverage: coverage as f64,
        ranking_loss: violations as f64 / (n_true * (n_labels - n_true)) as f64,
    })
}

/// Means of the three ranking metrics over evaluable samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub lrap: f64,
    pub coverage_error: f64,
    pub ranking_loss: f64,
    pub evaluable: usize,
    pub degenerate: usize,
}

pub fn ranking_metrics(batch: &PredictionBatch<'_>) -> Result<RankingMetrics> {
    let (mut lrap, mut cov, mut rl) = (0.0, 0.0, 0.0);
    let mut evaluable = 0;
    for i in 0..batch.len() {
        if let Some(s) = sample_ranks(batch.scores.row(i), batch.truth.row(i)) {
            lrap += s.lrap;
            cov += s.coverage;
            rl += s.ranking_loss;
            evaluable += 1;
        }
    }
    if evaluable == 0 {
        return Err(Error::NoEvaluableSamples);
    }
    let n = evaluable as f64;
    Ok(RankingMetrics {
        lrap: lrap / n,
        coverage_error: cov / n,
        ranking_loss: rl / n,
        evaluable,
        degenerate: batch.len() - evaluable,
    })
}

/// Label-ranking average precision.
pub fn lrap(batch: &PredictionBatch<'_>) -> Result<f64> {
    Ok(ranking_metrics(batch)?.lrap)
}

/// Mean over samples of the worst rank held by a true label.
pub fn coverage_error(batch: &PredictionBatch<'_>) -> Result<f64> {
    Ok(ranking_metrics(batch)?.coverage_error)
}

/// Mean fraction of (true, false) label pairs with the false label scored
/// at or above the true one.
pub fn ranking_loss(batch: &PredictionBatch<'_>) -> Result<f64> {
    Ok(ranking_metrics(batch)?.ranking_loss)
}

/// Metrics on the thresholded label sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SetMetrics {
    /// Sample-averaged F1.
    pub sample_f1: f64,
    pub jaccard: f64,
    /// Fraction of samples whose predicted set equals the true set.
    pub subset_accuracy: f64,
    pub micro_f1: f64,
    /// Mean F1 over labels that are predicted or true at least once.
    pub macro_f1: f64,
    /// Sum of |P \ Y| over samples.
    pub over_coding: u64,
    /// Sum of |Y \ P| over samples.
    pub under_coding: u64,
}

/// Labels with `score >= threshold`, ascending.
pub fn predicted_set(scores: &[f32], threshold: f64) -> Vec<u32> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s as f64 >= threshold)
        .map(|(j, _)| j as u32)
        .collect()
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn set_metrics(batch: &PredictionBatch<'_>) -> SetMetrics {
    let n_labels = batch.n_labels();
    let mut f1 = 0.0;
    let mut jac = 0.0;
    let mut exact = 0usize;
    let (mut over, mut under) = (0u64, 0u64);
    let mut tp_l = vec![0u64; n_labels];
    let mut fp_l = vec![0u64; n_labels];
    let mut fn_l = vec![0u64; n_labels];
    for i in 0..batch.len() {
        let y = batch.truth.row(i);
        let p = predicted_set(batch.scores.row(i), batch.threshold);
        let inter = intersection_size(&p, y);
        let union = p.len() + y.len() - inter;
        if union == 0 {
            f1 += 1.0;
            jac += 1.0;
        } else {
            f1 += 2.0 * inter as f64 / (p.len() + y.len()) as f64;
            jac += inter as f64 / union as f64;
        }
        if p.as_slice() == y {
            exact += 1;
        }
        over += (p.len() - inter) as u64;
        under += (y.len() - inter) as u64;
        for &j in &p {
            if y.binary_search(&j).is_ok() {
                tp_l[j as usize] += 1;
            } else {
                fp_l[j as usize] += 1;
            }
        }
        for &j in y {
            if p.binary_search(&j).is_err() {
                fn_l[j as usize] += 1;
            }
        }
    }
    let n = batch.len().max(1) as f64;
    let tp: u64 = tp_l.iter().sum();
    let micro_den = 2 * tp + over + under;
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for j in 0..n_labels {
        let den = 2 * tp_l[j] + fp_l[j] + fn_l[j];
        if den > 0 {
            macro_sum += 2.0 * tp_l[j] as f64 / den as f64;
            macro_n += 1;
        }
    }
    let empty = batch.is_empty();
    SetMetrics {
        sample_f1: if empty { 0.0 } else { f1 / n },
        jaccard: if empty { 0.0 } else { jac / n },
        subset_accuracy: exact as f64 / n,
        micro_f1: if micro_den == 0 { 1.0 } else { 2.0 * tp as f64 / micro_den as f64 },
        macro_f1: if macro_n == 0 { 1.0 } else { macro_sum / macro_n as f64 },
        over_coding: over,
        under_coding: under,
    }
}

/// Highest-scoring label, lowest index on ties.
pub fn top1(scores: &[f32]) -> Option<u32> {
    let mut best: Option<(usize, f32)> = None;
    for (j, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j as u32)
}

/// Fraction of samples whose top-1 label is the principal label.
pub fn primary_accuracy(batch: &PredictionBatch<'_>) -> Result<f64> {
    let principal = batch.principal.ok_or(Error::MissingPrincipal)?;
    if batch.is_empty() {
        return Err(Error::NoEvaluableSamples);
    }
    let hits = (0..batch.len())
        .filter(|&i| top1(batch.scores.row(i)) == Some(principal[i]))
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

/// Full metric suite for a set of samples, with optional named groupings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    /// Samples skipped by ranking metrics.
    pub n_degenerate: usize,
    pub lrap: Option<f64>,
    pub coverage_error: Option<f64>,
    pub ranking_loss: Option<f64>,
    pub sample_f1: f64,
    pub jaccard: f64,
    pub subset_accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub primary_accuracy: Option<f64>,
    pub over_coding: u64,
    pub under_coding: u64,
    pub groupings: Vec<Grouping>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grouping {
    pub name: String,
    /// Sorted by descending primary accuracy, then key.
    pub groups: Vec<GroupReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub key: String,
    pub report: MetricsReport,
}

impl MetricsReport {
    pub fn compute(batch: &PredictionBatch<'_>) -> Self {
        let ranking = ranking_metrics(batch).ok();
        let sets = set_metrics(batch);
        MetricsReport {
            n_samples: batch.len(),
            n_degenerate: ranking.map_or(batch.len(), |r| r.degenerate),
            lrap: ranking.map(|r| r.lrap),
            coverage_error: ranking.map(|r| r.coverage_error),
            ranking_loss: ranking.map(|r| r.ranking_loss),
            sample_f1: sets.sample_f1,
            jaccard: sets.jaccard,
            subset_accuracy: sets.subset_accuracy,
            micro_f1: sets.micro_f1,
            macro_f1: sets.macro_f1,
            primary_accuracy: primary_accuracy(batch).ok(),
            over_coding: sets.over_coding,
            under_coding: sets.under_coding,
            groupings: Vec::new(),
        }
    }

    pub fn grouping(&self, name: &str) -> Option<&Grouping> {
        self.groupings.iter().find(|g| g.name == name)
    }
}

/// Splits the batch by `group_values` (one per sample) and computes the full
/// suite per group.
pub fn group_reports(batch: &PredictionBatch<'_>, name: &str, group_values: &[String]) -> Result<Grouping> {
    if group_values.len() != batch.len() {
        return Err(Error::invalid(format!(
            "{} group values for {} samples",
            group_values.len(),
            batch.len()
        )));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in group_values.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let mut groups = Vec::with_capacity(members.len());
    for (key, rows) in members {
        let scores = DenseMatrix::from_parts(
            rows.len(),
            batch.n_labels(),
            rows.iter().flat_map(|&r| batch.scores.row(r).iter().copied()).collect(),
        );
        let truth = batch.truth.select_rows(&rows);
        let principal: Option<Vec<u32>> = batch.principal.map(|p| rows.iter().map(|&r| p[r]).collect());
        let sub = PredictionBatch::new(&scores, &truth, principal.as_deref(), batch.threshold)?;
        groups.push(GroupReport {
            key: key.to_string(),
            report: MetricsReport::compute(&sub),
        });
    }
    groups.sort_by(|a, b| {
        let pa = a.report.primary_accuracy.unwrap_or(f64::NEG_INFINITY);
        let pb = b.report.primary_accuracy.unwrap_or(f64::NEG_INFINITY);
        pb.total_cmp(&pa).then_with(|| a.key.cmp(&b.key))
    });
    Ok(Grouping {
        name: name.to_string(),
        groups,
    })
}

/// Global report plus one grouping.
pub fn grouped_report(batch: &PredictionBatch<'_>, name: &str, group_values: &[String]) -> Result<MetricsReport> {
    let mut report = MetricsReport::compute(batch);
    report.groupings.push(group_reports(batch, name, group_values)?);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Text emission.

/// Column names of the per-model metric table.
pub const MODEL_TABLE_COLUMNS: [&str; 7] = [
    "Model",
    "Average Precision",
    "Ranking Loss",
    "Coverage Error",
    "Jaccard Similarity",
    "F1",
    "Accuracy (Primary Diagnosis)",
];

/// Column names of grouped accuracy tables.
pub const GROUP_TABLE_COLUMNS: [&str; 6] = ["Group", "Samples", "Accuracy", "Average Precision", "F1", "Jaccard Similarity"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// One tab-separated row per model, header first.
pub fn model_table_tsv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = MODEL_TABLE_COLUMNS.join("\t");
    out.push('\n');
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
            fmt_opt(r.lrap),
            fmt_opt(r.ranking_loss),
            fmt_opt(r.coverage_error),
            r.jaccard,
            r.sample_f1,
            fmt_opt(r.primary_accuracy)
        );
    }
    out
}

/// One tab-separated row per group, at most `top_k` rows.
pub fn group_table_tsv(grouping: &Grouping, top_k: Option<usize>) -> String {
    let mut out = GROUP_TABLE_COLUMNS.join("\t");
    out.push('\n');
    for g in grouping.groups.iter().take(top_k.unwrap_or(usize::MAX)) {
        let r = &g.report;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
            g.key,
            r.n_samples,
            fmt_opt(r.primary_accuracy),
            fmt_opt(r.lrap),
            r.sample_f1,
            r.jaccard
        );
    }
    out
}

/// `metric<TAB>value` rows for every field of a report.
pub fn metric_rows_tsv(r: &MetricsReport) -> String {
    let rows: [(&str, String); 13] = [
        ("n_samples", r.n_samples.to_string()),
        ("n_degenerate", r.n_degenerate.to_string()),
        ("average_precision", fmt_opt(r.lrap)),
        ("coverage_error", fmt_opt(r.coverage_error)),
        ("ranking_loss", fmt_opt(r.ranking_loss)),
        ("sample_f1", format!("{:.4}", r.sample_f1)),
        ("jaccard", format!("{:.4}", r.jaccard)),
        ("subset_accuracy", format!("{:.4}", r.subset_accuracy)),
        ("micro_f1", format!("{:.4}", r.micro_f1)),
        ("macro_f1", format!("{:.4}", r.macro_f1)),
        ("primary_accuracy", fmt_opt(r.primary_accuracy)),
        ("over_coding", r.over_coding.to_string()),
        ("under_coding", r.under_coding.to_string()),
    ];
    let mut out = String::from("metric\tvalue\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

/// Human-readable document: the model row, then each grouping as a table.
pub fn render_text(model: &str, r: &MetricsReport, top_k: Option<usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Multi-label classification results ({} samples)\n", r.n_samples);
    out.push_str(&align_tsv(&model_table_tsv(&[(model, r)])));
    let _ = writeln!(
        out,
        "\nover-coding (predicted, not true): {}\nunder-coding (true, not predicted): {}",
        r.over_coding, r.under_coding
    );
    if r.n_degenerate > 0 {
        let _ = writeln!(out, "samples skipped by ranking metrics: {}", r.n_degenerate);
    }
    for g in &r.groupings {
        let _ = writeln!(out, "\nAccuracy by {}\n", g.name);
        out.push_str(&align_tsv(&group_table_tsv(g, top_k)));
    }
    out
}

fn align_tsv(tsv: &str) -> String {
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
