use std::fmt::Write as _;

use serde::Serialize;

use super::dataset::{Dataset, Vocabulary};
use super::records::Demographics;
use crate::tensor::SparseBinaryMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelFrequencyReport {
    /// `(label, count)` by descending count, then label.
    pub rows: Vec<(String, usize)>,
    pub n_labels: usize,
    pub total_incidences: usize,
    /// `(bound, labels with count < bound)` for multiples of min_instances.
    pub long_tail: Vec<(usize, usize)>,
}

impl LabelFrequencyReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("Rank\tLabel\tCount\n");
        for (i, (label, n)) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "{}\t{label}\t{n}", i + 1);
        }
        out
    }

    pub fn long_tail_tsv(&self) -> String {
        let mut out = String::from("Count below\tLabels\n");
        for (bound, n) in &self.long_tail {
            let _ = writeln!(out, "{bound}\t{n}");
        }
        let _ = writeln!(out, "total labels\t{}\ntotal incidences\t{}", self.n_labels, self.total_incidences);
        out
    }
}

pub fn label_frequency_report(
    y: &SparseBinaryMatrix,
    labels: &Vocabulary,
    top_k: usize,
    min_instances: usize,
) -> LabelFrequencyReport {
    let counts = y.column_counts();
    let mut rows: Vec<(String, usize)> = counts
        .iter()
        .enumerate()
        .map(|(j, &n)| (labels.token(j as u32).unwrap_or("?").to_string(), n))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total_incidences = counts.iter().sum();
    let long_tail = [1, 2, 5, 10]
        .iter()
        .map(|m| {
            let bound = m * min_instances.max(1);
            (bound, counts.iter().filter(|&&n| n < bound).count())
        })
        .collect();
    rows.truncate(top_k);
    LabelFrequencyReport {
        rows,
        n_labels: counts.len(),
        total_incidences,
        long_tail,
    }
}

/// ICD-10 chapters by the first three characters of a code.
const CHAPTERS: [(&str, &str, &str); 22] = [
    ("A00", "B99", "I"),
    ("C00", "D48", "II"),
    ("D50", "D89", "III"),
    ("E00", "E90", "IV"),
    ("F00", "F99", "V"),
    ("G00", "G99", "VI"),
    ("H00", "H59", "VII"),
    ("H60", "H95", "VIII"),
    ("I00", "I99", "IX"),
    ("J00", "J99", "X"),
    ("K00", "K93", "XI"),
    ("L00", "L99", "XII"),
    ("M00", "M99", "XIII"),
    ("N00", "N99", "XIV"),
    ("O00", "O99", "XV"),
    ("P00", "P96", "XVI"),
    ("Q00", "Q99", "XVII"),
    ("R00", "R99", "XVIII"),
    ("S00", "T98", "XIX"),
    ("V01", "Y98", "XX"),
    ("Z00", "Z99", "XXI"),
    ("U00", "U99", "XXII"),
];

/// Chapter label such as `"IX (I00-I99)"`, or `None` outside every range.
pub fn icd10_chapter(code: &str) -> Option<String> {
    let key: String = code.trim().chars().take(3).collect::<String>().to_ascii_uppercase();
    if key.len() != 3 {
        return None;
    }
    CHAPTERS
        .iter()
        .find(|(lo, hi, _)| key.as_str() >= *lo && key.as_str() <= *hi)
        .map(|(lo, hi, ch)| format!("{ch} ({lo}-{hi})"))
}

pub const UNKNOWN_GROUP: &str = "unknown";

/// Chapter of each row's principal label.
pub fn chapter_groups(ds: &Dataset) -> Option<Vec<String>> {
    ds.principal_tokens().map(|tokens| {
        tokens
            .iter()
            .map(|t| icd10_chapter(t).unwrap_or_else(|| UNKNOWN_GROUP.to_string()))
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemographicKey {
    Gender,
    AgeDecade,
}

impl std::str::FromStr for DemographicKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(DemographicKey::Gender),
            "age" | "age_decade" => Ok(DemographicKey::AgeDecade),
            other => Err(format!("unknown group column '{other}' (expected gender, age)")),
        }
    }
}

fn demographic_value(d: &Demographics, key: DemographicKey) -> String {
    match key {
        DemographicKey::Gender => d.gender.clone(),
        DemographicKey::AgeDecade => {
            let lo = d.age_years / 10 * 10;
            format!("{lo}-{}", lo + 9)
        }
    }
}

/// Grouping name and per-row values for the given columns, joined with
/// `/`. `None` when the dataset carries no demographics.
pub fn demographic_groups(ds: &Dataset, keys: &[DemographicKey]) -> Option<(String, Vec<String>)> {
    if !ds.has_demographics() || keys.is_empty() {
        return None;
    }
    let name = keys
        .iter()
        .map(|k| match k {
            DemographicKey::Gender => "gender",
            DemographicKey::AgeDecade => "age",
        })
        .collect::<Vec<_>>()
        .join(" x ");
    let values = ds
        .demographics
        .iter()
        .map(|d| match d {
            Some(d) => keys.iter().map(|&k| demographic_value(d, k)).collect::<Vec<_>>().join("/"),
            None => UNKNOWN_GROUP.to_string(),
        })
        .collect();
    Some((name, values))
}
