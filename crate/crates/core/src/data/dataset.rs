use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::records::{Demographics, EpisodeRecord, Medication};
use crate::error::{Error, Result};
use crate::tensor::SparseBinaryMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    MedicationDose,
    Icd10Category,
}

/// Bijection between tokens and dense indices, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    kind: TokenKind,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    kind: TokenKind,
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_tokens(r.kind, r.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            kind: v.kind,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Sorts and de-duplicates `tokens`.
    pub fn from_tokens<I, S>(kind: TokenKind, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        let tokens: Vec<String> = set.into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { kind, tokens, index }
    }

    pub fn kind(&self) -> TokenKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(kind: TokenKind, text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let v = Vocabulary::from_tokens(kind, tokens.iter().cloned());
        if v.tokens != tokens {
            return Err(Error::Data("vocabulary file is not sorted and unique".into()));
        }
        Ok(v)
    }
}

/// Binarized episodes: `x` over medication tokens, `y` over label categories.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: SparseBinaryMatrix,
    pub y: SparseBinaryMatrix,
    /// Principal label per row, when known.
    pub principal: Option<Vec<u32>>,
    pub demographics: Vec<Option<Demographics>>,
    pub episode_ids: Vec<String>,
    pub features: Vocabulary,
    pub labels: Vocabulary,
}

/// Tokens and labels skipped by [`binarize_with`] because a fixed
/// vocabulary did not contain them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnknownCounts {
    pub tokens: usize,
    pub labels: usize,
    /// Rows whose first-listed label was unknown or absent.
    pub rows_without_principal: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    /// Checks the row-count, vocabulary and principal invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.y.rows() != n || self.demographics.len() != n || self.episode_ids.len() != n {
            return Err(Error::Data(format!(
                "row counts disagree: X {n}, Y {}, demographics {}, ids {}",
                self.y.rows(),
                self.demographics.len(),
                self.episode_ids.len()
            )));
        }
        if self.x.cols() != self.features.len() || self.y.cols() != self.labels.len() {
            return Err(Error::Data("matrix widths do not match vocabularies".into()));
        }
        if let Some(p) = &self.principal {
            if p.len() != n {
                return Err(Error::Data(format!("{} principal labels for {n} rows", p.len())));
            }
            if let Some(i) = (0..n).find(|&i| !self.y.contains(i, p[i])) {
                return Err(Error::Data(format!("row {i}: principal label not active")));
            }
        }
        Ok(())
    }

    /// Rows `rows` in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            principal: self.principal.as_ref().map(|p| rows.iter().map(|&r| p[r]).collect()),
            demographics: rows.iter().map(|&r| self.demographics[r].clone()).collect(),
            episode_ids: rows.iter().map(|&r| self.episode_ids[r].clone()).collect(),
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Rebuilds records: principal code first, then the other labels in
    /// index order; medications carry an empty status.
    pub fn to_records(&self) -> Vec<EpisodeRecord> {
        (0..self.len())
            .map(|i| {
                let mut rec = EpisodeRecord::new(self.episode_ids[i].clone());
                rec.medications = self
                    .x
                    .row(i)
                    .iter()
                    .map(|&t| {
                        let tok = self.features.token(t).unwrap_or_default();
                        let (code, dose) = tok.split_once('@').unwrap_or((tok, ""));
                        Medication::new(code, dose, "")
                    })
                    .collect();
                let first = self.principal.as_ref().map(|p| p[i]);
                rec.icd10_codes = first
                    .into_iter()
                    .chain(self.y.row(i).iter().copied().filter(|&j| Some(j) != first))
                    .map(|j| self.labels.token(j).unwrap_or_default().to_string())
                    .collect();
                rec.demographics = self.demographics[i].clone();
                rec
            })
            .collect()
    }

    /// Principal label token per row.
    pub fn principal_tokens(&self) -> Option<Vec<String>> {
        self.principal
            .as_ref()
            .map(|p| p.iter().map(|&j| self.labels.token(j).unwrap_or_default().to_string()).collect())
    }

    pub fn has_demographics(&self) -> bool {
        self.demographics.iter().any(Option::is_some)
    }
}

/// Builds vocabularies from the records and binarizes them. Every record
/// needs at least one diagnosis code; the first becomes the principal.
pub fn build_vocab_and_binarize(records: &[EpisodeRecord]) -> Result<Dataset> {
    if let Some(r) = records.iter().find(|r| r.icd10_codes.is_empty()) {
        return Err(Error::Data(format!("episode '{}' has no diagnosis codes", r.episode_id)));
    }
    let features = Vocabulary::from_tokens(
        TokenKind::MedicationDose,
        records.iter().flat_map(|r| r.medications.iter().map(Medication::token)),
    );
    let labels = Vocabulary::from_tokens(
        TokenKind::Icd10Category,
        records.iter().flat_map(|r| r.icd10_codes.iter().cloned()),
    );
    let (ds, _) = binarize_with(records, &features, &labels)?;
    Ok(ds)
}

/// Binarizes against fixed vocabularies, skipping unknown tokens and labels.
/// `principal` is set only when every row's first-listed code is known.
pub fn binarize_with(
    records: &[EpisodeRecord],
    features: &Vocabulary,
    labels: &Vocabulary,
) -> Result<(Dataset, UnknownCounts)> {
    let mut unknown = UnknownCounts::default();
    let mut xs = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    let mut principal = Vec::with_capacity(records.len());
    for r in records {
        let mut x = Vec::with_capacity(r.medications.len());
        for m in &r.medications {
            match features.get(&m.token()) {
                Some(i) => x.push(i),
                None => unknown.tokens += 1,
            }
        }
        let mut y = Vec::with_capacity(r.icd10_codes.len());
        for c in &r.icd10_codes {
            match labels.get(c) {
                Some(j) => y.push(j),
                None => unknown.labels += 1,
            }
        }
        match r.icd10_codes.first().and_then(|c| labels.get(c)) {
            Some(p) => principal.push(p),
            None => unknown.rows_without_principal += 1,
        }
        x.sort_unstable();
        x.dedup();
        y.sort_unstable();
        y.dedup();
        xs.push(x);
        ys.push(y);
    }
    let ds = Dataset {
        x: SparseBinaryMatrix::new(features.len(), xs)?,
        y: SparseBinaryMatrix::new(labels.len(), ys)?,
        principal: (unknown.rows_without_principal == 0).then_some(principal),
        demographics: records.iter().map(|r| r.demographics.clone()).collect(),
        episode_ids: records.iter().map(|r| r.episode_id.clone()).collect(),
        features: features.clone(),
        labels: labels.clone(),
    };
    Ok((ds, unknown))
}
