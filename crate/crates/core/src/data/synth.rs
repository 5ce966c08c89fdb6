//! Synthetic noisy-OR datasets with a known generating process.
//!
//! Each sample receives every medication token independently with
//! probability `med_probability`. Label `j` is on when the sample holds any
//! token of `supports[j]`; each label cell is then flipped with probability
//! `noise[j]`. Samples left with no tokens or no labels are redrawn.

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, TokenKind, Vocabulary};
use super::records::Demographics;
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SeededRng, SparseBinaryMatrix};

/// Knobs for drawing a [`SyntheticSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_med_tokens: usize,
    pub n_labels: usize,
    /// Expected tokens per sample.
    pub meds_per_sample: f64,
    /// Tokens per label support set.
    pub support_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 10_000,
            n_med_tokens: 300,
            n_labels: 50,
            meds_per_sample: 12.0,
            support_size: 16,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Draws support sets uniformly without replacement.
    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        if self.support_size == 0 || self.support_size > self.n_med_tokens {
            return Err(Error::invalid(format!(
                "support_size {} must be in 1..={}",
                self.support_size, self.n_med_tokens
            )));
        }
        if !(self.meds_per_sample > 0.0 && self.meds_per_sample <= self.n_med_tokens as f64) {
            return Err(Error::invalid(format!(
                "meds_per_sample {} must be in (0, {}]",
                self.meds_per_sample, self.n_med_tokens
            )));
        }
        let mut rng = SeededRng::derive(self.seed, 1);
        let mut pool: Vec<u32> = (0..self.n_med_tokens as u32).collect();
        let supports = (0..self.n_labels)
            .map(|_| {
                rng.shuffle(&mut pool);
                let mut s = pool[..self.support_size].to_vec();
                s.sort_unstable();
                s
            })
            .collect();
        let spec = SyntheticSpec {
            n_samples: self.n_samples,
            n_med_tokens: self.n_med_tokens,
            n_labels: self.n_labels,
            med_probability: self.meds_per_sample / self.n_med_tokens as f64,
            supports,
            noise: vec![self.noise; self.n_labels],
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Complete generating tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_med_tokens: usize,
    pub n_labels: usize,
    pub med_probability: f64,
    /// Sorted token indices per label.
    pub supports: Vec<Vec<u32>>,
    /// Flip probability per label.
    pub noise: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_med_tokens == 0 || self.n_labels == 0 {
            return Err(Error::invalid("synthetic sizes must be positive"));
        }
        if self.supports.len() != self.n_labels || self.noise.len() != self.n_labels {
            return Err(Error::invalid("need one support set and one noise rate per label"));
        }
        if let Some(j) = self.supports.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("label {j} has an empty support set")));
        }
        if self.supports.iter().flatten().any(|&t| t as usize >= self.n_med_tokens) {
            return Err(Error::invalid("support token out of range"));
        }
        if let Some(p) = self.noise.iter().find(|p| !(0.0..0.5).contains(*p)) {
            return Err(Error::invalid(format!("noise {p} must lie in [0, 0.5)")));
        }
        if !(self.med_probability > 0.0 && self.med_probability <= 1.0) {
            return Err(Error::invalid("med_probability must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Noise-free labels of a token set.
    pub fn clean_labels(&self, tokens: &[u32]) -> Vec<u32> {
        (0..self.n_labels as u32)
            .filter(|&j| {
                let s = &self.supports[j as usize];
                tokens.iter().any(|t| s.binary_search(t).is_ok())
            })
            .collect()
    }

    /// Posterior `P(label on | tokens)`. Thresholding at 0.5 gives the clean
    /// labels, which is the Bayes-optimal decision.
    pub fn bayes_scores(&self, x: &SparseBinaryMatrix) -> DenseMatrix<f32> {
        let mut out = DenseMatrix::zeros(x.rows(), self.n_labels);
        for i in 0..x.rows() {
            let clean = self.clean_labels(x.row(i));
            for j in 0..self.n_labels {
                let on = clean.binary_search(&(j as u32)).is_ok();
                let p = self.noise[j];
                out.set(i, j, if on { 1.0 - p } else { p } as f32);
            }
        }
        out
    }

    pub fn feature_vocab(&self) -> Vocabulary {
        let w = digits(self.n_med_tokens);
        Vocabulary::from_tokens(
            TokenKind::MedicationDose,
            (0..self.n_med_tokens).map(|t| format!("M{t:0w$}@1")),
        )
    }

    /// ICD-like names that sort in index order, spread over A..Z.
    pub fn label_vocab(&self) -> Vocabulary {
        let w = digits(self.n_labels).max(2);
        Vocabulary::from_tokens(
            TokenKind::Icd10Category,
            (0..self.n_labels).map(|j| {
                let letter = (b'A' + (j * 26 / self.n_labels) as u8) as char;
                format!("{letter}{j:0w$}")
            }),
        )
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// What the generator did, for checking models against the optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub spec: SyntheticSpec,
    /// Noise-free labels per sample, in dataset row order.
    pub clean_labels: Vec<Vec<u32>>,
    /// Label cells that were flipped.
    pub flipped_cells: usize,
    /// Samples redrawn because they had no tokens or no labels.
    pub redraws: usize,
}

impl SyntheticOracle {
    pub fn flip_rate(&self) -> f64 {
        self.flipped_cells as f64 / (self.spec.n_samples * self.spec.n_labels) as f64
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticOracle)> {
    spec.validate()?;
    let mut rng = SeededRng::derive(spec.seed, 2);
    let mut xs = Vec::with_capacity(spec.n_samples);
    let mut ys = Vec::with_capacity(spec.n_samples);
    let mut clean_rows = Vec::with_capacity(spec.n_samples);
    let mut demographics = Vec::with_capacity(spec.n_samples);
    let (mut flipped, mut redraws) = (0usize, 0usize);
    while xs.len() < spec.n_samples {
        let x: Vec<u32> = (0..spec.n_med_tokens as u32)
            .filter(|_| rng.bernoulli(spec.med_probability))
            .collect();
        let clean = spec.clean_labels(&x);
        let mut y = Vec::new();
        let mut flips = 0;
        for j in 0..spec.n_labels as u32 {
            let on = clean.binary_search(&j).is_ok();
            let flip = rng.bernoulli(spec.noise[j as usize]);
            flips += flip as usize;
            if on != flip {
                y.push(j);
            }
        }
        let gender = if rng.bernoulli(0.5) { "F" } else { "M" };
        let age_years = rng.below(100) as u32;
        if x.is_empty() || y.is_empty() {
            redraws += 1;
            continue;
        }
        flipped += flips;
        xs.push(x);
        ys.push(y);
        clean_rows.push(clean);
        demographics.push(Some(Demographics {
            gender: gender.to_string(),
            age_years,
        }));
    }
    let principal = ys.iter().map(|y| y[0]).collect();
    let w = digits(spec.n_samples);
    let ds = Dataset {
        x: SparseBinaryMatrix::new(spec.n_med_tokens, xs)?,
        y: SparseBinaryMatrix::new(spec.n_labels, ys)?,
        principal: Some(principal),
        demographics,
        episode_ids: (0..spec.n_samples).map(|i| format!("S{i:0w$}")).collect(),
        features: spec.feature_vocab(),
        labels: spec.label_vocab(),
    };
    let oracle = SyntheticOracle {
        spec: spec.clone(),
        clean_labels: clean_rows,
        flipped_cells: flipped,
        redraws,
    };
    Ok((ds, oracle))
}
