use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::records::EpisodeRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    /// Label categories present in fewer episodes are dropped.
    pub min_instances: usize,
    /// Medication tokens present in fewer episodes are dropped. 1 keeps all.
    pub min_token_count: usize,
    /// Statuses (case-insensitive) that mark a prescription as cancelled.
    pub cancelled_statuses: Vec<String>,
    /// Diagnosis codes are cut to this many characters.
    pub code_length: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            min_instances: 3,
            min_token_count: 1,
            cancelled_statuses: vec!["cancelled".into()],
            code_length: 3,
        }
    }
}

impl CleanConfig {
    pub fn is_cancelled(&self, status: &str) -> bool {
        let status = status.trim();
        self.cancelled_statuses.iter().any(|c| c.trim().eq_ignore_ascii_case(status))
    }
}

/// Counts of everything `clean` removed or changed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_episodes: usize,
    pub output_episodes: usize,
    pub cancelled_medications: usize,
    pub truncated_codes: usize,
    pub merged_duplicate_codes: usize,
    /// Label categories removed as rare, sorted.
    pub rare_labels: Vec<String>,
    /// Medication tokens removed as rare, sorted.
    pub rare_tokens: Vec<String>,
    pub episodes_without_labels: usize,
    pub episodes_without_medications: usize,
    /// Passes of the rare-label fixpoint.
    pub iterations: usize,
}

impl CleanReport {
    pub fn to_tsv(&self) -> String {
        let rows = [
            ("input_episodes", self.input_episodes),
            ("output_episodes", self.output_episodes),
            ("cancelled_medications", self.cancelled_medications),
            ("truncated_codes", self.truncated_codes),
            ("merged_duplicate_codes", self.merged_duplicate_codes),
            ("rare_labels", self.rare_labels.len()),
            ("rare_tokens", self.rare_tokens.len()),
            ("episodes_without_labels", self.episodes_without_labels),
            ("episodes_without_medications", self.episodes_without_medications),
            ("iterations", self.iterations),
        ];
        let mut out = String::from("step\tcount\n");
        for (k, v) in rows {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }
}

fn drop_empty(episodes: &mut Vec<EpisodeRecord>, report: &mut CleanReport) {
    episodes.retain(|r| {
        if r.icd10_codes.is_empty() {
            report.episodes_without_labels += 1;
            false
        } else if r.medications.is_empty() {
            report.episodes_without_medications += 1;
            false
        } else {
            true
        }
    });
}

fn truncate_code(code: &str, len: usize) -> String {
    code.trim().chars().take(len).collect()
}

/// Drops cancelled prescriptions, truncates diagnosis codes to their
/// category, then removes rare labels (and rare tokens) together with the
/// episodes they leave empty until nothing changes.
pub fn clean(records: Vec<EpisodeRecord>, cfg: &CleanConfig) -> (Vec<EpisodeRecord>, CleanReport) {
    let mut report = CleanReport {
        input_episodes: records.len(),
        ..CleanReport::default()
    };
    let mut episodes: Vec<EpisodeRecord> = records
        .into_iter()
        .map(|mut r| {
            let before = r.medications.len();
            r.medications.retain(|m| !cfg.is_cancelled(&m.status));
            report.cancelled_medications += before - r.medications.len();

            let mut seen = HashSet::new();
            let mut codes = Vec::with_capacity(r.icd10_codes.len());
            for c in &r.icd10_codes {
                let t = truncate_code(c, cfg.code_length);
                if t != *c {
                    report.truncated_codes += 1;
                }
                if seen.insert(t.clone()) {
                    codes.push(t);
                } else {
                    report.merged_duplicate_codes += 1;
                }
            }
            r.icd10_codes = codes;
            r
        })
        .collect();

    let mut rare_labels = BTreeSet::new();
    let mut rare_tokens = BTreeSet::new();
    loop {
        report.iterations += 1;
        let before = episodes.len();
        drop_empty(&mut episodes, &mut report);

        let mut label_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &episodes {
            for c in &r.icd10_codes {
                *label_counts.entry(c.as_str()).or_default() += 1;
            }
        }
        let rare: HashSet<String> = label_counts
            .iter()
            .filter(|(_, &n)| n < cfg.min_instances)
            .map(|(c, _)| c.to_string())
            .collect();

        let mut token_counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &episodes {
            let tokens: BTreeSet<String> = r.medications.iter().map(|m| m.token()).collect();
            for t in tokens {
                *token_counts.entry(t).or_default() += 1;
            }
        }
        let rare_tok: HashSet<String> = token_counts
            .into_iter()
            .filter(|(_, n)| *n < cfg.min_token_count)
            .map(|(t, _)| t)
            .collect();

        let changed = !rare.is_empty() || !rare_tok.is_empty();
        if changed {
            for r in &mut episodes {
                r.icd10_codes.retain(|c| !rare.contains(c));
                r.medications.retain(|m| !rare_tok.contains(&m.token()));
            }
            rare_labels.extend(rare);
            rare_tokens.extend(rare_tok);
            drop_empty(&mut episodes, &mut report);
        }
        if !changed && episodes.len() == before {
            break;
        }
    }
    report.output_episodes = episodes.len();
    report.rare_labels = rare_labels.into_iter().collect();
    report.rare_tokens = rare_tokens.into_iter().collect();
    (episodes, report)
}
