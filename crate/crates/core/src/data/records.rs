//! Episode records and the long-format CSV reader/writer.
//!
//! Every row starts with `record_type,episode_id`; the remaining columns are
//! positional and depend on the type:
//!
//! | type | fields                     |
//! |------|----------------------------|
//! | MED  | med_code, dose, status     |
//! | DX   | seq (1 = principal), icd10 |
//! | DEMO | gender, age_years          |
//!
//! A header row is required. Rows may be in any order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Medication {
    pub code: String,
    pub dose: String,
    pub status: String,
}

impl Medication {
    pub fn new(code: impl Into<String>, dose: impl Into<String>, status: impl Into<String>) -> Self {
        Medication {
            code: code.into(),
            dose: dose.into(),
            status: status.into(),
        }
    }

    /// Input token: `CODE@DOSE`.
    pub fn token(&self) -> String {
        format!("{}@{}", self.code, self.dose)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: String,
    pub age_years: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub medications: Vec<Medication>,
    /// Diagnosis codes in `seq` order; the first is the principal diagnosis.
    pub icd10_codes: Vec<String>,
    pub demographics: Option<Demographics>,
}

impl EpisodeRecord {
    pub fn new(episode_id: impl Into<String>) -> Self {
        EpisodeRecord {
            episode_id: episode_id.into(),
            medications: Vec::new(),
            icd10_codes: Vec::new(),
            demographics: None,
        }
    }
}

pub const HEADER: [&str; 5] = ["record_type", "episode_id", "field1", "field2", "field3"];

pub fn ingest(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, &path.display().to_string())
}

/// Parses long-format rows from any reader. `source` labels error messages.
pub fn ingest_reader<R: Read>(reader: R, source: &str) -> Result<Vec<EpisodeRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("record_type")
        || headers.get(1).map(str::to_ascii_lowercase).as_deref() != Some("episode_id")
    {
        return Err(parse_err(1, "header must start with record_type,episode_id".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut episodes: HashMap<String, (EpisodeRecord, Vec<(u32, String)>)> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        let field = |i: usize, name: &str| -> Result<&str> {
            match row.get(i) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(parse_err(line, format!("missing {name}"))),
            }
        };
        let kind = field(0, "record_type")?.to_ascii_uppercase();
        let id = field(1, "episode_id")?.to_string();
        let entry = episodes.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (EpisodeRecord::new(id.clone()), Vec::new())
        });
        match kind.as_str() {
            "MED" => {
                let code = field(2, "med_code")?;
                if code.contains('@') {
                    return Err(parse_err(line, format!("medication code '{code}' contains '@'")));
                }
                let dose = row.get(3).unwrap_or("");
                let status = row.get(4).unwrap_or("");
                entry.0.medications.push(Medication::new(code, dose, status));
            }
            "DX" => {
                let seq_text = field(2, "seq")?;
                let seq: u32 = seq_text
                    .parse()
                    .ok()
                    .filter(|&s| s >= 1)
                    .ok_or_else(|| parse_err(line, format!("seq '{seq_text}' is not a positive integer")))?;
                let code = field(3, "icd10_code")?;
                if entry.1.iter().any(|(s, _)| *s == seq) {
                    return Err(parse_err(line, format!("duplicate diagnosis seq {seq} for episode '{id}'")));
                }
                entry.1.push((seq, code.to_string()));
            }
            "DEMO" => {
                let gender = field(2, "gender")?.to_string();
                let age_text = field(3, "age_years")?;
                let age_years = age_text
                    .parse()
                    .map_err(|_| parse_err(line, format!("age '{age_text}' is not a non-negative integer")))?;
                if entry.0.demographics.is_some() {
                    return Err(parse_err(line, format!("duplicate DEMO row for episode '{id}'")));
                }
                entry.0.demographics = Some(Demographics { gender, age_years });
            }
            other => return Err(parse_err(line, format!("unknown record_type '{other}'"))),
        }
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let (mut rec, mut dx) = episodes.remove(&id).expect("episode registered on first sight");
            dx.sort_by_key(|(s, _)| *s);
            rec.icd10_codes = dx.into_iter().map(|(_, c)| c).collect();
            rec
        })
        .collect())
}

/// Writes records in the same long format `ingest` reads.
pub fn write_records<W: Write>(writer: W, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Data(format!("writing records: {e}"));
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        if let Some(d) = &r.demographics {
            w.write_record(["DEMO", &r.episode_id, &d.gender, &d.age_years.to_string(), ""])
                .map_err(csv_err)?;
        }
        for m in &r.medications {
            w.write_record(["MED", &r.episode_id, &m.code, &m.dose, &m.status])
                .map_err(csv_err)?;
        }
        for (i, c) in r.icd10_codes.iter().enumerate() {
            w.write_record(["DX", &r.episode_id, &(i + 1).to_string(), c, ""])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("writing records: {e}")))?;
    Ok(())
}
