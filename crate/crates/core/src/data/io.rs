//! Prepared-dataset directory layout:
//!
//! ```text
//! FORMAT              "collabres-dataset 1"
//! features.vocab      one token per line, index = line number
//! labels.vocab
//! <split>/X.txt       one row per line, active indices space-separated
//! <split>/Y.txt
//! <split>/principal.txt    one label index per line (optional)
//! <split>/demographics.csv gender,age_years (empty when unknown)
//! <split>/episodes.txt     one episode id per line
//! ```
//!
//! `<split>` is each of `train`, `dev` and `test`.

use std::fs;
use std::path::Path;

use super::dataset::{Dataset, TokenKind, Vocabulary};
use super::records::Demographics;
use super::split::{Splits, SPLIT_NAMES};
use crate::error::{Error, Result};
use crate::tensor::SparseBinaryMatrix;

pub const FORMAT_LINE: &str = "collabres-dataset 1";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as u64,
        message: message.into(),
    }
}

pub fn sparse_to_text(m: &SparseBinaryMatrix) -> String {
    let mut out = String::with_capacity(m.nnz() * 4 + m.rows());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(u32::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_sparse(path: &Path, cols: usize) -> Result<SparseBinaryMatrix> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<u32>, _>>()
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        rows.push(row);
    }
    SparseBinaryMatrix::new(cols, rows).map_err(|e| parse_err(path, 0, e.to_string()))
}

fn demographics_to_csv(rows: &[Option<Demographics>]) -> String {
    let mut out = String::from("gender,age_years\n");
    for d in rows {
        match d {
            Some(d) => out.push_str(&format!("{},{}\n", csv_field(&d.gender), d.age_years)),
            None => out.push_str(",\n"),
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn read_demographics(path: &Path) -> Result<Vec<Option<Demographics>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        let gender = rec.get(0).unwrap_or("");
        let age = rec.get(1).unwrap_or("");
        if gender.is_empty() && age.is_empty() {
            out.push(None);
        } else {
            let age_years = age
                .parse()
                .map_err(|_| parse_err(path, i + 2, format!("bad age '{age}'")))?;
            out.push(Some(Demographics {
                gender: gender.to_string(),
                age_years,
            }));
        }
    }
    Ok(out)
}

/// Writes one split's files into `dir` (vocabularies excluded).
pub fn save_split(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("X.txt"), &sparse_to_text(&ds.x))?;
    write(&dir.join("Y.txt"), &sparse_to_text(&ds.y))?;
    let principal = dir.join("principal.txt");
    match &ds.principal {
        Some(p) => write(&principal, &p.iter().map(|j| format!("{j}\n")).collect::<String>())?,
        None if principal.exists() => fs::remove_file(&principal).map_err(|e| Error::io(&principal, e))?,
        None => {}
    }
    write(&dir.join("demographics.csv"), &demographics_to_csv(&ds.demographics))?;
    let mut ids = String::new();
    for id in &ds.episode_ids {
        ids.push_str(id);
        ids.push('\n');
    }
    write(&dir.join("episodes.txt"), &ids)
}

pub fn save_splits(dir: &Path, splits: &Splits) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("FORMAT"), &format!("{FORMAT_LINE}\n"))?;
    write(&dir.join("features.vocab"), &splits.train.features.to_text())?;
    write(&dir.join("labels.vocab"), &splits.train.labels.to_text())?;
    for name in SPLIT_NAMES {
        save_split(&dir.join(name), splits.get(name).expect("known split"))?;
    }
    Ok(())
}

/// Reads the two vocabularies after checking the format marker.
pub fn load_vocabularies(dir: &Path) -> Result<(Vocabulary, Vocabulary)> {
    let format_path = dir.join("FORMAT");
    let format = read(&format_path)?;
    if format.trim() != FORMAT_LINE {
        return Err(parse_err(&format_path, 1, format!("expected '{FORMAT_LINE}'")));
    }
    let fpath = dir.join("features.vocab");
    let lpath = dir.join("labels.vocab");
    let features = Vocabulary::from_text(TokenKind::MedicationDose, &read(&fpath)?)
        .map_err(|e| parse_err(&fpath, 0, e.to_string()))?;
    let labels = Vocabulary::from_text(TokenKind::Icd10Category, &read(&lpath)?)
        .map_err(|e| parse_err(&lpath, 0, e.to_string()))?;
    Ok((features, labels))
}

pub fn load_split(dir: &Path, name: &str) -> Result<Dataset> {
    if !SPLIT_NAMES.contains(&name) {
        return Err(Error::invalid(format!("unknown split '{name}' (expected train, dev or test)")));
    }
    let (features, labels) = load_vocabularies(dir)?;
    let sdir = dir.join(name);
    let x = read_sparse(&sdir.join("X.txt"), features.len())?;
    let y = read_sparse(&sdir.join("Y.txt"), labels.len())?;
    let ppath = sdir.join("principal.txt");
    let principal = if ppath.exists() {
        let text = read(&ppath)?;
        let p = text
            .lines()
            .enumerate()
            .map(|(i, l)| l.trim().parse::<u32>().map_err(|e| parse_err(&ppath, i + 1, e.to_string())))
            .collect::<Result<Vec<u32>>>()?;
        Some(p)
    } else {
        None
    };
    let demographics = read_demographics(&sdir.join("demographics.csv"))?;
    let episode_ids = read(&sdir.join("episodes.txt"))?.lines().map(str::to_string).collect();
    let ds = Dataset {
        x,
        y,
        principal,
        demographics,
        episode_ids,
        features,
        labels,
    };
    ds.validate().map_err(|e| Error::Data(format!("{}: {e}", sdir.display())))?;
    Ok(ds)
}

pub fn load_splits(dir: &Path) -> Result<Splits> {
    Ok(Splits {
        train: load_split(dir, "train")?,
        dev: load_split(dir, "dev")?,
        test: load_split(dir, "test")?,
    })
}
