//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "CLRS" | version u8 (1)
//! u32 header length | header: pretty-printed JSON
//!     { format_version, spec, features, labels, train_config, threshold,
//!       parameters: [{ name, shape }] }
//! per parameter, in header order:
//!     u32 name length | name | u32 ndim (2) | u32 dims... | f32 payload, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::TrainConfig;
use crate::data::Vocabulary;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ModelSpec, Parameters};
use crate::tensor::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"CLRS";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Parameters<f32>,
    pub features: Vocabulary,
    pub labels: Vocabulary,
    pub train_config: TrainConfig,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u8,
    spec: ModelSpec,
    features: Vocabulary,
    labels: Vocabulary,
    train_config: TrainConfig,
    threshold: f64,
    parameters: Vec<ParamEntry>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.params.check_against(&self.spec)?;
        if self.features.len() != self.spec.input_dim || self.labels.len() != self.spec.output_dim {
            return Err(Error::InvalidModel("vocabulary sizes do not match the model".into()));
        }
        crate::metrics::check_threshold(self.threshold)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let shapes = self.spec.param_shapes();
        let header = Header {
            format_version: VERSION,
            spec: self.spec.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            train_config: self.train_config.clone(),
            threshold: self.threshold,
            parameters: shapes
                .iter()
                .map(|(n, (r, c))| ParamEntry {
                    name: n.clone(),
                    shape: vec![*r as u32, *c as u32],
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 4 * self.params.scalar_count() + 64);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_u32(&mut out, json.len())?;
        out.extend_from_slice(json.as_bytes());
        for (name, (r, c)) in &shapes {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2)?;
            put_u32(&mut out, *r)?;
            put_u32(&mut out, *c)?;
            for v in self.params.get(name)?.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        rd.pos = MAGIC.len();
        let version = rd.take(1, "version")?[0];
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let len = rd.u32("header length")? as usize;
        let text = std::str::from_utf8(rd.take(len, "header")?)
            .map_err(|e| CheckpointError::Malformed(format!("header is not UTF-8: {e}")))?;
        let header: Header =
            serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        if header.format_version != VERSION {
            return Err(CheckpointError::Malformed("header version disagrees with file version".into()).into());
        }
        let mut params = Parameters::new();
        for entry in &header.parameters {
            let n = rd.u32("parameter name length")? as usize;
            let name = std::str::from_utf8(rd.take(n, "parameter name")?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
            if name != entry.name {
                return Err(CheckpointError::Malformed(format!("expected parameter '{}', found '{name}'", entry.name)).into());
            }
            let ndim = rd.u32("dimension count")? as usize;
            let dims = (0..ndim).map(|_| rd.u32("dimensions")).collect::<Result<Vec<u32>>>()?;
            if dims != entry.shape || ndim != 2 {
                return Err(CheckpointError::Malformed(format!("parameter '{name}' has dims {dims:?}")).into());
            }
            let (r, c) = (dims[0] as usize, dims[1] as usize);
            let raw = rd.take(r * c * 4, "parameter payload")?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let t = DenseMatrix::new(r, c, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            params.insert(name, t);
        }
        if rd.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - rd.pos)).into());
        }
        let ckpt = Checkpoint {
            spec: header.spec,
            params,
            features: header.features,
            labels: header.labels,
            train_config: header.train_config,
            threshold: header.threshold,
        };
        ckpt.validate()
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated { what }.into());
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
