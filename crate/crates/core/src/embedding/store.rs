//! Portable embedding store.
//!
//! Textual form is JSON Lines, one record per line:
//!
//! ```text
//! {"model": "resnet50", "stimulus": "cat_1-bear_2", "dim": 3, "values": [0.5, 1.0, 0.25]}
//! ```
//!
//! Binary form, all integers little-endian:
//!
//! ```text
//! b"EMBS" | version: u32 | count: u64
//! per record: id_len: u16 | id: utf8 | model_len: u16 | model: utf8 | dim: u32 | dim x f32
//! ```
//!
//! A stimulus id may be qualified with its dataset (`<dataset>/<id>`); lookups
//! try the qualified form first.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::stimulus::StimulusRecord;

pub const BINARY_MAGIC: &[u8; 4] = b"EMBS";
pub const BINARY_VERSION: u32 = 1;

/// Vectors keyed by `(model_id, stimulus_id)`.
pub type EmbeddingStore = BTreeMap<(String, String), EmbeddingVector>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    model: String,
    stimulus: String,
    dim: usize,
    values: Vec<f32>,
}

/// Loads either store form, detected by the magic bytes.
pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)?
    } else {
        parse_text(&bytes)?
    };
    let mut store = EmbeddingStore::new();
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for v in records {
        let dim = *dims.entry(v.model_id.clone()).or_insert(v.dim());
        if dim != v.dim() {
            return Err(Error::InconsistentStore(format!(
                "model {} has dims {dim} and {} (stimulus {})",
                v.model_id,
                v.dim(),
                v.stimulus_id
            )));
        }
        let key = (v.model_id.clone(), v.stimulus_id.clone());
        if store.insert(key, v).is_some() {
            return Err(Error::InconsistentStore("duplicate (model, stimulus) record".into()));
        }
    }
    Ok(store)
}

fn parse_text(bytes: &[u8]) -> Result<Vec<EmbeddingVector>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::ParseError {
        line: 0,
        message: format!("store is not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::ParseError { line: i + 1, message };
        let rec: TextRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.dim == 0 || rec.values.len() != rec.dim {
            return Err(err(format!(
                "declared dim {} but {} values",
                rec.dim,
                rec.values.len()
            )));
        }
        out.push(EmbeddingVector {
            stimulus_id: rec.stimulus,
            model_id: rec.model,
            values: rec.values,
        });
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::ParseError {
                line: self.record,
                message: "truncated binary store".into(),
            }),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let record = self.record;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::ParseError {
            line: record,
            message: e.to_string(),
        })
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<EmbeddingVector>> {
    let mut c = Cursor { bytes, pos: 4, record: 0 };
    let version = c.u32()?;
    if version != BINARY_VERSION {
        return Err(Error::ParseError {
            line: 0,
            message: format!("unsupported store version {version}"),
        });
    }
    let count = c.u64()?;
    let mut out = Vec::new();
    for r in 0..count {
        c.record = r as usize + 1;
        let stimulus_id = c.string()?;
        let model_id = c.string()?;
        let dim = c.u32()? as usize;
        if dim == 0 {
            return Err(Error::ParseError { line: c.record, message: "dim 0".into() });
        }
        let raw = c.take(dim.checked_mul(4).ok_or_else(|| Error::ParseError {
            line: c.record,
            message: "dim overflow".into(),
        })?)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParseError {
                line: c.record,
                message: "non-finite value".into(),
            });
        }
        out.push(EmbeddingVector { stimulus_id, model_id, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::ParseError {
            line: count as usize,
            message: "trailing bytes after last record".into(),
        });
    }
    Ok(out)
}

pub fn write_store_text<'a>(path: &Path, vectors: impl IntoIterator<Item = &'a EmbeddingVector>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in vectors {
        let rec = TextRecord {
            model: v.model_id.clone(),
            stimulus: v.stimulus_id.clone(),
            dim: v.dim(),
            values: v.values.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::NumericalFault(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_store_binary<'a>(
    path: &Path,
    vectors: impl IntoIterator<Item = &'a EmbeddingVector>,
) -> Result<()> {
    let vectors: Vec<&EmbeddingVector> = vectors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    for v in vectors {
        for s in [&v.stimulus_id, &v.model_id] {
            let len = u16::try_from(s.len())
                .map_err(|_| Error::InvalidInput(format!("id longer than 65535 bytes: {s}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        buf.extend_from_slice(&(v.dim() as u32).to_le_bytes());
        for x in &v.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Serves vectors for one model out of a loaded store.
#[derive(Debug, Clone)]
pub struct StoreEmbedder {
    model_id: String,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl StoreEmbedder {
    pub fn from_store(model_id: impl Into<String>, store: &EmbeddingStore) -> Result<Self> {
        let model_id = model_id.into();
        let vectors: BTreeMap<String, Vec<f32>> = store
            .iter()
            .filter(|((m, _), _)| *m == model_id)
            .map(|((_, s), v)| (s.clone(), v.values.clone()))
            .collect();
        if vectors.is_empty() {
            return Err(Error::BackendUnavailable(format!(
                "store has no records for model {model_id}"
            )));
        }
        Ok(StoreEmbedder { model_id, vectors })
    }
}

impl Embedder for StoreEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        let values = self
            .vectors
            .get(&stimulus.meta.qualified_id())
            .or_else(|| self.vectors.get(&stimulus.meta.stimulus_id))
            .ok_or_else(|| Error::MissingEmbedding {
                model_id: self.model_id.clone(),
                stimulus_id: stimulus.meta.qualified_id(),
            })?;
        Ok(EmbeddingVector {
            stimulus_id: stimulus.meta.stimulus_id.clone(),
            model_id: self.model_id.clone(),
            values: values.clone(),
        })
    }
}
