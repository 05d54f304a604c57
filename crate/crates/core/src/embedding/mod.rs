//! Embedding backends.
//!
//! An [`Embedder`] turns a stimulus into a fixed-dimension vector. Three
//! sources exist: a precomputed [store](store), an ONNX model evaluated up to a
//! named node, and built-in synthetic reference embedders with known bias.

#[cfg(feature = "onnx")]
mod onnx;
pub mod store;
mod synthetic;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimulus::StimulusRecord;

#[cfg(feature = "onnx")]
pub use onnx::OnnxEmbedder;
pub use store::{load_store, write_store_binary, write_store_text, EmbeddingStore, StoreEmbedder};
pub use synthetic::{
    PatchStatsEmbedder, RandomEmbedder, RawPixelEmbedder, SilhouetteEmbedder,
    DEFAULT_RANDOM_DIM, SILHOUETTE_GRID,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub stimulus_id: String,
    pub model_id: String,
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Zero vectors cannot be compared by cosine similarity.
    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFault(format!(
                "model {} produced non-finite value at index {i} for {}",
                self.model_id, self.stimulus_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Store,
    InterchangeModel,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Downsampled foreground mask; blind to texture.
    Silhouette,
    /// Foreground intensity and gradient-orientation histograms; blind to position.
    PatchStats,
    /// Gaussian vector keyed by a hash of the model id and the pixels.
    Random,
    /// Raw RGB bytes.
    RawPixel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    #[serde(default = "default_resize")]
    pub resize: u32,
    #[serde(default = "default_mean")]
    pub mean: [f32; 3],
    #[serde(default = "default_std")]
    pub std: [f32; 3],
}

fn default_resize() -> u32 {
    224
}
fn default_mean() -> [f32; 3] {
    [0.485, 0.456, 0.406]
}
fn default_std() -> [f32; 3] {
    [0.229, 0.224, 0.225]
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            resize: default_resize(),
            mean: default_mean(),
            std: default_std(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub source: EmbeddingSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_node: Option<String>,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_kind: Option<SyntheticKind>,
    /// Output dimension of the random embedder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl ModelConfig {
    pub fn synthetic(model_id: impl Into<String>, kind: SyntheticKind) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            source: EmbeddingSource::Synthetic,
            model_path: None,
            output_node: None,
            preprocess: Preprocess::default(),
            synthetic_kind: Some(kind),
            dim: None,
        }
    }

    pub fn store(model_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            source: EmbeddingSource::Store,
            model_path: Some(path.into()),
            output_node: None,
            preprocess: Preprocess::default(),
            synthetic_kind: None,
            dim: None,
        }
    }

    pub fn onnx(model_id: impl Into<String>, path: impl Into<PathBuf>, node: impl Into<String>) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            source: EmbeddingSource::InterchangeModel,
            model_path: Some(path.into()),
            output_node: Some(node.into()),
            preprocess: Preprocess::default(),
            synthetic_kind: None,
            dim: None,
        }
    }

    /// Source-specific fields must be present exactly when the source needs them.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidModelConfig(format!("{}: {msg}", self.model_id)));
        if self.model_id.is_empty() {
            return Err(Error::InvalidModelConfig("empty model_id".into()));
        }
        let (need_path, need_node, need_kind) = match self.source {
            EmbeddingSource::Store => (true, false, false),
            EmbeddingSource::InterchangeModel => (true, true, false),
            EmbeddingSource::Synthetic => (false, false, true),
        };
        if self.model_path.is_some() != need_path {
            return bad(if need_path { "model_path required" } else { "model_path not allowed" });
        }
        if self.output_node.is_some() != need_node {
            return bad(if need_node { "output_node required" } else { "output_node not allowed" });
        }
        if self.synthetic_kind.is_some() != need_kind {
            return bad(if need_kind { "synthetic_kind required" } else { "synthetic_kind not allowed" });
        }
        if self.dim.is_some() && self.synthetic_kind != Some(SyntheticKind::Random) {
            return bad("dim only applies to the random embedder");
        }
        if self.dim == Some(0) {
            return bad("dim must be >= 1");
        }
        let p = &self.preprocess;
        if p.resize == 0 || p.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return bad("preprocess needs resize >= 1 and positive std");
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector>;
}

/// Instantiates the backend described by `config`, loading stores and models.
pub fn build_embedder(config: &ModelConfig) -> Result<Box<dyn Embedder>> {
    config.validate()?;
    let id = config.model_id.clone();
    Ok(match config.source {
        EmbeddingSource::Synthetic => match config.synthetic_kind.expect("validated") {
            SyntheticKind::Silhouette => Box::new(SilhouetteEmbedder::new(id)),
            SyntheticKind::PatchStats => Box::new(PatchStatsEmbedder::new(id)),
            SyntheticKind::RawPixel => Box::new(RawPixelEmbedder::new(id)),
            SyntheticKind::Random => {
                Box::new(RandomEmbedder::new(id, config.dim.unwrap_or(DEFAULT_RANDOM_DIM)))
            }
        },
        EmbeddingSource::Store => {
            let path = config.model_path.as_ref().expect("validated");
            if !path.is_file() {
                return Err(Error::BackendUnavailable(format!(
                    "embedding store {} not found",
                    path.display()
                )));
            }
            Box::new(StoreEmbedder::from_store(id, &load_store(path)?)?)
        }
        #[cfg(feature = "onnx")]
        EmbeddingSource::InterchangeModel => Box::new(OnnxEmbedder::load(config)?),
        #[cfg(not(feature = "onnx"))]
        EmbeddingSource::InterchangeModel => {
            return Err(Error::BackendUnavailable(
                "built without the `onnx` feature".into(),
            ))
        }
    })
}

/// One-shot embedding of a single stimulus.
///
/// Builds the backend on every call; use [`build_embedder`] and
/// [`embed_all`] for batches.
pub fn embed(stimulus: &StimulusRecord, config: &ModelConfig) -> Result<EmbeddingVector> {
    build_embedder(config)?.embed(stimulus)
}

/// Embeds every record in parallel. Output order follows `records`.
pub fn embed_all(records: &[StimulusRecord], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>> {
    let out: Vec<EmbeddingVector> = records
        .par_iter()
        .map(|r| {
            let v = embedder.embed(r)?;
            v.check_finite()?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|v| v.dim() != first.dim()) {
            return Err(Error::InconsistentStore(format!(
                "model {} produced dims {} and {}",
                embedder.model_id(),
                first.dim(),
                bad.dim()
            )));
        }
    }
    Ok(out)
}

pub(crate) fn check_canvas(stimulus: &StimulusRecord) -> Result<()> {
    let c = stimulus.meta.canvas_size;
    if stimulus.image.dimensions() != (c, c) || stimulus.mask.dimensions() != (c, c) {
        return Err(Error::InvalidInput(format!(
            "stimulus {} is {:?}, expected a {c}x{c} canvas",
            stimulus.meta.stimulus_id,
            stimulus.image.dimensions()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_field_presence() {
        ModelConfig::synthetic("s", SyntheticKind::Silhouette).validate().unwrap();
        ModelConfig::store("s", "x.jsonl").validate().unwrap();
        ModelConfig::onnx("o", "m.onnx", "pool").validate().unwrap();

        let mut c = ModelConfig::onnx("o", "m.onnx", "pool");
        c.output_node = None;
        assert!(matches!(c.validate(), Err(Error::InvalidModelConfig(_))));

        let mut c = ModelConfig::synthetic("s", SyntheticKind::Silhouette);
        c.model_path = Some("x".into());
        assert!(c.validate().is_err());

        let mut c = ModelConfig::synthetic("s", SyntheticKind::Silhouette);
        c.dim = Some(8);
        assert!(c.validate().is_err());

        let mut c = ModelConfig::synthetic("r", SyntheticKind::Random);
        c.dim = Some(8);
        c.validate().unwrap();
    }

    #[test]
    fn missing_store_is_unavailable() {
        let c = ModelConfig::store("s", "/nonexistent/store.jsonl");
        assert!(matches!(build_embedder(&c), Err(Error::BackendUnavailable(_))));
    }

    #[test]
    fn non_finite_detected() {
        let v = EmbeddingVector {
            stimulus_id: "a".into(),
            model_id: "m".into(),
            values: vec![1.0, f32::NAN],
        };
        assert!(matches!(v.check_finite(), Err(Error::NumericalFault(_))));
    }
}
