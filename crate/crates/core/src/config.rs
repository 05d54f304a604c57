//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSource, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::stimulus::{
    check_size_fraction, check_unit, Placement, DEFAULT_ALPHAS, DEFAULT_CANVAS_SIZE,
    DEFAULT_SIZE_FRACTIONS, DEFAULT_THRESHOLD,
};
use crate::triplet::{SamplingMode, SamplingPlan};

/// Environment variable consulted when `corpus_path` is not set.
pub const CORPUS_ENV: &str = "SHAPEBIAS_CORPUS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_canvas")]
    pub canvas_size: u32,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
    /// Worker pool size; `None` uses every core. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Also write synthesized stimuli under `stimuli/` during `run`.
    #[serde(default)]
    pub write_stimuli: bool,
    #[serde(default = "yes")]
    pub write_decisions: bool,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment1: Option<Experiment1>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment2: Option<ScaledExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment3: Option<ScaledExperiment>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
}

/// `[sampling]`: the seed comes from the top-level `global_seed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "default_k")]
    pub triplets_per_anchor: usize,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_mode")]
    pub mode: SamplingMode,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let p = SamplingPlan::default();
        SamplingSection {
            triplets_per_anchor: p.triplets_per_anchor,
            replications: p.replications,
            mode: p.mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment1 {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

impl Default for Experiment1 {
    fn default() -> Self {
        Experiment1 { alphas: default_alphas() }
    }
}

/// `[experiment2]` and `[experiment3]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledExperiment {
    #[serde(default = "default_sizes")]
    pub size_fractions: Vec<f64>,
    #[serde(default = "default_placements")]
    pub placements: Vec<Placement>,
}

impl Default for ScaledExperiment {
    fn default() -> Self {
        ScaledExperiment {
            size_fractions: default_sizes(),
            placements: default_placements(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("shapebias-out")
}
fn default_canvas() -> u32 {
    DEFAULT_CANVAS_SIZE
}
fn default_threshold() -> u8 {
    DEFAULT_THRESHOLD
}
fn default_metrics() -> Vec<Metric> {
    vec![Metric::Cosine]
}
fn yes() -> bool {
    true
}
fn default_k() -> usize {
    SamplingPlan::default().triplets_per_anchor
}
fn default_replications() -> u32 {
    SamplingPlan::default().replications
}
fn default_mode() -> SamplingMode {
    SamplingPlan::default().mode
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_sizes() -> Vec<f64> {
    DEFAULT_SIZE_FRACTIONS.to_vec()
}
fn default_placements() -> Vec<Placement> {
    vec![Placement::Aligned, Placement::Unaligned]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: None,
            output_dir: default_output_dir(),
            global_seed: 0,
            canvas_size: default_canvas(),
            threshold: default_threshold(),
            workers: None,
            metrics: default_metrics(),
            write_stimuli: false,
            write_decisions: true,
            sampling: SamplingSection::default(),
            experiment1: None,
            experiment2: None,
            experiment3: None,
            models: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::ParseError {
                line,
                message: e.message().to_owned(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file and resolves relative paths against its directory.
    ///
    /// A missing `corpus_path` falls back to `$SHAPEBIAS_CORPUS`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.corpus_path.is_none() {
            self.corpus_path = std::env::var_os(CORPUS_ENV).map(PathBuf::from);
        }
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus_path.as_mut() {
            join(p);
        }
        join(&mut self.output_dir);
        for m in &mut self.models {
            if let Some(p) = m.model_path.as_mut() {
                join(p);
            }
        }
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            triplets_per_anchor: self.sampling.triplets_per_anchor,
            replications: self.sampling.replications,
            global_seed: self.global_seed,
            mode: self.sampling.mode,
        }
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate_shape(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.experiment1.is_none() && self.experiment2.is_none() && self.experiment3.is_none() {
            return cfg_err("no experiment configured".into());
        }
        if self.models.is_empty() {
            return cfg_err("no models configured".into());
        }
        if self.metrics.is_empty() {
            return cfg_err("no metrics configured".into());
        }
        if self.canvas_size == 0 {
            return cfg_err("canvas_size must be >= 1".into());
        }
        if self.workers == Some(0) {
            return cfg_err("workers must be >= 1".into());
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return cfg_err(format!("duplicate model_id {}", w[0]));
        }
        for m in &self.models {
            m.validate()?;
        }
        self.sampling_plan().validate()?;
        if let Some(e) = &self.experiment1 {
            if e.alphas.is_empty() {
                return cfg_err("experiment1.alphas is empty".into());
            }
            for &a in &e.alphas {
                check_unit("alpha", a)?;
            }
        }
        for (name, e) in [("experiment2", &self.experiment2), ("experiment3", &self.experiment3)] {
            if let Some(e) = e {
                if e.size_fractions.is_empty() || e.placements.is_empty() {
                    return cfg_err(format!("{name} needs size_fractions and placements"));
                }
                for &f in &e.size_fractions {
                    check_size_fraction(f)?;
                }
            }
        }
        Ok(())
    }

    /// Full validation: structure plus existence of every referenced path.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let corpus = self.corpus_path.as_ref().ok_or_else(|| {
            Error::Config(format!("corpus_path not set and ${CORPUS_ENV} is empty"))
        })?;
        if !corpus.is_dir() {
            return Err(Error::Config(format!("corpus {} is not a directory", corpus.display())));
        }
        for m in &self.models {
            if m.source != EmbeddingSource::Synthetic {
                let p = m.model_path.as_ref().expect("validated");
                if !p.is_file() {
                    return Err(Error::BackendUnavailable(format!(
                        "{}: {} not found",
                        m.model_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.corpus_path
            .as_deref()
            .ok_or_else(|| Error::Config("corpus_path not set".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SyntheticKind;

    const SAMPLE: &str = r#"
corpus_path = "corpus"
output_dir = "out"
global_seed = 7
metrics = ["cosine", "euclidean"]

[sampling]
triplets_per_anchor = 4

[experiment1]

[experiment2]
size_fractions = [0.5, 1.0]
placements = ["aligned"]

[[models]]
model_id = "sil"
source = "synthetic"
synthetic_kind = "silhouette"

[[models]]
model_id = "ext"
source = "store"
model_path = "emb/ext.jsonl"
"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.global_seed, 7);
        assert_eq!(c.canvas_size, 224);
        assert_eq!(c.metrics, vec![Metric::Cosine, Metric::Euclidean]);
        assert_eq!(c.experiment1.as_ref().unwrap().alphas, DEFAULT_ALPHAS.to_vec());
        assert!(c.experiment3.is_none());
        let plan = c.sampling_plan();
        assert_eq!((plan.triplets_per_anchor, plan.replications, plan.global_seed), (4, 3, 7));
        assert_eq!(c.models[0], ModelConfig::synthetic("sil", SyntheticKind::Silhouette));
        c.validate_shape().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.corpus_path.unwrap(), Path::new("/cfg/corpus"));
        assert_eq!(c.output_dir, Path::new("/cfg/out"));
        assert_eq!(c.models[1].model_path.as_deref(), Some(Path::new("/cfg/emb/ext.jsonl")));
    }

    #[test]
    fn rejects_bad_configs() {
        let err = RunConfig::from_toml("global_seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 2, .. }), "{err}");

        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.models.clear();
        assert!(matches!(c.validate_shape(), Err(Error::Config(_))));

        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.experiment1 = None;
        c.experiment2 = None;
        assert!(matches!(c.validate_shape(), Err(Error::Config(_))));

        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.metrics.clear();
        assert!(matches!(c.validate_shape(), Err(Error::Config(_))));

        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.models.push(c.models[0].clone());
        assert!(matches!(c.validate_shape(), Err(Error::Config(_))));

        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.experiment1.as_mut().unwrap().alphas = vec![1.5];
        assert!(c.validate_shape().is_err());
    }

    #[test]
    fn missing_paths_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.resolve_paths(dir.path());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        fs::create_dir(dir.path().join("corpus")).unwrap();
        assert!(matches!(c.validate(), Err(Error::BackendUnavailable(_))));
        fs::create_dir(dir.path().join("emb")).unwrap();
        fs::write(dir.path().join("emb/ext.jsonl"), "").unwrap();
        c.validate().unwrap();
    }
}
