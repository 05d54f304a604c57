//! Stimulus synthesis: textured silhouettes, size/placement variants and
//! novel texture-by-shape stimuli, each carrying full provenance.

mod corpus;
mod dataset;
mod synth;

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::Mask;

pub use corpus::{ShapeKey, SourceCorpus};
pub use dataset::{load_dataset, read_manifest, write_dataset, MANIFEST_FILE};
pub use synth::{
    binarize_silhouette, composite_background, make_novel_set, make_novel_stimulus,
    make_textured_silhouette_set, place_dataset, scale_and_place, Placed,
};

pub const DEFAULT_CANVAS_SIZE: u32 = 224;
pub const DEFAULT_THRESHOLD: u8 = 128;
pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_SIZE_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Aligned,
    Unaligned,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Aligned => "aligned",
            Placement::Unaligned => "unaligned",
        })
    }
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aligned" => Ok(Placement::Aligned),
            "unaligned" => Ok(Placement::Unaligned),
            other => Err(invalid(format!("unknown placement {other:?}"))),
        }
    }
}

/// Shape and texture provenance of a source image.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StimulusKey {
    pub shape_class: String,
    pub shape_instance: String,
    pub texture_class: String,
    pub texture_instance: String,
}

impl StimulusKey {
    pub fn new(
        shape_class: impl Into<String>,
        shape_instance: impl Into<String>,
        texture_class: impl Into<String>,
        texture_instance: impl Into<String>,
    ) -> Self {
        StimulusKey {
            shape_class: shape_class.into(),
            shape_instance: shape_instance.into(),
            texture_class: texture_class.into(),
            texture_instance: texture_instance.into(),
        }
    }

    /// `<shape_class>_<shape_instance>-<texture_class>_<texture_instance>`
    pub fn id(&self) -> String {
        format!(
            "{}_{}-{}_{}",
            self.shape_class, self.shape_instance, self.texture_class, self.texture_instance
        )
    }

    /// Inverse of [`StimulusKey::id`]. Class names may contain `_` but not `-`.
    pub fn parse(stem: &str) -> Result<Self> {
        let bad = || invalid(format!("cannot parse stimulus name {stem:?}"));
        let (shape, texture) = stem.split_once('-').ok_or_else(bad)?;
        let (sc, si) = shape.rsplit_once('_').ok_or_else(bad)?;
        let (tc, ti) = texture.rsplit_once('_').ok_or_else(bad)?;
        if [sc, si, tc, ti].iter().any(|s| s.is_empty()) || ti.contains('-') {
            return Err(bad());
        }
        Ok(StimulusKey::new(sc, si, tc, ti))
    }

    pub fn shape(&self) -> ShapeKey {
        ShapeKey {
            class: self.shape_class.clone(),
            instance: self.shape_instance.clone(),
        }
    }
}

/// The stimulus condition a dataset was generated under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub dataset: String,
    pub alpha: f64,
    pub size_fraction: f64,
    pub placement: Placement,
}

impl Condition {
    /// Experiment 1 textured silhouettes at background opacity `alpha`.
    pub fn textured_silhouette(alpha: f64) -> Self {
        Condition {
            dataset: format!("exp1-alpha-{alpha}"),
            alpha,
            size_fraction: 1.0,
            placement: Placement::Aligned,
        }
    }

    /// Experiment 2 scaled white-background silhouettes.
    pub fn scaled_silhouette(size_fraction: f64, placement: Placement) -> Self {
        Condition {
            dataset: format!("exp2-size-{size_fraction}-{placement}"),
            alpha: 1.0,
            size_fraction,
            placement,
        }
    }

    /// Experiment 3 novel texture-by-shape stimuli.
    pub fn novel(size_fraction: f64, placement: Placement) -> Self {
        Condition {
            dataset: format!("exp3-size-{size_fraction}-{placement}"),
            alpha: 1.0,
            size_fraction,
            placement,
        }
    }
}

/// Everything about a stimulus except its pixels. One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusMeta {
    pub stimulus_id: String,
    pub dataset: String,
    pub shape_class: String,
    pub shape_instance: String,
    pub texture_class: String,
    pub texture_instance: String,
    pub alpha: f64,
    pub size_fraction: f64,
    pub placement: Placement,
    /// Top-left of the placed bounding box, `[x, y]`.
    pub offset: [u32; 2],
    pub canvas_size: u32,
}

impl StimulusMeta {
    pub fn key(&self) -> StimulusKey {
        StimulusKey::new(
            &self.shape_class,
            &self.shape_instance,
            &self.texture_class,
            &self.texture_instance,
        )
    }

    /// `<dataset>/<stimulus_id>`, unique across datasets.
    pub fn qualified_id(&self) -> String {
        format!("{}/{}", self.dataset, self.stimulus_id)
    }

    pub fn condition(&self) -> Condition {
        Condition {
            dataset: self.dataset.clone(),
            alpha: self.alpha,
            size_fraction: self.size_fraction,
            placement: self.placement,
        }
    }
}

/// A synthesized stimulus: raster, foreground mask and provenance.
///
/// The mask is the exact foreground used during synthesis; texture-blind and
/// position-blind reference embedders read it instead of re-segmenting pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusRecord {
    pub meta: StimulusMeta,
    pub image: RgbImage,
    pub mask: Mask,
}

impl StimulusRecord {
    pub fn id(&self) -> &str {
        &self.meta.stimulus_id
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} outside [0, 1]")))
    }
}

pub(crate) fn check_size_fraction(v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("size_fraction = {v} outside (0, 1]")))
    }
}
