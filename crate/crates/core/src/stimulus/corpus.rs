use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::StimulusKey;
use crate::error::{invalid, Error, Result};
use crate::raster::{load_gray, load_rgb, save_png, Mask};
use crate::stimulus::synth::binarize_silhouette;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShapeKey {
    pub class: String,
    pub instance: String,
}

/// Input corpora the stimulus families are built from.
///
/// On disk:
///
/// ```text
/// cue_conflict/<shape_class>_<shape_instance>-<texture_class>_<texture_instance>.png
/// silhouettes/<shape_class>_<shape_instance>.png
/// textures/<texture_class>.png
/// shapes/<shape_class>.png
/// ```
///
/// Any of the four subdirectories may be absent; experiments check for what
/// they need.
#[derive(Clone, Debug, Default)]
pub struct SourceCorpus {
    pub cue_conflict: BTreeMap<StimulusKey, RgbImage>,
    pub silhouettes: BTreeMap<ShapeKey, GrayImage>,
    pub textures: BTreeMap<String, RgbImage>,
    pub shape_masks: BTreeMap<String, Mask>,
}

impl SourceCorpus {
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
            ));
        }
        let mut corpus = SourceCorpus::default();
        for (stem, path) in png_files(&root.join("cue_conflict"))? {
            corpus.cue_conflict.insert(StimulusKey::parse(&stem)?, load_rgb(&path)?);
        }
        for (stem, path) in png_files(&root.join("silhouettes"))? {
            let (class, instance) = stem
                .rsplit_once('_')
                .ok_or_else(|| invalid(format!("cannot parse silhouette name {stem:?}")))?;
            let key = ShapeKey {
                class: class.to_owned(),
                instance: instance.to_owned(),
            };
            corpus.silhouettes.insert(key, load_gray(&path)?);
        }
        for (stem, path) in png_files(&root.join("textures"))? {
            corpus.textures.insert(stem, load_rgb(&path)?);
        }
        for (stem, path) in png_files(&root.join("shapes"))? {
            let mask = binarize_silhouette(&load_gray(&path)?, 128)?;
            corpus.shape_masks.insert(stem, mask);
        }
        Ok(corpus)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        for (key, img) in &self.cue_conflict {
            save_png(img, &root.join("cue_conflict").join(format!("{}.png", key.id())))?;
        }
        for (key, img) in &self.silhouettes {
            let name = format!("{}_{}.png", key.class, key.instance);
            save_png(img, &root.join("silhouettes").join(name))?;
        }
        for (class, img) in &self.textures {
            save_png(img, &root.join("textures").join(format!("{class}.png")))?;
        }
        for (class, mask) in &self.shape_masks {
            save_png(&mask.to_image(), &root.join("shapes").join(format!("{class}.png")))?;
        }
        Ok(())
    }

    /// Checks that every cue-conflict image has a silhouette of identical size.
    pub fn validate_cue_conflict(&self) -> Result<()> {
        for (key, img) in &self.cue_conflict {
            let sil = self.silhouettes.get(&key.shape()).ok_or_else(|| {
                Error::CorpusInconsistent(format!("no silhouette for cue-conflict image {}", key.id()))
            })?;
            if sil.dimensions() != img.dimensions() {
                return Err(Error::CorpusInconsistent(format!(
                    "silhouette {}_{} is {:?}, cue-conflict image {} is {:?}",
                    key.shape_class,
                    key.shape_instance,
                    sil.dimensions(),
                    key.id(),
                    img.dimensions()
                )));
            }
        }
        Ok(())
    }
}

fn png_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_owned(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    fn tiny() -> SourceCorpus {
        let mut c = SourceCorpus::default();
        let key = StimulusKey::new("cat", "1", "bear", "2");
        c.cue_conflict
            .insert(key, RgbImage::from_pixel(4, 4, Rgb([10, 20, 30])));
        c.silhouettes.insert(
            ShapeKey { class: "cat".into(), instance: "1".into() },
            GrayImage::from_fn(4, 4, |x, _| Luma([if x < 2 { 0 } else { 255 }])),
        );
        c
    }

    #[test]
    fn missing_silhouette_is_inconsistent() {
        let mut c = tiny();
        c.silhouettes.clear();
        assert!(matches!(c.validate_cue_conflict(), Err(Error::CorpusInconsistent(_))));
    }

    #[test]
    fn size_mismatch_is_inconsistent() {
        let mut c = tiny();
        for s in c.silhouettes.values_mut() {
            *s = GrayImage::new(5, 4);
        }
        assert!(matches!(c.validate_cue_conflict(), Err(Error::CorpusInconsistent(_))));
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        c.save(dir.path()).unwrap();
        let back = SourceCorpus::load(dir.path()).unwrap();
        assert_eq!(back.cue_conflict, c.cue_conflict);
        assert_eq!(back.silhouettes, c.silhouettes);
        back.validate_cue_conflict().unwrap();
    }
}
