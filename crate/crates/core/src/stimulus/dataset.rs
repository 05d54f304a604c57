use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{StimulusMeta, StimulusRecord};
use crate::error::{Error, Result};
use crate::raster::{binarize_or_err, load_gray, load_rgb, save_png};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `<id>.png`, `<id>.mask.png` and `manifest.jsonl` into `dir`.
///
/// Manifest lines follow the order of `records`.
pub fn write_dataset(dir: &Path, records: &[StimulusRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    records.par_iter().try_for_each(|rec| {
        save_png(&rec.image, &dir.join(format!("{}.png", rec.id())))?;
        save_png(&rec.mask.to_image(), &dir.join(format!("{}.mask.png", rec.id())))
    })?;
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(&rec.meta).expect("manifest entries serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<StimulusMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(meta);
    }
    Ok(out)
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<StimulusRecord>> {
    let metas = read_manifest(&dir.join(MANIFEST_FILE))?;
    metas
        .into_par_iter()
        .map(|meta| {
            let image = load_rgb(&dir.join(format!("{}.png", meta.stimulus_id)))?;
            let mask_path = dir.join(format!("{}.mask.png", meta.stimulus_id));
            let mask = binarize_or_err(&load_gray(&mask_path)?)?;
            Ok(StimulusRecord { meta, image, mask })
        })
        .collect()
}
