use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    check_size_fraction, check_unit, Condition, Placement, SourceCorpus, StimulusKey,
    StimulusMeta, StimulusRecord,
};
use crate::error::{invalid, Error, Result};
use crate::raster::{resize_bilinear, Mask, WHITE};
use crate::seed::mix_seed;

/// Foreground wherever luminance is strictly below `threshold`.
pub fn binarize_silhouette(silhouette: &GrayImage, threshold: u8) -> Result<Mask> {
    let (w, h) = silhouette.dimensions();
    if w == 0 || h == 0 {
        return Err(invalid("empty silhouette raster"));
    }
    Ok(Mask::from_fn(w, h, |x, y| silhouette.get_pixel(x, y).0[0] < threshold))
}

/// Blends background pixels toward white by `alpha`; foreground is untouched.
///
/// Each background channel `c` becomes `round(alpha * 255 + (1 - alpha) * c)`,
/// rounding half away from zero.
pub fn composite_background(cue_conflict: &RgbImage, mask: &Mask, alpha: f64) -> Result<RgbImage> {
    check_unit("alpha", alpha)?;
    if cue_conflict.dimensions() != mask.dimensions() {
        return Err(invalid(format!(
            "image is {:?} but mask is {:?}",
            cue_conflict.dimensions(),
            mask.dimensions()
        )));
    }
    // One lookup table per call: the blend only depends on the channel value.
    let lut: Vec<u8> = (0..=255u8)
        .map(|c| (alpha * 255.0 + (1.0 - alpha) * f64::from(c)).round() as u8)
        .collect();
    let mut out = cue_conflict.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if !mask.is_foreground(x, y) {
            for c in px.0.iter_mut() {
                *c = lut[*c as usize];
            }
        }
    }
    Ok(out)
}

/// Result of [`scale_and_place`].
#[derive(Clone, Debug, PartialEq)]
pub struct Placed {
    pub image: RgbImage,
    pub mask: Mask,
    /// Top-left of the scaled frame on the canvas, `[x, y]`.
    pub offset: [u32; 2],
}

/// Scales a stimulus frame by `size_fraction` and places it on a white
/// `canvas_size` square canvas.
///
/// Colour content is resampled bilinearly, the mask by nearest neighbour.
/// Aligned frames are centred (`floor((canvas - extent) / 2)` per axis);
/// unaligned frames get an offset drawn uniformly from every position that
/// keeps the frame inside the canvas, seeded by `rng_seed`. Every canvas
/// pixel outside the scaled foreground is white.
pub fn scale_and_place(
    image: &RgbImage,
    fg_mask: &Mask,
    size_fraction: f64,
    placement: Placement,
    canvas_size: u32,
    rng_seed: u64,
) -> Result<Placed> {
    check_size_fraction(size_fraction)?;
    if image.dimensions() != fg_mask.dimensions() {
        return Err(invalid("image and mask dimensions differ"));
    }
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 || canvas_size == 0 {
        return Err(invalid("empty raster or canvas"));
    }
    let sw = ((f64::from(w) * size_fraction).round() as u32).max(1);
    let sh = ((f64::from(h) * size_fraction).round() as u32).max(1);
    if sw > canvas_size || sh > canvas_size {
        return Err(invalid(format!(
            "scaled extent {sw}x{sh} exceeds canvas {canvas_size}"
        )));
    }
    let (scaled, scaled_mask) = if (sw, sh) == (w, h) {
        (image.clone(), fg_mask.clone())
    } else {
        (resize_bilinear(image, sw, sh), fg_mask.resize_nearest(sw, sh))
    };

    let offset = match placement {
        Placement::Aligned => [(canvas_size - sw) / 2, (canvas_size - sh) / 2],
        Placement::Unaligned => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            [
                rng.random_range(0..=canvas_size - sw),
                rng.random_range(0..=canvas_size - sh),
            ]
        }
    };

    let mut canvas = RgbImage::from_pixel(canvas_size, canvas_size, WHITE);
    let mut mask = Mask::new(canvas_size, canvas_size, false);
    for y in 0..sh {
        for x in 0..sw {
            if scaled_mask.is_foreground(x, y) {
                let (cx, cy) = (x + offset[0], y + offset[1]);
                canvas.put_pixel(cx, cy, *scaled.get_pixel(x, y));
                mask.set(cx, cy, true);
            }
        }
    }
    Ok(Placed {
        image: canvas,
        mask,
        offset,
    })
}

/// Builds one textured-silhouette record per `(cue-conflict image, alpha)`.
///
/// Records are grouped by alpha in the order given, then by stimulus key.
pub fn make_textured_silhouette_set(
    corpus: &SourceCorpus,
    alphas: &[f64],
    threshold: u8,
) -> Result<Vec<StimulusRecord>> {
    if alphas.is_empty() {
        return Err(invalid("alpha list is empty"));
    }
    for &a in alphas {
        check_unit("alpha", a)?;
    }
    corpus.validate_cue_conflict()?;

    let masks: Vec<(&StimulusKey, &RgbImage, Mask)> = corpus
        .cue_conflict
        .par_iter()
        .map(|(key, img)| {
            let sil = corpus.silhouettes.get(&key.shape()).ok_or_else(|| {
                Error::CorpusInconsistent(format!("no silhouette for {}", key.id()))
            })?;
            Ok((key, img, binarize_silhouette(sil, threshold)?))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(masks.len() * alphas.len());
    for &alpha in alphas {
        let condition = Condition::textured_silhouette(alpha);
        let batch: Vec<StimulusRecord> = masks
            .par_iter()
            .map(|(key, img, mask)| {
                let image = composite_background(img, mask, alpha)?;
                let canvas_size = image.width().max(image.height());
                Ok(StimulusRecord {
                    meta: meta_for(key, &condition, [0, 0], canvas_size),
                    image,
                    mask: mask.clone(),
                })
            })
            .collect::<Result<_>>()?;
        out.extend(batch);
    }
    Ok(out)
}

/// Overlays a random patch of `texture_source` with `shape_mask` on a white
/// `canvas_size` canvas.
///
/// The mask is nearest-neighbour resampled to the canvas when sizes differ.
/// The patch offset is uniform over every valid crop position of the texture,
/// tiled edge to edge when it is smaller than the mask's bounding box.
pub fn make_novel_stimulus(
    key: &StimulusKey,
    texture_source: &RgbImage,
    shape_mask: &Mask,
    canvas_size: u32,
    rng_seed: u64,
) -> Result<StimulusRecord> {
    if canvas_size == 0 || texture_source.width() == 0 || texture_source.height() == 0 {
        return Err(invalid("empty texture or canvas"));
    }
    let mask = if shape_mask.dimensions() == (canvas_size, canvas_size) {
        shape_mask.clone()
    } else {
        shape_mask.resize_nearest(canvas_size, canvas_size)
    };
    let bbox = mask
        .bounding_box()
        .ok_or_else(|| invalid(format!("shape mask for {} has no foreground", key.shape_class)))?;

    let (tw, th) = texture_source.dimensions();
    let tiled_w = tw * bbox.width.div_ceil(tw);
    let tiled_h = th * bbox.height.div_ceil(th);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cx = rng.random_range(0..=tiled_w - bbox.width);
    let cy = rng.random_range(0..=tiled_h - bbox.height);

    let mut image = RgbImage::from_pixel(canvas_size, canvas_size, WHITE);
    for y in bbox.y..bbox.y + bbox.height {
        for x in bbox.x..bbox.x + bbox.width {
            if mask.is_foreground(x, y) {
                let tx = (cx + x - bbox.x) % tw;
                let ty = (cy + y - bbox.y) % th;
                image.put_pixel(x, y, *texture_source.get_pixel(tx, ty));
            }
        }
    }
    let condition = Condition {
        dataset: "novel".to_owned(),
        alpha: 1.0,
        size_fraction: 1.0,
        placement: Placement::Aligned,
    };
    Ok(StimulusRecord {
        meta: meta_for(key, &condition, [0, 0], canvas_size),
        image,
        mask,
    })
}

/// Every texture crossed with every shape in the corpus, one instance each.
///
/// Patch offsets are seeded per stimulus from `global_seed` and the stimulus id.
pub fn make_novel_set(
    corpus: &SourceCorpus,
    canvas_size: u32,
    global_seed: u64,
) -> Result<Vec<StimulusRecord>> {
    if corpus.textures.is_empty() || corpus.shape_masks.is_empty() {
        return Err(Error::CorpusInconsistent(
            "novel stimuli need textures/ and shapes/".into(),
        ));
    }
    let jobs: Vec<(StimulusKey, &RgbImage, &Mask)> = corpus
        .shape_masks
        .iter()
        .flat_map(|(shape, mask)| {
            corpus
                .textures
                .iter()
                .map(move |(tex, img)| (StimulusKey::new(shape, "0", tex, "0"), img, mask))
        })
        .collect();
    jobs.par_iter()
        .map(|(key, tex, mask)| {
            let seed = mix_seed(global_seed, &format!("patch/{}", key.id()));
            make_novel_stimulus(key, tex, mask, canvas_size, seed)
        })
        .collect()
}

/// Scales and places every record of a source dataset under `condition`.
///
/// Unaligned offsets are seeded per stimulus from `global_seed`, the target
/// dataset name and the stimulus id. Stimulus ids are carried over unchanged.
pub fn place_dataset(
    source: &[StimulusRecord],
    condition: &Condition,
    canvas_size: u32,
    global_seed: u64,
) -> Result<Vec<StimulusRecord>> {
    source
        .par_iter()
        .map(|rec| {
            let seed = mix_seed(
                global_seed,
                &format!("place/{}/{}", condition.dataset, rec.meta.stimulus_id),
            );
            let placed = scale_and_place(
                &rec.image,
                &rec.mask,
                condition.size_fraction,
                condition.placement,
                canvas_size,
                seed,
            )?;
            Ok(StimulusRecord {
                meta: meta_for(&rec.meta.key(), condition, placed.offset, canvas_size),
                image: placed.image,
                mask: placed.mask,
            })
        })
        .collect()
}

fn meta_for(key: &StimulusKey, condition: &Condition, offset: [u32; 2], canvas_size: u32) -> StimulusMeta {
    StimulusMeta {
        stimulus_id: key.id(),
        dataset: condition.dataset.clone(),
        shape_class: key.shape_class.clone(),
        shape_instance: key.shape_instance.clone(),
        texture_class: key.texture_class.clone(),
        texture_instance: key.texture_instance.clone(),
        alpha: condition.alpha,
        size_fraction: condition.size_fraction,
        placement: condition.placement,
        offset,
        canvas_size,
    }
}
