//! Reference embedders with known, by-construction biases.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_canvas, Embedder, EmbeddingVector};
use crate::error::Result;
use crate::raster::luma;
use crate::seed::{fnv1a64, keyed_rng};
use crate::stimulus::StimulusRecord;

pub const SILHOUETTE_GRID: u32 = 32;
pub const DEFAULT_RANDOM_DIM: usize = 512;
const GRAY_BINS: usize = 64;
const ORIENTATION_BINS: usize = 8;

fn vector(model_id: &str, stimulus: &StimulusRecord, values: Vec<f32>) -> EmbeddingVector {
    EmbeddingVector {
        stimulus_id: stimulus.meta.stimulus_id.clone(),
        model_id: model_id.to_owned(),
        values,
    }
}

/// Flattened RGB bytes in row-major, channel-last order.
#[derive(Debug, Clone)]
pub struct RawPixelEmbedder {
    model_id: String,
}

impl RawPixelEmbedder {
    pub fn new(model_id: impl Into<String>) -> Self {
        RawPixelEmbedder { model_id: model_id.into() }
    }
}

impl Embedder for RawPixelEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        check_canvas(stimulus)?;
        let values = stimulus.image.as_raw().iter().map(|&b| f32::from(b)).collect();
        Ok(vector(&self.model_id, stimulus, values))
    }
}

/// The foreground mask sampled on a 32x32 nearest-neighbour grid.
///
/// Reads only the mask, so two stimuli with the same shape, size and offset
/// embed identically whatever their texture.
#[derive(Debug, Clone)]
pub struct SilhouetteEmbedder {
    model_id: String,
}

impl SilhouetteEmbedder {
    pub fn new(model_id: impl Into<String>) -> Self {
        SilhouetteEmbedder { model_id: model_id.into() }
    }
}

impl Embedder for SilhouetteEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        check_canvas(stimulus)?;
        let grid = stimulus.mask.resize_nearest(SILHOUETTE_GRID, SILHOUETTE_GRID);
        let values = grid
            .as_slice()
            .iter()
            .map(|&fg| if fg { 1.0 } else { 0.0 })
            .collect();
        Ok(vector(&self.model_id, stimulus, values))
    }
}

/// 64-bin luma histogram followed by an 8-bin gradient-orientation histogram,
/// both over foreground pixels and normalized by the foreground pixel count.
///
/// Gradients are central differences on luma with white beyond the canvas
/// edge. Nothing depends on absolute position, so translating a stimulus on a
/// white canvas leaves the embedding unchanged.
#[derive(Debug, Clone)]
pub struct PatchStatsEmbedder {
    model_id: String,
}

impl PatchStatsEmbedder {
    pub fn new(model_id: impl Into<String>) -> Self {
        PatchStatsEmbedder { model_id: model_id.into() }
    }
}

impl Embedder for PatchStatsEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        check_canvas(stimulus)?;
        let img = &stimulus.image;
        let (w, h) = img.dimensions();
        let gray: Vec<i32> = img.pixels().map(|p| i32::from(luma(*p))).collect();
        let at = |x: i64, y: i64| -> i32 {
            if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) {
                255
            } else {
                gray[(y as usize) * (w as usize) + x as usize]
            }
        };

        let mut gray_hist = [0u64; GRAY_BINS];
        let mut orient_hist = [0u64; ORIENTATION_BINS];
        let mut n = 0u64;
        for y in 0..h {
            for x in 0..w {
                if !stimulus.mask.is_foreground(x, y) {
                    continue;
                }
                n += 1;
                let (xi, yi) = (i64::from(x), i64::from(y));
                let g = at(xi, yi);
                gray_hist[(g as usize) * GRAY_BINS / 256] += 1;
                let gx = at(xi + 1, yi) - at(xi - 1, yi);
                let gy = at(xi, yi + 1) - at(xi, yi - 1);
                if gx != 0 || gy != 0 {
                    orient_hist[orientation_bin(gx, gy)] += 1;
                }
            }
        }

        let norm = if n == 0 { 1.0 } else { n as f64 };
        let values = gray_hist
            .iter()
            .chain(orient_hist.iter())
            .map(|&c| (c as f64 / norm) as f32)
            .collect();
        Ok(vector(&self.model_id, stimulus, values))
    }
}

fn orientation_bin(gx: i32, gy: i32) -> usize {
    let angle = f64::from(gy).atan2(f64::from(gx)) + std::f64::consts::PI;
    let bin = (angle / std::f64::consts::TAU * ORIENTATION_BINS as f64).floor() as usize;
    bin.min(ORIENTATION_BINS - 1)
}

/// Standard-normal vector seeded by the model id and a hash of the pixels.
///
/// A pure function of the image, like an untrained network: identical images
/// embed identically, distinct images draw independent vectors.
#[derive(Debug, Clone)]
pub struct RandomEmbedder {
    model_id: String,
    dim: usize,
    model_seed: u64,
}

impl RandomEmbedder {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        let model_id = model_id.into();
        let model_seed = fnv1a64(model_id.as_bytes());
        RandomEmbedder { model_id, dim, model_seed }
    }
}

impl Embedder for RandomEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        check_canvas(stimulus)?;
        let key = format!("{:016x}", fnv1a64(stimulus.image.as_raw()));
        let mut rng = keyed_rng(self.model_seed, &key);
        let values = (0..self.dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Ok(vector(&self.model_id, stimulus, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Mask, WHITE};
    use crate::stimulus::{scale_and_place, Placement, StimulusMeta};
    use image::{Rgb, RgbImage};

    fn record(image: RgbImage, mask: Mask) -> StimulusRecord {
        let c = image.width();
        StimulusRecord {
            meta: StimulusMeta {
                stimulus_id: "s_0-t_0".into(),
                dataset: "d".into(),
                shape_class: "s".into(),
                shape_instance: "0".into(),
                texture_class: "t".into(),
                texture_instance: "0".into(),
                alpha: 1.0,
                size_fraction: 1.0,
                placement: Placement::Aligned,
                offset: [0, 0],
                canvas_size: c,
            },
            image,
            mask,
        }
    }

    #[test]
    fn raw_pixel_white_canvas() {
        let rec = record(RgbImage::from_pixel(224, 224, WHITE), Mask::new(224, 224, false));
        let v = RawPixelEmbedder::new("raw").embed(&rec).unwrap();
        assert_eq!(v.dim(), 150_528);
        assert!(v.values.iter().all(|&x| x == 255.0));
    }

    #[test]
    fn silhouette_ignores_texture() {
        let mask = Mask::from_fn(40, 40, |x, y| x > 5 && y > 8 && x + y < 60);
        let tex_a = RgbImage::from_fn(40, 40, |x, _| if mask.is_foreground(x, 0) { Rgb([0, 0, 0]) } else { WHITE });
        let tex_b = RgbImage::from_fn(40, 40, |x, y| Rgb([(x * 6) as u8, (y * 6) as u8, 200]));
        let e = SilhouetteEmbedder::new("sil");
        let a = e.embed(&record(tex_a, mask.clone())).unwrap();
        let b = e.embed(&record(tex_b, mask)).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.dim(), 1024);
    }

    #[test]
    fn patch_stats_ignores_offset() {
        let frame = RgbImage::from_fn(30, 30, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, ((x ^ y) * 8) as u8]));
        let mask = Mask::from_fn(30, 30, |x, y| (x as i32 - 15).pow(2) + (y as i32 - 15).pow(2) < 120);
        let e = PatchStatsEmbedder::new("ps");
        let mut seen = Vec::new();
        for seed in 0..6 {
            let p = scale_and_place(&frame, &mask, 0.5, Placement::Unaligned, 60, seed).unwrap();
            seen.push(e.embed(&record(p.image, p.mask)).unwrap().values);
        }
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(seen[0].len(), 72);
        let total: f32 = seen[0][..64].iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn orientation_bins_cover_circle() {
        assert_eq!(orientation_bin(1, 0), 4);
        assert_eq!(orientation_bin(0, 1), 6);
        assert_eq!(orientation_bin(-1, 0), 7);
        assert_eq!(orientation_bin(0, -1), 2);
        assert_eq!(orientation_bin(-1, -1), 1);
    }

    #[test]
    fn random_is_keyed() {
        let e = RandomEmbedder::new("rand-0", 64);
        let img = RgbImage::from_fn(8, 8, |x, y| Rgb([x as u8, y as u8, 1]));
        let rec = record(img, Mask::new(8, 8, true));
        assert_eq!(e.embed(&rec).unwrap(), e.embed(&rec).unwrap());
        let other = RandomEmbedder::new("rand-1", 64).embed(&rec).unwrap();
        assert_ne!(e.embed(&rec).unwrap().values, other.values);
        let mut rec2 = rec.clone();
        rec2.image.put_pixel(0, 0, WHITE);
        assert_ne!(e.embed(&rec).unwrap().values, e.embed(&rec2).unwrap().values);
    }

    #[test]
    fn canvas_mismatch_rejected() {
        let mut rec = record(RgbImage::new(8, 8), Mask::new(8, 8, true));
        rec.meta.canvas_size = 9;
        assert!(RawPixelEmbedder::new("r").embed(&rec).is_err());
    }
}
