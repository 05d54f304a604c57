//! Procedural stand-in corpora.
//!
//! Builds a [`SourceCorpus`] with the same layout as the real inputs:
//! cue-conflict images whose texture covers the whole frame (shape region
//! slightly darker, so the outline is faintly visible), matching filled
//! silhouettes, texture sources and shape masks. Everything is a pure
//! function of the spec and its seed.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;

use crate::raster::Mask;
use crate::seed::keyed_rng;
use crate::stimulus::{ShapeKey, SourceCorpus, StimulusKey};

/// Shape families, in the order classes are assigned.
pub const SHAPE_FAMILIES: [&str; 16] = [
    "disk", "square", "triangle", "cross", "star", "ring", "crescent", "diamond", "ell", "hexagon",
    "tee", "arrow", "hourglass", "bar", "heart", "chevron",
];

/// Texture families, in the order classes are assigned.
pub const TEXTURE_FAMILIES: [&str; 16] = [
    "stripes", "checker", "dots", "grating", "noise", "rings", "hatch", "bricks", "waves",
    "speckle", "zigzag", "plaid", "blotch", "weave", "scales", "grain",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub shape_classes: usize,
    pub shape_instances: usize,
    pub texture_classes: usize,
    pub texture_instances: usize,
    pub canvas_size: u32,
    /// Shape masks and texture sources for novel stimuli (0 to skip).
    pub novel_shapes: usize,
    pub novel_textures: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            shape_classes: 6,
            shape_instances: 2,
            texture_classes: 6,
            texture_instances: 2,
            canvas_size: 96,
            novel_shapes: 16,
            novel_textures: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ShapeParams {
    family: usize,
    scale: f64,
    rotation: f64,
    aspect: f64,
}

impl ShapeParams {
    fn contains(&self, x: f64, y: f64) -> bool {
        // canvas coordinates in [-1, 1], rotated into the shape frame
        let (s, c) = self.rotation.sin_cos();
        let u = (c * x + s * y) / (self.scale * self.aspect);
        let v = (-s * x + c * y) / (self.scale / self.aspect);
        let r = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        match self.family % 16 {
            0 => r <= 1.0,
            1 => u.abs() <= 0.8 && v.abs() <= 0.8,
            2 => v <= 0.7 && u.abs() <= 0.9 * (v + 0.9) / 1.6,
            3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            4 => r <= 0.45 + 0.5 * (0.5 + 0.5 * (5.0 * theta).cos()).powi(3),
            5 => (0.55..=1.0).contains(&r),
            6 => r <= 1.0 && ((u - 0.45).powi(2) + v * v).sqrt() > 0.75,
            7 => u.abs() + v.abs() <= 1.0,
            8 => (u >= -0.9 && u <= -0.3 && v.abs() <= 0.9) || (v >= 0.3 && v <= 0.9 && u >= -0.9 && u <= 0.8),
            9 => {
                let a = u.abs();
                let b = v.abs();
                b <= 0.87 && a * 0.87 + b * 0.5 <= 0.87
            }
            10 => (v <= -0.5 && v >= -0.95 && u.abs() <= 0.95) || (u.abs() <= 0.25 && v >= -0.95 && v <= 0.95),
            11 => (u <= 0.1 && u >= -0.95 && v.abs() <= 0.25) || (u >= 0.1 && u <= 0.95 && v.abs() <= 0.95 - (u - 0.1) * 1.1),
            12 => v.abs() <= 0.95 && u.abs() <= 0.15 + 0.8 * v.abs(),
            13 => u.abs() <= 0.95 && v.abs() <= 0.35,
            14 => {
                let vv = -v;
                (u * u + (vv - (u.abs()).sqrt() * 0.6).powi(2)) <= 0.8
            }
            _ => {
                let d = v - 0.6 * u.abs();
                (-0.55..=0.05).contains(&d) && u.abs() <= 0.95
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct TextureParams {
    family: usize,
    freq: f64,
    angle: f64,
    phase: f64,
    dark: [f64; 3],
    light: [f64; 3],
    lattice_seed: u64,
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = crate::seed::splitmix64(seed ^ crate::seed::splitmix64((ix as u64) << 32 ^ (iy as u64 & 0xffff_ffff)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    (a * (1.0 - sx) + b * sx) * (1.0 - sy) + (c * (1.0 - sx) + d * sx) * sy
}

impl TextureParams {
    /// Mix weight toward `light`, in [0, 1], at pixel coordinates.
    fn level(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let u = (c * x + s * y) * self.freq + self.phase;
        let v = (-s * x + c * y) * self.freq + self.phase * 0.7;
        let tau = std::f64::consts::TAU;
        let sq = |t: f64| if t.rem_euclid(1.0) < 0.5 { 0.0 } else { 1.0 };
        match self.family % 16 {
            0 => 0.5 + 0.5 * (tau * u).sin(),
            1 => sq(u * 0.5) * (1.0 - sq(v * 0.5)) + (1.0 - sq(u * 0.5)) * sq(v * 0.5),
            2 => {
                let (fu, fv) = (u.rem_euclid(1.0) - 0.5, v.rem_euclid(1.0) - 0.5);
                if fu * fu + fv * fv < 0.09 { 0.0 } else { 1.0 }
            }
            3 => 0.5 + 0.5 * (tau * u).sin() * (tau * v).sin(),
            4 => value_noise(self.lattice_seed, u * 1.5, v * 1.5),
            5 => 0.5 + 0.5 * (tau * (u * u + v * v).sqrt()).sin(),
            6 => sq(u + v) * 0.8 + 0.2 * sq(u - v),
            7 => {
                let row = v.floor();
                let uu = u + if row.rem_euclid(2.0) == 0.0 { 0.0 } else { 0.5 };
                if uu.rem_euclid(1.0) < 0.08 || v.rem_euclid(1.0) < 0.12 { 0.0 } else { 1.0 }
            }
            8 => 0.5 + 0.5 * (tau * (u + 0.3 * (tau * v * 0.5).sin())).sin(),
            9 => if lattice(self.lattice_seed, (u * 3.0).floor() as i64, (v * 3.0).floor() as i64) > 0.6 { 0.0 } else { 1.0 },
            10 => sq(u + (v.rem_euclid(1.0) - 0.5).abs()),
            11 => 0.5 * sq(u) + 0.5 * sq(v),
            12 => if value_noise(self.lattice_seed, u * 0.7, v * 0.7) > 0.5 { 1.0 } else { 0.0 },
            13 => {
                let a = sq(u);
                let b = sq(v);
                if (a == 1.0) ^ (b == 1.0) { 0.75 } else { 0.25 }
            }
            14 => {
                let (fu, fv) = (u.rem_euclid(1.0), v.rem_euclid(1.0));
                ((fu - 0.5).powi(2) + fv.powi(2)).sqrt().min(1.0)
            }
            _ => 0.5 + 0.5 * (tau * u + 4.0 * value_noise(self.lattice_seed, u * 0.3, v * 2.0)).sin(),
        }
    }

    fn sample(&self, x: f64, y: f64, shade: f64) -> Rgb<u8> {
        let t = self.level(x, y).clamp(0.0, 1.0);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = (self.dark[c] * (1.0 - t) + self.light[c] * t) * shade;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    }

    fn render(&self, w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| self.sample(f64::from(x), f64::from(y), 1.0))
    }
}

fn shape_params(spec: &CorpusSpec, class: usize, instance: usize) -> ShapeParams {
    let mut rng = keyed_rng(spec.seed, &format!("shape/{class}/{instance}"));
    ShapeParams {
        family: class,
        scale: rng.random_range(0.62..0.82),
        rotation: rng.random_range(-0.25..0.25),
        aspect: rng.random_range(0.85..1.15),
    }
}

fn texture_params(spec: &CorpusSpec, class: usize, instance: usize) -> TextureParams {
    let mut class_rng = keyed_rng(spec.seed, &format!("texture/{class}"));
    let mut inst_rng = keyed_rng(spec.seed, &format!("texture/{class}/{instance}"));
    let base: [f64; 3] = [
        class_rng.random_range(0.0..255.0),
        class_rng.random_range(0.0..255.0),
        class_rng.random_range(0.0..255.0),
    ];
    let contrast = class_rng.random_range(0.35..0.9);
    let dark = base.map(|c| c * (1.0 - contrast));
    let light = base.map(|c| c + (255.0 - c) * contrast);
    let scale = 96.0 / f64::from(spec.canvas_size);
    TextureParams {
        family: class,
        freq: class_rng.random_range(0.06..0.16) * scale * inst_rng.random_range(0.9..1.1),
        angle: class_rng.random_range(0.0..std::f64::consts::PI) + inst_rng.random_range(-0.2..0.2),
        phase: inst_rng.random_range(0.0..1.0),
        dark: dark.map(|c| (c + inst_rng.random_range(-12.0..12.0)).clamp(0.0, 255.0)),
        light: light.map(|c| (c + inst_rng.random_range(-12.0..12.0)).clamp(0.0, 255.0)),
        lattice_seed: crate::seed::mix_seed(spec.seed, &format!("lattice/{class}/{instance}")),
    }
}

fn shape_mask(params: &ShapeParams, size: u32) -> Mask {
    let half = f64::from(size) / 2.0;
    Mask::from_fn(size, size, |x, y| {
        params.contains((f64::from(x) + 0.5 - half) / half, (f64::from(y) + 0.5 - half) / half)
    })
}

fn family_name(names: &[&str; 16], class: usize) -> String {
    if class < 16 {
        names[class].to_owned()
    } else {
        format!("{}{}", names[class % 16], class / 16)
    }
}

/// Builds the corpus described by `spec`.
pub fn synthetic_corpus(spec: &CorpusSpec) -> SourceCorpus {
    let n = spec.canvas_size;
    let mut corpus = SourceCorpus::default();
    let shapes: Vec<(ShapeKey, Mask)> = (0..spec.shape_classes)
        .flat_map(|c| (0..spec.shape_instances).map(move |i| (c, i)))
        .map(|(c, i)| {
            let key = ShapeKey {
                class: family_name(&SHAPE_FAMILIES, c),
                instance: (i + 1).to_string(),
            };
            (key, shape_mask(&shape_params(spec, c, i), n))
        })
        .collect();
    for (key, mask) in &shapes {
        let sil = GrayImage::from_fn(n, n, |x, y| Luma([if mask.is_foreground(x, y) { 0 } else { 255 }]));
        corpus.silhouettes.insert(key.clone(), sil);
    }
    for tc in 0..spec.texture_classes {
        for ti in 0..spec.texture_instances {
            let tex = texture_params(spec, tc, ti);
            for (skey, mask) in &shapes {
                let img = RgbImage::from_fn(n, n, |x, y| {
                    let shade = if mask.is_foreground(x, y) { 0.8 } else { 1.0 };
                    tex.sample(f64::from(x), f64::from(y), shade)
                });
                let key = StimulusKey::new(
                    &skey.class,
                    &skey.instance,
                    family_name(&TEXTURE_FAMILIES, tc),
                    (ti + 1).to_string(),
                );
                corpus.cue_conflict.insert(key, img);
            }
        }
    }
    for c in 0..spec.novel_shapes {
        let params = ShapeParams {
            family: c,
            scale: 0.8,
            rotation: 0.0,
            aspect: 1.0,
        };
        corpus
            .shape_masks
            .insert(family_name(&SHAPE_FAMILIES, c), shape_mask(&params, n));
    }
    for c in 0..spec.novel_textures {
        let tex = texture_params(spec, c, 0);
        corpus
            .textures
            .insert(format!("brodatz{c:02}"), tex.render(2 * n, 2 * n));
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let spec = CorpusSpec {
            shape_classes: 3,
            shape_instances: 2,
            texture_classes: 2,
            texture_instances: 2,
            canvas_size: 32,
            novel_shapes: 4,
            novel_textures: 5,
            seed: 1,
        };
        let c = synthetic_corpus(&spec);
        assert_eq!(c.cue_conflict.len(), 3 * 2 * 2 * 2);
        assert_eq!(c.silhouettes.len(), 6);
        assert_eq!(c.shape_masks.len(), 4);
        assert_eq!(c.textures.len(), 5);
        c.validate_cue_conflict().unwrap();
        for m in c.shape_masks.values() {
            assert!(m.foreground_count() > 0);
        }
    }

    #[test]
    fn every_shape_family_is_non_trivial() {
        for family in 0..16 {
            let p = ShapeParams { family, scale: 0.8, rotation: 0.0, aspect: 1.0 };
            let m = shape_mask(&p, 64);
            let frac = m.foreground_count() as f64 / (64.0 * 64.0);
            assert!(frac > 0.08 && frac < 0.8, "family {family}: {frac}");
        }
    }

    #[test]
    fn deterministic() {
        let spec = CorpusSpec { canvas_size: 24, novel_shapes: 2, novel_textures: 2, ..CorpusSpec::default() };
        let a = synthetic_corpus(&spec);
        let b = synthetic_corpus(&spec);
        assert_eq!(a.cue_conflict, b.cue_conflict);
        assert_eq!(a.textures, b.textures);
    }
}
