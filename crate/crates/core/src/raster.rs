//! Raster helpers shared by stimulus synthesis and the synthetic embedders.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{invalid, Error, Result};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Binary foreground/background raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    fg: Vec<bool>,
}

/// Inclusive-exclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Mask {
    pub fn new(width: u32, height: u32, foreground: bool) -> Self {
        Mask {
            width,
            height,
            fg: vec![foreground; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut fg = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                fg.push(f(x, y));
            }
        }
        Mask { width, height, fg }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.fg[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, foreground: bool) {
        let w = self.width as usize;
        self.fg[(y as usize) * w + x as usize] = foreground;
    }

    pub fn foreground_count(&self) -> usize {
        self.fg.iter().filter(|&&b| b).count()
    }

    /// Row-major foreground flags.
    pub fn as_slice(&self) -> &[bool] {
        &self.fg
    }

    /// Tight bounding box of the foreground, `None` when the mask is empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_foreground(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| BoundingBox {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }

    /// Nearest-neighbour resample with pixel-centre alignment.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Mask {
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        Mask::from_fn(width, height, |x, y| {
            let src_x = nearest_index(x, sx, self.width);
            let src_y = nearest_index(y, sy, self.height);
            self.is_foreground(src_x, src_y)
        })
    }

    /// Foreground as black, background as white.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.is_foreground(x, y) { 0 } else { 255 }])
        })
    }
}

#[inline]
fn nearest_index(dst: u32, scale: f64, src_len: u32) -> u32 {
    let s = ((f64::from(dst) + 0.5) * scale).floor() as u32;
    s.min(src_len - 1)
}

/// Bilinear resample of an RGB raster using pixel-centre alignment.
///
/// Resampling to the source size is the identity.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let sx = f64::from(w) / f64::from(width);
    let sy = f64::from(h) / f64::from(height);
    let xs: Vec<(u32, u32, f64)> = (0..width).map(|x| bilinear_taps(x, sx, w)).collect();
    let ys: Vec<(u32, u32, f64)> = (0..height).map(|y| bilinear_taps(y, sy, h)).collect();
    RgbImage::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x as usize];
        let (y0, y1, fy) = ys[y as usize];
        let p00 = img.get_pixel(x0, y0).0;
        let p10 = img.get_pixel(x1, y0).0;
        let p01 = img.get_pixel(x0, y1).0;
        let p11 = img.get_pixel(x1, y1).0;
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

#[inline]
fn bilinear_taps(dst: u32, scale: f64, src_len: u32) -> (u32, u32, f64) {
    let max = f64::from(src_len - 1);
    let s = ((f64::from(dst) + 0.5) * scale - 0.5).clamp(0.0, max);
    let i0 = s.floor();
    let frac = s - i0;
    let i0 = i0 as u32;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, frac)
}

/// ITU-R 601 luma, rounded to an integer level.
#[inline]
pub fn luma(p: Rgb<u8>) -> u8 {
    let [r, g, b] = p.0;
    let l = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    l.round().clamp(0.0, 255.0) as u8
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let img = img.to_rgb8();
    if img.width() == 0 || img.height() == 0 {
        return Err(invalid(format!("empty raster {}", path.display())));
    }
    Ok(img)
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let img = img.to_luma8();
    if img.width() == 0 || img.height() == 0 {
        return Err(invalid(format!("empty raster {}", path.display())));
    }
    Ok(img)
}

/// Reads a mask written by [`Mask::to_image`].
pub(crate) fn binarize_or_err(img: &GrayImage) -> Result<Mask> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(invalid("empty mask raster"));
    }
    Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y).0[0] < 128))
}

pub fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_identity_at_unit_scale() {
        let img = RgbImage::from_fn(7, 5, |x, y| Rgb([(x * 30) as u8, (y * 50) as u8, 9]));
        assert_eq!(resize_bilinear(&img, 7, 5), img);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let img = RgbImage::from_pixel(10, 10, Rgb([12, 200, 77]));
        let out = resize_bilinear(&img, 3, 4);
        assert!(out.pixels().all(|p| *p == Rgb([12, 200, 77])));
    }

    #[test]
    fn nearest_identity_and_halving() {
        let m = Mask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        assert_eq!(m.resize_nearest(4, 4), m);
        let half = m.resize_nearest(2, 2);
        // centres of 2x2 cells land on (1,1), (3,1), (1,3), (3,3)
        assert!(half.is_foreground(0, 0));
        assert!(half.is_foreground(1, 1));
    }

    #[test]
    fn bounding_box_of_block() {
        let m = Mask::from_fn(10, 8, |x, y| (2..5).contains(&x) && (3..7).contains(&y));
        assert_eq!(
            m.bounding_box(),
            Some(BoundingBox { x: 2, y: 3, width: 3, height: 4 })
        );
        assert_eq!(Mask::new(3, 3, false).bounding_box(), None);
    }
}
