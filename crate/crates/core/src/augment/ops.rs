//! Pixel-level transforms used by replay.
//!
//! RA op table (magnitude `m ∈ [0, 10]`, strength `s = m / 10`):
//!
//! | id | op         | effect                                   |
//! |----|------------|------------------------------------------|
//! | 0  | Identity   | none                                     |
//! | 1  | Brightness | `v · (1 + 0.9 s)`                         |
//! | 2  | Contrast   | `μ + (v − μ)(1 + 0.9 s)`, μ = image mean  |
//! | 3  | Posterize  | keep `8 − ⌊4 s⌋` high bits               |
//! | 4  | Solarize   | invert pixels `≥ 256 (1 − s)`            |
//! | 5  | Rotate     | `30° · s` about the centre                |
//! | 6  | TranslateX | `0.3 · W · s` pixels                      |
//! | 7  | TranslateY | `0.3 · H · s` pixels                      |
//! | 8  | ShearX     | shear factor `0.3 s`                      |
//! | 9  | ShearY     | shear factor `0.3 s`                      |
//!
//! Geometric ops sample nearest-neighbour and fill with zero. Magnitudes are
//! unsigned, so geometric ops always act in the positive direction.

use super::Rect;
use crate::dataset::{Dims, Image};
use crate::{Error, Result};

pub const RA_OP_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RaOp {
    Identity = 0,
    Brightness = 1,
    Contrast = 2,
    Posterize = 3,
    Solarize = 4,
    Rotate = 5,
    TranslateX = 6,
    TranslateY = 7,
    ShearX = 8,
    ShearY = 9,
}

impl RaOp {
    pub fn from_id(id: i32) -> Option<Self> {
        use RaOp::*;
        Some(match id {
            0 => Identity,
            1 => Brightness,
            2 => Contrast,
            3 => Posterize,
            4 => Solarize,
            5 => Rotate,
            6 => TranslateX,
            7 => TranslateY,
            8 => ShearX,
            9 => ShearY,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use RaOp::*;
        match self {
            Identity => "identity",
            Brightness => "brightness",
            Contrast => "contrast",
            Posterize => "posterize",
            Solarize => "solarize",
            Rotate => "rotate",
            TranslateX => "translate_x",
            TranslateY => "translate_y",
            ShearX => "shear_x",
            ShearY => "shear_y",
        }
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resize of the `rect` region of `src` to `out` (height × width).
/// The channel count is taken from `src`. Regions thinner than one pixel are
/// widened to one pixel and kept inside the image.
pub fn crop_resize(src: &Image, rect: Rect, out_h: usize, out_w: usize) -> Image {
    let Dims { height: sh, width: sw, channels: ch } = src.dims();
    let span = |start: f32, len: f32, size: usize| -> (f32, f32) {
        let size_f = size as f32;
        let len_px = (len * size_f).max(1.0).min(size_f);
        let start_px = (start * size_f).clamp(0.0, size_f - len_px);
        (start_px, len_px)
    };
    let (x0, cw) = span(rect.x, rect.w, sw);
    let (y0, chh) = span(rect.y, rect.h, sh);
    let sx = cw / out_w as f32;
    let sy = chh / out_h as f32;

    let taps = |start: f32, scale: f32, i: usize, size: usize| -> (usize, usize, f32) {
        let p = (start + (i as f32 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f32);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(size - 1);
        (lo, hi, p - lo as f32)
    };
    let xs: Vec<_> = (0..out_w).map(|i| taps(x0, sx, i, sw)).collect();

    let data = src.data();
    let mut out = Vec::with_capacity(out_h * out_w * ch);
    for oy in 0..out_h {
        let (y_lo, y_hi, fy) = taps(y0, sy, oy, sh);
        for &(x_lo, x_hi, fx) in &xs {
            for c in 0..ch {
                let p = |y: usize, x: usize| data[(y * sw + x) * ch + c] as f32;
                let top = p(y_lo, x_lo) * (1.0 - fx) + p(y_lo, x_hi) * fx;
                let bot = p(y_hi, x_lo) * (1.0 - fx) + p(y_hi, x_hi) * fx;
                out.push(to_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Image::new(Dims::new(out_h, out_w, ch), out).expect("output dims match")
}

pub fn flip_horizontal(img: &Image) -> Image {
    let Dims { height, width, channels } = img.dims();
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..height {
        for x in (0..width).rev() {
            let o = (y * width + x) * channels;
            out.extend_from_slice(&src[o..o + channels]);
        }
    }
    Image::new(img.dims(), out).expect("same dims")
}

/// Inverse-mapped affine warp about the image centre. For each output pixel
/// centre `d` (relative to the centre), the source is `M·d + t`.
fn affine_nearest(img: &Image, m: [f32; 4], t: [f32; 2]) -> Image {
    let Dims { height, width, channels } = img.dims();
    let cx = width as f32 / 2.0;
    let cy = height as f32 / 2.0;
    let src = img.data();
    let mut out = vec![0u8; src.len()];
    for y in 0..height {
        let dy = y as f32 + 0.5 - cy;
        for x in 0..width {
            let dx = x as f32 + 0.5 - cx;
            let fx = (m[0] * dx + m[1] * dy + t[0] + cx).floor();
            let fy = (m[2] * dx + m[3] * dy + t[1] + cy).floor();
            if fx < 0.0 || fy < 0.0 || fx >= width as f32 || fy >= height as f32 {
                continue;
            }
            let s = (fy as usize * width + fx as usize) * channels;
            let o = (y * width + x) * channels;
            out[o..o + channels].copy_from_slice(&src[s..s + channels]);
        }
    }
    Image::new(img.dims(), out).expect("same dims")
}

fn map_pixels(img: &Image, f: impl Fn(u8) -> u8) -> Image {
    Image::new(img.dims(), img.data().iter().map(|&v| f(v)).collect()).expect("same dims")
}

/// Applies RA op `op_id` at `magnitude`.
pub fn apply_ra_op(op_id: i32, magnitude: f32, img: &Image) -> Result<Image> {
    let op = RaOp::from_id(op_id).ok_or_else(|| Error::invalid(format!("unknown RA op id {op_id}")))?;
    if !(0.0..=10.0).contains(&magnitude) {
        return Err(Error::invalid(format!("RA magnitude {magnitude} outside [0, 10]")));
    }
    let s = magnitude / 10.0;
    let (h, w) = (img.height() as f32, img.width() as f32);
    Ok(match op {
        RaOp::Identity => img.clone(),
        RaOp::Brightness => {
            let f = 1.0 + 0.9 * s;
            map_pixels(img, |v| to_u8(v as f32 * f))
        }
        RaOp::Contrast => {
            let f = 1.0 + 0.9 * s;
            let data = img.data();
            let mean = (data.iter().map(|&v| v as u64).sum::<u64>() as f64 / data.len() as f64) as f32;
            map_pixels(img, |v| to_u8(mean + (v as f32 - mean) * f))
        }
        RaOp::Posterize => {
            let bits = 8 - (4.0 * s).floor() as u32;
            let mask = (0xFFu32 << (8 - bits)) as u8;
            map_pixels(img, |v| v & mask)
        }
        RaOp::Solarize => {
            let threshold = 256.0 * (1.0 - s);
            map_pixels(img, |v| if v as f32 >= threshold { 255 - v } else { v })
        }
        RaOp::Rotate => {
            let theta = (30.0 * s).to_radians();
            let (sin, cos) = theta.sin_cos();
            affine_nearest(img, [cos, sin, -sin, cos], [0.0, 0.0])
        }
        RaOp::TranslateX => affine_nearest(img, [1.0, 0.0, 0.0, 1.0], [-0.3 * w * s, 0.0]),
        RaOp::TranslateY => affine_nearest(img, [1.0, 0.0, 0.0, 1.0], [0.0, -0.3 * h * s]),
        RaOp::ShearX => affine_nearest(img, [1.0, 0.3 * s, 0.0, 1.0], [0.0, 0.0]),
        RaOp::ShearY => affine_nearest(img, [1.0, 0.0, 0.3 * s, 1.0], [0.0, 0.0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_image(dims: Dims, seed: u64) -> Image {
        let mut rng = SeededRng::new(seed, 3);
        Image::new(dims, (0..dims.len()).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn identity_crop_is_identity() {
        for dims in [Dims::new(16, 16, 1), Dims::new(7, 5, 3)] {
            let img = random_image(dims, 1);
            assert_eq!(crop_resize(&img, Rect::FULL, dims.height, dims.width), img);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = random_image(Dims::new(6, 9, 3), 2);
        assert_ne!(flip_horizontal(&img), img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn zero_magnitude_geometric_ops_are_identity() {
        let img = random_image(Dims::new(16, 16, 1), 3);
        for op in [5, 6, 7, 8, 9] {
            assert_eq!(apply_ra_op(op, 0.0, &img).unwrap(), img, "op {op}");
        }
        for m in [0.0, 3.3, 10.0] {
            assert_eq!(apply_ra_op(0, m, &img).unwrap(), img);
        }
    }

    #[test]
    fn solarize_full_inverts() {
        let img = random_image(Dims::new(8, 8, 3), 4);
        let out = apply_ra_op(RaOp::Solarize as i32, 10.0, &img).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert_eq!(*b, 255 - *a);
        }
    }

    #[test]
    fn translate_shifts_with_zero_fill() {
        let img = random_image(Dims::new(10, 10, 1), 5);
        // 0.3 × 10 × 1.0 = 3 pixels.
        let out = apply_ra_op(RaOp::TranslateX as i32, 10.0, &img).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let expected = if x < 3 { 0 } else { img.get(y, x - 3, 0) };
                assert_eq!(out.get(y, x, 0), expected);
            }
        }
    }

    #[test]
    fn posterize_masks_low_bits() {
        let img = Image::new(Dims::new(1, 2, 1), vec![0xFF, 0x37]).unwrap();
        let out = apply_ra_op(RaOp::Posterize as i32, 10.0, &img).unwrap();
        assert_eq!(out.data(), &[0xF0, 0x30]);
    }

    #[test]
    fn unknown_op_is_an_error() {
        let img = random_image(Dims::new(4, 4, 1), 6);
        assert!(apply_ra_op(10, 1.0, &img).is_err());
        assert!(apply_ra_op(-1, 1.0, &img).is_err());
        assert!(apply_ra_op(1, 11.0, &img).is_err());
    }

    #[test]
    fn degenerate_crop_clamps_to_one_pixel() {
        let mut img = Image::filled(Dims::new(8, 8, 1), 10);
        img.set(7, 7, 0, 200);
        let out = crop_resize(&img, Rect::new(1.0, 1.0, 0.0, 0.0), 4, 4);
        assert_eq!(out.dims(), Dims::new(4, 4, 1));
        // Sampling stays on the bottom-right pixel and its upper-left neighbours.
        assert!(out.data().iter().all(|&v| (10..=200).contains(&v)));
        assert_eq!(out.get(3, 3, 0), 200);
    }
}
