//! Geometric and photometric cutout transforms, applied in the fixed order
//! rotation, blur, brightness, resize.
//!
//! Resampling works on premultiplied RGBA in f32 so that transparent pixels
//! never bleed colour into the cutout rim. Bilinear interpolation throughout.

use rand::Rng;

use super::{GenConfig, SynthError};
use crate::assets::SampleAsset;
use crate::raster::{Raster, RgbImage};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub blur_radius: f64,
    pub brightness: f64,
    pub scale: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        rotation_deg: 0.0,
        blur_radius: 0.0,
        brightness: 1.0,
        scale: 1.0,
    };

    /// Uniform draws from the configured ranges, in transform order.
    pub fn draw(cfg: &GenConfig, rng: &mut RngState) -> Self {
        Self {
            rotation_deg: uniform(cfg.rotation_range, rng),
            blur_radius: uniform(cfg.blur_radius_range, rng),
            brightness: uniform(cfg.brightness_range, rng),
            scale: uniform(cfg.resize_range, rng),
        }
    }
}

fn uniform([lo, hi]: [f64; 2], rng: &mut RngState) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Premultiplied RGBA, all channels on the 0..=255 scale.
type Rgba = Raster<[f32; 4]>;

fn premultiply(s: &SampleAsset) -> Rgba {
    Raster::from_fn(s.width(), s.height(), |x, y| {
        let [r, g, b] = *s.rgb.get(x, y);
        let a = *s.alpha.get(x, y) as f32;
        let k = a / 255.0;
        [r as f32 * k, g as f32 * k, b as f32 * k, a]
    })
}

fn unpremultiply(img: &Rgba) -> (RgbImage, Raster<u8>) {
    let quant = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    let alpha = img.map(|p| quant(p[3]));
    let rgb = img.map(|p| {
        if p[3] <= 0.0 {
            [0; 3]
        } else {
            let k = 255.0 / p[3];
            [quant(p[0] * k), quant(p[1] * k), quant(p[2] * k)]
        }
    });
    (rgb, alpha)
}

/// Bilinear sample with transparent (zero) outside the raster.
fn sample_zero(img: &Rgba, fx: f64, fy: f64) -> [f32; 4] {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w || y >= h {
            [0.0; 4]
        } else {
            *img.get(x as usize, y as usize)
        }
    };
    let (p00, p10, p01, p11) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
    std::array::from_fn(|c| {
        let top = p00[c] + (p10[c] - p00[c]) * tx;
        let bot = p01[c] + (p11[c] - p01[c]) * tx;
        top + (bot - top) * ty
    })
}

/// Bilinear sample clamped to the edge.
fn sample_clamp(img: &Rgba, fx: f64, fy: f64) -> [f32; 4] {
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let fx = fx.clamp(0.0, max_x);
    let fy = fy.clamp(0.0, max_y);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (tx, ty) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    std::array::from_fn(|c| {
        let top = p00[c] + (p10[c] - p00[c]) * tx;
        let bot = p01[c] + (p11[c] - p01[c]) * tx;
        top + (bot - top) * ty
    })
}

/// Rotates counter-clockwise about the centre; the output grows to hold the
/// whole rotated rectangle.
fn rotate(img: &Rgba, degrees: f64) -> Rgba {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (w, h) = (img.width() as f64, img.height() as f64);
    // Shave a hair off so exact multiples of 90 degrees keep their size.
    let out_w = ((w * cos.abs() + h * sin.abs()) - 1e-9).ceil().max(1.0) as usize;
    let out_h = ((w * sin.abs() + h * cos.abs()) - 1e-9).ceil().max(1.0) as usize;
    let (icx, icy) = (w / 2.0, h / 2.0);
    let (ocx, ocy) = (out_w as f64 / 2.0, out_h as f64 / 2.0);
    Raster::from_fn(out_w, out_h, |x, y| {
        let dx = x as f64 + 0.5 - ocx;
        let dy = y as f64 + 0.5 - ocy;
        // Inverse rotation (image y axis points down).
        let sx = cos * dx - sin * dy + icx - 0.5;
        let sy = sin * dx + cos * dy + icy - 0.5;
        sample_zero(img, sx, sy)
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let half = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with standard deviation `radius`; outside pixels
/// count as transparent.
fn blur(img: &Rgba, radius: f64) -> Rgba {
    let kernel = gaussian_kernel(radius);
    let half = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &Rgba, horizontal: bool| {
        Raster::from_fn(src.width(), src.height(), |x, y| {
            let mut acc = [0f32; 4];
            for (k, &wk) in kernel.iter().enumerate() {
                let off = k as i64 - half;
                let (sx, sy) = if horizontal {
                    (x as i64 + off, y as i64)
                } else {
                    (x as i64, y as i64 + off)
                };
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let p = src.get(sx as usize, sy as usize);
                for c in 0..4 {
                    acc[c] += wk * p[c];
                }
            }
            acc
        })
    };
    let tmp = pass(img, true);
    pass(&tmp, false)
}

fn resize(img: &Rgba, out_w: usize, out_h: usize) -> Rgba {
    let fx = img.width() as f64 / out_w as f64;
    let fy = img.height() as f64 / out_h as f64;
    Raster::from_fn(out_w, out_h, |x, y| {
        sample_clamp(img, (x as f64 + 0.5) * fx - 0.5, (y as f64 + 0.5) * fy - 0.5)
    })
}

/// Output size of a resize by `scale`, or `None` when a side rounds to zero.
pub fn scaled_dims(w: usize, h: usize, scale: f64) -> Option<(usize, usize)> {
    let sw = (w as f64 * scale).round();
    let sh = (h as f64 * scale).round();
    (sw >= 1.0 && sh >= 1.0).then_some((sw as usize, sh as usize))
}

/// Bilinear resize of an opaque RGB raster, used to fit backgrounds to the canvas.
pub fn resize_rgb(img: &RgbImage, out_w: usize, out_h: usize) -> RgbImage {
    if img.dims() == (out_w, out_h) {
        return img.clone();
    }
    let rgba = img.map(|&[r, g, b]| [r as f32, g as f32, b as f32, 255.0]);
    resize(&rgba, out_w, out_h).map(|p| [0, 1, 2].map(|c| p[c].round().clamp(0.0, 255.0) as u8))
}

/// Applies `params` to a cutout. Identity parameters return the input
/// unchanged, bit for bit.
pub fn apply_transform(s: &SampleAsset, params: &TransformParams) -> Result<SampleAsset, SynthError> {
    let target = if params.scale == 1.0 {
        None
    } else {
        Some(params.scale)
    };
    let geometric = params.rotation_deg != 0.0 || params.blur_radius > 0.0 || target.is_some();

    if !geometric {
        let mut out = s.clone();
        if params.brightness != 1.0 {
            scale_brightness(&mut out.rgb, params.brightness);
        }
        return Ok(out);
    }

    let mut img = premultiply(s);
    if params.rotation_deg != 0.0 {
        img = rotate(&img, params.rotation_deg);
    }
    if params.blur_radius > 0.0 {
        img = blur(&img, params.blur_radius);
    }
    if params.brightness != 1.0 {
        let b = params.brightness as f32;
        for p in img.as_mut_slice() {
            let a = p[3];
            for c in &mut p[..3] {
                *c = (*c * b).min(a);
            }
        }
    }
    if let Some(scale) = target {
        let (w, h) = scaled_dims(img.width(), img.height(), scale).ok_or(SynthError::EmptyResize {
            id: s.id.clone(),
            scale,
        })?;
        img = resize(&img, w, h);
    }
    let (rgb, alpha) = unpremultiply(&img);
    Ok(SampleAsset {
        id: s.id.clone(),
        species: s.species,
        rgb,
        alpha,
    })
}

fn scale_brightness(rgb: &mut RgbImage, factor: f64) {
    for px in rgb.as_mut_slice() {
        for c in px.iter_mut() {
            *c = (*c as f64 * factor).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Draws parameters from `cfg` and applies them.
pub fn transform_sample(
    s: &SampleAsset,
    cfg: &GenConfig,
    rng: &mut RngState,
) -> Result<SampleAsset, SynthError> {
    apply_transform(s, &TransformParams::draw(cfg, rng))
}
