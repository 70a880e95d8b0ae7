//! Procedurally drawn cutouts and soil backgrounds.
//!
//! Stand-ins for photographed crops so the generator, the reference
//! segmenter and the end-to-end tests can run without an external asset
//! collection. Each species gets a distinct palette and silhouette.

use rand::Rng;

use super::{AssetLibrary, Background, SampleAsset};
use crate::raster::{Raster, Rgb};
use crate::rng::{rng_for, RngState};
use crate::species::{SpeciesId, SpeciesSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Blade,
    Trefoil,
    Rosette,
}

#[derive(Debug, Clone)]
pub struct ProceduralSpec {
    pub samples_per_species: usize,
    /// Longest side of a cutout, in pixels.
    pub sample_size: (usize, usize),
    pub n_backgrounds: usize,
    pub background_size: (usize, usize),
    pub seed: u64,
}

impl Default for ProceduralSpec {
    fn default() -> Self {
        Self {
            samples_per_species: 8,
            sample_size: (24, 48),
            n_backgrounds: 4,
            background_size: (256, 256),
            seed: 0,
        }
    }
}

fn style(name: &str) -> (Rgb, Shape) {
    match name {
        "grass" => ([80, 170, 40], Shape::Blade),
        "clover" | "white_clover" => ([40, 120, 115], Shape::Trefoil),
        "red_clover" => ([120, 110, 150], Shape::Trefoil),
        "weeds" => ([165, 50, 120], Shape::Rosette),
        other => {
            let h = other.bytes().fold(17u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
            ([(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8], Shape::Rosette)
        }
    }
}

const SOIL: Rgb = [105, 85, 65];

fn jitter(c: Rgb, amount: i32, rng: &mut RngState) -> Rgb {
    c.map(|v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Signed coverage in [0, 1] of a point for the given silhouette, with
/// roughly one pixel of antialiasing at the rim.
fn coverage(shape: Shape, u: f64, v: f64, half: f64, aspect: f64) -> f64 {
    // u, v in pixels relative to the centre.
    let d = match shape {
        Shape::Blade => {
            let a = half;
            let b = (half * aspect).max(1.5);
            ((u / a).powi(2) + (v / b).powi(2)).sqrt() - 1.0
        }
        Shape::Trefoil => {
            let r = half * 0.48;
            (0..3)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 3.0 - std::f64::consts::FRAC_PI_2;
                    let (cx, cy) = (t.cos() * half * 0.5, t.sin() * half * 0.5);
                    (((u - cx).powi(2) + (v - cy).powi(2)).sqrt() - r) / r
                })
                .fold(f64::INFINITY, f64::min)
        }
        Shape::Rosette => {
            let r = (u * u + v * v).sqrt();
            let t = v.atan2(u);
            let lobe = 0.7 + 0.3 * (5.0 * t).cos();
            r / (half * lobe) - 1.0
        }
    };
    (0.5 - d * half).clamp(0.0, 1.0)
}

fn draw_sample(id: String, species: SpeciesId, name: &str, size: usize, rng: &mut RngState) -> SampleAsset {
    let (base, shape) = style(name);
    let base = jitter(base, 12, rng);
    let aspect = match shape {
        Shape::Blade => rng.random_range(0.12..0.25),
        _ => 1.0,
    };
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = angle.sin_cos();
    let half = size as f64 / 2.0 - 1.0;
    let mut rgb = Raster::filled(size, size, [0u8; 3]);
    let mut alpha = Raster::filled(size, size, 0u8);
    let c = (size as f64 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let cov = coverage(shape, u, v, half, aspect);
            if cov > 0.0 {
                *alpha.get_mut(x, y) = (cov * 255.0).round() as u8;
                *rgb.get_mut(x, y) = jitter(base, 10, rng);
            }
        }
    }
    // Guarantee a solid core for degenerate tiny sizes.
    let (cx, cy) = (size / 2, size / 2);
    *alpha.get_mut(cx, cy) = 255;
    *rgb.get_mut(cx, cy) = base;
    SampleAsset::new(id, species, rgb, alpha).expect("procedural cutout is non-empty")
}

fn draw_background(id: String, (w, h): (usize, usize), rng: &mut RngState) -> Background {
    let tint = jitter(SOIL, 8, rng);
    let rgb = Raster::from_fn(w, h, |_, _| jitter(tint, 14, rng));
    Background { id, rgb }
}

/// Builds a library with `samples_per_species` cutouts for every species.
/// Deterministic in `spec.seed`.
pub fn demo_library(species: &SpeciesSet, spec: &ProceduralSpec) -> AssetLibrary {
    let (lo, hi) = spec.sample_size;
    let mut samples = Vec::new();
    for sid in species.species_ids() {
        let name = species.name(sid).unwrap_or_default();
        for k in 0..spec.samples_per_species {
            let mut rng = rng_for(spec.seed, (sid.0 as u64) << 32 | k as u64);
            let size = rng.random_range(lo.max(3)..=hi.max(lo.max(3)));
            samples.push(draw_sample(format!("{name}_{k:03}"), sid, name, size, &mut rng));
        }
    }
    let backgrounds = (0..spec.n_backgrounds.max(1))
        .map(|k| {
            let mut rng = rng_for(spec.seed ^ 0x50_11, k as u64);
            draw_background(format!("soil_{k:03}"), spec.background_size, &mut rng)
        })
        .collect();
    AssetLibrary::new(species.clone(), samples, backgrounds).expect("every species populated")
}
