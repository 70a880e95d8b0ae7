//! Synthetic canopy scenes: cutouts pasted on soil backgrounds with a class
//! label map and a per-pixel paste-count ("herbage height") raster.

pub mod dirichlet;
pub mod height;
pub mod transform;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetError, AssetLibrary, SampleAsset, ALPHA_THRESHOLD};
use crate::raster::{Raster, RgbImage};
use crate::rng::rng_for;
use crate::species::SpeciesId;

pub use dirichlet::{draw_species_probs, sample_categorical};
pub use height::{fit_height_normalizer, normalize_height, HeightHistogram, HeightNormalizer};
pub use transform::{apply_transform, transform_sample, TransformParams};

/// Redraws allowed when a resize shrinks a cutout to nothing.
const MAX_TRANSFORM_REDRAWS: usize = 64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid Dirichlet parameters: {0}")]
    BadAlpha(String),
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("sample {id}: resize by {scale} leaves an empty raster")]
    EmptyResize { id: String, scale: f64 },
    #[error("no height values to fit a normalizer on")]
    NoHeights,
    #[error(transparent)]
    Asset(#[from] AssetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Width, height.
    pub canvas_size: [usize; 2],
    pub n_images: usize,
    /// Inclusive.
    pub paste_count_range: [u32; 2],
    /// One concentration per paste-able species, in species order.
    pub dirichlet_alpha: Vec<f64>,
    pub rotation_range: [f64; 2],
    pub blur_radius_range: [f64; 2],
    pub brightness_range: [f64; 2],
    pub resize_range: [f64; 2],
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            canvas_size: [2000, 2000],
            n_images: 1000,
            paste_count_range: [400, 800],
            dirichlet_alpha: vec![9.0, 2.0, 1.0],
            rotation_range: [-180.0, 180.0],
            blur_radius_range: [0.0, 5.0],
            brightness_range: [0.6, 1.0],
            resize_range: [0.5, 1.5],
            master_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, n_species: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        let [w, h] = self.canvas_size;
        if w == 0 || h == 0 {
            return bad(format!("canvas {w}x{h} is empty"));
        }
        let [pmin, pmax] = self.paste_count_range;
        if pmin < 1 || pmin > pmax {
            return bad(format!("paste_count_range [{pmin}, {pmax}] needs 1 <= min <= max"));
        }
        if self.dirichlet_alpha.len() != n_species {
            return bad(format!(
                "dirichlet_alpha has {} entries for {n_species} species",
                self.dirichlet_alpha.len()
            ));
        }
        if self.dirichlet_alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return bad("dirichlet_alpha entries must be > 0".into());
        }
        let [rlo, rhi] = self.rotation_range;
        if !(rlo.is_finite() && rhi.is_finite() && rlo <= rhi) {
            return bad(format!("rotation_range [{rlo}, {rhi}]"));
        }
        for (name, [lo, hi]) in [
            ("blur_radius_range", self.blur_radius_range),
            ("brightness_range", self.brightness_range),
            ("resize_range", self.resize_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] needs 0 <= min <= max"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rgb: RgbImage,
    pub labels: Raster<u8>,
    /// Number of cutouts pasted over each pixel.
    pub raw_height: Raster<u32>,
}

impl SyntheticScene {
    pub fn from_background(rgb: RgbImage) -> Self {
        let (w, h) = rgb.dims();
        Self {
            rgb,
            labels: Raster::filled(w, h, 0),
            raw_height: Raster::filled(w, h, 0),
        }
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Pixel count per class, soil included.
    pub fn class_counts(&self, n_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_classes.max(1)];
        for &l in self.labels.as_slice() {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// Pastes `s` centred at `center` (x, y); parts off the canvas are clipped.
///
/// Pixels with alpha above the threshold take the sample's label and gain one
/// unit of height; their colour is replaced at full alpha and blended at
/// partial alpha. Pixels at or below the threshold are left untouched.
pub fn paste(scene: &mut SyntheticScene, s: &SampleAsset, center: (i64, i64)) {
    let (sw, sh) = (s.width() as i64, s.height() as i64);
    let ox = center.0 - sw / 2;
    let oy = center.1 - sh / 2;
    let (cw, ch) = (scene.width() as i64, scene.height() as i64);
    let x0 = ox.max(0);
    let y0 = oy.max(0);
    let x1 = (ox + sw).min(cw);
    let y1 = (oy + sh).min(ch);
    let label = s.species.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let (sx, sy) = ((x - ox) as usize, (y - oy) as usize);
            let a = *s.alpha.get(sx, sy);
            if a <= ALPHA_THRESHOLD {
                continue;
            }
            let (px, py) = (x as usize, y as usize);
            let src = *s.rgb.get(sx, sy);
            let dst = scene.rgb.get_mut(px, py);
            *dst = if a == 255 {
                src
            } else {
                let a = a as u32;
                std::array::from_fn(|c| ((src[c] as u32 * a + dst[c] as u32 * (255 - a) + 127) / 255) as u8)
            };
            *scene.labels.get_mut(px, py) = label;
            *scene.raw_height.get_mut(px, py) += 1;
        }
    }
}

/// Builds scene `image_index`. The result depends only on the library, the
/// config and the index.
pub fn generate_scene(
    lib: &AssetLibrary,
    cfg: &GenConfig,
    image_index: u64,
) -> Result<SyntheticScene, SynthError> {
    cfg.validate(lib.species().n_species())?;
    let mut rng = rng_for(cfg.master_seed, image_index);
    let [w, h] = cfg.canvas_size;

    let bg = lib.pick_background(&mut rng);
    let mut scene = SyntheticScene::from_background(transform::resize_rgb(&bg.rgb, w, h));

    let [pmin, pmax] = cfg.paste_count_range;
    let n_pastes = rng.random_range(pmin..=pmax);
    let probs = draw_species_probs(&cfg.dirichlet_alpha, &mut rng)?;

    for _ in 0..n_pastes {
        let species = SpeciesId(sample_categorical(&probs, &mut rng) as u8 + 1);
        let sample = lib.pick_sample(species, &mut rng)?;
        let mut transformed = None;
        for _ in 0..MAX_TRANSFORM_REDRAWS {
            match transform_sample(sample, cfg, &mut rng) {
                Ok(t) => {
                    transformed = Some(t);
                    break;
                }
                Err(SynthError::EmptyResize { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let transformed = transformed.ok_or_else(|| SynthError::EmptyResize {
            id: sample.id.clone(),
            scale: cfg.resize_range[1],
        })?;
        let cx = rng.random_range(0..w as i64);
        let cy = rng.random_range(0..h as i64);
        paste(&mut scene, &transformed, (cx, cy));
    }
    Ok(scene)
}

/// Generates `indices` on `jobs` worker threads (0 = rayon default) and
/// hands each scene to `sink`. Sink results come back in index order.
pub fn generate_parallel<T, F>(
    lib: &AssetLibrary,
    cfg: &GenConfig,
    indices: std::ops::Range<u64>,
    jobs: usize,
    sink: F,
) -> Result<Vec<T>, SynthError>
where
    T: Send,
    F: Fn(u64, SyntheticScene) -> Result<T, SynthError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SynthError::BadConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        indices
            .into_par_iter()
            .map(|i| generate_scene(lib, cfg, i).and_then(|s| sink(i, s)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Background;
    use crate::species::SpeciesSet;

    fn opaque(species: u8, w: usize, h: usize) -> SampleAsset {
        SampleAsset::new(
            format!("s{species}"),
            SpeciesId(species),
            Raster::filled(w, h, [species * 50, 200, 0]),
            Raster::filled(w, h, 255),
        )
        .unwrap()
    }

    fn blank(w: usize, h: usize) -> SyntheticScene {
        SyntheticScene::from_background(Raster::filled(w, h, [100, 80, 60]))
    }

    #[test]
    fn overlapping_pastes_stack_height() {
        let mut scene = blank(10, 10);
        paste(&mut scene, &opaque(2, 3, 3), (5, 5));
        paste(&mut scene, &opaque(1, 3, 3), (5, 5));
        paste(&mut scene, &opaque(2, 3, 3), (5, 5));
        assert_eq!(*scene.raw_height.get(5, 5), 3);
        assert_eq!(*scene.labels.get(5, 5), 2);
        assert_eq!(*scene.raw_height.get(0, 0), 0);
    }

    #[test]
    fn last_paste_wins_the_label() {
        let mut scene = blank(10, 10);
        paste(&mut scene, &opaque(1, 5, 5), (5, 5));
        paste(&mut scene, &opaque(2, 1, 1), (5, 5));
        assert_eq!(*scene.labels.get(5, 5), 2);
        assert_eq!(*scene.labels.get(4, 4), 1);
        assert_eq!(*scene.rgb.get(5, 5), [100, 200, 0]);
    }

    #[test]
    fn off_canvas_paste_changes_nothing() {
        let mut scene = blank(8, 8);
        let before = scene.clone();
        paste(&mut scene, &opaque(1, 4, 4), (-10, 3));
        paste(&mut scene, &opaque(1, 4, 4), (3, 50));
        assert_eq!(scene, before);
    }

    #[test]
    fn paste_clips_at_the_border() {
        let mut scene = blank(8, 8);
        paste(&mut scene, &opaque(1, 4, 4), (0, 0));
        let touched = scene.raw_height.as_slice().iter().filter(|&&h| h > 0).count();
        assert_eq!(touched, 4);
    }

    #[test]
    fn soft_alpha_blends_colour_but_not_labels_below_threshold() {
        let mut alpha = Raster::filled(3, 1, 255u8);
        *alpha.get_mut(0, 0) = 100;
        *alpha.get_mut(2, 0) = 200;
        let s = SampleAsset::new("e", SpeciesId(1), Raster::filled(3, 1, [255, 255, 255]), alpha).unwrap();
        let mut scene = SyntheticScene::from_background(Raster::filled(3, 1, [0, 0, 0]));
        paste(&mut scene, &s, (1, 0));
        assert_eq!(scene.labels.as_slice(), &[0, 1, 1]);
        assert_eq!(scene.raw_height.as_slice(), &[0, 1, 1]);
        assert_eq!(*scene.rgb.get(0, 0), [0, 0, 0]);
        assert_eq!(*scene.rgb.get(1, 0), [255, 255, 255]);
        assert_eq!(*scene.rgb.get(2, 0), [200, 200, 200]);
    }

    fn small_cfg() -> GenConfig {
        GenConfig {
            canvas_size: [48, 40],
            n_images: 4,
            paste_count_range: [5, 15],
            master_seed: 42,
            ..Default::default()
        }
    }

    fn irish_lib() -> AssetLibrary {
        crate::assets::procedural::demo_library(
            &SpeciesSet::irish(),
            &crate::assets::procedural::ProceduralSpec {
                samples_per_species: 2,
                sample_size: (6, 12),
                background_size: (32, 32),
                ..Default::default()
            },
        )
    }

    #[test]
    fn scenes_are_reproducible_per_index() {
        let lib = irish_lib();
        let cfg = small_cfg();
        let a = generate_scene(&lib, &cfg, 3).unwrap();
        let b = generate_scene(&lib, &cfg, 3).unwrap();
        let c = generate_scene(&lib, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.rgb.dims(), (48, 40));
        for (&l, &h) in a.labels.as_slice().iter().zip(a.raw_height.as_slice()) {
            assert!(l < 4);
            if h == 0 {
                assert_eq!(l, 0);
            }
        }
    }

    #[test]
    fn forced_single_paste_only_marks_one_species() {
        let species = SpeciesSet::new(["soil", "grass"]).unwrap();
        let lib = AssetLibrary::new(
            species,
            vec![opaque(1, 5, 5)],
            vec![Background {
                id: "bg".into(),
                rgb: Raster::filled(20, 20, [1, 2, 3]),
            }],
        )
        .unwrap();
        let cfg = GenConfig {
            canvas_size: [20, 20],
            paste_count_range: [1, 1],
            dirichlet_alpha: vec![1.0],
            blur_radius_range: [0.0, 0.0],
            ..Default::default()
        };
        let scene = generate_scene(&lib, &cfg, 0).unwrap();
        assert!(scene.labels.as_slice().iter().all(|&l| l <= 1));
        assert!(scene.raw_height.as_slice().iter().all(|&h| h <= 1));
        assert!(scene.labels.as_slice().contains(&1));
    }

    #[test]
    fn parallel_generation_matches_serial() {
        let lib = irish_lib();
        let cfg = small_cfg();
        let par = generate_parallel(&lib, &cfg, 0..6, 3, |_, s| Ok(s)).unwrap();
        for (i, s) in par.iter().enumerate() {
            assert_eq!(s, &generate_scene(&lib, &cfg, i as u64).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GenConfig::default();
        assert!(cfg.validate(3).is_ok());
        assert!(cfg.validate(4).is_err());
        cfg.paste_count_range = [0, 3];
        assert!(cfg.validate(3).is_err());
        cfg = GenConfig {
            brightness_range: [1.0, 0.5],
            ..Default::default()
        };
        assert!(cfg.validate(3).is_err());
        cfg = GenConfig {
            dirichlet_alpha: vec![1.0, 0.0, 1.0],
            ..Default::default()
        };
        assert!(cfg.validate(3).is_err());
    }
}
