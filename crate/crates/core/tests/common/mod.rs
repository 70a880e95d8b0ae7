//! Planted scenes: synthetic canopies whose labels are a known linear map of
//! the true class coverage and mean height, plus Gaussian noise.

#![allow(dead_code)]

use herbage::assets::procedural::{demo_library, ProceduralSpec};
use herbage::assets::AssetLibrary;
use herbage::dataio::{read_rgb, write_jpeg};
use herbage::raster::Raster;
use herbage::refseg::{fit_prototypes, DEFAULT_TEMPERATURE};
use herbage::ridge::TargetKind;
use herbage::rng::rng_for;
use herbage::segfeat::{extract_features, FeatureMode};
use herbage::synth::{fit_height_normalizer, generate_parallel, normalize_height, GenConfig};
use herbage::{RgbImage, SpeciesSet};
use rand_distr::{Distribution, Normal};

pub const SIDE: usize = 256;
pub const N_SCENES: usize = 120;
pub const N_TRUSTED: usize = 52;
pub const NOISE_FRACTION: f64 = 0.02;

pub struct PlantedScene {
    /// JPEG-decoded, as the segmenter sees it.
    pub rgb: RgbImage,
    pub labels: Raster<u8>,
    pub height: Raster<f32>,
    /// Canvas fraction of each class, soil first.
    pub coverage: Vec<f64>,
    pub mean_height: f64,
}

pub fn library(seed: u64) -> AssetLibrary {
    let spec = ProceduralSpec {
        seed,
        ..ProceduralSpec::default()
    };
    demo_library(&SpeciesSet::irish(), &spec)
}

pub fn gen_config(seed: u64, n: usize) -> GenConfig {
    GenConfig {
        canvas_size: [SIDE, SIDE],
        n_images: n,
        paste_count_range: [40, 120],
        master_seed: seed,
        ..GenConfig::default()
    }
}

/// `n` scenes with heights normalized over the whole set.
pub fn scenes(seed: u64, n: usize) -> Vec<PlantedScene> {
    let lib = library(seed);
    let cfg = gen_config(seed, n);
    let dir = tempfile::tempdir().unwrap();
    let raw = generate_parallel(&lib, &cfg, 0..n as u64, 0, |i, s| {
        let path = dir.path().join(format!("{i}.jpg"));
        write_jpeg(&s.rgb, &path).unwrap();
        Ok((read_rgb(&path).unwrap(), s))
    })
    .unwrap();
    let norm = fit_height_normalizer(raw.iter().map(|(_, s)| &s.raw_height)).unwrap();
    raw.into_iter()
        .map(|(rgb, s)| {
            let height = normalize_height(&s.raw_height, &norm);
            let total = s.labels.len() as f64;
            let coverage = s.class_counts(4).iter().map(|&c| c as f64 / total).collect();
            let mean_height = height.as_slice().iter().map(|&v| v as f64).sum::<f64>() / total;
            PlantedScene {
                rgb,
                labels: s.labels,
                height,
                coverage,
                mean_height,
            }
        })
        .collect()
}

pub fn target_layout() -> (Vec<String>, Vec<TargetKind>) {
    herbage::ridge::biomass_targets(SpeciesSet::irish().species_names())
}

/// Noiseless labels: total mass (kg DM/ha) and grass/clover/weeds percentages.
pub fn planted_targets(s: &PlantedScene) -> Vec<f64> {
    let [_, g, c, w] = [s.coverage[0], s.coverage[1], s.coverage[2], s.coverage[3]];
    let h = s.mean_height;
    vec![
        600.0 + 2500.0 * g + 3500.0 * c + 1500.0 * w + 3000.0 * h,
        45.0 + 50.0 * g - 35.0 * c - 30.0 * w,
        10.0 + 70.0 * c + 10.0 * h,
        5.0 + 80.0 * w,
    ]
}

/// Per-target noise std: a fixed share of the noiseless target range.
pub fn noise_sigma(clean: &[Vec<f64>]) -> Vec<f64> {
    (0..clean[0].len())
        .map(|k| {
            let lo = clean.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = clean.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            NOISE_FRACTION * (hi - lo)
        })
        .collect()
}

pub fn add_noise(clean: &[Vec<f64>], sigma: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0xA11CE);
    clean
        .iter()
        .map(|r| {
            r.iter()
                .zip(sigma)
                .map(|(&v, &s)| v + Normal::new(0.0, s).unwrap().sample(&mut rng))
                .collect()
        })
        .collect()
}

/// Prototypes fitted on `fit_on`, then HL+SL+H features for every scene.
pub fn segment_features(all: &[PlantedScene], fit_on: &[PlantedScene]) -> Vec<Vec<f64>> {
    let classes = SpeciesSet::irish().names().to_vec();
    let model = fit_prototypes(fit_on.iter().map(|s| (&s.rgb, &s.labels)), &classes, DEFAULT_TEMPERATURE).unwrap();
    all.iter()
        .map(|s| {
            extract_features(&model.segment(&s.rgb), Some(&s.height), FeatureMode::HlSlH)
                .unwrap()
                .flatten()
        })
        .collect()
}

/// Per-target RMSE.
pub fn rmse_per_target(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    (0..truth[0].len())
        .map(|k| {
            let mse = pred.iter().zip(truth).map(|(p, t)| (p[k] - t[k]).powi(2)).sum::<f64>() / truth.len() as f64;
            mse.sqrt()
        })
        .collect()
}
