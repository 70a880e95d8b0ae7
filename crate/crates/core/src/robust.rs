//! Noise-robust training on a mix of trusted and automatically labelled
//! rows: trusted oversampling, per-epoch label perturbation, flip/grayscale
//! augmentation and a mini-batch linear regressor.
//!
//! The scheduler, perturbation and augmentation are independent of the model
//! and can drive any external trainer.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RgbImage;
use crate::ridge::{self, column_stats, RidgeModel, RidgeParams, TargetKind};
use crate::rng::{rng_from_seed, RngState};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("the trusted set is empty")]
    EmptyTrusted,
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("image {0} appears in both the trusted and automatic sets")]
    Overlap(String),
    #[error("row {image_id}: {reason}")]
    Row { image_id: String, reason: String },
    #[error("sigma for target {target} is {value}; must be finite and >= 0")]
    Sigma { target: usize, value: f64 },
    #[error("trusted fraction {fraction} of batch {batch_size} gives no trusted rows (enable pure-automatic mode to allow this)")]
    ZeroTrusted { fraction: f64, batch_size: usize },
    #[error("trusted fraction {fraction} leaves no room for automatic rows in batches of {batch_size}")]
    NoAutomaticSlots { fraction: f64, batch_size: usize },
    #[error("invalid batch parameters: {0}")]
    BadParams(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); last finite loss {last_finite:?}")]
    Diverged {
        epoch: usize,
        loss: f64,
        last_finite: Option<f64>,
    },
    #[error("validation split needs at least 2 trusted rows, got {0}")]
    TooFewForValidation(usize),
    #[error(transparent)]
    Ridge(#[from] ridge::RidgeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    pub trusted: Vec<Sample>,
    pub automatic: Vec<Sample>,
    pub target_names: Vec<String>,
    pub target_kinds: Vec<TargetKind>,
    /// Observed RMSE of the automatic labels, per target.
    pub per_target_sigma: Vec<f64>,
}

impl MixedDataset {
    pub fn new(
        trusted: Vec<Sample>,
        automatic: Vec<Sample>,
        target_names: Vec<String>,
        target_kinds: Vec<TargetKind>,
        per_target_sigma: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let t = target_names.len();
        if target_kinds.len() != t || per_target_sigma.len() != t {
            return Err(TrainError::BadParams(format!(
                "{t} target names, {} kinds, {} sigmas",
                target_kinds.len(),
                per_target_sigma.len()
            )));
        }
        if let Some((target, &value)) = per_target_sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s >= 0.0))
        {
            return Err(TrainError::Sigma { target, value });
        }
        let f = trusted.first().or(automatic.first()).map_or(0, |s| s.features.len());
        let ids: HashSet<&str> = trusted.iter().map(|s| s.image_id.as_str()).collect();
        for s in trusted.iter().chain(&automatic) {
            let bad = |reason: String| TrainError::Row {
                image_id: s.image_id.clone(),
                reason,
            };
            if s.features.len() != f {
                return Err(bad(format!("{} features, expected {f}", s.features.len())));
            }
            if s.targets.len() != t {
                return Err(bad(format!("{} targets, expected {t}", s.targets.len())));
            }
            if s.features.iter().chain(&s.targets).any(|v| !v.is_finite()) {
                return Err(bad("non-finite value".into()));
            }
        }
        if let Some(s) = automatic.iter().find(|s| ids.contains(s.image_id.as_str())) {
            return Err(TrainError::Overlap(s.image_id.clone()));
        }
        Ok(Self {
            trusted,
            automatic,
            target_names,
            target_kinds,
            per_target_sigma,
        })
    }

    pub fn n_features(&self) -> usize {
        self.trusted.first().or(self.automatic.first()).map_or(0, |s| s.features.len())
    }

    pub fn row(&self, r: RowRef) -> &Sample {
        match r {
            RowRef::Trusted(i) => &self.trusted[i],
            RowRef::Automatic(i) => &self.automatic[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowRef {
    Trusted(usize),
    Automatic(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchParams {
    pub batch_size: usize,
    pub trusted_fraction: f64,
    /// With a zero trusted share, schedule automatic rows only instead of failing.
    pub allow_pure_automatic: bool,
}

impl Default for BatchParams {
    fn default() -> Self {
        Self {
            batch_size: 12,
            trusted_fraction: 0.25,
            allow_pure_automatic: false,
        }
    }
}

impl BatchParams {
    pub fn trusted_per_batch(&self) -> usize {
        (self.batch_size as f64 * self.trusted_fraction).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScheduleKind {
    /// k trusted + (batch - k) automatic per batch.
    Mixed { trusted: usize, automatic: usize },
    TrustedOnly,
    AutomaticOnly,
}

/// Produces one epoch of batches at a time. Automatic rows are shuffled and
/// each used once per epoch; trusted rows come from a cyclic stream that is
/// reshuffled whenever it runs out, so they are oversampled.
#[derive(Debug, Clone)]
pub struct BatchScheduler {
    params: BatchParams,
    kind: ScheduleKind,
    n_trusted: usize,
    n_automatic: usize,
    trusted_queue: Vec<usize>,
    trusted_pos: usize,
}

impl BatchScheduler {
    pub fn new(params: BatchParams, n_trusted: usize, n_automatic: usize) -> Result<Self, TrainError> {
        if params.batch_size == 0 {
            return Err(TrainError::BadParams("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&params.trusted_fraction) {
            return Err(TrainError::BadParams(format!(
                "trusted_fraction {} outside [0, 1]",
                params.trusted_fraction
            )));
        }
        let k = params.trusted_per_batch();
        let kind = if n_automatic == 0 {
            if n_trusted == 0 {
                return Err(TrainError::EmptyDataset);
            }
            ScheduleKind::TrustedOnly
        } else if k == 0 {
            if !params.allow_pure_automatic {
                return Err(TrainError::ZeroTrusted {
                    fraction: params.trusted_fraction,
                    batch_size: params.batch_size,
                });
            }
            ScheduleKind::AutomaticOnly
        } else if k >= params.batch_size {
            return Err(TrainError::NoAutomaticSlots {
                fraction: params.trusted_fraction,
                batch_size: params.batch_size,
            });
        } else {
            if n_trusted == 0 {
                return Err(TrainError::EmptyTrusted);
            }
            ScheduleKind::Mixed {
                trusted: k,
                automatic: params.batch_size - k,
            }
        };
        Ok(Self {
            params,
            kind,
            n_trusted,
            n_automatic,
            trusted_queue: Vec::new(),
            trusted_pos: 0,
        })
    }

    pub fn params(&self) -> BatchParams {
        self.params
    }

    /// Trusted rows per batch actually scheduled (0 in automatic-only mode).
    pub fn trusted_per_batch(&self) -> usize {
        match self.kind {
            ScheduleKind::Mixed { trusted, .. } => trusted,
            ScheduleKind::TrustedOnly => self.params.batch_size,
            ScheduleKind::AutomaticOnly => 0,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        match self.kind {
            ScheduleKind::Mixed { automatic, .. } => self.n_automatic.div_ceil(automatic),
            ScheduleKind::TrustedOnly => self.n_trusted.div_ceil(self.params.batch_size),
            ScheduleKind::AutomaticOnly => self.n_automatic.div_ceil(self.params.batch_size),
        }
    }

    fn next_trusted(&mut self, rng: &mut RngState) -> usize {
        if self.trusted_pos >= self.trusted_queue.len() {
            self.trusted_queue = (0..self.n_trusted).collect();
            self.trusted_queue.shuffle(rng);
            self.trusted_pos = 0;
        }
        self.trusted_pos += 1;
        self.trusted_queue[self.trusted_pos - 1]
    }

    pub fn next_epoch(&mut self, rng: &mut RngState) -> Vec<Vec<RowRef>> {
        let shuffled = |n: usize, rng: &mut RngState| {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(rng);
            v
        };
        match self.kind {
            ScheduleKind::TrustedOnly => shuffled(self.n_trusted, rng)
                .chunks(self.params.batch_size)
                .map(|c| c.iter().map(|&i| RowRef::Trusted(i)).collect())
                .collect(),
            ScheduleKind::AutomaticOnly => shuffled(self.n_automatic, rng)
                .chunks(self.params.batch_size)
                .map(|c| c.iter().map(|&i| RowRef::Automatic(i)).collect())
                .collect(),
            ScheduleKind::Mixed { trusted, automatic } => {
                let auto = shuffled(self.n_automatic, rng);
                let mut batches = Vec::with_capacity(auto.len().div_ceil(automatic));
                for chunk in auto.chunks(automatic) {
                    let mut batch: Vec<RowRef> = (0..trusted).map(|_| RowRef::Trusted(self.next_trusted(rng))).collect();
                    batch.extend(chunk.iter().map(|&i| RowRef::Automatic(i)));
                    batches.push(batch);
                }
                batches
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub trusted_fraction: f64,
    pub trusted_per_batch: usize,
    /// epochs -> batches -> rows
    pub epochs: Vec<Vec<Vec<RowRef>>>,
}

/// Schedules `epochs` epochs of batches for `ds`.
pub fn build_batches(
    ds: &MixedDataset,
    params: BatchParams,
    epochs: usize,
    rng: &mut RngState,
) -> Result<BatchPlan, TrainError> {
    let mut sched = BatchScheduler::new(params, ds.trusted.len(), ds.automatic.len())?;
    Ok(BatchPlan {
        batch_size: params.batch_size,
        trusted_fraction: params.trusted_fraction,
        trusted_per_batch: sched.trusted_per_batch(),
        epochs: (0..epochs).map(|_| sched.next_epoch(rng)).collect(),
    })
}

/// Shifts each target by an independent uniform draw from
/// `[-2 sigma, +2 sigma]`, then clips by target kind.
pub fn perturb_label(targets: &[f64], kinds: &[TargetKind], sigma: &[f64], rng: &mut RngState) -> Vec<f64> {
    targets
        .iter()
        .zip(kinds)
        .zip(sigma)
        .map(|((&v, kind), &s)| {
            if s > 0.0 {
                kind.clip(v + rng.random_range(-2.0 * s..=2.0 * s))
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub flip_vertical: bool,
    pub grayscale: bool,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation {
        flip_vertical: false,
        grayscale: false,
    };

    /// Flip with probability 0.5, grayscale with probability `p_gray`.
    pub fn draw(rng: &mut RngState, p_gray: f64) -> Self {
        Self {
            flip_vertical: rng.random_bool(0.5),
            grayscale: rng.random_bool(p_gray.clamp(0.0, 1.0)),
        }
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let (w, h) = img.dims();
        let mut out = if self.flip_vertical {
            RgbImage::from_fn(w, h, |x, y| *img.get(x, h - 1 - y))
        } else {
            img.clone()
        };
        if self.grayscale {
            for px in out.as_mut_slice() {
                let l = luma601(*px);
                *px = [l; 3];
            }
        }
        out
    }
}

/// Rec. 601 luma, rounded.
pub fn luma601([r, g, b]: [u8; 3]) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

pub fn augment_image(img: &RgbImage, rng: &mut RngState, p_gray: f64) -> RgbImage {
    Augmentation::draw(rng, p_gray).apply(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch: BatchParams,
    /// Perturb automatic labels each epoch using the dataset sigmas.
    pub perturb: bool,
    /// Replaces the dataset's sigmas when set.
    pub sigma_override: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.03,
            lr_milestones: vec![50, 80],
            lr_decay: 0.5,
            batch: BatchParams::default(),
            perturb: true,
            sigma_override: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error over the epoch's batches, averaged over targets.
    pub train_mse: f64,
    pub n_batches: usize,
    pub trusted_per_batch: usize,
    pub trusted_rows: usize,
    pub automatic_rows: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RidgeModel,
    pub log: Vec<EpochLog>,
}

/// Mini-batch gradient descent on squared error for a linear head over
/// standardized features.
pub fn train_linear(ds: &MixedDataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let all: Vec<&Sample> = ds.trusted.iter().chain(&ds.automatic).collect();
    if all.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let sigma = cfg.sigma_override.clone().unwrap_or_else(|| ds.per_target_sigma.clone());
    if sigma.len() != ds.target_names.len() {
        return Err(TrainError::BadParams(format!(
            "{} sigmas for {} targets",
            sigma.len(),
            ds.target_names.len()
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut sched = BatchScheduler::new(cfg.batch, ds.trusted.len(), ds.automatic.len())?;

    let f = ds.n_features();
    let t = ds.target_names.len();
    let xs: Vec<Vec<f64>> = all.iter().map(|s| s.features.clone()).collect();
    let (mean, std) = column_stats(&xs);
    let scale: Vec<f64> = std.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let standardize = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect() };
    let z_trusted: Vec<Vec<f64>> = ds.trusted.iter().map(|s| standardize(&s.features)).collect();
    let z_auto: Vec<Vec<f64>> = ds.automatic.iter().map(|s| standardize(&s.features)).collect();

    let mut w = vec![vec![0.0; f]; t];
    let mut b: Vec<f64> = (0..t).map(|k| all.iter().map(|s| s.targets[k]).sum::<f64>() / all.len() as f64).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_finite = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let auto_targets: Vec<Vec<f64>> = ds
            .automatic
            .iter()
            .map(|s| {
                if cfg.perturb {
                    perturb_label(&s.targets, &ds.target_kinds, &sigma, &mut rng)
                } else {
                    s.targets.clone()
                }
            })
            .collect();
        let batches = sched.next_epoch(&mut rng);
        let (mut loss_sum, mut n_trusted, mut n_auto) = (0.0, 0, 0);
        for batch in &batches {
            let mut gw = vec![vec![0.0; f]; t];
            let mut gb = vec![0.0; t];
            let mut batch_loss = 0.0;
            for &r in batch {
                let (z, y) = match r {
                    RowRef::Trusted(i) => {
                        n_trusted += 1;
                        (&z_trusted[i], &ds.trusted[i].targets)
                    }
                    RowRef::Automatic(i) => {
                        n_auto += 1;
                        (&z_auto[i], &auto_targets[i])
                    }
                };
                for k in 0..t {
                    let pred = b[k] + w[k].iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
                    let err = pred - y[k];
                    batch_loss += err * err;
                    gb[k] += err;
                    for (g, zj) in gw[k].iter_mut().zip(z) {
                        *g += err * zj;
                    }
                }
            }
            let scale = 2.0 / batch.len() as f64;
            for k in 0..t {
                b[k] -= lr * scale * gb[k];
                for (wj, g) in w[k].iter_mut().zip(&gw[k]) {
                    *wj -= lr * scale * g;
                }
            }
            loss_sum += batch_loss / (batch.len() * t) as f64;
        }
        let train_mse = loss_sum / batches.len().max(1) as f64;
        let params_finite = b.iter().chain(w.iter().flatten()).all(|v| v.is_finite());
        if !train_mse.is_finite() || !params_finite {
            return Err(TrainError::Diverged {
                epoch,
                loss: train_mse,
                last_finite,
            });
        }
        last_finite = Some(train_mse);
        log.push(EpochLog {
            epoch,
            lr,
            train_mse,
            n_batches: batches.len(),
            trusted_per_batch: sched.trusted_per_batch(),
            trusted_rows: n_trusted,
            automatic_rows: n_auto,
        });
    }

    Ok(TrainOutcome {
        model: RidgeModel {
            feature_mode: None,
            feature_names: Vec::new(),
            target_names: ds.target_names.clone(),
            target_kinds: ds.target_kinds.clone(),
            params: RidgeParams {
                lambda: 0.0,
                standardize: true,
                fit_intercept: true,
                renormalize_pct: false,
            },
            feature_mean: mean,
            feature_scale: scale,
            weights: w,
            intercepts: b,
            rank_deficient: false,
            n_train: all.len(),
        },
        log,
    })
}

/// Per-target RMSE of ridge predictions on a held-out part of the trusted
/// set: the observed error of automatic labels, used as perturbation sigma.
pub fn estimate_sigma(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    target_names: &[String],
    target_kinds: &[TargetKind],
    params: RidgeParams,
    validation_fraction: f64,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let n = x.len();
    if n < 2 {
        return Err(TrainError::TooFewForValidation(n));
    }
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (val, train) = idx.split_at(n_val);
    let pick = |ids: &[usize], m: &[Vec<f64>]| ids.iter().map(|&i| m[i].clone()).collect::<Vec<_>>();
    let model = ridge::fit(&pick(train, x), &pick(train, y), target_names, target_kinds, params)?;
    let preds = model.predict_many(&pick(val, x))?;
    Ok((0..target_names.len())
        .map(|k| {
            let mse = val.iter().zip(&preds).map(|(&i, p)| (p[k] - y[i][k]).powi(2)).sum::<f64>() / val.len() as f64;
            mse.sqrt()
        })
        .collect())
}
