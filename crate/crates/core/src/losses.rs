//! Segmentation objectives: pixel cross-entropy on class scores plus RMSE on
//! the normalized height, summed with unit weights.

use thiserror::Error;

use crate::raster::Raster;
use crate::scoremap::ScoreMap;

/// Scores are clamped here before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} at pixel {pixel} is outside {n_classes} classes")]
    Label {
        label: u8,
        pixel: usize,
        n_classes: usize,
    },
    #[error("height target {value} at pixel {pixel} is outside [0, 1]")]
    Height { value: f32, pixel: usize },
}

/// Per-pixel ground truth: a class index (the one-hot target) and a
/// normalized height.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTargets {
    pub labels: Raster<u8>,
    pub height: Raster<f32>,
}

impl PixelTargets {
    pub fn new(labels: Raster<u8>, height: Raster<f32>) -> Result<Self, LossError> {
        if !labels.same_dims(&height) {
            return Err(LossError::Shape(format!(
                "labels {:?} vs height {:?}",
                labels.dims(),
                height.dims()
            )));
        }
        if let Some((pixel, &value)) = height
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, h)| !(0.0..=1.0).contains(*h))
        {
            return Err(LossError::Height { value, pixel });
        }
        Ok(Self { labels, height })
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

fn check_labels(scores: &ScoreMap, labels: &Raster<u8>) -> Result<(), LossError> {
    if (scores.width(), scores.height()) != labels.dims() {
        return Err(LossError::Shape(format!(
            "scores {}x{} vs labels {:?}",
            scores.width(),
            scores.height(),
            labels.dims()
        )));
    }
    if let Some((pixel, &label)) = labels
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= scores.n_classes())
    {
        return Err(LossError::Label {
            label,
            pixel,
            n_classes: scores.n_classes(),
        });
    }
    Ok(())
}

/// Target-class probability at pixel `p`: its score over the pixel's score sum,
/// so f32 rounding of stored maps does not bias the loss. Clamped below.
fn target_prob(scores: &ScoreMap, p: usize, label: usize) -> (f64, f64) {
    let sum: f64 = (0..scores.n_classes()).map(|c| scores.score(c, p) as f64).sum();
    let q = if sum > 0.0 { scores.score(label, p) as f64 / sum } else { 0.0 };
    (q, sum)
}

/// Mean over pixels of `-log q[label]`, the cross-entropy against a one-hot
/// target, where `q` is the pixel's score vector scaled to sum to 1.
pub fn species_loss(scores: &ScoreMap, labels: &Raster<u8>) -> Result<f64, LossError> {
    check_labels(scores, labels)?;
    let n = labels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: CompensatedSum = labels
        .as_slice()
        .iter()
        .enumerate()
        .map(|(p, &l)| -target_prob(scores, p, l as usize).0.max(LOG_CLAMP).ln())
        .collect();
    Ok(total.value() / n as f64)
}

/// Gradient of [`species_loss`] with respect to every score, plane-major like
/// the score map. At pixel `p` with sum `S`: `1 / (P S)` for every class, minus
/// `1 / (P s)` at the target class. Zero where the clamp is active.
pub fn species_loss_grad(scores: &ScoreMap, labels: &Raster<u8>) -> Result<Vec<f64>, LossError> {
    check_labels(scores, labels)?;
    let n = labels.len();
    let c = scores.n_classes();
    let mut g = vec![0.0; scores.as_slice().len()];
    for (p, &l) in labels.as_slice().iter().enumerate() {
        let (q, sum) = target_prob(scores, p, l as usize);
        if q > LOG_CLAMP {
            for k in 0..c {
                g[k * n + p] = 1.0 / (n as f64 * sum);
            }
            g[l as usize * n + p] -= 1.0 / (n as f64 * scores.score(l as usize, p) as f64);
        }
    }
    Ok(g)
}

/// Root-mean-square difference between predicted and target heights.
pub fn height_loss(pred: &Raster<f32>, target: &Raster<f32>) -> Result<f64, LossError> {
    if !pred.same_dims(target) {
        return Err(LossError::Shape(format!(
            "pred {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sq: CompensatedSum = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .collect();
    Ok((sq.value() / pred.len() as f64).sqrt())
}

pub fn total_loss(scores: &ScoreMap, pred_height: &Raster<f32>, targets: &PixelTargets) -> Result<f64, LossError> {
    Ok(species_loss(scores, &targets.labels)? + height_loss(pred_height, &targets.height)?)
}
