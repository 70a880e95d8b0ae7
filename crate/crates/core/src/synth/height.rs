//! Herbage-height statistics: exact integer histograms of paste counts and
//! the dataset-wide 75th-percentile normalizer.

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::raster::Raster;

pub const HEIGHT_PERCENTILE: f64 = 0.75;

/// Exact counts of integer heights. Merging is associative and commutative,
/// so per-worker histograms can be combined in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeightHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl HeightHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_value(&mut self, v: u32) {
        let v = v as usize;
        if v >= self.counts.len() {
            self.counts.resize(v + 1, 0);
        }
        self.counts[v] += 1;
        self.total += 1;
    }

    pub fn add_values(&mut self, values: &[u32]) {
        for &v in values {
            self.add_value(v);
        }
    }

    pub fn add_raster(&mut self, raw: &Raster<u32>) {
        self.add_values(raw.as_slice());
    }

    pub fn merge(&mut self, other: &HeightHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Value of the `k`-th smallest element (0-based).
    fn order_statistic(&self, k: u64) -> u32 {
        let mut seen = 0;
        for (v, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen > k {
                return v as u32;
            }
        }
        unreachable!("k < total")
    }

    /// Inclusive (linear-interpolation) percentile, `q` in [0, 1].
    ///
    /// rank = q (n - 1); result = x[floor] + frac * (x[floor + 1] - x[floor]).
    pub fn percentile(&self, q: f64) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let rank = q.clamp(0.0, 1.0) * (self.total - 1) as f64;
        let lo = rank.floor();
        let frac = rank - lo;
        let lo = lo as u64;
        let a = self.order_statistic(lo) as f64;
        let b = if lo + 1 < self.total {
            self.order_statistic(lo + 1) as f64
        } else {
            a
        };
        Some(a + frac * (b - a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightNormalizer {
    pub clip_value: f64,
}

impl HeightNormalizer {
    /// Floors the clip value at 1.
    pub fn new(clip_value: f64) -> Self {
        Self {
            clip_value: if clip_value.is_finite() { clip_value.max(1.0) } else { 1.0 },
        }
    }

    pub fn from_histogram(h: &HeightHistogram) -> Result<Self, SynthError> {
        h.percentile(HEIGHT_PERCENTILE)
            .map(Self::new)
            .ok_or(SynthError::NoHeights)
    }

    pub fn normalize(&self, raw: u32) -> f32 {
        (raw as f64 / self.clip_value).min(1.0) as f32
    }
}

/// Pools every pixel of every raster and takes the 75th percentile.
pub fn fit_height_normalizer<'a>(
    rasters: impl IntoIterator<Item = &'a Raster<u32>>,
) -> Result<HeightNormalizer, SynthError> {
    let mut h = HeightHistogram::new();
    for r in rasters {
        h.add_raster(r);
    }
    HeightNormalizer::from_histogram(&h)
}

/// `min(raw / clip, 1)` per pixel.
pub fn normalize_height(raw: &Raster<u32>, norm: &HeightNormalizer) -> Raster<f32> {
    raw.map(|&v| norm.normalize(v))
}
