//! Per-image features from a score map: hard-label coverage (argmax shares),
//! soft-label coverage (mean scores) and mean normalized height.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;
use crate::scoremap::ScoreMap;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature mode {0} needs a height raster")]
    MissingHeight(FeatureMode),
    #[error("height raster {height:?} does not match score map {scores:?}")]
    HeightShape {
        height: (usize, usize),
        scores: (usize, usize),
    },
    #[error("score map has no pixels")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "HL")]
    Hl,
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "HL+SL")]
    HlSl,
    #[serde(rename = "HL+SL+H")]
    HlSlH,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [FeatureMode::Hl, FeatureMode::Sl, FeatureMode::HlSl, FeatureMode::HlSlH];

    pub fn uses_hl(self) -> bool {
        !matches!(self, FeatureMode::Sl)
    }

    pub fn uses_sl(self) -> bool {
        !matches!(self, FeatureMode::Hl)
    }

    pub fn uses_height(self) -> bool {
        matches!(self, FeatureMode::HlSlH)
    }

    /// Flattened length for `n_classes` classes (soil included).
    pub fn len(self, n_classes: usize) -> usize {
        n_classes * (self.uses_hl() as usize + self.uses_sl() as usize) + self.uses_height() as usize
    }

    pub fn column_names(self, classes: &[String]) -> Vec<String> {
        let mut cols = Vec::new();
        if self.uses_hl() {
            cols.extend(classes.iter().map(|c| format!("hl_{c}")));
        }
        if self.uses_sl() {
            cols.extend(classes.iter().map(|c| format!("sl_{c}")));
        }
        if self.uses_height() {
            cols.push("height".into());
        }
        cols
    }

    /// Recovers the mode whose column names equal `columns`.
    pub fn infer(columns: &[String], classes: &[String]) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.column_names(classes) == columns)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Hl => "HL",
            FeatureMode::Sl => "SL",
            FeatureMode::HlSl => "HL+SL",
            FeatureMode::HlSlH => "HL+SL+H",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown feature mode {s:?} (HL, SL, HL+SL, HL+SL+H)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mode: FeatureMode,
    pub hl: Vec<f64>,
    pub sl: Vec<f64>,
    pub mean_height: Option<f64>,
}

impl FeatureVector {
    /// HL block, then SL block, then height, as selected by the mode.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mode.len(self.hl.len()));
        if self.mode.uses_hl() {
            v.extend(&self.hl);
        }
        if self.mode.uses_sl() {
            v.extend(&self.sl);
        }
        if self.mode.uses_height() {
            v.push(self.mean_height.unwrap_or_default());
        }
        v
    }
}

/// Argmax class per pixel (lowest index wins ties).
pub fn argmax_labels(s: &ScoreMap) -> Raster<u8> {
    Raster::from_fn(s.width(), s.height(), |x, y| {
        let p = y * s.width() + x;
        let mut best = 0;
        let mut best_v = s.score(0, p);
        for c in 1..s.n_classes() {
            let v = s.score(c, p);
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        best as u8
    })
}

/// Share of pixels whose argmax is each class.
pub fn hard_coverage(s: &ScoreMap) -> Vec<f64> {
    let mut counts = vec![0u64; s.n_classes()];
    for &l in argmax_labels(s).as_slice() {
        counts[l as usize] += 1;
    }
    let n = s.n_pixels().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Mean of each score plane.
pub fn soft_coverage(s: &ScoreMap) -> Vec<f64> {
    let n = s.n_pixels().max(1) as f64;
    (0..s.n_classes())
        .map(|c| {
            let sum: crate::losses::CompensatedSum = s.plane(c).iter().map(|&v| v as f64).collect();
            sum.value() / n
        })
        .collect()
}

pub fn extract_features(
    s: &ScoreMap,
    height: Option<&Raster<f32>>,
    mode: FeatureMode,
) -> Result<FeatureVector, FeatureError> {
    if s.n_pixels() == 0 {
        return Err(FeatureError::Empty);
    }
    let mean_height = match (mode.uses_height(), height) {
        (true, None) => return Err(FeatureError::MissingHeight(mode)),
        (_, Some(h)) => {
            if h.dims() != (s.width(), s.height()) {
                return Err(FeatureError::HeightShape {
                    height: h.dims(),
                    scores: (s.width(), s.height()),
                });
            }
            let sum: crate::losses::CompensatedSum = h.as_slice().iter().map(|&v| v as f64).collect();
            Some(sum.value() / h.len() as f64)
        }
        (false, None) => None,
    };
    Ok(FeatureVector {
        mode,
        hl: hard_coverage(s),
        sl: soft_coverage(s),
        mean_height,
    })
}
