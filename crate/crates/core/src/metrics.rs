//! Biomass evaluation: RMSE of species percentages, HRMSE of total and
//! per-species herbage mass, and HRAE (mean relative absolute error of the
//! total mass).

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::LabelTable;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} truths vs {1} predictions")]
    Length(usize, usize),
    #[error("no values")]
    Empty,
    #[error("relative error undefined: true value {value} at index {index} is not positive")]
    NonPositiveTruth { index: usize, value: f64 },
    #[error("species columns differ: {truth:?} vs {pred:?}")]
    Species { truth: Vec<String>, pred: Vec<String> },
    #[error("image ids differ; missing predictions: {missing:?}; unexpected predictions: {unexpected:?}")]
    Ids {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("duplicate image id {0}")]
    Duplicate(String),
}

fn check(y: &[f64], yhat: &[f64]) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::Length(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Mean of `|y - yhat| / y`, in percent. Not symmetric in its arguments.
pub fn hrae(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(MetricError::NonPositiveTruth { index, value });
    }
    let mean = y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a).sum::<f64>() / y.len() as f64;
    Ok(100.0 * mean)
}

/// kg DM/ha of each species given the total and the percentage split.
pub fn species_mass(total: f64, pct: &[f64]) -> Vec<f64> {
    pct.iter().map(|p| total * p / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub species: Vec<String>,
    pub n: usize,
    /// kg DM/ha
    pub hrmse_total: f64,
    pub hrmse_per_species: Vec<f64>,
    pub hrmse_species_avg: f64,
    /// Percent. `None` when no row has a positive true mass.
    pub hrae: Option<f64>,
    /// Rows left out of HRAE because their true mass is zero.
    pub hrae_excluded: usize,
    pub rmse_per_species_pct: Vec<f64>,
    pub rmse_avg: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Matches rows by image id and computes every metric. Row order does not matter.
pub fn evaluate(pred: &LabelTable, truth: &LabelTable) -> Result<EvalReport, MetricError> {
    if pred.species != truth.species {
        return Err(MetricError::Species {
            truth: truth.species.clone(),
            pred: pred.species.clone(),
        });
    }
    let mut by_id = HashMap::new();
    for r in &pred.rows {
        if by_id.insert(r.image_id.as_str(), r).is_some() {
            return Err(MetricError::Duplicate(r.image_id.clone()));
        }
    }
    let mut missing = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in &truth.rows {
        if !seen.insert(r.image_id.as_str()) {
            return Err(MetricError::Duplicate(r.image_id.clone()));
        }
        if !by_id.contains_key(r.image_id.as_str()) {
            missing.push(r.image_id.clone());
        }
    }
    let mut unexpected: Vec<String> = pred
        .rows
        .iter()
        .filter(|r| !seen.contains(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        missing.sort();
        unexpected.sort();
        return Err(MetricError::Ids { missing, unexpected });
    }
    if truth.rows.is_empty() {
        return Err(MetricError::Empty);
    }

    // Sort by id so the floating-point sums do not depend on row order.
    let mut pairs: Vec<_> = truth.rows.iter().map(|t| (t, by_id[t.image_id.as_str()])).collect();
    pairs.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id));

    let y_total: Vec<f64> = pairs.iter().map(|(t, _)| t.total_mass).collect();
    let p_total: Vec<f64> = pairs.iter().map(|(_, p)| p.total_mass).collect();
    let s = truth.species.len();

    let mut hrmse_per_species = Vec::with_capacity(s);
    let mut rmse_per_species_pct = Vec::with_capacity(s);
    for k in 0..s {
        let yp: Vec<f64> = pairs.iter().map(|(t, _)| t.species_pct[k]).collect();
        let pp: Vec<f64> = pairs.iter().map(|(_, p)| p.species_pct[k]).collect();
        rmse_per_species_pct.push(rmse(&yp, &pp)?);
        let ym: Vec<f64> = pairs.iter().map(|(t, _)| t.total_mass * t.species_pct[k] / 100.0).collect();
        let pm: Vec<f64> = pairs.iter().map(|(_, p)| p.total_mass * p.species_pct[k] / 100.0).collect();
        hrmse_per_species.push(rmse(&ym, &pm)?);
    }

    let (kept_y, kept_p): (Vec<f64>, Vec<f64>) = y_total
        .iter()
        .zip(&p_total)
        .filter(|(y, _)| **y > 0.0)
        .map(|(y, p)| (*y, *p))
        .unzip();
    let hrae_excluded = y_total.len() - kept_y.len();
    if hrae_excluded > 0 {
        log::warn!("{hrae_excluded} row(s) with zero true mass excluded from HRAE");
    }
    let hrae = if kept_y.is_empty() {
        None
    } else {
        Some(hrae(&kept_y, &kept_p)?)
    };

    Ok(EvalReport {
        species: truth.species.clone(),
        n: pairs.len(),
        hrmse_total: rmse(&y_total, &p_total)?,
        hrmse_species_avg: mean(&hrmse_per_species),
        hrmse_per_species,
        hrae,
        hrae_excluded,
        rmse_avg: mean(&rmse_per_species_pct),
        rmse_per_species_pct,
    })
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect::<String>().replace('_', " "))
        .unwrap_or_default()
}

impl EvalReport {
    /// Aligned text table: HRMSE (total, species, avg), HRAE, RMSE (species, avg).
    pub fn to_table(&self, row_label: &str) -> String {
        let species: Vec<String> = self.species.iter().map(|s| title(s)).collect();
        let mut head = vec!["".to_string(), "Total".into()];
        head.extend(species.iter().cloned());
        head.push("Avg.".into());
        head.push("HRAE".into());
        head.extend(species.iter().cloned());
        head.push("Avg.".into());

        let mut row = vec![row_label.to_string(), format!("{:.2}", self.hrmse_total)];
        row.extend(self.hrmse_per_species.iter().map(|v| format!("{v:.2}")));
        row.push(format!("{:.2}", self.hrmse_species_avg));
        row.push(self.hrae.map_or("n/a".into(), |v| format!("{v:.2}")));
        row.extend(self.rmse_per_species_pct.iter().map(|v| format!("{v:.2}")));
        row.push(format!("{:.2}", self.rmse_avg));

        let widths: Vec<usize> = head.iter().zip(&row).map(|(a, b)| a.len().max(b.len())).collect();
        let s = self.species.len();
        let hrmse_span: usize = widths[1..s + 3].iter().sum::<usize>() + 3 * (s + 1);
        let rmse_span: usize = widths[s + 4..].iter().sum::<usize>() + 3 * s;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:w0$} | {:^hs$} | {:^wh$} | {:^rs$}",
            "",
            "HRMSE (kg DM/ha)",
            "",
            "RMSE (%)",
            w0 = widths[0],
            hs = hrmse_span,
            wh = widths[s + 3],
            rs = rmse_span
        );
        for line in [&head, &row] {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | "));
        }
        out
    }
}
