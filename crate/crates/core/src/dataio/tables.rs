//! CSV label and feature tables.
//!
//! Label table header: `image_id,total_mass,<species>_pct...,source`.
//! Numbers are written with six significant digits.
//!
//! Feature table header: `image_id,mode,<feature columns>`; values keep full
//! precision.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::segfeat::FeatureMode;

/// Allowed deviation of a trusted row's percentage sum from 100.
pub const PCT_SUM_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Trusted,
    Automatic,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Trusted => "trusted",
            LabelSource::Automatic => "automatic",
        })
    }
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trusted" => Ok(Self::Trusted),
            "automatic" => Ok(Self::Automatic),
            other => Err(format!("unknown label source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub image_id: String,
    /// kg DM/ha
    pub total_mass: f64,
    /// Per-species dry-biomass percentages, in table species order.
    pub species_pct: Vec<f64>,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    /// Species names (soil excluded) in column order.
    pub species: Vec<String>,
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn new(species: Vec<String>) -> Self {
        Self {
            species,
            rows: Vec::new(),
        }
    }

    /// Checks one row. Every row needs a non-negative mass and percentages in
    /// [0, 100]; trusted rows must also sum to 100 within 0.5. Automatic rows
    /// are clipped model outputs and are not renormalized, so their sum is
    /// not enforced.
    pub fn validate_row(&self, row: &LabelRow) -> Result<(), DataError> {
        let bad = |reason: String| DataError::Row {
            image_id: row.image_id.clone(),
            reason,
        };
        if row.species_pct.len() != self.species.len() {
            return Err(bad(format!(
                "{} percentages for {} species",
                row.species_pct.len(),
                self.species.len()
            )));
        }
        if !(row.total_mass.is_finite() && row.total_mass >= 0.0) {
            return Err(bad(format!("total_mass {} is negative or not finite", row.total_mass)));
        }
        if let Some(p) = row.species_pct.iter().find(|p| !(p.is_finite() && (0.0..=100.0).contains(*p))) {
            return Err(bad(format!("percentage {p} outside [0, 100]")));
        }
        if row.source == LabelSource::Trusted {
            let sum: f64 = row.species_pct.iter().sum();
            if (sum - 100.0).abs() > PCT_SUM_TOLERANCE {
                return Err(bad(format!("percentages sum to {sum}, expected 100 +/- {PCT_SUM_TOLERANCE}")));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, row: LabelRow) -> Result<(), DataError> {
        self.validate_row(&row)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&LabelRow> {
        self.rows.iter().find(|r| r.image_id == image_id)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["image_id".to_string(), "total_mass".to_string()];
        h.extend(self.species.iter().map(|s| format!("{s}_pct")));
        h.push("source".to_string());
        h
    }
}

/// Rounds to six significant digits and prints the shortest exact form of
/// the rounded value. Idempotent: formatting a parsed output reproduces it.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("float formatting parses");
    format!("{rounded}")
}

pub fn write_label_table(table: &LabelTable, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    write_label_rows(table, &mut w).map_err(|e| DataError::csv(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn label_table_to_string(table: &LabelTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_label_rows(table, &mut w).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn write_label_rows<W: std::io::Write>(table: &LabelTable, w: &mut csv::Writer<W>) -> csv::Result<()> {
    w.write_record(table.header())?;
    for row in &table.rows {
        let mut rec = vec![row.image_id.clone(), format_sig6(row.total_mass)];
        rec.extend(row.species_pct.iter().map(|&p| format_sig6(p)));
        rec.push(row.source.to_string());
        w.write_record(&rec)?;
    }
    Ok(())
}

pub fn read_label_table(path: &Path) -> Result<LabelTable, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_label_table(&text)
}

pub fn parse_label_table(text: &str) -> Result<LabelTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| DataError::Format(format!("label table header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "image_id" || cols[1] != "total_mass" || cols[cols.len() - 1] != "source" {
        return Err(DataError::Format(format!(
            "label table header must be image_id,total_mass,<species>_pct...,source; got {}",
            cols.join(",")
        )));
    }
    let species = cols[2..cols.len() - 1]
        .iter()
        .map(|c| {
            c.strip_suffix("_pct")
                .map(str::to_string)
                .ok_or_else(|| DataError::Format(format!("column {c:?} lacks the _pct suffix")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = LabelTable::new(species);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Format(format!("label table record {}: {e}", line + 1)))?;
        let image_id = rec.get(0).unwrap_or_default().to_string();
        let bad = |reason: String| DataError::Row {
            image_id: image_id.clone(),
            reason,
        };
        if rec.len() != cols.len() {
            return Err(bad(format!("{} fields, expected {}", rec.len(), cols.len())));
        }
        let num = |i: usize| -> Result<f64, DataError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("column {} value {:?} is not a number", cols[i], &rec[i])))
        };
        let total_mass = num(1)?;
        let species_pct = (2..cols.len() - 1).map(num).collect::<Result<Vec<_>, _>>()?;
        let source = rec[cols.len() - 1].parse().map_err(bad)?;
        table.push(LabelRow {
            image_id: image_id.clone(),
            total_mass,
            species_pct,
            source,
        })?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub mode: FeatureMode,
    /// Class names (soil first) that the coverage columns refer to.
    pub classes: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn columns(&self) -> Vec<String> {
        self.mode.column_names(&self.classes)
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }
}

pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    let mut header = vec!["image_id".to_string(), "mode".to_string()];
    header.extend(table.columns());
    w.write_record(&header).map_err(|e| DataError::csv(path, e))?;
    for row in &table.rows {
        let mut rec = vec![row.image_id.clone(), table.mode.to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| DataError::csv(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_feature_table(&text)
}

pub fn parse_feature_table(text: &str) -> Result<FeatureTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Format(format!("feature table header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header[0] != "image_id" || header[1] != "mode" {
        return Err(DataError::Format("feature table header must start with image_id,mode".into()));
    }
    let classes: Vec<String> = header[2..]
        .iter()
        .filter_map(|c| c.strip_prefix("hl_").or_else(|| c.strip_prefix("sl_")))
        .map(str::to_string)
        .fold(Vec::new(), |mut acc, c| {
            if !acc.contains(&c) {
                acc.push(c);
            }
            acc
        });
    let mode = FeatureMode::infer(&header[2..], &classes)
        .ok_or_else(|| DataError::Format(format!("unrecognised feature columns {:?}", &header[2..])))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Format(format!("feature table: {e}")))?;
        let image_id = rec.get(0).unwrap_or_default().to_string();
        let bad = |reason: String| DataError::Row {
            image_id: image_id.clone(),
            reason,
        };
        if rec.len() != header.len() {
            return Err(bad(format!("{} fields, expected {}", rec.len(), header.len())));
        }
        if rec[1] != *mode.to_string() {
            return Err(bad(format!("mode {:?} disagrees with header columns ({mode})", &rec[1])));
        }
        let values = (2..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("column {} value {:?} is not a finite number", header[i], &rec[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(FeatureRow { image_id, values });
    }
    Ok(FeatureTable { mode, classes, rows })
}
