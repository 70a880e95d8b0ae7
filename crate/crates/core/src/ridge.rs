//! L2-regularized least squares from image features to biomass targets.
//!
//! Features are optionally standardized (population mean and standard
//! deviation stored in the model) and the intercept is never penalized.
//! Each target gets its own weight row; all targets share one factorization
//! of the regularized Gram matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{LabelRow, LabelSource, LabelTable};
use crate::segfeat::FeatureMode;

/// Singular values below `RANK_TOL * largest` count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum RidgeError {
    #[error("need at least one training row")]
    NoRows,
    #[error("row {row} has {got} values, expected {expected}")]
    Dimension { row: usize, got: usize, expected: usize },
    #[error("{features} feature rows but {targets} target rows")]
    RowCount { features: usize, targets: usize },
    #[error("lambda must be finite and >= 0, got {0}")]
    Lambda(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("model targets {0:?} cannot be read as total_mass + <species>_pct")]
    TargetLayout(Vec<String>),
    #[error("{ids} image ids for {rows} feature rows")]
    Ids { ids: usize, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Clipped at 0.
    Mass,
    /// Clipped to [0, 100].
    Percent,
}

impl TargetKind {
    pub fn clip(self, v: f64) -> f64 {
        match self {
            TargetKind::Mass => v.max(0.0),
            TargetKind::Percent => v.clamp(0.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeParams {
    pub lambda: f64,
    pub standardize: bool,
    pub fit_intercept: bool,
    /// Rescale clipped percentage targets to sum to 100.
    pub renormalize_pct: bool,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            standardize: true,
            fit_intercept: true,
            renormalize_pct: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub feature_mode: Option<FeatureMode>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub target_kinds: Vec<TargetKind>,
    pub params: RidgeParams,
    /// Subtracted from each feature before scaling.
    pub feature_mean: Vec<f64>,
    /// Each centred feature is divided by this.
    pub feature_scale: Vec<f64>,
    /// targets x features, on the standardized scale.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    /// Set when lambda = 0 and the design was rank deficient; the weights
    /// are then the minimum-norm least-squares solution.
    pub rank_deficient: bool,
    pub n_train: usize,
}

/// Target names and kinds for `total_mass` followed by one percentage per species.
pub fn biomass_targets(species: &[String]) -> (Vec<String>, Vec<TargetKind>) {
    let mut names = vec!["total_mass".to_string()];
    let mut kinds = vec![TargetKind::Mass];
    for s in species {
        names.push(format!("{s}_pct"));
        kinds.push(TargetKind::Percent);
    }
    (names, kinds)
}

/// `[total_mass, pct...]` for one label row.
pub fn label_targets(row: &LabelRow) -> Vec<f64> {
    std::iter::once(row.total_mass).chain(row.species_pct.iter().copied()).collect()
}

fn check_rows(rows: &[Vec<f64>], width: usize, what: &'static str) -> Result<(), RidgeError> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(RidgeError::Dimension {
                row: i,
                got: r.len(),
                expected: width,
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(RidgeError::NonFinite(what));
        }
    }
    Ok(())
}

/// Column means and population standard deviations.
pub fn column_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let f = x.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..f).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..f)
        .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

/// Fits one ridge model per target column of `y`.
///
/// Solves `(Z'Z + lambda I) w = Z' y` where `Z` is the centred (and, when
/// enabled, scaled) design. lambda > 0 uses a Cholesky factorization;
/// lambda = 0 uses an SVD pseudo-inverse, which gives the minimum-norm
/// solution for rank-deficient designs.
pub fn fit(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    target_names: &[String],
    target_kinds: &[TargetKind],
    params: RidgeParams,
) -> Result<RidgeModel, RidgeError> {
    if x.is_empty() {
        return Err(RidgeError::NoRows);
    }
    if x.len() != y.len() {
        return Err(RidgeError::RowCount {
            features: x.len(),
            targets: y.len(),
        });
    }
    if !(params.lambda.is_finite() && params.lambda >= 0.0) {
        return Err(RidgeError::Lambda(params.lambda));
    }
    let f = x[0].len();
    let t = target_names.len();
    assert_eq!(t, target_kinds.len(), "one kind per target");
    check_rows(x, f, "features")?;
    check_rows(y, t, "targets")?;
    let n = x.len();

    let (mean, std) = column_stats(x);
    let feature_mean = if params.fit_intercept { mean } else { vec![0.0; f] };
    let feature_scale: Vec<f64> = if params.standardize {
        std.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect()
    } else {
        vec![1.0; f]
    };
    let y_mean: Vec<f64> = if params.fit_intercept {
        (0..t).map(|k| y.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect()
    } else {
        vec![0.0; t]
    };

    let z = DMatrix::from_fn(n, f, |i, j| (x[i][j] - feature_mean[j]) / feature_scale[j]);
    let yc = DMatrix::from_fn(n, t, |i, k| y[i][k] - y_mean[k]);

    let (w, rank_deficient) = if params.lambda > 0.0 {
        let gram = z.transpose() * &z + DMatrix::identity(f, f) * params.lambda;
        let rhs = z.transpose() * &yc;
        match gram.clone().cholesky() {
            Some(ch) => (ch.solve(&rhs), false),
            None => (
                gram.svd(true, true)
                    .solve(&rhs, RANK_TOL)
                    .map_err(|e| RidgeError::Solve(e.to_string()))?,
                false,
            ),
        }
    } else {
        let svd = z.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax.max(f64::MIN_POSITIVE)).count();
        let w = svd
            .solve(&yc, RANK_TOL * smax.max(f64::MIN_POSITIVE))
            .map_err(|e| RidgeError::Solve(e.to_string()))?;
        (w, rank < f)
    };

    let weights = (0..t).map(|k| w.column(k).iter().copied().collect()).collect();
    Ok(RidgeModel {
        feature_mode: None,
        feature_names: Vec::new(),
        target_names: target_names.to_vec(),
        target_kinds: target_kinds.to_vec(),
        params,
        feature_mean,
        feature_scale,
        weights,
        intercepts: y_mean,
        rank_deficient,
        n_train: n,
    })
}

impl RidgeModel {
    pub fn n_features(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_names.len()
    }

    /// Unclipped linear output.
    pub fn predict_raw(&self, features: &[f64]) -> Result<Vec<f64>, RidgeError> {
        if features.len() != self.n_features() {
            return Err(RidgeError::Dimension {
                row: 0,
                got: features.len(),
                expected: self.n_features(),
            });
        }
        let z: Vec<f64> = features
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Ok(self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Linear output with masses clipped at 0 and percentages to [0, 100].
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>, RidgeError> {
        let mut out = self.predict_raw(features)?;
        for (v, k) in out.iter_mut().zip(&self.target_kinds) {
            *v = k.clip(*v);
        }
        if self.params.renormalize_pct {
            let pct: f64 = out
                .iter()
                .zip(&self.target_kinds)
                .filter(|(_, k)| **k == TargetKind::Percent)
                .map(|(v, _)| v)
                .sum();
            if pct > 0.0 {
                for (v, k) in out.iter_mut().zip(&self.target_kinds) {
                    if *k == TargetKind::Percent {
                        *v *= 100.0 / pct;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, RidgeError> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                self.predict(r).map_err(|e| match e {
                    RidgeError::Dimension { got, expected, .. } => RidgeError::Dimension { row: i, got, expected },
                    e => e,
                })
            })
            .collect()
    }

    /// SHA-256 of the model's JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Species names if the targets are `total_mass` then `<species>_pct`.
    pub fn biomass_species(&self) -> Result<Vec<String>, RidgeError> {
        let layout = || RidgeError::TargetLayout(self.target_names.clone());
        let (first, rest) = self.target_names.split_first().ok_or_else(layout)?;
        if first != "total_mass" || self.target_kinds[0] != TargetKind::Mass {
            return Err(layout());
        }
        rest.iter()
            .map(|n| n.strip_suffix("_pct").map(str::to_string).ok_or_else(layout))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoLabels {
    pub table: LabelTable,
    pub model_hash: String,
}

/// Predicts a label row for every unlabeled image.
pub fn autolabel(model: &RidgeModel, image_ids: &[String], features: &[Vec<f64>]) -> Result<AutoLabels, RidgeError> {
    if image_ids.len() != features.len() {
        return Err(RidgeError::Ids {
            ids: image_ids.len(),
            rows: features.len(),
        });
    }
    let species = model.biomass_species()?;
    let preds = model.predict_many(features)?;
    let mut table = LabelTable::new(species);
    for (id, p) in image_ids.iter().zip(preds) {
        table
            .push(LabelRow {
                image_id: id.clone(),
                total_mass: p[0],
                species_pct: p[1..].to_vec(),
                source: LabelSource::Automatic,
            })
            .expect("clipped predictions satisfy automatic-row checks");
    }
    Ok(AutoLabels {
        table,
        model_hash: model.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, kind: TargetKind) -> (Vec<String>, Vec<TargetKind>) {
        (vec![name.to_string()], vec![kind])
    }

    #[test]
    fn raw_single_feature_closed_form() {
        let (n, k) = one("y", TargetKind::Mass);
        let params = RidgeParams {
            lambda: 1.0,
            standardize: false,
            fit_intercept: false,
            renormalize_pct: false,
        };
        let m = fit(&[vec![1.0], vec![2.0]], &[vec![1.0], vec![2.0]], &n, &k, params).unwrap();
        assert!((m.weights[0][0] - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.intercepts, vec![0.0]);
    }

    #[test]
    fn unregularized_square_system_interpolates() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0]];
        let y = vec![vec![1.0], vec![-2.0], vec![5.0]];
        let (n, k) = one("y", TargetKind::Mass);
        let params = RidgeParams {
            lambda: 0.0,
            ..Default::default()
        };
        let m = fit(&x, &y, &n, &k, params).unwrap();
        assert!(!m.rank_deficient);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict_raw(xi).unwrap()[0] - yi[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_design_is_flagged_min_norm() {
        // Second column duplicates the first.
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]];
        let y = vec![vec![2.0], vec![4.0], vec![8.0]];
        let (n, k) = one("y", TargetKind::Mass);
        let params = RidgeParams {
            lambda: 0.0,
            standardize: false,
            fit_intercept: false,
            renormalize_pct: false,
        };
        let m = fit(&x, &y, &n, &k, params).unwrap();
        assert!(m.rank_deficient);
        // Minimum norm splits the weight evenly.
        assert!((m.weights[0][0] - 1.0).abs() < 1e-9 && (m.weights[0][1] - 1.0).abs() < 1e-9);
    }

    fn intercept_only(b: [f64; 4]) -> RidgeModel {
        let (names, kinds) = biomass_targets(&["grass".into(), "clover".into(), "weeds".into()]);
        RidgeModel {
            feature_mode: None,
            feature_names: vec![],
            target_names: names,
            target_kinds: kinds,
            params: RidgeParams::default(),
            feature_mean: vec![0.0; 2],
            feature_scale: vec![1.0; 2],
            weights: vec![vec![0.0; 2]; 4],
            intercepts: b.to_vec(),
            rank_deficient: false,
            n_train: 1,
        }
    }

    #[test]
    fn intercept_only_prediction_and_clipping() {
        let m = intercept_only([1500.0, 90.0, 7.0, 3.0]);
        assert_eq!(m.predict(&[0.3, 0.9]).unwrap(), vec![1500.0, 90.0, 7.0, 3.0]);
        let m = intercept_only([-50.0, 120.0, -3.0, 3.0]);
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), vec![0.0, 100.0, 0.0, 3.0]);
        assert!(matches!(m.predict(&[0.0]), Err(RidgeError::Dimension { .. })));
    }

    #[test]
    fn renormalization_is_opt_in() {
        let mut m = intercept_only([1000.0, 80.0, 10.0, 0.0]);
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap()[1..].iter().sum::<f64>(), 90.0);
        m.params.renormalize_pct = true;
        let p = m.predict(&[0.0, 0.0]).unwrap();
        assert!((p[1..].iter().sum::<f64>() - 100.0).abs() < 1e-12);
        assert_eq!(p[0], 1000.0);
    }

    #[test]
    fn autolabel_packages_rows() {
        let m = intercept_only([1500.0, 130.0, -4.0, 3.0]);
        let ids: Vec<String> = (0..594).map(|i| format!("u{i}")).collect();
        let feats = vec![vec![0.0, 0.0]; 594];
        let out = autolabel(&m, &ids, &feats).unwrap();
        assert_eq!(out.table.rows.len(), 594);
        assert_eq!(out.model_hash.len(), 64);
        for r in &out.table.rows {
            assert_eq!(r.source, LabelSource::Automatic);
            assert!(r.species_pct.iter().all(|p| (0.0..=100.0).contains(p)));
        }
        let empty = autolabel(&m, &[], &[]).unwrap();
        assert!(empty.table.rows.is_empty());
    }

    #[test]
    fn input_validation() {
        let (n, k) = one("y", TargetKind::Mass);
        assert_eq!(fit(&[], &[], &n, &k, RidgeParams::default()).unwrap_err(), RidgeError::NoRows);
        let bad = RidgeParams {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(matches!(fit(&[vec![1.0]], &[vec![1.0]], &n, &k, bad), Err(RidgeError::Lambda(_))));
        assert!(matches!(
            fit(&[vec![1.0], vec![1.0, 2.0]], &[vec![1.0], vec![1.0]], &n, &k, RidgeParams::default()),
            Err(RidgeError::Dimension { row: 1, .. })
        ));
    }
}
