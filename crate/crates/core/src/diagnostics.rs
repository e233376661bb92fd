//! Chain-quality metrics: ACF, batch-means ESS, multivariate ESS and mean
//! squared jump.
//!
//! Long-run variances use nonoverlapping batch means with batch size
//! `floor(sqrt(m))`; the incomplete final batch is discarded.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg_sampling::{CholeskyFactor, LinalgError};

/// Minimum chain length per dimension for ESS and mESS.
pub const MIN_LEN_PER_DIM: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("series of length {len} is too short (need at least {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("series has zero variance")]
    DegenerateVariance,
    #[error(
        "{which} is singular: coordinate {coordinate} lies in the span of coordinates 0..{coordinate}"
    )]
    SingularCovariance {
        which: &'static str,
        coordinate: usize,
    },
    #[error("draw matrix has no columns")]
    Empty,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample autocorrelations at lags `0..=max_lag`, biased (1/m) denominator.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagError> {
    let m = series.len();
    if m <= max_lag {
        return Err(DiagError::TooShort {
            len: m,
            needed: max_lag + 1,
        });
    }
    let xbar = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - xbar).collect();
    let gamma0 = centered.iter().map(|c| c * c).sum::<f64>();
    if !(gamma0 > 0.0) {
        return Err(DiagError::DegenerateVariance);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for k in 1..=max_lag {
        let gk: f64 = centered[..m - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum();
        out.push(gk / gamma0);
    }
    Ok(out)
}

/// Batch size `floor(sqrt(m))`.
pub fn batch_size(m: usize) -> usize {
    (m as f64).sqrt().floor() as usize
}

/// Sample covariance (1/(m-1)) and batch-means covariance of the rows.
fn covariances(draws: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, d) = draws.shape();
    let colmean = draws.row_mean();
    let centered = DMatrix::from_fn(m, d, |i, j| draws[(i, j)] - colmean[j]);
    let lambda = centered.tr_mul(&centered) / (m as f64 - 1.0);

    let b = batch_size(m);
    let a = m / b;
    let mut batch_means = DMatrix::zeros(a, d);
    for k in 0..a {
        let block = draws.rows(k * b, b);
        batch_means.row_mut(k).copy_from(&block.row_mean());
    }
    let grand = batch_means.row_mean();
    for k in 0..a {
        for j in 0..d {
            batch_means[(k, j)] -= grand[j];
        }
    }
    let sigma = batch_means.tr_mul(&batch_means) * (b as f64 / (a as f64 - 1.0));
    (lambda, sigma)
}

/// Univariate effective sample size `m * lambda^2 / sigma^2`.
pub fn ess(series: &[f64]) -> Result<f64, DiagError> {
    let m = series.len();
    if m < MIN_LEN_PER_DIM {
        return Err(DiagError::TooShort {
            len: m,
            needed: MIN_LEN_PER_DIM,
        });
    }
    let draws = DMatrix::from_column_slice(m, 1, series);
    let (lambda, sigma) = covariances(&draws);
    if !(lambda[(0, 0)] > 0.0) || !(sigma[(0, 0)] > 0.0) {
        return Err(DiagError::DegenerateVariance);
    }
    Ok(m as f64 * lambda[(0, 0)] / sigma[(0, 0)])
}

fn factor(s: &DMatrix<f64>, which: &'static str) -> Result<CholeskyFactor, DiagError> {
    CholeskyFactor::new(s).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { pivot, .. } => DiagError::SingularCovariance {
            which,
            coordinate: pivot,
        },
        _ => DiagError::DegenerateVariance,
    })
}

/// Multivariate effective sample size `m * (det Λ / det Σ)^(1/d)`.
pub fn mess(draws: &DMatrix<f64>) -> Result<f64, DiagError> {
    let (m, d) = draws.shape();
    if d == 0 {
        return Err(DiagError::Empty);
    }
    if m < MIN_LEN_PER_DIM * d {
        return Err(DiagError::TooShort {
            len: m,
            needed: MIN_LEN_PER_DIM * d,
        });
    }
    let (lambda, sigma) = covariances(draws);
    let lf = factor(&lambda, "sample covariance")?;
    let sf = factor(&sigma, "batch-means covariance")?;
    let log_ratio = (lf.log_det() - sf.log_det()) / d as f64;
    Ok(m as f64 * log_ratio.exp())
}

/// Mean squared Euclidean jump between consecutive rows; 0 for fewer than 2 rows.
pub fn msj(draws: &DMatrix<f64>) -> f64 {
    let m = draws.nrows();
    if m < 2 {
        return 0.0;
    }
    let total: f64 = (1..m)
        .map(|i| (draws.row(i) - draws.row(i - 1)).norm_squared())
        .sum();
    total / (m - 1) as f64
}

/// Named set of coordinates (column indices into a draw matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub mean: f64,
    /// Lags `0..=max_lag`; `None` when undefined (e.g. constant series).
    pub acf: Option<Vec<f64>>,
    pub ess: Option<f64>,
    /// Batch-means Monte Carlo standard error of the mean.
    pub mcse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub coordinates: Vec<String>,
    pub mess: Option<f64>,
    pub mess_error: Option<String>,
    pub msj: f64,
}

/// Per-second rates; kept apart from the deterministic metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    pub ess_per_second: Vec<Option<f64>>,
    pub mess_per_second: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub draws: usize,
    pub max_lag: usize,
    pub coordinates: Vec<CoordinateSummary>,
    pub groups: Vec<GroupSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

/// Monte Carlo standard error of the mean by batch means.
pub fn mcse(series: &[f64]) -> Result<f64, DiagError> {
    let m = series.len();
    if m < MIN_LEN_PER_DIM {
        return Err(DiagError::TooShort {
            len: m,
            needed: MIN_LEN_PER_DIM,
        });
    }
    let (_, sigma) = covariances(&DMatrix::from_column_slice(m, 1, series));
    Ok((sigma[(0, 0)] / m as f64).sqrt())
}

impl DiagnosticsReport {
    /// Computes every metric for the columns of `draws`. Metrics that are
    /// undefined for a coordinate or group are reported as `None`.
    pub fn compute(
        draws: &DMatrix<f64>,
        names: &[String],
        groups: &[CoordinateGroup],
        max_lag: usize,
        seconds: Option<f64>,
    ) -> Self {
        assert_eq!(draws.ncols(), names.len(), "one name per column");
        let coordinates: Vec<CoordinateSummary> = (0..draws.ncols())
            .map(|j| {
                let col: Vec<f64> = draws.column(j).iter().copied().collect();
                CoordinateSummary {
                    name: names[j].clone(),
                    mean: if col.is_empty() { f64::NAN } else { mean(&col) },
                    acf: acf(&col, max_lag).ok(),
                    ess: ess(&col).ok(),
                    mcse: mcse(&col).ok(),
                }
            })
            .collect();
        let groups: Vec<GroupSummary> = groups
            .iter()
            .map(|g| {
                let sub = draws.select_columns(&g.columns);
                let (mess_value, mess_error) = match mess(&sub) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                GroupSummary {
                    name: g.name.clone(),
                    coordinates: g.columns.iter().map(|&c| names[c].clone()).collect(),
                    mess: mess_value,
                    mess_error,
                    msj: msj(&sub),
                }
            })
            .collect();
        let timing = seconds.map(|s| Timing {
            seconds: s,
            ess_per_second: coordinates.iter().map(|c| c.ess.map(|e| e / s)).collect(),
            mess_per_second: groups.iter().map(|g| g.mess.map(|e| e / s)).collect(),
        });
        Self {
            draws: draws.nrows(),
            max_lag,
            coordinates,
            groups,
            timing,
        }
    }

    pub fn without_timing(&self) -> Self {
        Self {
            timing: None,
            ..self.clone()
        }
    }
}

/// Column means of a draw matrix.
pub fn column_means(draws: &DMatrix<f64>) -> DVector<f64> {
    draws.row_mean().transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(m: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn acf_lag_zero_and_errors() {
        let x = normals(50, 1);
        let r = acf(&x, 5).unwrap();
        assert_eq!(r[0], 1.0);
        assert_eq!(r.len(), 6);
        assert_eq!(acf(&[2.0; 10], 2), Err(DiagError::DegenerateVariance));
        assert!(matches!(acf(&x[..3], 3), Err(DiagError::TooShort { .. })));
    }

    #[test]
    fn acf_hand_example() {
        // x = (1, 2, 3, 4): centered (-1.5, -0.5, 0.5, 1.5), gamma0 = 5,
        // lag-1 sum = 0.75 - 0.25 + 0.75 = 1.25.
        let r = acf(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!((r[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ess_preconditions() {
        assert!(matches!(ess(&normals(99, 2)), Err(DiagError::TooShort { .. })));
        assert_eq!(ess(&[1.0; 200]), Err(DiagError::DegenerateVariance));
        let d = DMatrix::from_column_slice(150, 2, &normals(300, 3));
        assert!(matches!(mess(&d), Err(DiagError::TooShort { .. })));
    }

    #[test]
    fn mess_singular_names_coordinate() {
        let x = normals(400, 4);
        let d = DMatrix::from_fn(400, 3, |i, j| if j == 2 { 2.0 * x[i] } else if j == 0 { x[i] } else { (i as f64).sin() });
        match mess(&d) {
            Err(DiagError::SingularCovariance { coordinate, .. }) => assert_eq!(coordinate, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mess_one_dimension_matches_ess() {
        let x = normals(10_000, 5);
        let e = ess(&x).unwrap();
        let me = mess(&DMatrix::from_column_slice(x.len(), 1, &x)).unwrap();
        assert!(((e - me) / e).abs() < 1e-12);
    }

    #[test]
    fn msj_small_cases() {
        assert_eq!(msj(&DMatrix::from_element(5, 2, 3.0)), 0.0);
        let alt = DMatrix::from_fn(6, 2, |i, j| if i % 2 == 0 { j as f64 } else { 1.0 + 2.0 * j as f64 });
        // a = (0, 1), b = (1, 3): |a - b|^2 = 1 + 4
        assert!((msj(&alt) - 5.0).abs() < 1e-15);
        assert_eq!(msj(&DMatrix::zeros(1, 2)), 0.0);
    }

    #[test]
    fn report_structure() {
        let x = normals(2000, 6);
        let draws = DMatrix::from_column_slice(1000, 2, &x);
        let names = vec!["a".to_string(), "b".to_string()];
        let groups = vec![CoordinateGroup { name: "all".into(), columns: vec![0, 1] }];
        let rep = DiagnosticsReport::compute(&draws, &names, &groups, 5, Some(2.0));
        assert_eq!(rep.coordinates.len(), 2);
        assert_eq!(rep.coordinates[0].acf.as_ref().unwrap()[0], 1.0);
        let t = rep.timing.as_ref().unwrap();
        assert_eq!(t.ess_per_second[0], rep.coordinates[0].ess.map(|e| e / 2.0));
        assert_eq!(rep.groups[0].coordinates, names);
        assert!(rep.groups[0].mess.unwrap() > 0.0);
        assert!(rep.without_timing().timing.is_none());
    }
}
