//! Dense Cholesky factorization, triangular solves and Gaussian draws in
//! precision form, `x ~ N(S^{-1} t, S^{-1})`, without forming `S^{-1}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::PriorSpec;

/// Relative asymmetry accepted by [`PrecisionDraw::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite: Cholesky pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |S[{row},{col}] - S[{col},{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Lower-triangular Cholesky factor `L` with `S = L L^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

impl CholeskyFactor {
    /// Factors a symmetric matrix, reading only its lower triangle.
    ///
    /// A pivot at or below `k * eps * max|S_ii|` counts as a failure, and the
    /// error names the pivot index.
    pub fn new(s: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let k = s.nrows();
        if s.ncols() != k {
            return Err(LinalgError::NotSquare {
                rows: k,
                cols: s.ncols(),
            });
        }
        let max_diag = (0..k).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
        let floor = k as f64 * f64::EPSILON * max_diag;
        let mut l = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            let mut d = s[(j, j)];
            for c in 0..j {
                d -= l[(j, c)] * l[(j, c)];
            }
            if !(d > floor) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..k {
                let mut v = s[(i, j)];
                for c in 0..j {
                    v -= l[(i, c)] * l[(j, c)];
                }
                l[(i, j)] = v / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solves `L w = b`.
    pub fn forward_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.lower;
        let k = self.dim();
        let mut w = b.clone();
        for i in 0..k {
            let mut v = w[i];
            for c in 0..i {
                v -= l[(i, c)] * w[c];
            }
            w[i] = v / l[(i, i)];
        }
        w
    }

    /// Solves `L^T x = b`.
    pub fn back_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.lower;
        let k = self.dim();
        let mut x = b.clone();
        for i in (0..k).rev() {
            let mut v = x[i];
            for r in (i + 1)..k {
                v -= l[(r, i)] * x[r];
            }
            x[i] = v / l[(i, i)];
        }
        x
    }

    /// Solves `S x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.back_solve(&self.forward_solve(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// A Gaussian `N(S^{-1} t, S^{-1})` given by its precision `S` and shift `t`,
/// with `S` already factored.
#[derive(Debug, Clone)]
pub struct PrecisionDraw {
    precision: DMatrix<f64>,
    shift: DVector<f64>,
    factor: CholeskyFactor,
}

impl PrecisionDraw {
    pub fn new(precision: DMatrix<f64>, shift: DVector<f64>) -> Result<Self, LinalgError> {
        let k = precision.nrows();
        if precision.ncols() != k {
            return Err(LinalgError::NotSquare {
                rows: k,
                cols: precision.ncols(),
            });
        }
        if shift.len() != k {
            return Err(LinalgError::DimensionMismatch {
                context: "precision shift",
                expected: k,
                found: shift.len(),
            });
        }
        let scale = precision.amax().max(f64::MIN_POSITIVE);
        for i in 0..k {
            for j in 0..i {
                let diff = (precision[(i, j)] - precision[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(LinalgError::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
        let factor = CholeskyFactor::new(&precision)?;
        Ok(Self {
            precision,
            shift,
            factor,
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `S^{-1} t`.
    pub fn mean(&self) -> DVector<f64> {
        self.factor.solve(&self.shift)
    }

    /// Forward-solve `L w = t`, draw `z ~ N(0, I)`, back-solve `L^T x = w + z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let w = self.factor.forward_solve(&self.shift);
        let z = DVector::from_fn(w.len(), |_, _| StandardNormal.sample(rng));
        self.factor.back_solve(&(w + z))
    }
}

/// Draws `x ~ N(S^{-1} t, S^{-1})`.
pub fn chol_solve_sample<R: Rng + ?Sized>(
    s: &DMatrix<f64>,
    t: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>, LinalgError> {
    if t.len() != s.nrows() {
        return Err(LinalgError::DimensionMismatch {
            context: "precision shift",
            expected: s.nrows(),
            found: t.len(),
        });
    }
    let factor = CholeskyFactor::new(s)?;
    let w = factor.forward_solve(t);
    let z = DVector::from_fn(w.len(), |_, _| StandardNormal.sample(rng));
    Ok(factor.back_solve(&(w + z)))
}

/// `A^T diag(w) A`, accumulated row by row over the upper triangle and then
/// mirrored, so the result is exactly symmetric.
pub fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    let mut out = DMatrix::<f64>::zeros(k, k);
    for (i, row) in a.row_iter().enumerate() {
        let wi = w[i];
        for c in 0..k {
            let v = wi * row[c];
            if v == 0.0 {
                continue;
            }
            for d in c..k {
                out[(c, d)] += v * row[d];
            }
        }
    }
    for c in 0..k {
        for d in (c + 1)..k {
            out[(d, c)] = out[(c, d)];
        }
    }
    out
}

/// Precision and shift of `eta | omega, tau, y`:
/// `S = M^T Omega M + blockdiag(Q, D(tau))` and `t = M^T kappa + (Q mu0, 0)`.
pub fn build_eta_precision(
    m: &DMatrix<f64>,
    omega: &DVector<f64>,
    tau: &DVector<f64>,
    kappa: &DVector<f64>,
    prior: &PriorSpec,
    blocks: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>), LinalgError> {
    let n = m.nrows();
    let k = m.ncols();
    let p = prior.q.nrows();
    let q: usize = blocks.iter().sum();
    for (context, expected, found) in [
        ("omega length", n, omega.len()),
        ("kappa length", n, kappa.len()),
        ("tau length", blocks.len(), tau.len()),
        ("columns of M", p + q, k),
        ("prior mean length", p, prior.mu0.len()),
        ("prior precision columns", p, prior.q.ncols()),
    ] {
        if expected != found {
            return Err(LinalgError::DimensionMismatch {
                context,
                expected,
                found,
            });
        }
    }

    let mut s = weighted_gram(m, omega);
    for i in 0..p {
        for j in 0..p {
            s[(i, j)] += prior.q[(i, j)];
        }
    }
    let mut offset = p;
    for (&size, &tj) in blocks.iter().zip(tau.iter()) {
        for d in offset..offset + size {
            s[(d, d)] += tj;
        }
        offset += size;
    }

    let mut t = m.tr_mul(kappa);
    let prior_shift = &prior.q * &prior.mu0;
    for i in 0..p {
        t[i] += prior_shift[i];
    }
    Ok((s, t))
}
