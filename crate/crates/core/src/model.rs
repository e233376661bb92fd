//! The logistic linear mixed model: design matrices, priors, random-effect
//! block structure, chain state, validation, and oracle log-densities.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::ergodicity;
use crate::linalg_sampling::CholeskyFactor;
use crate::pg_random::{self, DEFAULT_TRUNC_TOL};

/// Relative tolerance used by [`ModelSpec::validate`] for symmetry, PSD and
/// rank checks.
pub const VALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in log-density term `{term}`")]
    NonFinite { term: &'static str },
    #[error("quadrature over u supports q <= 2, got q = {0}")]
    UnsupportedDimension(usize),
    #[error("quadrature order must be at least 20, got {0}")]
    QuadOrder(usize),
}

/// Prior hyperparameters.
///
/// `beta ~ N(mu0, Q^{-1})` up to proportionality, with `Q = 0` encoding the
/// flat prior, and `tau_j` has density proportional to
/// `tau_j^(a_j - 1) exp(-b_j tau_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu0: DVector<f64>,
    pub q: DMatrix<f64>,
    pub a: Vec<f64>,
    /// Rate parameters `b_j`.
    pub b: Vec<f64>,
}

impl PriorSpec {
    pub fn new(mu0: DVector<f64>, q: DMatrix<f64>, a: Vec<f64>, b: Vec<f64>) -> Self {
        Self { mu0, q, a, b }
    }

    /// Flat prior on `beta` (`Q = 0`, `mu0 = 0`).
    pub fn flat(p: usize, a: Vec<f64>, b: Vec<f64>) -> Self {
        Self::new(DVector::zeros(p), DMatrix::zeros(p, p), a, b)
    }

    /// `true` when `Q` is the zero matrix, i.e. `pi(beta) ∝ 1`.
    pub fn is_flat(&self) -> bool {
        self.q.iter().all(|&v| v == 0.0)
    }

    /// `true` when `Q` admits a Cholesky factorization.
    pub fn is_proper(&self) -> bool {
        self.q.nrows() > 0 && CholeskyFactor::new(&self.q).is_ok()
    }
}

/// A single-chain state `(beta, u, omega, tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
    pub omega: DVector<f64>,
    pub tau: DVector<f64>,
}

impl ChainState {
    /// `eta = (beta, u)`.
    pub fn eta(&self) -> DVector<f64> {
        let p = self.beta.len();
        DVector::from_fn(p + self.u.len(), |i, _| {
            if i < p {
                self.beta[i]
            } else {
                self.u[i - p]
            }
        })
    }

    pub fn set_eta(&mut self, eta: &DVector<f64>) {
        let p = self.beta.len();
        self.beta.copy_from(&eta.rows(0, p));
        self.u.copy_from(&eta.rows(p, self.u.len()));
    }

    /// `beta = 0`, `u = 0`, `tau = 1`, `omega = 1`.
    pub fn default_for(spec: &ModelSpec) -> Self {
        Self {
            beta: DVector::zeros(spec.p()),
            u: DVector::zeros(spec.q()),
            omega: DVector::from_element(spec.n(), 1.0),
            tau: DVector::from_element(spec.r(), 1.0),
        }
    }

    /// Checks dimensions against `spec` and positivity of `omega` and `tau`.
    pub fn check(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        let dims = [
            ("beta", self.beta.len(), spec.p()),
            ("u", self.u.len(), spec.q()),
            ("omega", self.omega.len(), spec.n()),
            ("tau", self.tau.len(), spec.r()),
        ];
        for (name, found, expected) in dims {
            if found != expected {
                return Err(ModelError::Dimension(format!(
                    "{name} has length {found}, expected {expected}"
                )));
            }
        }
        if self.omega.iter().any(|&w| !(w > 0.0)) {
            return Err(ModelError::Dimension("omega must be positive".into()));
        }
        if self.tau.iter().any(|&t| !(t > 0.0)) {
            return Err(ModelError::Dimension("tau must be positive".into()));
        }
        Ok(())
    }
}

/// One failed check reported by [`ModelSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoObservations,
    NoFixedEffects,
    NoRandomEffects,
    NoBlocks,
    BlockSizesInconsistent { sum: usize, q: usize },
    EmptyBlock { block: usize },
    NonBinaryResponse { row: usize, value: f64 },
    NonFiniteDesign { matrix: &'static str, row: usize, col: usize },
    PriorDimension { field: &'static str, expected: usize, found: usize },
    PriorNotSymmetric,
    PriorNotPsd { min_eigenvalue: f64 },
    NegativeRate { block: usize, b: f64 },
    ShapeNotPositive { block: usize, a: f64, q_j: usize },
    FixedDesignRankDeficient { rank: usize, p: usize },
    JointDesignRankDeficient { rank: usize, required: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoObservations => write!(f, "no observations (n = 0)"),
            NoFixedEffects => write!(f, "no fixed-effect columns (p = 0)"),
            NoRandomEffects => write!(f, "no random-effect columns (q = 0)"),
            NoBlocks => write!(f, "no random-effect blocks (r = 0)"),
            BlockSizesInconsistent { sum, q } => {
                write!(f, "block sizes inconsistent: sum of q_j is {sum} but q = {q}")
            }
            EmptyBlock { block } => write!(f, "block {block} has size 0"),
            NonBinaryResponse { row, value } => {
                write!(f, "response at row {row} is {value}, expected 0 or 1")
            }
            NonFiniteDesign { matrix, row, col } => {
                write!(f, "non-finite entry in {matrix} at ({row}, {col})")
            }
            PriorDimension {
                field,
                expected,
                found,
            } => write!(f, "prior field {field} has size {found}, expected {expected}"),
            PriorNotSymmetric => write!(f, "prior precision Q is not symmetric"),
            PriorNotPsd { min_eigenvalue } => write!(
                f,
                "prior precision Q is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            NegativeRate { block, b } => write!(f, "rate b_{block} = {b} is negative"),
            ShapeNotPositive { block, a, q_j } => write!(
                f,
                "a_j + q_j/2 > 0 fails for block {block}: a = {a}, q_j = {q_j}"
            ),
            FixedDesignRankDeficient { rank, p } => {
                write!(f, "X is rank deficient: rank {rank} < p = {p}")
            }
            JointDesignRankDeficient { rank, required } => {
                write!(f, "M = [X Z] is rank deficient: rank {rank} < p + q = {required}")
            }
        }
    }
}

/// Data and prior of a logistic linear mixed model.
///
/// Immutable once built. `M = [X Z]` and `kappa = y - 1/2` are cached.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    blocks: Vec<usize>,
    prior: PriorSpec,
    m: DMatrix<f64>,
    kappa: DVector<f64>,
}

impl ModelSpec {
    /// Assembles a model. Only row counts are checked here; everything else
    /// is reported by [`ModelSpec::validate`].
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        y: DVector<f64>,
        blocks: Vec<usize>,
        prior: PriorSpec,
    ) -> Result<Self, ModelError> {
        if x.nrows() != z.nrows() || x.nrows() != y.len() {
            return Err(ModelError::Dimension(format!(
                "X has {} rows, Z has {} rows, y has length {}",
                x.nrows(),
                z.nrows(),
                y.len()
            )));
        }
        let n = x.nrows();
        let (p, q) = (x.ncols(), z.ncols());
        let mut m = DMatrix::zeros(n, p + q);
        m.columns_mut(0, p).copy_from(&x);
        m.columns_mut(p, q).copy_from(&z);
        let kappa = y.map(|v| v - 0.5);
        Ok(Self {
            x,
            z,
            y,
            blocks,
            prior,
            m,
            kappa,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }
    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }
    /// `M = [X Z]`.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }
    /// `kappa_i = y_i - 1/2`.
    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn r(&self) -> usize {
        self.blocks.len()
    }

    /// Index ranges of each block `u_j` within `u`.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        block_ranges(&self.blocks)
    }

    /// Checks every structural and hyperparameter invariant.
    ///
    /// Rank checks on `X` and `M` apply only when `Q` is not positive
    /// definite; with a proper `beta` prior both precisions are PD regardless.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n, p, q, r) = (self.n(), self.p(), self.q(), self.r());
        if n == 0 {
            out.push(Violation::NoObservations);
        }
        if p == 0 {
            out.push(Violation::NoFixedEffects);
        }
        if q == 0 {
            out.push(Violation::NoRandomEffects);
        }
        if r == 0 {
            out.push(Violation::NoBlocks);
        }
        let sum: usize = self.blocks.iter().sum();
        if sum != q {
            out.push(Violation::BlockSizesInconsistent { sum, q });
        }
        for (j, &qj) in self.blocks.iter().enumerate() {
            if qj == 0 {
                out.push(Violation::EmptyBlock { block: j });
            }
        }
        for (row, &v) in self.y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                out.push(Violation::NonBinaryResponse { row, value: v });
            }
        }
        for (name, mat) in [("X", &self.x), ("Z", &self.z)] {
            if let Some((row, col)) = first_non_finite(mat) {
                out.push(Violation::NonFiniteDesign {
                    matrix: name,
                    row,
                    col,
                });
            }
        }

        let prior = &self.prior;
        let mut prior_dims_ok = true;
        for (field, expected, found) in [
            ("mu0", p, prior.mu0.len()),
            ("Q rows", p, prior.q.nrows()),
            ("Q cols", p, prior.q.ncols()),
            ("a", r, prior.a.len()),
            ("b", r, prior.b.len()),
        ] {
            if expected != found {
                prior_dims_ok = false;
                out.push(Violation::PriorDimension {
                    field,
                    expected,
                    found,
                });
            }
        }
        if prior_dims_ok {
            let scale = prior.q.amax().max(1.0);
            if (&prior.q - prior.q.transpose()).amax() > VALIDATION_TOL * scale {
                out.push(Violation::PriorNotSymmetric);
            } else if p > 0 && !prior.is_flat() {
                let eig = SymmetricEigen::new(prior.q.clone()).eigenvalues;
                let min = eig.min();
                if min < -VALIDATION_TOL * scale {
                    out.push(Violation::PriorNotPsd { min_eigenvalue: min });
                }
            }
            for j in 0..r {
                if prior.b[j] < 0.0 || prior.b[j].is_nan() {
                    out.push(Violation::NegativeRate {
                        block: j,
                        b: prior.b[j],
                    });
                }
                let qj = self.blocks[j];
                if !(prior.a[j] + qj as f64 / 2.0 > 0.0) {
                    out.push(Violation::ShapeNotPositive {
                        block: j,
                        a: prior.a[j],
                        q_j: qj,
                    });
                }
            }
        }

        let needs_rank = !(prior_dims_ok && prior.is_proper());
        if needs_rank && n > 0 && p > 0 && out.iter().all(|v| !v.is_structural()) {
            let (rank_x, _) = ergodicity::check_rank(&self.x, VALIDATION_TOL);
            if rank_x < p {
                out.push(Violation::FixedDesignRankDeficient { rank: rank_x, p });
            }
            let (rank_m, _) = ergodicity::check_rank(&self.m, VALIDATION_TOL);
            if rank_m < p + q {
                out.push(Violation::JointDesignRankDeficient {
                    rank: rank_m,
                    required: p + q,
                });
            }
        }
        out
    }
}

impl Violation {
    fn is_structural(&self) -> bool {
        matches!(self, Violation::NonFiniteDesign { .. })
    }
}

pub(crate) fn block_ranges(blocks: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    blocks
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Bernoulli-logit log-likelihood `sum_i y_i eta_i - log(1 + e^eta_i)` at the
/// linear predictor `eta`.
pub fn logistic_log_likelihood(y: &DVector<f64>, linear_predictor: &DVector<f64>) -> f64 {
    y.iter()
        .zip(linear_predictor.iter())
        .map(|(&yi, &e)| yi * e - softplus(e))
        .sum()
}

/// Unnormalised log of the augmented joint posterior of `(beta, u, omega, tau)`:
///
/// `sum_i [kappa_i m_i'eta - omega_i (m_i'eta)^2 / 2 + log p(omega_i)]
///   + log phi_q(u; 0, D(tau)^{-1}) - (beta - mu0)'Q(beta - mu0)/2
///   + sum_j [(a_j - 1) log tau_j - b_j tau_j]`.
pub fn log_joint_unnorm(state: &ChainState, spec: &ModelSpec) -> Result<f64, ModelError> {
    state.check(spec)?;
    let lin = spec.m() * state.eta();
    let mut data = 0.0;
    let mut pg = 0.0;
    for i in 0..spec.n() {
        let e = lin[i];
        data += spec.kappa()[i] * e - 0.5 * state.omega[i] * e * e;
        pg += pg_random::pg1_log_density(state.omega[i], DEFAULT_TRUNC_TOL)
            .map_err(|_| ModelError::NonFinite { term: "pg_density" })?;
    }
    finite(data, "likelihood")?;
    finite(pg, "pg_density")?;

    let mut random = -0.5 * spec.q() as f64 * (2.0 * PI).ln();
    for (j, range) in spec.block_ranges().into_iter().enumerate() {
        let tj = state.tau[j];
        let qj = range.len() as f64;
        let ss = state.u.rows(range.start, range.len()).norm_squared();
        random += 0.5 * qj * tj.ln() - 0.5 * tj * ss;
    }
    finite(random, "random_effects")?;

    let prior = spec.prior();
    let beta_prior = if prior.is_flat() {
        0.0
    } else {
        let d = &state.beta - &prior.mu0;
        -0.5 * d.dot(&(&prior.q * &d))
    };
    finite(beta_prior, "beta_prior")?;

    let tau_prior: f64 = state
        .tau
        .iter()
        .enumerate()
        .map(|(j, &t)| (prior.a[j] - 1.0) * t.ln() - prior.b[j] * t)
        .sum();
    finite(tau_prior, "tau_prior")?;

    Ok(data + pg + random + beta_prior + tau_prior)
}

fn finite(v: f64, term: &'static str) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite { term })
    }
}

/// Nodes and weights of the `order`-point Gauss-Hermite rule for the
/// standard normal measure (weights sum to one), by the Golub-Welsch method.
pub fn gauss_hermite_normal(order: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Log of the marginal likelihood `L(beta, tau | y)`, integrating `u` out by
/// tensor-product Gauss-Hermite quadrature. The cost is `order^q`, so this is
/// an oracle for `q <= 2` only.
pub fn log_marginal_like_quad(
    spec: &ModelSpec,
    beta: &DVector<f64>,
    tau: &DVector<f64>,
    quad_order: usize,
) -> Result<f64, ModelError> {
    let q = spec.q();
    if q > 2 {
        return Err(ModelError::UnsupportedDimension(q));
    }
    if quad_order < 20 {
        return Err(ModelError::QuadOrder(quad_order));
    }
    if beta.len() != spec.p() || tau.len() != spec.r() {
        return Err(ModelError::Dimension(format!(
            "beta has length {}, tau has length {}; expected {} and {}",
            beta.len(),
            tau.len(),
            spec.p(),
            spec.r()
        )));
    }
    let fixed = spec.x() * beta;
    let mut sd = vec![0.0; q];
    for (j, range) in spec.block_ranges().into_iter().enumerate() {
        for k in range {
            sd[k] = 1.0 / tau[j].sqrt();
        }
    }
    let (nodes, weights) = gauss_hermite_normal(quad_order);
    let points = quad_order.pow(q as u32);
    let mut terms = Vec::with_capacity(points);
    let mut u = DVector::zeros(q);
    for idx in 0..points {
        let mut rest = idx;
        let mut log_w = 0.0;
        for k in 0..q {
            let node = rest % quad_order;
            rest /= quad_order;
            u[k] = sd[k] * nodes[node];
            log_w += weights[node].ln();
        }
        let lin = &fixed + spec.z() * &u;
        terms.push(log_w + logistic_log_likelihood(spec.y(), &lin));
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    finite(max + sum.ln(), "marginal_likelihood")
}
