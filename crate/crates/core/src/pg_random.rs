//! Pólya-Gamma random variables: exact sampling, density evaluation and moments.
//!
//! `PG(1, b)` draws use Devroye's alternating-series rejection sampler for the
//! tilted Jacobi variable `J*(1, b/2)` and rescale by `1/4`. The density of
//! `PG(1, 0)` is evaluated from one of its two alternating series
//! representations, whichever has monotonically decreasing terms at `x`.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use thiserror::Error;

/// Default relative truncation tolerance for the density series.
pub const DEFAULT_TRUNC_TOL: f64 = 1e-12;

/// Hard cap on the number of series terms summed by [`pg1_density`].
pub const MAX_SERIES_TERMS: usize = 200;

/// Crossover between the left (inverse-Gaussian) and right (exponential)
/// proposals, on the `J*` scale.
const TRUNC: f64 = 0.64;

/// `PG(1, 0)` argument at which the density switches series representation.
/// This is `TRUNC / 4`, the crossover expressed on the PG scale.
const SERIES_SWITCH: f64 = TRUNC / 4.0;

const PI_SQ: f64 = PI * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgError {
    #[error("density argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    #[error("truncation tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("invalid Pólya-Gamma parameters: a = {a}, b = {b} (need a > 0, b >= 0)")]
    InvalidParams { a: f64, b: f64 },
    #[error("PG(n, b) needs an integer shape n >= 1")]
    ZeroShape,
}

/// Parameters of a `PG(a, b)` distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParams {
    a: f64,
    b: f64,
}

impl PgParams {
    pub fn new(a: f64, b: f64) -> Result<Self, PgError> {
        if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(PgError::InvalidParams { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn shape(&self) -> f64 {
        self.a
    }

    pub fn tilt(&self) -> f64 {
        self.b
    }

    pub fn mean(&self) -> f64 {
        pg_mean(self.a, self.b)
    }
}

/// One of the two alternating series for the `PG(1, 0)` density, written as
/// `exp(log_prefactor) * sum_l (-1)^l (2l + 1) exp(-gap(l))` with `gap(0) = 0`.
#[derive(Debug, Clone, Copy)]
struct DensitySeries {
    x: f64,
    small_x: bool,
}

impl DensitySeries {
    fn at(x: f64) -> Self {
        Self {
            x,
            small_x: x <= SERIES_SWITCH,
        }
    }

    fn log_prefactor(&self) -> f64 {
        let x = self.x;
        if self.small_x {
            // (2 pi x^3)^(-1/2) exp(-1/(8x))
            -0.5 * (2.0 * PI).ln() - 1.5 * x.ln() - 1.0 / (8.0 * x)
        } else {
            // 2 pi exp(-pi^2 x / 2)
            (2.0 * PI).ln() - 0.5 * PI_SQ * x
        }
    }

    /// Unsigned magnitude of term `l` of the normalised sum.
    fn term(&self, l: usize) -> f64 {
        let k = 2.0 * l as f64 + 1.0;
        let gap = if self.small_x {
            (k * k - 1.0) / (8.0 * self.x)
        } else {
            // 2 pi^2 x ((l + 1/2)^2 - 1/4)
            0.5 * PI_SQ * self.x * (k * k - 1.0)
        };
        k * (-gap).exp()
    }

    /// Normalised sum truncated once the next term falls below
    /// `tol * |partial sum|`, or after `MAX_SERIES_TERMS` terms.
    fn sum(&self, tol: f64) -> f64 {
        let mut acc: f64 = 0.0;
        for l in 0..MAX_SERIES_TERMS {
            let t = self.term(l);
            if l > 0 && t < tol * acc.abs() {
                break;
            }
            if l % 2 == 0 {
                acc += t;
            } else {
                acc -= t;
            }
        }
        acc
    }
}

fn check_density_args(x: f64, trunc_tol: f64) -> Result<(), PgError> {
    if !(x > 0.0) {
        return Err(PgError::NonPositiveArgument(x));
    }
    if !(trunc_tol > 0.0) {
        return Err(PgError::BadTolerance(trunc_tol));
    }
    Ok(())
}

/// Density of `PG(1, 0)` at `x > 0`.
///
/// The alternating series is summed until the next term is smaller than
/// `trunc_tol` times the partial sum, so the result is within one term of the
/// converged value.
pub fn pg1_density(x: f64, trunc_tol: f64) -> Result<f64, PgError> {
    check_density_args(x, trunc_tol)?;
    let series = DensitySeries::at(x);
    Ok(series.log_prefactor().exp() * series.sum(trunc_tol))
}

/// Natural log of the `PG(1, 0)` density. Finite for arguments where
/// [`pg1_density`] underflows to zero.
pub fn pg1_log_density(x: f64, trunc_tol: f64) -> Result<f64, PgError> {
    check_density_args(x, trunc_tol)?;
    let series = DensitySeries::at(x);
    Ok(series.log_prefactor() + series.sum(trunc_tol).ln())
}

/// Partial sum of the `PG(1, 0)` density series using exactly `terms` terms.
///
/// The terms decrease monotonically for the representation chosen at `x`, so
/// consecutive partial sums bracket the density.
pub fn pg1_partial_sum(x: f64, terms: usize) -> Result<f64, PgError> {
    check_density_args(x, 1.0)?;
    let series = DensitySeries::at(x);
    let acc: f64 = (0..terms)
        .map(|l| {
            let t = series.term(l);
            if l % 2 == 0 {
                t
            } else {
                -t
            }
        })
        .sum();
    Ok(series.log_prefactor().exp() * acc)
}

/// Density of the exponentially tilted `PG(1, b)`:
/// `cosh(b/2) exp(-b^2 x / 2) p(x)`.
pub fn pg1_tilted_density(x: f64, b: f64, trunc_tol: f64) -> Result<f64, PgError> {
    let log_p = pg1_log_density(x, trunc_tol)?;
    Ok((log_cosh(0.5 * b) - 0.5 * b * b * x + log_p).exp())
}

fn log_cosh(t: f64) -> f64 {
    let t = t.abs();
    t + (-2.0 * t).exp().ln_1p() - LN_2
}

/// Mean of `PG(a, b)`: `a/4` at `b = 0`, otherwise `a tanh(b/2) / (2b)`.
pub fn pg_mean(a: f64, b: f64) -> f64 {
    let b = b.abs();
    if b < 1e-4 {
        // tanh(b/2)/(2b) = 1/4 - b^2/48 + b^4/480 - ...
        let b2 = b * b;
        a * (0.25 - b2 / 48.0 + b2 * b2 / 480.0)
    } else {
        a * (0.5 * b).tanh() / (2.0 * b)
    }
}

/// Exact draw from `PG(1, b)`.
///
/// # Panics
/// If `b` is negative or not finite.
pub fn sample_pg1<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    assert!(b >= 0.0 && b.is_finite(), "PG tilt must be finite and >= 0, got {b}");
    0.25 * sample_jacobi_star(0.5 * b, rng)
}

/// Draw from `PG(n, b)` for integer `n >= 1` as a sum of `n` independent
/// `PG(1, b)` draws.
pub fn sample_pg_int<R: Rng + ?Sized>(n: u32, b: f64, rng: &mut R) -> Result<f64, PgError> {
    if n == 0 {
        return Err(PgError::ZeroShape);
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(PgError::InvalidParams { a: n as f64, b });
    }
    Ok((0..n).map(|_| sample_pg1(b, rng)).sum())
}

/// Devroye's sampler for the tilted Jacobi variable `J*(1, z)`.
fn sample_jacobi_star<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let fz = 0.125 * PI_SQ + 0.5 * z * z;
    let right_mass = right_proposal_mass(z, fz);
    loop {
        let x = if rng.random::<f64>() < right_mass {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };

        // Alternating-series acceptance test: S_0 >= S_2 >= ... >= f >= ... >= S_3 >= S_1.
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Piecewise coefficient `a_n(x)` of the `J*(1, 0)` density series; the left
/// branch is used below `TRUNC` and the right branch above.
fn series_coef(n: usize, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    let k = h * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else {
        let log_a = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x;
        log_a.exp()
    }
}

/// Probability of drawing from the exponential right-tail proposal.
fn right_proposal_mass(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian with mean `1/z` and shape 1, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if z < 1.0 / t {
        // Mean beyond the truncation point: draw from the z = 0 limit
        // (a truncated Lévy law) and thin by the tilt.
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + e1 * t;
                    break t / (d * d);
                }
            };
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let mu_y = mu * n * n;
            let half_mu = 0.5 * mu;
            let mut x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// `ln Φ(x)` for the standard normal CDF, accurate far into the left tail.
fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv + 3.0 * inv.powi(2) - 15.0 * inv.powi(3) + 105.0 * inv.powi(4)
            - 945.0 * inv.powi(5);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}
