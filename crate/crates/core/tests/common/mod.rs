//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pglmm::model::{ModelSpec, PriorSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub const CATALAN: f64 = 0.915_965_594_177_219_015_054_603_514_932_384_110_774;

/// PG(1, 0) density, written independently of the library: the
/// small-argument theta series below 0.25 and the Jacobi series above.
pub fn pg_density(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    if x < 0.25 {
        for l in 0..60 {
            let k = (2 * l + 1) as f64;
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * k * (-k * k / (8.0 * x)).exp();
        }
        s / (2.0 * std::f64::consts::PI * x.powi(3)).sqrt()
    } else {
        let pi = std::f64::consts::PI;
        for l in 0..60 {
            let h = l as f64 + 0.5;
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * h * (-2.0 * h * h * pi * pi * x).exp();
        }
        4.0 * pi * s
    }
}

pub fn pg_tilted_density(x: f64, b: f64) -> f64 {
    (b / 2.0).cosh() * (-b * b * x / 2.0).exp() * pg_density(x)
}

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // Split first so narrow features are not missed by the initial sample.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// `E[g(omega)]` for `omega ~ PG(1, b)` by quadrature.
pub fn pg_expectation<G: Fn(f64) -> f64>(g: G, b: f64) -> f64 {
    integrate(
        |x| if x > 0.0 { g(x) * pg_tilted_density(x, b) } else { 0.0 },
        0.0,
        40.0,
        1e-14,
    )
}

/// Stationary Gaussian AR(1) series.
pub fn ar1(phi: f64, m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd0 = (1.0 / (1.0 - phi * phi)).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut x = sd0 * z0;
    (0..m)
        .map(|_| {
            let out = x;
            let e: f64 = StandardNormal.sample(&mut rng);
            x = phi * x + e;
            out
        })
        .collect()
}

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Sample mean and its naive standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// Gaussian conditionals

pub fn moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let k = draws[0].len();
    let n = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(k), |acc, d| acc + d) / n;
    let mut cov = DMatrix::zeros(k, k);
    for d in draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Mean within 4 SE per component and covariance within 5% (Frobenius).
/// Returns the worst mean z-score and the covariance relative error.
pub fn conforms(
    draws: &[DVector<f64>],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<(f64, f64), String> {
    let (m, c) = moments(draws);
    let n = draws.len() as f64;
    let mut worst: f64 = 0.0;
    for i in 0..mean.len() {
        let se = (cov[(i, i)] / n).sqrt();
        let z = (m[i] - mean[i]).abs() / se;
        worst = worst.max(z);
        if z > 4.0 {
            return Err(format!("component {i}: {} vs {} ({z:.2} SE)", m[i], mean[i]));
        }
    }
    let rel = (&c - cov).norm() / cov.norm();
    if rel >= 0.05 {
        return Err(format!("covariance relative error {rel:.4}"));
    }
    Ok((worst, rel))
}

pub fn assert_conforms(draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) {
    if let Err(e) = conforms(draws, mean, cov) {
        panic!("{e}");
    }
}

/// Conditional mean of eta under the flat prior through the partitioned
/// inverse with `X~ = W^(1/2) X`, `Z~ = W^(1/2) Z`.
pub fn partitioned_mean(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    omega: &DVector<f64>,
    d: &DVector<f64>,
    kappa: &DVector<f64>,
) -> DVector<f64> {
    let root = DMatrix::from_diagonal(&omega.map(f64::sqrt));
    let xt = &root * x;
    let zt = &root * z;
    let xtx_inv = (xt.transpose() * &xt).try_inverse().unwrap();
    let proj = &xt * &xtx_inv * xt.transpose();
    let n = x.nrows();
    let s = zt.transpose() * (DMatrix::identity(n, n) - proj) * &zt + DMatrix::from_diagonal(d);
    let s_inv = s.try_inverse().unwrap();
    let r = &xtx_inv * xt.transpose() * &zt;
    let xk = x.transpose() * kappa;
    let zk = z.transpose() * kappa;
    let beta = &xtx_inv * &xk + &r * &s_inv * r.transpose() * &xk - &r * &s_inv * &zk;
    let u = -&s_inv * r.transpose() * &xk + &s_inv * &zk;
    let mut out = DVector::zeros(x.ncols() + z.ncols());
    out.rows_mut(0, x.ncols()).copy_from(&beta);
    out.rows_mut(x.ncols(), z.ncols()).copy_from(&u);
    out
}

// ---------------------------------------------------------------------------
// Tiny model: n = 10, intercept only in X, one numeric random-effect column.

pub const TINY_Z: [f64; 10] = [-1.5, -1.0, -0.6, -0.3, 0.0, 0.2, 0.5, 0.9, 1.3, 1.8];
pub const TINY_Y: [f64; 10] = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
pub const TINY_MU0: f64 = 0.0;
pub const TINY_Q: f64 = 1.0;
pub const TINY_A: f64 = 2.0;
pub const TINY_B: f64 = 1.0;

pub fn tiny_spec() -> ModelSpec {
    let x = DMatrix::from_element(10, 1, 1.0);
    let z = DMatrix::from_column_slice(10, 1, &TINY_Z);
    let y = DVector::from_column_slice(&TINY_Y);
    let prior = PriorSpec::new(
        DVector::from_element(1, TINY_MU0),
        DMatrix::from_element(1, 1, TINY_Q),
        vec![TINY_A],
        vec![TINY_B],
    );
    ModelSpec::new(x, z, y, vec![1], prior).unwrap()
}

fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// Posterior mean of beta for the tiny model by trapezoid quadrature over
/// `(beta, v, s)` with `tau = e^s` and `u = v / sqrt(tau)`, so that
/// `N(u; 0, 1/tau) du = phi(v) dv` and `d tau = tau ds`.
pub fn tiny_posterior_beta_mean(points: usize) -> f64 {
    let (b_lo, b_hi) = (-6.0, 6.0);
    let (v_lo, v_hi) = (-8.0, 8.0);
    let (s_lo, s_hi) = (-22.0, 4.0);
    let grid = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
    };
    let betas = grid(b_lo, b_hi, points);
    let vs = grid(v_lo, v_hi, points);
    let ss = grid(s_lo, s_hi, points);
    // The integrand vanishes at the grid edges, so plain sums are trapezoid sums.
    let mut num = 0.0;
    let mut den = 0.0;
    for &s in &ss {
        let tau: f64 = s.exp();
        let log_tau_w = TINY_A * s - TINY_B * tau; // tau^(a-1) e^(-b tau) * tau
        let scale = 1.0 / tau.sqrt();
        for &v in &vs {
            let log_v = -0.5 * v * v;
            let u = v * scale;
            for &beta in &betas {
                let mut ll = 0.0;
                for i in 0..10 {
                    let eta = beta + TINY_Z[i] * u;
                    ll += if TINY_Y[i] == 1.0 {
                        log_sigmoid(eta)
                    } else {
                        log_sigmoid(-eta)
                    };
                }
                let log_beta = -0.5 * TINY_Q * (beta - TINY_MU0).powi(2);
                let w = (ll + log_beta + log_v + log_tau_w).exp();
                num += beta * w;
                den += w;
            }
        }
    }
    num / den
}
