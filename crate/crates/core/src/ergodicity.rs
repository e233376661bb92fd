//! Checks of the sufficient conditions for geometric ergodicity of the block
//! Gibbs chain under a flat prior on `beta`:
//!
//! 1. `a_j < b_j = 0` or `b_j > 0` for every block;
//! 2. `a_j + q_j/2 > 0` for every block;
//! 3. `M = [X Z]` has full column rank;
//! 4. some `e > 0` satisfies `e' M* = 0`, where row `i` of `M*` is
//!    `(1 - 2 y_i) m_i'`.
//!
//! The conditions are sufficient, not necessary; a failed check says nothing
//! about whether the chain is geometrically ergodic.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::model::ModelSpec;

/// Default relative tolerance for rank and feasibility decisions.
pub const DEFAULT_TOL: f64 = 1e-9;

/// `M*` with row `i` equal to `(1 - 2 y_i) m_i'`.
pub fn build_mstar(m: &DMatrix<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(m.nrows(), y.len(), "M and y disagree on n");
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= 1.0 - 2.0 * y[i];
    }
    out
}

/// Numerical rank (count of singular values above `tol * sigma_max`) and
/// whether it equals the number of columns.
pub fn check_rank(m: &DMatrix<f64>, tol: f64) -> (usize, bool) {
    let k = m.ncols();
    if m.nrows() == 0 || k == 0 {
        return (0, k == 0);
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.max();
    if !(max > 0.0) {
        return (0, false);
    }
    let rank = sv.iter().filter(|&&s| s > tol * max).count();
    (rank, rank == k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
    /// The phase-one optimum is within tolerance of zero but the recovered
    /// point does not satisfy the constraints to tolerance.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullVectorResult {
    pub status: Feasibility,
    /// `e` with `min(e) = 1` and `M*' e ≈ 0`, when feasible.
    pub witness: Option<Vec<f64>>,
    /// Optimal phase-one objective (sum of artificial variables).
    pub phase_one_objective: f64,
}

/// Looks for `e` with `M*' e = 0` and `e_i >= 1` by phase-one simplex.
///
/// The `e_i >= 1` normalisation is equivalent to `e > 0` because the
/// feasible set is a cone. Rows are put in a canonical order before solving
/// and witness entries of identical rows are averaged, so permuting the rows
/// of `M*` permutes the witness the same way.
pub fn check_positive_null_vector(mstar: &DMatrix<f64>, tol: f64) -> NullVectorResult {
    let n = mstar.nrows();
    let k = mstar.ncols();
    if n == 0 {
        return NullVectorResult {
            status: Feasibility::Indeterminate,
            witness: None,
            phase_one_objective: f64::NAN,
        };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| compare_rows(mstar, i, j));

    // Substitute e = 1 + f, f >= 0: A f = c with A = M*' (k x n), c = -M*' 1.
    let mut a = DMatrix::<f64>::zeros(k, n);
    let mut c = DVector::<f64>::zeros(k);
    for (col, &row) in order.iter().enumerate() {
        for d in 0..k {
            let v = mstar[(row, d)];
            a[(d, col)] = v;
            c[d] -= v;
        }
    }
    let (objective, f) = phase_one(&a, &c, tol);

    let scale = 1.0 + c.abs().sum();
    if objective > tol * scale {
        return NullVectorResult {
            status: Feasibility::Infeasible,
            witness: None,
            phase_one_objective: objective,
        };
    }

    let mut e = vec![0.0; n];
    for (col, &row) in order.iter().enumerate() {
        e[row] = 1.0 + f[col].max(0.0);
    }
    average_identical_rows(mstar, &order, &mut e);
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    for v in e.iter_mut() {
        *v /= min;
    }

    let norm_inf = mstar
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let ev = DVector::from_column_slice(&e);
    let residual = (mstar.transpose() * &ev).amax();
    let status = if residual <= tol * (1.0 + norm_inf) {
        Feasibility::Feasible
    } else {
        Feasibility::Indeterminate
    };
    NullVectorResult {
        status,
        witness: (status == Feasibility::Feasible).then_some(e),
        phase_one_objective: objective,
    }
}

fn compare_rows(m: &DMatrix<f64>, i: usize, j: usize) -> Ordering {
    for d in 0..m.ncols() {
        match m[(i, d)].total_cmp(&m[(j, d)]) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

fn average_identical_rows(m: &DMatrix<f64>, order: &[usize], e: &mut [f64]) {
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && compare_rows(m, order[start], order[end]) == Ordering::Equal {
            end += 1;
        }
        if end - start > 1 {
            let mean = order[start..end].iter().map(|&r| e[r]).sum::<f64>() / (end - start) as f64;
            for &r in &order[start..end] {
                e[r] = mean;
            }
        }
        start = end;
    }
}

/// Phase-one simplex for `{f >= 0 : A f = c}` with Bland's rule.
/// Returns the optimal sum of artificials and the recovered `f`.
fn phase_one(a: &DMatrix<f64>, c: &DVector<f64>, tol: f64) -> (f64, Vec<f64>) {
    let (rows, n) = a.shape();
    let cols = n + rows;
    // Tableau rows: constraints, with the right-hand side in column `cols`.
    let mut t = DMatrix::<f64>::zeros(rows, cols + 1);
    for i in 0..rows {
        let sign = if c[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, cols)] = sign * c[i];
    }
    let mut basis: Vec<usize> = (n..cols).collect();
    let pivot_tol = tol.min(1e-10) * a.amax().max(1.0);

    // Reduced costs of minimising the sum of artificials.
    let reduced = |t: &DMatrix<f64>, basis: &[usize], j: usize| -> f64 {
        let cost = |v: usize| if v >= n { 1.0 } else { 0.0 };
        let mut r = cost(j);
        for (i, &b) in basis.iter().enumerate() {
            r -= cost(b) * t[(i, j)];
        }
        r
    };

    loop {
        let entering = (0..cols).find(|&j| !basis.contains(&j) && reduced(&t, &basis, j) < -pivot_tol);
        let Some(j) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = t[(i, j)];
            if coef > pivot_tol {
                let ratio = t[(i, cols)] / coef;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-15 * lr.abs().max(1.0)
                            || (ratio <= lr + 1e-15 * lr.abs().max(1.0) && basis[i] < basis[li])
                        {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        // Phase one is bounded below by zero, so a missing leaving row only
        // arises from round-off; treat the column as non-improving.
        let Some((i, _)) = leave else { break };
        pivot(&mut t, i, j);
        basis[i] = j;
    }

    let mut f = vec![0.0; n];
    let mut objective = 0.0;
    for (i, &b) in basis.iter().enumerate() {
        let v = t[(i, cols)];
        if b < n {
            f[b] = v;
        } else {
            objective += v.max(0.0);
        }
    }
    (objective, f)
}

fn pivot(t: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = t[(row, col)];
    let width = t.ncols();
    for j in 0..width {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == row {
            continue;
        }
        let factor = t[(i, col)];
        if factor == 0.0 {
            continue;
        }
        for j in 0..width {
            let v = t[(row, j)];
            t[(i, j)] -= factor * v;
        }
        t[(i, col)] = 0.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankCondition {
    pub rank: usize,
    pub required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullVectorCondition {
    #[serde(flatten)]
    pub result: NullVectorResult,
    pub pass: bool,
}

/// Outcome of checking all four conditions for a model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GEReport {
    /// The conditions only speak to the flat prior `Q = 0`.
    pub applicable: bool,
    pub applicability: String,
    pub cond1_priors: Vec<bool>,
    pub cond2_shape: Vec<bool>,
    pub cond3_rank: RankCondition,
    pub cond4_null_vector: NullVectorCondition,
    pub overall: bool,
    /// `Some(true)` when the conditions establish posterior propriety;
    /// `None` when they do not decide it.
    pub posterior_proper: Option<bool>,
    pub conclusion: String,
}

pub const NOT_APPLICABLE_PROPER: &str = "not applicable (proper β prior)";

/// Evaluates conditions 1-4 on `spec`.
pub fn check_ge(spec: &ModelSpec, tol: f64) -> GEReport {
    let prior = spec.prior();
    let cond1: Vec<bool> = prior
        .a
        .iter()
        .zip(&prior.b)
        .map(|(&a, &b)| (b == 0.0 && a < 0.0) || b > 0.0)
        .collect();
    let cond2: Vec<bool> = prior
        .a
        .iter()
        .zip(spec.blocks())
        .map(|(&a, &qj)| a + qj as f64 / 2.0 > 0.0)
        .collect();
    let (rank, rank_pass) = check_rank(spec.m(), tol);
    let cond3 = RankCondition {
        rank,
        required: spec.p() + spec.q(),
        pass: rank_pass,
    };
    let nv = check_positive_null_vector(&build_mstar(spec.m(), spec.y()), tol);
    let cond4 = NullVectorCondition {
        pass: nv.status == Feasibility::Feasible,
        result: nv,
    };
    let overall = !cond1.is_empty()
        && cond1.iter().all(|&c| c)
        && cond2.iter().all(|&c| c)
        && cond3.pass
        && cond4.pass;

    let flat = prior.is_flat();
    let applicability = if flat {
        "applicable (flat β prior)".to_string()
    } else if prior.is_proper() {
        NOT_APPLICABLE_PROPER.to_string()
    } else {
        "not applicable (improper non-flat β prior)".to_string()
    };
    let conclusion = if !flat {
        format!("{applicability}: the conditions address the flat prior π(β) ∝ 1 only")
    } else if overall {
        "all four sufficient conditions hold: the block Gibbs chain is geometrically ergodic \
         and the posterior is proper"
            .to_string()
    } else {
        "not all sufficient conditions hold; this does not show that the block Gibbs chain \
         fails to be geometrically ergodic"
            .to_string()
    };
    GEReport {
        applicable: flat,
        applicability,
        cond1_priors: cond1,
        cond2_shape: cond2,
        cond3_rank: cond3,
        cond4_null_vector: cond4,
        overall,
        posterior_proper: (flat && overall).then_some(true),
        conclusion,
    }
}
