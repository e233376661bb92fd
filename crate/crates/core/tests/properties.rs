//! Property-based invariants.

mod common;

use nalgebra::{DMatrix, DVector};
use pglmm::diagnostics::{acf, ess, mess, msj};
use pglmm::ergodicity::{build_mstar, check_positive_null_vector, Feasibility, DEFAULT_TOL};
use pglmm::linalg_sampling::{weighted_gram, CholeskyFactor, PrecisionDraw};
use pglmm::pg_random::{pg1_density, sample_pg1, DEFAULT_TRUNC_TOL};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn series(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

fn sign_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1i8..=1, r * c)
            .prop_map(move |v| DMatrix::from_iterator(r, c, v.into_iter().map(f64::from)))
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn acf_affine_invariant(x in series(200), a in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64], c in -100.0..100.0f64) {
        let y: Vec<f64> = x.iter().map(|v| a * v + c).collect();
        let (rx, ry) = (acf(&x, 5).unwrap(), acf(&y, 5).unwrap());
        for k in 0..=5 {
            prop_assert!((rx[k] - ry[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn ess_affine_invariant(x in series(400), a in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64], c in -100.0..100.0f64) {
        let y: Vec<f64> = x.iter().map(|v| a * v + c).collect();
        prop_assert!(rel_close(ess(&x).unwrap(), ess(&y).unwrap(), 1e-8));
    }

    #[test]
    fn mess_affine_invariant(x in series(600), mix in prop::collection::vec(-2.0..2.0f64, 4), shift in prop::collection::vec(-50.0..50.0f64, 2)) {
        let d = DMatrix::from_column_slice(300, 2, &x);
        let mut a = DMatrix::from_row_slice(2, 2, &mix);
        if a.determinant().abs() < 0.1 {
            a += DMatrix::identity(2, 2);
        }
        let mut t = &d * a.transpose();
        for mut row in t.row_iter_mut() {
            row[0] += shift[0];
            row[1] += shift[1];
        }
        prop_assert!(rel_close(mess(&d).unwrap(), mess(&t).unwrap(), 1e-7));
    }

    #[test]
    fn mess_one_dim_is_ess(x in series(300)) {
        let e = ess(&x).unwrap();
        let me = mess(&DMatrix::from_column_slice(300, 1, &x)).unwrap();
        prop_assert!(rel_close(e, me, 1e-12));
    }

    #[test]
    fn msj_scales_quadratically(x in series(60), a in -4.0..4.0f64) {
        let d = DMatrix::from_column_slice(20, 3, &x);
        prop_assert!((msj(&(&d * a)) - a * a * msj(&d)).abs() <= 1e-10 * (1.0 + msj(&d) * a * a));
    }

    #[test]
    fn witness_is_valid(m in sign_matrix(6, 3)) {
        let r = check_positive_null_vector(&m, DEFAULT_TOL);
        if let Some(e) = &r.witness {
            prop_assert_eq!(r.status, Feasibility::Feasible);
            let e = DVector::from_column_slice(e);
            prop_assert!(e.min() >= 1.0 - 1e-12);
            let resid = (m.transpose() * &e).amax();
            prop_assert!(resid <= DEFAULT_TOL * (1.0 + m.amax()), "{}", resid);
        } else {
            prop_assert_ne!(r.status, Feasibility::Feasible);
        }
    }

    #[test]
    fn feasibility_scale_invariant(m in sign_matrix(5, 3), c in 0.001..1000.0f64) {
        let a = check_positive_null_vector(&m, DEFAULT_TOL);
        let b = check_positive_null_vector(&(&m * c), DEFAULT_TOL);
        prop_assert_eq!(a.status, b.status);
    }

    #[test]
    fn feasibility_row_permutation(m in sign_matrix(5, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = m.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let pm = DMatrix::from_fn(n, m.ncols(), |i, j| m[(perm[i], j)]);
        let a = check_positive_null_vector(&m, DEFAULT_TOL);
        let b = check_positive_null_vector(&pm, DEFAULT_TOL);
        prop_assert_eq!(a.status, b.status);
        if let (Some(ea), Some(eb)) = (&a.witness, &b.witness) {
            for i in 0..n {
                prop_assert!((eb[i] - ea[perm[i]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mstar_rows_flip_sign(m in sign_matrix(5, 3), bits in prop::collection::vec(any::<bool>(), 5)) {
        let y = DVector::from_fn(m.nrows(), |i, _| f64::from(u8::from(bits[i])));
        let ms = build_mstar(&m, &y);
        for i in 0..m.nrows() {
            let c = 1.0 - 2.0 * y[i];
            for j in 0..m.ncols() {
                prop_assert_eq!(ms[(i, j)], c * m[(i, j)]);
            }
        }
    }

    #[test]
    fn weighted_gram_symmetric(a in prop::collection::vec(-3.0..3.0f64, 24), w in prop::collection::vec(0.0..2.0f64, 8)) {
        let a = DMatrix::from_column_slice(8, 3, &a);
        let g = weighted_gram(&a, &DVector::from_column_slice(&w));
        prop_assert_eq!(&g, &g.transpose());
        let direct = a.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(&w)) * &a;
        prop_assert!((g - direct).amax() < 1e-10);
    }

    #[test]
    fn precision_draw_mean_solves_system(a in prop::collection::vec(-2.0..2.0f64, 16), t in prop::collection::vec(-5.0..5.0f64, 4)) {
        let a = DMatrix::from_column_slice(4, 4, &a);
        let s = &a * a.transpose() + DMatrix::identity(4, 4);
        let t = DVector::from_column_slice(&t);
        let draw = PrecisionDraw::new(s.clone(), t.clone()).unwrap();
        prop_assert!((&s * draw.mean() - &t).amax() < 1e-9);
        let f = CholeskyFactor::new(&s).unwrap();
        prop_assert!((f.log_det() - s.determinant().ln()).abs() < 1e-9);
    }

    #[test]
    fn pg_draws_positive(b in 0.0..50.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let w = sample_pg1(b, &mut rng);
            prop_assert!(w > 0.0 && w.is_finite());
        }
    }

    #[test]
    fn density_matches_oracle(x in 0.005..8.0f64) {
        let got = pg1_density(x, DEFAULT_TRUNC_TOL).unwrap();
        let want = common::pg_density(x);
        prop_assert!((got - want).abs() <= 1e-11 * want + 1e-300);
    }
}
