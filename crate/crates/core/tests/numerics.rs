mod common;

use common::{normal_equations, rng, simpson, std_normal};
use proptest::prelude::*;
use pseudopanel::numerics::{
    chi_square_sf, generalized_inverse, normal_sf, percentile, solve_least_squares, symmetric_eigen, Mat, SymMat,
};
use pseudopanel::{Matrix, SymmetricMatrix};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn lstsq_exact_line() {
    let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
    let fit = solve_least_squares(&x, &[2.0, 4.0, 6.0]).unwrap();
    assert!(close(&fit.beta, &[0.0, 2.0], 1e-12), "{:?}", fit.beta);
    assert!(fit.ssr() < 1e-24);
}

#[test]
fn lstsq_identity_design_returns_response() {
    let x = Matrix::identity(4);
    let y = [1.5, -2.0, 0.25, 7.0];
    let fit = solve_least_squares(&x, &y).unwrap();
    assert!(close(&fit.beta, &y, 1e-14));
}

#[test]
fn lstsq_noiseless_recovers_coefficients() {
    let mut r = rng(3);
    let x = Matrix::from_fn(20, 3, |_, j| if j == 0 { 1.0 } else { std_normal(&mut r) });
    let truth = [0.5, -1.25, 2.0];
    let y = x.matvec(&truth);
    let fit = solve_least_squares(&x, &y).unwrap();
    assert!(close(&fit.beta, &truth, 1e-10));
    assert!(close(&fit.beta, &normal_equations(&x, &y), 1e-10));
}

#[test]
fn lstsq_matches_normal_equations_on_random_problems() {
    let mut r = rng(11);
    for _ in 0..100 {
        let n = 10 + (r.next_u32_mod(40) as usize);
        let k = 1 + (r.next_u32_mod(6) as usize);
        let x = Matrix::from_fn(n, k, |_, _| std_normal(&mut r));
        let y: Vec<f64> = (0..n).map(|_| std_normal(&mut r)).collect();
        let fit = solve_least_squares(&x, &y).unwrap();
        assert!(close(&fit.beta, &normal_equations(&x, &y), 1e-8));
    }
}

trait ModU32 {
    fn next_u32_mod(&mut self, m: u32) -> u32;
}

impl<R: rand::Rng> ModU32 for R {
    fn next_u32_mod(&mut self, m: u32) -> u32 {
        self.random_range(0..m)
    }
}

#[test]
fn lstsq_rejects_rank_deficient_design() {
    let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
    assert!(solve_least_squares(&x, &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn pinv_of_identity_and_singular_diagonal() {
    let i = SymmetricMatrix::identity(3);
    let p = generalized_inverse(&i);
    assert!(close(p.as_mat().as_slice(), i.as_mat().as_slice(), 1e-14));

    let d = SymMat::from_mat(&Mat::from_diag(&[4.0, 0.0])).unwrap();
    let p = generalized_inverse(&d);
    assert!(close(p.as_mat().as_slice(), &[0.25, 0.0, 0.0, 0.0], 1e-14));
}

#[test]
fn pinv_reproduces_rank_two_matrix() {
    let mut r = rng(5);
    let b = Matrix::from_fn(4, 2, |_, _| std_normal(&mut r));
    let a = SymMat::from_mat(&b.matmul(&b.transpose())).unwrap();
    assert_eq!(symmetric_eigen(&a).rank(), 2);
    let p = generalized_inverse(&a);
    let apa = a.as_mat().matmul(p.as_mat()).matmul(a.as_mat());
    assert!(close(apa.as_slice(), a.as_mat().as_slice(), 1e-10));
}

#[test]
fn chi_square_tail_values() {
    assert_eq!(chi_square_sf(0.0f64, 5).unwrap(), 1.0);
    assert!((chi_square_sf(3.841f64, 1).unwrap() - 0.05).abs() < 1e-3);
    assert!((chi_square_sf(18.307f64, 10).unwrap() - 0.05).abs() < 1e-3);
    assert!(chi_square_sf(-1.0f64, 2).is_err());
}

#[test]
fn chi_square_against_quadrature_and_closed_form() {
    // df = 1: the tail is twice the normal tail beyond sqrt(x).
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for x in [0.5, 1.0, 3.841, 6.0] {
        let tail = 1.0 - 2.0 * simpson(phi, 0.0, f64::sqrt(x), 2000);
        assert!((chi_square_sf(x, 1).unwrap() - tail).abs() < 1e-8, "x = {x}");
    }
    // Even df: Poisson sum.
    for (x, df) in [(18.307, 10usize), (2.0, 4), (9.0, 6)] {
        let h = x / 2.0;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..df / 2 {
            if k > 0 {
                term *= h / k as f64;
            }
            sum += term;
        }
        let closed = (-h).exp() * sum;
        assert!(
            (chi_square_sf(x, df).unwrap() - closed).abs() < 1e-10,
            "x = {x}, df = {df}"
        );
    }
}

#[test]
fn normal_tail_at_196() {
    assert!((normal_sf(1.96f64) - 0.025).abs() < 1e-4);
    assert!((normal_sf(-1.96f64) - 0.975).abs() < 1e-4);
}

#[test]
fn percentile_examples() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
    assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
    let w = [50.0, 10.0, 30.0, 20.0, 40.0];
    assert!((percentile(&w, 25.0f64).unwrap() - 20.0).abs() < 1e-12);
    assert!(percentile(&w, 101.0).is_err());
    assert!(percentile::<f64>(&[], 50.0).is_err());
}

#[test]
fn kernels_run_in_single_precision() {
    let x = Mat::<f32>::from_rows(&[[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
    let fit = solve_least_squares(&x, &[2.0f32, 4.0, 6.0]).unwrap();
    assert!((fit.beta[1] - 2.0).abs() < 1e-5);
    assert!((percentile(&[1.0f32, 3.0], 50.0).unwrap() - 2.0).abs() < 1e-6);
}

fn design() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..5, 0usize..20).prop_flat_map(|(k, extra)| {
        let n = k + 3 + extra;
        (
            Just(n),
            Just(k),
            prop::collection::vec(-10.0f64..10.0, n * k),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn residuals_orthogonal_to_columns((n, k, xs, y) in design()) {
        let x = Matrix::from_vec(n, k, xs).unwrap();
        if let Ok(fit) = solve_least_squares(&x, &y) {
            let xtr = x.tr_matvec(&fit.residuals);
            let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max) * x.max_abs() * n as f64;
            for v in xtr {
                prop_assert!(v.abs() <= 1e-9 * scale, "X'e = {v}");
            }
        }
    }

    #[test]
    fn pinv_satisfies_penrose_conditions(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        rank in 1usize..4,
    ) {
        let b = Matrix::from_vec(4, 3, vals).unwrap().select_cols(&(0..rank).collect::<Vec<_>>());
        let a = SymMat::from_mat(&b.matmul(&b.transpose())).unwrap();
        prop_assume!(a.as_mat().max_abs() > 1e-3);
        let p = generalized_inverse(&a);
        let (am, pm) = (a.as_mat(), p.as_mat());
        let tol = 1e-7 * (1.0 + am.max_abs()) * (1.0 + pm.max_abs());
        let apa = am.matmul(pm).matmul(am);
        let pap = pm.matmul(am).matmul(pm);
        let ap = am.matmul(pm);
        let pa = pm.matmul(am);
        prop_assert!(apa.sub(am).max_abs() <= tol * am.max_abs());
        prop_assert!(pap.sub(pm).max_abs() <= tol * pm.max_abs().max(1.0));
        prop_assert!(ap.sub(&ap.transpose()).max_abs() <= tol);
        prop_assert!(pa.sub(&pa.transpose()).max_abs() <= tol);
    }

    #[test]
    fn chi_square_tail_is_monotone(x in 0.0f64..50.0, dx in 0.01f64..5.0, df in 1usize..30) {
        let a = chi_square_sf(x, df).unwrap();
        let b = chi_square_sf(x + dx, df).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn percentile_bounded_and_monotone(v in prop::collection::vec(-100.0f64..100.0, 1..40), p in 0.0f64..100.0) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let q = percentile(&v, p).unwrap();
        prop_assert!(q >= lo && q <= hi);
        prop_assert!(percentile(&v, (p + 1.0).min(100.0)).unwrap() >= q);
    }
}
