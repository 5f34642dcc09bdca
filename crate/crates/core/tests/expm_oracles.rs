mod common;

use common::{max_abs, naive_matmul, random_matrix, random_params, rel_err, rng, taylor_expm};
use nalgebra::DMatrix;
use rand::Rng;
use unitary_core::lie::{
    expm, expm_backward, expm_frechet, expm_frechet_general, expm_general, orthogonal_from_params,
    params_grad_from_skew_grad, skew_from_params, squaring_count, SkewParams, THETA_13,
};

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Random skew matrix rescaled to 1-norm `target`.
fn skew_with_norm1(r: &mut rand_chacha::ChaCha8Rng, n: usize, target: f64) -> DMatrix<f64> {
    let s = skew_from_params(&random_params(r, n, 1.0)).as_matrix().clone();
    &s * (target / norm1(&s))
}

#[test]
fn expm_matches_taylor_for_small_skews() {
    let mut r = rng(1);
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let target = r.random_range(0.05..=1.0);
        let s = skew_with_norm1(&mut r, n, target);
        let got = expm_general(&s).unwrap();
        assert!(max_abs(&got, &taylor_expm(&s, 30)) <= 1e-12);
    }
}

#[test]
fn expm_matches_taylor_for_six_by_six() {
    let mut r = rng(2);
    let s = skew_with_norm1(&mut r, 6, 1.0);
    assert!(max_abs(&expm_general(&s).unwrap(), &taylor_expm(&s, 30)) <= 1e-12);
}

#[test]
fn plane_rotations_have_closed_form() {
    for k in 0..=64 {
        let t = -8.0 + 0.25 * k as f64;
        let w = orthogonal_from_params(&SkewParams::new(2, vec![t]).unwrap()).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!(max_abs(w.as_matrix(), &expect) <= 1e-12, "theta = {t}");
    }
}

#[test]
fn large_skews_invert_against_their_negation() {
    let mut r = rng(3);
    for n in [4, 12, 28] {
        let s = skew_with_norm1(&mut r, n, 40.0);
        assert!(squaring_count(norm1(&s)) > 0);
        let prod = expm_general(&s).unwrap() * expm_general(&(-&s)).unwrap();
        assert!(max_abs(&prod, &DMatrix::identity(n, n)) <= 1e-11);
    }
}

#[test]
fn squaring_threshold_boundary() {
    assert_eq!(squaring_count(THETA_13), 0);
    assert_eq!(squaring_count(THETA_13 * 1.0001), 1);
    assert_eq!(squaring_count(4.0 * THETA_13), 2);
}

#[test]
fn general_matrices_match_taylor() {
    let mut r = rng(4);
    for _ in 0..20 {
        let n = r.random_range(2..=6);
        let a = random_matrix(&mut r, n, n) * 0.3;
        assert!(max_abs(&expm_general(&a).unwrap(), &taylor_expm(&a, 30)) <= 1e-12);
    }
}

#[test]
fn nalgebra_product_agrees_with_triple_loop() {
    let mut r = rng(5);
    let a = random_matrix(&mut r, 4, 4);
    let b = random_matrix(&mut r, 4, 4);
    assert!(max_abs(&(&a * &b), &naive_matmul(&a, &b)) <= 1e-12);
}

#[test]
fn frechet_matches_central_difference() {
    let mut r = rng(6);
    let h = 1e-5;
    for _ in 0..10 {
        let s = skew_from_params(&random_params(&mut r, 5, 1.0));
        let e = random_matrix(&mut r, 5, 5);
        let sm = s.as_matrix();
        let fd = (expm_general(&(sm + &e * h)).unwrap() - expm_general(&(sm - &e * h)).unwrap()) / (2.0 * h);
        assert!(max_abs(&expm_frechet(&s, &e).unwrap(), &fd) <= 1e-7);
    }
}

#[test]
fn frechet_matches_taylor_derivative() {
    // d/dt Σ (A + tE)^k / k! at t = 0, expanded term by term.
    let mut r = rng(7);
    let a = random_matrix(&mut r, 4, 4) * 0.4;
    let e = random_matrix(&mut r, 4, 4);
    let mut oracle = DMatrix::zeros(4, 4);
    let mut powers = vec![DMatrix::identity(4, 4)];
    for k in 1..30 {
        let next = naive_matmul(powers.last().unwrap(), &a);
        powers.push(next);
        let mut term = DMatrix::zeros(4, 4);
        for j in 0..k {
            term += naive_matmul(&naive_matmul(&powers[j], &e), &powers[k - 1 - j]);
        }
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        oracle += term / fact;
    }
    assert!(max_abs(&expm_frechet_general(&a, &e).unwrap(), &oracle) <= 1e-12);
}

#[test]
fn backward_is_adjoint_of_frechet() {
    let mut r = rng(8);
    for _ in 0..20 {
        let s = skew_from_params(&random_params(&mut r, 4, 2.0));
        let e = random_matrix(&mut r, 4, 4);
        let g = random_matrix(&mut r, 4, 4);
        let lhs = expm_frechet(&s, &e).unwrap().dot(&g);
        let rhs = e.dot(&expm_backward(&s, &g).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn frechet_is_linear_in_direction() {
    let mut r = rng(9);
    let s = skew_from_params(&random_params(&mut r, 6, 1.0));
    let e1 = random_matrix(&mut r, 6, 6);
    let e2 = random_matrix(&mut r, 6, 6);
    let sum = expm_frechet(&s, &(&e1 * 3.0 + &e2)).unwrap();
    let parts = expm_frechet(&s, &e1).unwrap() * 3.0 + expm_frechet(&s, &e2).unwrap();
    assert!(max_abs(&sum, &parts) <= 1e-12);
}

#[test]
fn frechet_handles_tiny_and_huge_directions() {
    let mut r = rng(10);
    let s = skew_from_params(&random_params(&mut r, 5, 1.0));
    let e = random_matrix(&mut r, 5, 5);
    let base = expm_frechet(&s, &e).unwrap();
    for scale in [1e-200, 1e-20, 1e20, 1e200] {
        let scaled = expm_frechet(&s, &(&e * scale)).unwrap() / scale;
        assert!(max_abs(&scaled, &base) <= 1e-12, "scale {scale}");
    }
}

#[test]
fn skew_gradient_matches_finite_difference() {
    let mut r = rng(11);
    let g = random_matrix(&mut r, 4, 4);
    let p = random_params(&mut r, 4, 1.0);
    let analytic = params_grad_from_skew_grad(&g).unwrap().into_entries();
    let numeric = common::numeric_grad(p.entries(), 1e-5, |v| {
        skew_from_params(&SkewParams::new(4, v.to_vec()).unwrap()).as_matrix().dot(&g)
    });
    assert!(rel_err(&analytic, &numeric, 1e-12) <= 1e-8);
}

#[test]
fn full_chain_gradient_at_n6() {
    let mut r = rng(12);
    let n = 6;
    let p = random_params(&mut r, n, 1.0);
    let a = random_matrix(&mut r, n, 3 * n);
    let y = random_matrix(&mut r, n, 3 * n);
    let loss = |v: &[f64]| {
        let w = orthogonal_from_params(&SkewParams::new(n, v.to_vec()).unwrap()).unwrap();
        (w.as_matrix() * &a - &y).norm_squared() / y.len() as f64
    };
    let w = orthogonal_from_params(&p).unwrap();
    let g_w = (w.as_matrix() * &a - &y) * (2.0 / y.len() as f64) * a.transpose();
    let analytic = unitary_core::lie::params_grad_from_weight_grad(&p, &g_w).unwrap().into_entries();
    let numeric = common::numeric_grad(p.entries(), 1e-5, loss);
    assert!(rel_err(&analytic, &numeric, 1e-12) <= 1e-5);
}

#[test]
fn expm_of_skew_type_is_orthogonal_for_large_n() {
    let mut r = rng(13);
    for n in [2, 8, 16, 28, 64] {
        let s = skew_from_params(&random_params(&mut r, n, 1.0));
        let w = expm(&s).unwrap();
        let det = w.as_matrix().clone().lu().determinant();
        assert!((det - 1.0).abs() <= 1e-8, "n = {n}, det = {det}");
    }
}
