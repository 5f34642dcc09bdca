mod common;

use common::gradcheck;
use common::{random_matrix, rng};
use rand::Rng;
use unitary_core::layers::{matmul_layer_forward, mse};
use unitary_core::maps::{ChannelBatch, SplitBatch};
use unitary_core::network::Mode;

const TOL: f64 = 1e-5;
const COUNT: usize = 20;

#[test]
fn expm_chain() {
    let worst = gradcheck::expm_chain(COUNT, 100);
    assert!(worst <= TOL, "{worst:e}");
}

#[test]
fn orthogonal_layer() {
    let worst = gradcheck::orthogonal_layer(COUNT, 101);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn tanh() {
    let worst = gradcheck::tanh(COUNT, 102);
    assert!(worst <= 1e-7, "{worst:e}");
}

#[test]
fn unit_norm() {
    let worst = gradcheck::unit_norm(COUNT, 103);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn dense_softmax_ce() {
    let worst = gradcheck::dense_ce(COUNT, 104);
    assert!(worst <= TOL, "{worst:e}");
}

#[test]
fn mse_gradient() {
    let worst = gradcheck::mse_grad(COUNT, 105);
    assert!(worst <= 1e-8, "{worst:e}");
}

#[test]
fn unitary_network_end_to_end() {
    let worst = gradcheck::network(4, 106, Mode::Unitary, false);
    assert!(worst <= 1e-4, "{worst:e}");
}

#[test]
fn normalized_baseline_end_to_end() {
    let worst = gradcheck::network(4, 107, Mode::Baseline, true);
    assert!(worst <= 1e-4, "{worst:e}");
}

#[test]
fn mse_matches_scalar_loop() {
    let mut r = rng(108);
    for _ in 0..10 {
        let len = r.random_range(1..200);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..len).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut sum = 0.0;
        for i in 0..len {
            sum += (p[i] - t[i]) * (p[i] - t[i]);
        }
        let (loss, grad) = mse(&p, &t).unwrap();
        assert!((loss - sum / len as f64).abs() <= 1e-12);
        for i in 0..len {
            assert!((grad[i] - 2.0 * (p[i] - t[i]) / len as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn layer_forward_matches_triple_loop() {
    let mut r = rng(109);
    let n = 4;
    let x = SplitBatch::new(
        ChannelBatch::from_matrix(random_matrix(&mut r, n, 2 * n)).unwrap(),
        ChannelBatch::from_matrix(random_matrix(&mut r, n, 2 * n)).unwrap(),
    )
    .unwrap();
    let w_re = random_matrix(&mut r, n, n);
    let w_im = random_matrix(&mut r, n, n);
    let out = matmul_layer_forward(&x, &w_re, &w_im).unwrap();
    for (w, xin, got) in [(&w_re, &x.re, &out.re), (&w_im, &x.im, &out.im)] {
        let expect = common::naive_matmul(w, xin.matrix());
        assert!(common::max_abs(got.matrix(), &expect) <= 1e-12);
    }
}
