//! Central-difference checks of every backward operation. Each function runs
//! `count` random instances and returns the worst relative error.

use nalgebra::DMatrix;
use rand::Rng;
use unitary_core::layers::{
    dense_softmax_ce, matmul_layer_backward, matmul_layer_forward, mse, tanh_backward,
    tanh_forward, unit_norm_backward, unit_norm_forward, DenseHead,
};
use unitary_core::lie::{orthogonal_from_params, params_grad_from_weight_grad, SkewParams};
use unitary_core::maps::{ChannelBatch, SplitBatch};
use unitary_core::network::{loss_and_grad, Mode, NetworkConfig, NetworkState};

use super::{numeric_grad, random_matrix, random_params, rel_err, rng};

pub const H: f64 = 1e-5;

fn split(rng: &mut rand_chacha::ChaCha8Rng, n: usize, batch: usize) -> SplitBatch {
    SplitBatch::new(
        ChannelBatch::from_matrix(random_matrix(rng, n, n * batch)).unwrap(),
        ChannelBatch::from_matrix(random_matrix(rng, n, n * batch)).unwrap(),
    )
    .unwrap()
}

fn flat(x: &SplitBatch) -> Vec<f64> {
    x.re.matrix().iter().chain(x.im.matrix().iter()).copied().collect()
}

fn unflat(v: &[f64], n: usize, batch: usize) -> SplitBatch {
    let half = n * n * batch;
    SplitBatch::new(
        ChannelBatch::from_matrix(DMatrix::from_column_slice(n, n * batch, &v[..half])).unwrap(),
        ChannelBatch::from_matrix(DMatrix::from_column_slice(n, n * batch, &v[half..])).unwrap(),
    )
    .unwrap()
}

fn dot(a: &SplitBatch, b: &SplitBatch) -> f64 {
    a.re.matrix().dot(b.re.matrix()) + a.im.matrix().dot(b.im.matrix())
}

/// params → skew → expm → W·a → MSE against y.
pub fn expm_chain(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = r.random_range(2..=6);
        let k = r.random_range(1..=4);
        let p: Vec<f64> = (0..n * (n - 1) / 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = random_matrix(&mut r, n, n * k);
        let y = random_matrix(&mut r, n, n * k);
        let loss = |p: &[f64]| {
            let w = orthogonal_from_params(&SkewParams::new(n, p.to_vec()).unwrap()).unwrap();
            mse((w.as_matrix() * &a).as_slice(), y.as_slice()).unwrap().0
        };
        let params = SkewParams::new(n, p.clone()).unwrap();
        let w = orthogonal_from_params(&params).unwrap();
        let pred = w.as_matrix() * &a;
        let (_, g) = mse(pred.as_slice(), y.as_slice()).unwrap();
        let g_w = DMatrix::from_vec(n, n * k, g) * a.transpose();
        let analytic = params_grad_from_weight_grad(&params, &g_w).unwrap().into_entries();
        let numeric = numeric_grad(&p, H, loss);
        worst = worst.max(rel_err(&analytic, &numeric, 1e-12));
    }
    worst
}

/// Layer matmul: gradients with respect to the input and both weights.
pub fn orthogonal_layer(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = r.random_range(2..=5);
        let b = r.random_range(1..=3);
        let x = split(&mut r, n, b);
        let g = split(&mut r, n, b);
        let w_re = orthogonal_from_params(&random_params(&mut r, n, 1.0)).unwrap().into_matrix();
        let w_im = orthogonal_from_params(&random_params(&mut r, n, 1.0)).unwrap().into_matrix();
        let grads = matmul_layer_backward(&x, &w_re, &w_im, &g).unwrap();

        let num_x = numeric_grad(&flat(&x), H, |v| {
            dot(&g, &matmul_layer_forward(&unflat(v, n, b), &w_re, &w_im).unwrap())
        });
        worst = worst.max(rel_err(&flat(&grads.input), &num_x, 1e-12));

        let num_wre = numeric_grad(w_re.as_slice(), H, |v| {
            let w = DMatrix::from_column_slice(n, n, v);
            dot(&g, &matmul_layer_forward(&x, &w, &w_im).unwrap())
        });
        worst = worst.max(rel_err(grads.weight_re.as_slice(), &num_wre, 1e-12));
        let num_wim = numeric_grad(w_im.as_slice(), H, |v| {
            let w = DMatrix::from_column_slice(n, n, v);
            dot(&g, &matmul_layer_forward(&x, &w_re, &w).unwrap())
        });
        worst = worst.max(rel_err(grads.weight_im.as_slice(), &num_wim, 1e-12));
    }
    worst
}

pub fn tanh(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = r.random_range(2..=5);
        let b = r.random_range(1..=3);
        let x = split(&mut r, n, b);
        let g = split(&mut r, n, b);
        let analytic = tanh_backward(&tanh_forward(&x), &g);
        let numeric = numeric_grad(&flat(&x), H, |v| dot(&g, &tanh_forward(&unflat(v, n, b))));
        worst = worst.max(rel_err(&flat(&analytic), &numeric, 1e-12));
    }
    worst
}

pub fn unit_norm(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = r.random_range(2..=5);
        let b = r.random_range(1..=3);
        let x = split(&mut r, n, b);
        let g = split(&mut r, n, b);
        let analytic = unit_norm_backward(&x, &g).unwrap();
        let numeric = numeric_grad(&flat(&x), H, |v| {
            dot(&g, &unit_norm_forward(&unflat(v, n, b)).unwrap())
        });
        worst = worst.max(rel_err(&flat(&analytic), &numeric, 1e-12));
    }
    worst
}

/// Dense head + softmax cross-entropy: gradients for weight, bias, and input.
pub fn dense_ce(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let f = r.random_range(2..=12);
        let b = r.random_range(1..=4);
        let x = random_matrix(&mut r, f, b);
        let head = DenseHead {
            weight: random_matrix(&mut r, 10, f),
            bias: nalgebra::DVector::from_fn(10, |_, _| r.random_range(-1.0..1.0)),
        };
        let labels: Vec<u8> = (0..b).map(|_| r.random_range(0..10u8)).collect();
        let out = dense_softmax_ce(&x, &head, &labels).unwrap();

        let num_w = numeric_grad(head.weight.as_slice(), H, |v| {
            let h = DenseHead {
                weight: DMatrix::from_column_slice(10, f, v),
                bias: head.bias.clone(),
            };
            dense_softmax_ce(&x, &h, &labels).unwrap().loss
        });
        worst = worst.max(rel_err(out.grad_head.weight.as_slice(), &num_w, 1e-12));
        let num_b = numeric_grad(head.bias.as_slice(), H, |v| {
            let h = DenseHead {
                weight: head.weight.clone(),
                bias: nalgebra::DVector::from_column_slice(v),
            };
            dense_softmax_ce(&x, &h, &labels).unwrap().loss
        });
        worst = worst.max(rel_err(out.grad_head.bias.as_slice(), &num_b, 1e-12));
        let num_x = numeric_grad(x.as_slice(), H, |v| {
            dense_softmax_ce(&DMatrix::from_column_slice(f, b, v), &head, &labels)
                .unwrap()
                .loss
        });
        worst = worst.max(rel_err(out.grad_input.as_slice(), &num_x, 1e-12));
    }
    worst
}

pub fn mse_grad(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let len = r.random_range(1..=40);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, analytic) = mse(&p, &t).unwrap();
        let numeric = numeric_grad(&p, H, |v| mse(v, &t).unwrap().0);
        worst = worst.max(rel_err(&analytic, &numeric, 1e-12));
    }
    worst
}

/// End-to-end parameter gradient of a small network.
pub fn network(count: usize, seed: u64, mode: Mode, normalize: bool) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let n = r.random_range(2..=3);
        let b = r.random_range(1..=3);
        let config = NetworkConfig {
            depth: 3,
            dim: n,
            mode,
            normalize,
        };
        let state = NetworkState::xavier(config, seed.wrapping_add(i as u64)).unwrap();
        let x = split(&mut r, n, b);
        let labels: Vec<u8> = (0..b).map(|_| r.random_range(0..10u8)).collect();
        let (_, grads) = loss_and_grad(&state, &x, &labels).unwrap();
        let analytic: Vec<f64> = grads.into_iter().flatten().collect();
        let blocks = state.to_blocks();
        let sizes: Vec<usize> = blocks.iter().map(|b| b.values.len()).collect();
        let flat_params: Vec<f64> = blocks.iter().flat_map(|b| b.values.clone()).collect();
        let mut scratch = state.clone();
        let numeric = numeric_grad(&flat_params, H, |v| {
            let mut blocks = state.to_blocks();
            let mut off = 0;
            for (blk, &len) in blocks.iter_mut().zip(&sizes) {
                blk.values.copy_from_slice(&v[off..off + len]);
                off += len;
            }
            scratch.set_blocks(&blocks).unwrap();
            loss_and_grad(&scratch, &x, &labels).unwrap().0
        });
        worst = worst.max(rel_err(&analytic, &numeric, 1e-12));
    }
    worst
}
