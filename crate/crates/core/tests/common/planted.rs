//! Recovery of planted orthogonal maps by the layer fit.

use unitary_core::data::{synth_orthogonal_trace, SynthSpec};
use unitary_core::lie::orthogonal_from_params;
use unitary_core::projection::{project_layer, ProjectionConfig};
use unitary_core::Channel;

/// Settings that recover a 16×16 map from 512 pairs inside 50 epochs.
pub fn recovery_config(seed: u64) -> ProjectionConfig {
    let mut cfg = ProjectionConfig::default();
    cfg.train.learning_rate = 1e-2;
    cfg.train.batch_size = 128;
    cfg.train.epochs = 50;
    cfg.train.seed = seed;
    cfg
}

pub struct Recovery {
    pub mse: f64,
    pub rel_frobenius: f64,
    pub epochs: usize,
}

/// Fits both channels of a one-layer planted trace.
pub fn recover(n: usize, samples: usize, seed: u64) -> Vec<Recovery> {
    let planted = synth_orthogonal_trace(SynthSpec::new(1, n, samples, seed)).unwrap();
    Channel::BOTH
        .into_iter()
        .map(|ch| {
            let pairs = planted.trace.layers[0].channel(ch);
            let fit = project_layer(pairs, &recovery_config(seed)).unwrap();
            let q = orthogonal_from_params(&planted.planted[0][ch.index()]).unwrap();
            let w = orthogonal_from_params(&fit.params).unwrap();
            Recovery {
                mse: fit.final_mse,
                rel_frobenius: (w.as_matrix() - q.as_matrix()).norm() / q.as_matrix().norm(),
                epochs: fit.epochs(),
            }
        })
        .collect()
}
