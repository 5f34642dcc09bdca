//! Layer-wise projection of recorded activations onto orthogonal weights.
//!
//! For every layer and channel independently, fit Lie parameters `L` so that
//! `exp(L − Lᵀ)·a_i` matches the recorded `a_{i+1}` in mean squared error,
//! using RMSprop on minibatches of the recorded pairs.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::mse;
use crate::lie::{
    orthogonal_from_params, orthogonality_defect, param_count, params_grad_from_weight_grad,
    SkewParams,
};
use crate::maps::{Channel, ChannelBatch};
use crate::optim::{derive_seed, rng_for, train_epochs, ParamBlock, TrainConfig};
use crate::trace::{ActivationTrace, ChannelPairs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub train: TrainConfig,
    /// Standard deviation of the random starting `L` entries.
    pub init_std: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::projection_defaults(),
            init_std: 0.01,
        }
    }
}

/// Result of one `(layer, channel)` fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFit {
    /// Parameters from the epoch with the lowest mean loss.
    pub params: SkewParams,
    /// Epoch-mean batch losses.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    /// Full-data MSE of `params`.
    pub final_mse: f64,
}

impl LayerFit {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }
}

fn predict(params: &SkewParams, inputs: &ChannelBatch) -> Result<DMatrix<f64>> {
    let w = orthogonal_from_params(params)?;
    Ok(w.as_matrix() * inputs.matrix())
}

/// MSE of `exp(S(L))·a` against the targets over all pairs.
pub fn fit_mse(params: &SkewParams, pairs: &ChannelPairs) -> Result<f64> {
    let pred = predict(params, &pairs.inputs)?;
    Ok(mse(pred.as_slice(), pairs.targets.matrix().as_slice())?.0)
}

/// Loss and parameter gradient on a subset of pairs.
pub fn batch_loss_and_grad(
    params: &SkewParams,
    inputs: &ChannelBatch,
    targets: &ChannelBatch,
) -> Result<(f64, SkewParams)> {
    let pred = predict(params, inputs)?;
    let (loss, g) = mse(pred.as_slice(), targets.matrix().as_slice())?;
    let g_pred = DMatrix::from_vec(pred.nrows(), pred.ncols(), g);
    let g_w = g_pred * inputs.matrix().transpose();
    Ok((loss, params_grad_from_weight_grad(params, &g_w)?))
}

/// Fits one channel of one layer.
pub fn project_layer(pairs: &ChannelPairs, config: &ProjectionConfig) -> Result<LayerFit> {
    let samples = pairs.samples();
    if samples == 0 {
        return Err(Error::InvalidInput("no activation pairs to fit".into()));
    }
    let n = pairs.dim();
    let mut rng = rng_for(derive_seed(config.train.seed, &[INIT_STREAM]));
    let normal = Normal::new(0.0, config.init_std)
        .map_err(|e| Error::InvalidInput(format!("init_std: {e}")))?;
    let init: Vec<f64> = (0..param_count(n)).map(|_| normal.sample(&mut rng)).collect();
    let mut blocks = vec![ParamBlock::new("lie", init)];

    let outcome = train_epochs(
        &mut blocks,
        samples,
        &config.train,
        |params, idx| {
            let p = SkewParams::new(n, params[0].values.clone())?;
            let inputs = pairs.inputs.gather(idx);
            let targets = pairs.targets.gather(idx);
            let (loss, grad) = batch_loss_and_grad(&p, &inputs, &targets)?;
            Ok((loss, vec![grad.into_entries()]))
        },
        |_, _, _| Ok(()),
    )?;

    let best = SkewParams::new(n, outcome.best_params[0].values.clone())?;
    let final_mse = fit_mse(&best, pairs)?;
    Ok(LayerFit {
        params: best,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        final_mse,
    })
}

const INIT_STREAM: u64 = 0x4c49_4549;

/// Seed for the fit of `(layer, channel)` under `master`.
pub fn fit_seed(master: u64, layer: usize, channel: Channel) -> u64 {
    derive_seed(master, &[layer as u64, channel.index() as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitEntry {
    pub layer: usize,
    pub channel: Channel,
    pub seed: u64,
    pub outcome: std::result::Result<LayerFit, String>,
}

/// All `2d` fits, ordered by layer then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub dim: usize,
    pub seed: u64,
    pub fits: Vec<FitEntry>,
}

impl ProjectionResult {
    pub fn depth(&self) -> usize {
        self.fits.len() / 2
    }

    /// True when at least one fit failed.
    pub fn partial(&self) -> bool {
        self.fits.iter().any(|f| f.outcome.is_err())
    }

    pub fn fit(&self, layer: usize, channel: Channel) -> Option<&FitEntry> {
        self.fits
            .iter()
            .find(|f| f.layer == layer && f.channel == channel)
    }

    /// Fitted parameters `[re, im]` per layer; errors if any fit failed.
    pub fn layer_params(&self) -> Result<Vec<[SkewParams; 2]>> {
        (0..self.depth())
            .map(|l| {
                let get = |ch| match self.fit(l, ch).map(|f| &f.outcome) {
                    Some(Ok(fit)) => Ok(fit.params.clone()),
                    Some(Err(msg)) => Err(Error::InvalidInput(format!(
                        "projection fit for layer {l} channel {ch} failed: {msg}"
                    ))),
                    None => Err(Error::InvalidInput(format!(
                        "projection has no fit for layer {l} channel {ch}"
                    ))),
                };
                Ok([get(Channel::Re)?, get(Channel::Im)?])
            })
            .collect()
    }
}

/// Runs the listed `(layer, channel)` fits; each depends only on its own pairs.
pub fn project_selected(
    trace: &ActivationTrace,
    config: &ProjectionConfig,
    tasks: &[(usize, Channel)],
) -> Vec<FitEntry> {
    tasks
        .par_iter()
        .map(|&(layer, channel)| {
            let seed = fit_seed(config.train.seed, layer, channel);
            let mut cfg = config.clone();
            cfg.train.seed = seed;
            let outcome = project_layer(trace.layers[layer].channel(channel), &cfg)
                .map_err(|e| e.to_string());
            FitEntry {
                layer,
                channel,
                seed,
                outcome,
            }
        })
        .collect()
}

/// Fits every layer and channel of `trace` using up to `jobs` threads.
///
/// Failures are recorded per fit; the remaining fits still run.
pub fn project_network(
    trace: &ActivationTrace,
    config: &ProjectionConfig,
    jobs: usize,
) -> Result<ProjectionResult> {
    trace.validate()?;
    config.train.validate()?;
    let tasks: Vec<(usize, Channel)> = (0..trace.depth())
        .flat_map(|l| Channel::BOTH.into_iter().map(move |c| (l, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let fits = pool.install(|| project_selected(trace, config, &tasks));
    Ok(ProjectionResult {
        dim: trace.dim(),
        seed: config.train.seed,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub layer: usize,
    pub channel: Channel,
    pub mse: f64,
    /// MSE divided by the mean squared target entry.
    pub relative_mse: f64,
    pub orthogonality_defect: f64,
    pub epochs: usize,
}

/// Per-fit quality table. Failed fits are reported with NaN metrics.
pub fn residual_report(trace: &ActivationTrace, result: &ProjectionResult) -> Result<Vec<ResidualRow>> {
    result
        .fits
        .iter()
        .map(|f| {
            let pairs = trace
                .layers
                .get(f.layer)
                .ok_or_else(|| Error::Shape(format!("trace has no layer {}", f.layer)))?
                .channel(f.channel);
            match &f.outcome {
                Ok(fit) => {
                    let w = orthogonal_from_params(&fit.params)?;
                    let mse = fit_mse(&fit.params, pairs)?;
                    let t = pairs.targets.matrix();
                    let second_moment = t.norm_squared() / t.len() as f64;
                    Ok(ResidualRow {
                        layer: f.layer,
                        channel: f.channel,
                        mse,
                        relative_mse: mse / second_moment,
                        orthogonality_defect: orthogonality_defect(w.as_matrix()),
                        epochs: fit.epochs(),
                    })
                }
                Err(_) => Ok(ResidualRow {
                    layer: f.layer,
                    channel: f.channel,
                    mse: f64::NAN,
                    relative_mse: f64::NAN,
                    orthogonality_defect: f64::NAN,
                    epochs: 0,
                }),
            }
        })
        .collect()
}
