//! RMSprop, Xavier initialization, seed derivation, and the epoch/batch driver
//! shared by baseline training, unitary training, and the projection fits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named flat parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

pub const DEFAULT_RMS_DECAY: f64 = 0.99;
pub const DEFAULT_RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    /// Running mean of squared gradients, one vector per parameter block.
    pub v: Vec<Vec<f64>>,
}

impl RmspropState {
    pub fn new(lr: f64, decay: f64, eps: f64, params: &[ParamBlock]) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidInput(format!("learning rate must be positive, got {lr}")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidInput(format!("RMSprop decay must lie in (0, 1), got {decay}")));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("RMSprop epsilon must be non-negative, got {eps}")));
        }
        Ok(Self {
            lr,
            decay,
            eps,
            v: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        })
    }
}

/// One RMSprop update, in place:
/// `v ← α·v + (1−α)·g²`, `p ← p − lr·g/(√v + ε)`.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn rmsprop_step(
    state: &mut RmspropState,
    params: &mut [ParamBlock],
    grads: &[Vec<f64>],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "{} parameter blocks, {} gradient blocks, {} state blocks",
            params.len(),
            grads.len(),
            state.v.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.v) {
        if p.values.len() != g.len() || p.values.len() != v.len() {
            return Err(Error::Shape(format!(
                "block `{}`: {} parameters, {} gradients, {} state entries",
                p.name,
                p.values.len(),
                g.len(),
                v.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                block: p.name.clone(),
                location: None,
            });
        }
    }
    let (lr, decay, eps) = (state.lr, state.decay, state.eps);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.v.iter_mut()) {
        for ((pi, &gi), vi) in p.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = decay * *vi + (1.0 - decay) * gi * gi;
            *pi -= lr * gi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

/// Half-width of the Xavier/Glorot uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_uniform<R: Rng>(len: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let a = xavier_bound(fan_in, fan_out);
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

/// Xavier-uniform tensor of `len` entries, deterministic in `seed`.
pub fn xavier_init(len: usize, fan_in: usize, fan_out: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(len, fan_in, fan_out, &mut rng)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable child seed for `(master, parts...)`; platform and toolchain independent.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    CrossEntropy,
}

/// Stop when the epoch-mean loss improves by less than `rel_improvement`
/// relative to the previous epoch, or falls below `abs_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub rel_improvement: f64,
    pub abs_threshold: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            rel_improvement: 1e-4,
            abs_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub early_stop: Option<StopRule>,
}

impl TrainConfig {
    /// Network training hyperparameters: lr 1e−4, batch 512, 100 epochs, cross-entropy.
    pub fn network_defaults() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 512,
            epochs: 100,
            seed: 0,
            loss: LossKind::CrossEntropy,
            rms_decay: DEFAULT_RMS_DECAY,
            rms_eps: DEFAULT_RMS_EPS,
            early_stop: None,
        }
    }

    /// Projection hyperparameters: lr 1e−4, batch 512, 10 epochs, MSE.
    pub fn projection_defaults() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 512,
            epochs: 10,
            seed: 0,
            loss: LossKind::MeanSquaredError,
            rms_decay: DEFAULT_RMS_DECAY,
            rms_eps: DEFAULT_RMS_EPS,
            early_stop: Some(StopRule::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rms_decay must lie in (0, 1), got {}",
                self.rms_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean batch loss of each completed epoch.
    pub history: Vec<f64>,
    /// Epoch whose mean loss was lowest.
    pub best_epoch: usize,
    /// Parameters as they stood at the end of `best_epoch`.
    pub best_params: Vec<ParamBlock>,
    pub stopped_early: bool,
}

fn with_location(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Diverged { block, .. } => Error::Diverged {
            block,
            location: Some(format!("epoch {epoch}, batch {batch}")),
        },
        other => other,
    }
}

/// Epoch × batch loop with per-epoch seeded shuffling and RMSprop updates.
///
/// `batch_fn(params, indices)` returns the batch loss and one gradient vector
/// per parameter block. `on_epoch(epoch, params, mean_loss)` runs after each
/// epoch. On return `params` holds the last iterate.
pub fn train_epochs<B, E>(
    params: &mut Vec<ParamBlock>,
    samples: usize,
    config: &TrainConfig,
    mut batch_fn: B,
    mut on_epoch: E,
) -> Result<TrainOutcome>
where
    B: FnMut(&[ParamBlock], &[usize]) -> Result<(f64, Vec<Vec<f64>>)>,
    E: FnMut(usize, &[ParamBlock], f64) -> Result<()>,
{
    config.validate()?;
    if samples == 0 {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut state = RmspropState::new(config.learning_rate, config.rms_decay, config.rms_eps, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SHUFFLE_STREAM]));
    let batch_size = config.batch_size.min(samples);
    let mut order: Vec<usize> = (0..samples).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<ParamBlock>)> = None;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(batch_size).enumerate() {
            let (loss, grads) = batch_fn(params, chunk).map_err(|e| with_location(e, epoch, bi))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    block: "loss".into(),
                    location: Some(format!("epoch {epoch}, batch {bi}")),
                });
            }
            rmsprop_step(&mut state, params, &grads).map_err(|e| with_location(e, epoch, bi))?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        history.push(mean);
        on_epoch(epoch, params, mean)?;

        if best.as_ref().map_or(true, |(_, l, _)| mean < *l) {
            best = Some((epoch, mean, params.clone()));
        }

        if epoch >= 1 {
            if let Some(rule) = config.early_stop {
                let prev = history[epoch - 1];
                let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
                if mean < rule.abs_threshold || improvement < rule.rel_improvement {
                    stopped_early = epoch + 1 < config.epochs;
                    break;
                }
            }
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
        stopped_early,
    })
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
