//! The two architectures: an unconstrained baseline (optionally with per-sample
//! normalization) and the Lie-parameterized unitary network.
//!
//! Each hidden layer maps a split-complex `n×n` map to another by left
//! multiplication, channel by channel, followed by tanh. After `depth` layers
//! the map is flattened and fed to a dense `10 × 2n²` head.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PreprocessedDataset;
use crate::error::{Error, Result};
use crate::layers::{
    self, cross_entropy_per_sample, dense_softmax_ce, flatten, unflatten, DenseHead, CLASSES,
};
use crate::lie::{self, param_count, SkewParams};
use crate::maps::{Channel, SplitBatch};
use crate::optim::{derive_seed, train_epochs, xavier_init, ParamBlock, TrainConfig};
use crate::trace::{ChannelPairs, LayerPairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Unconstrained `n×n` weights.
    Baseline,
    /// `W = exp(L − Lᵀ)` weights.
    Unitary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of hidden layers.
    pub depth: usize,
    /// Side length of each activation map.
    pub dim: usize,
    pub mode: Mode,
    /// Rescale each sample to unit RMS after every matmul (baseline only).
    pub normalize: bool,
}

impl NetworkConfig {
    /// 50 hidden layers on 28×28 maps.
    pub fn full(mode: Mode) -> Self {
        Self {
            depth: 50,
            dim: 28,
            mode,
            normalize: mode == Mode::Baseline,
        }
    }

    /// 10 hidden layers on 16×16 maps.
    pub fn desk(mode: Mode) -> Self {
        Self {
            depth: 10,
            dim: 16,
            mode,
            normalize: mode == Mode::Baseline,
        }
    }

    pub fn features(&self) -> usize {
        2 * self.dim * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidInput("depth must be at least 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidInput("map dimension must be at least 2".into()));
        }
        if self.mode == Mode::Unitary && self.normalize {
            return Err(Error::InvalidInput(
                "normalization is only available in baseline mode".into(),
            ));
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelWeight {
    Dense(DMatrix<f64>),
    Lie(SkewParams),
}

impl ChannelWeight {
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        match self {
            ChannelWeight::Dense(w) => Ok(w.clone()),
            ChannelWeight::Lie(p) => Ok(lie::orthogonal_from_params(p)?.into_matrix()),
        }
    }

    /// Flat values; dense weights are row-major.
    pub fn values(&self) -> Vec<f64> {
        match self {
            ChannelWeight::Dense(w) => w.transpose().as_slice().to_vec(),
            ChannelWeight::Lie(p) => p.entries().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub seed: u64,
    /// `[re, im]` weights per hidden layer.
    pub layers: Vec<[ChannelWeight; 2]>,
    pub head: DenseHead,
}

const INIT_STREAM: u64 = 0x494e_4954;

fn xavier_head(features: usize, seed: u64) -> DenseHead {
    let w = xavier_init(CLASSES * features, features, CLASSES, seed);
    DenseHead {
        weight: DMatrix::from_row_slice(CLASSES, features, &w),
        bias: DVector::zeros(CLASSES),
    }
}

impl NetworkState {
    /// Xavier-uniform weights for every layer and the head, zero head bias.
    /// Lie parameters use fan-in = fan-out = n.
    pub fn xavier(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.dim;
        let layers = (0..config.depth)
            .map(|l| {
                let mk = |ch: Channel| {
                    let s = derive_seed(seed, &[INIT_STREAM, l as u64, ch.index() as u64]);
                    match config.mode {
                        Mode::Baseline => {
                            ChannelWeight::Dense(DMatrix::from_row_slice(n, n, &xavier_init(n * n, n, n, s)))
                        }
                        Mode::Unitary => ChannelWeight::Lie(
                            SkewParams::new(n, xavier_init(param_count(n), n, n, s)).expect("sized"),
                        ),
                    }
                };
                [mk(Channel::Re), mk(Channel::Im)]
            })
            .collect();
        let head = xavier_head(config.features(), derive_seed(seed, &[INIT_STREAM, u64::MAX]));
        Ok(Self {
            config,
            seed,
            layers,
            head,
        })
    }

    /// Unitary network from fitted Lie parameters and a copied head.
    pub fn from_projection(
        config: NetworkConfig,
        layers: Vec<[SkewParams; 2]>,
        head: DenseHead,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::Unitary {
            return Err(Error::InvalidInput("projection init needs a unitary config".into()));
        }
        if layers.len() != config.depth {
            return Err(Error::Shape(format!(
                "projection has {} layers, network has {}",
                layers.len(),
                config.depth
            )));
        }
        if head.weight.shape() != (CLASSES, config.features()) {
            return Err(Error::Shape(format!(
                "head is {:?}, expected ({CLASSES}, {})",
                head.weight.shape(),
                config.features()
            )));
        }
        let layers = layers
            .into_iter()
            .map(|[re, im]| {
                if re.dim() != config.dim || im.dim() != config.dim {
                    return Err(Error::Shape(format!(
                        "projection dimension {} differs from network dimension {}",
                        re.dim(),
                        config.dim
                    )));
                }
                Ok([ChannelWeight::Lie(re), ChannelWeight::Lie(im)])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            seed,
            layers,
            head,
        })
    }

    pub fn materialize(&self) -> Result<Vec<[DMatrix<f64>; 2]>> {
        self.layers
            .iter()
            .map(|[re, im]| Ok([re.materialize()?, im.materialize()?]))
            .collect()
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .flat_map(|l| Channel::BOTH.into_iter().map(move |c| format!("layer{l}.{c}")))
            .collect();
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    /// Flat parameter blocks: every layer `[re, im]`, then head weight (row-major) and bias.
    pub fn to_blocks(&self) -> Vec<ParamBlock> {
        let mut values: Vec<Vec<f64>> = self
            .layers
            .iter()
            .flat_map(|pair| pair.iter().map(ChannelWeight::values))
            .collect();
        values.push(self.head.weight.transpose().as_slice().to_vec());
        values.push(self.head.bias.as_slice().to_vec());
        self.block_names()
            .into_iter()
            .zip(values)
            .map(|(n, v)| ParamBlock::new(n, v))
            .collect()
    }

    pub fn set_blocks(&mut self, blocks: &[ParamBlock]) -> Result<()> {
        let expected = 2 * self.layers.len() + 2;
        if blocks.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter blocks, expected {expected}",
                blocks.len()
            )));
        }
        let n = self.config.dim;
        for (l, pair) in self.layers.iter_mut().enumerate() {
            for (c, w) in pair.iter_mut().enumerate() {
                let vals = &blocks[2 * l + c].values;
                *w = match w {
                    ChannelWeight::Dense(_) => {
                        if vals.len() != n * n {
                            return Err(Error::Shape(format!("block {} has wrong size", blocks[2 * l + c].name)));
                        }
                        ChannelWeight::Dense(DMatrix::from_row_slice(n, n, vals))
                    }
                    ChannelWeight::Lie(_) => ChannelWeight::Lie(SkewParams::new(n, vals.clone())?),
                };
            }
        }
        let f = self.config.features();
        let hw = &blocks[expected - 2].values;
        let hb = &blocks[expected - 1].values;
        if hw.len() != CLASSES * f || hb.len() != CLASSES {
            return Err(Error::Shape("head block has wrong size".into()));
        }
        self.head.weight = DMatrix::from_row_slice(CLASSES, f, hw);
        self.head.bias = DVector::from_column_slice(hb);
        Ok(())
    }

    /// SHA-256 over the config hash, seed, and every parameter in block order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.hash().as_bytes());
        h.update(self.seed.to_le_bytes());
        for b in self.to_blocks() {
            for v in b.values {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Intermediate tensors of one forward pass.
pub struct ForwardCache {
    pub weights: Vec<[DMatrix<f64>; 2]>,
    /// Input to each layer.
    pub inputs: Vec<SplitBatch>,
    /// `W·a` before normalization (only stored when normalizing).
    pub pre_norm: Vec<Option<SplitBatch>>,
    /// Post-normalization, pre-tanh tensor of each layer.
    pub pre_tanh: Vec<SplitBatch>,
    pub output: SplitBatch,
    pub flat: DMatrix<f64>,
}

fn check_batch(state: &NetworkState, batch: &SplitBatch) -> Result<()> {
    if batch.dim() != state.config.dim {
        return Err(Error::Shape(format!(
            "batch maps are {0}x{0}, network expects {1}x{1}",
            batch.dim(),
            state.config.dim
        )));
    }
    Ok(())
}

fn forward_with(
    state: &NetworkState,
    weights: Vec<[DMatrix<f64>; 2]>,
    batch: &SplitBatch,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    check_batch(state, batch)?;
    let depth = weights.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre_norm = Vec::with_capacity(depth);
    let mut pre_tanh = Vec::with_capacity(depth);
    let mut a = batch.clone();
    for [w_re, w_im] in &weights {
        let z = layers::matmul_layer_forward(&a, w_re, w_im)?;
        let (raw, z) = if state.config.normalize {
            let normed = layers::unit_norm_forward(&z)?;
            (Some(z), normed)
        } else {
            (None, z)
        };
        let next = layers::tanh_forward(&z);
        inputs.push(std::mem::replace(&mut a, next));
        pre_norm.push(raw);
        pre_tanh.push(z);
    }
    let flat = flatten(&a);
    let logits = state.head.logits(&flat)?;
    Ok((
        logits,
        ForwardCache {
            weights,
            inputs,
            pre_norm,
            pre_tanh,
            output: a,
            flat,
        },
    ))
}

/// Full forward pass keeping every intermediate.
pub fn forward_cached(state: &NetworkState, batch: &SplitBatch) -> Result<(DMatrix<f64>, ForwardCache)> {
    forward_with(state, state.materialize()?, batch)
}

/// Logits for `batch`, plus `(a_i, pre-tanh a_{i+1})` pairs per layer when
/// `capture` is set.
pub fn forward(
    state: &NetworkState,
    batch: &SplitBatch,
    capture: bool,
) -> Result<(DMatrix<f64>, Option<Vec<LayerPairs>>)> {
    let (logits, cache) = forward_cached(state, batch)?;
    let pairs = if capture {
        Some(
            cache
                .inputs
                .into_iter()
                .zip(cache.pre_tanh)
                .map(|(x, z)| {
                    Ok(LayerPairs {
                        re: ChannelPairs::new(x.re, z.re)?,
                        im: ChannelPairs::new(x.im, z.im)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((logits, pairs))
}

/// Mean cross-entropy on a batch and the gradient of every parameter block,
/// in [`NetworkState::to_blocks`] order.
pub fn loss_and_grad(state: &NetworkState, batch: &SplitBatch, labels: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
    let (_, cache) = forward_cached(state, batch)?;
    let ce = dense_softmax_ce(&cache.flat, &state.head, labels)?;
    let n = state.config.dim;
    let depth = state.layers.len();

    let mut layer_grads: Vec<Vec<f64>> = vec![Vec::new(); 2 * depth];
    let mut g = unflatten(&ce.grad_input, n)?;
    for l in (0..depth).rev() {
        let y = if l + 1 < depth { &cache.inputs[l + 1] } else { &cache.output };
        let g_z = layers::tanh_backward(y, &g);
        let g_raw = match &cache.pre_norm[l] {
            Some(raw) => layers::unit_norm_backward(raw, &g_z)?,
            None => g_z,
        };
        let [w_re, w_im] = &cache.weights[l];
        let mg = layers::matmul_layer_backward(&cache.inputs[l], w_re, w_im, &g_raw)?;
        for (c, gw) in [(0, &mg.weight_re), (1, &mg.weight_im)] {
            layer_grads[2 * l + c] = match &state.layers[l][c] {
                ChannelWeight::Dense(_) => gw.transpose().as_slice().to_vec(),
                ChannelWeight::Lie(p) => lie::params_grad_from_weight_grad(p, gw)?.into_entries(),
            };
        }
        g = mg.input;
    }
    layer_grads.push(ce.grad_head.weight.transpose().as_slice().to_vec());
    layer_grads.push(ce.grad_head.bias.as_slice().to_vec());
    Ok((ce.loss, layer_grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// Mean per-sample cross-entropy.
    pub loss: f64,
}

pub const EVAL_BATCH: usize = 512;

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax_lowest(col: nalgebra::DVectorView<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in col.iter().enumerate() {
        if v > col[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean cross-entropy over `data`.
pub fn evaluate(state: &NetworkState, data: &PreprocessedDataset, batch_size: usize) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    let weights = state.materialize()?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.maps.gather(chunk);
        let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
        let (logits, _) = forward_with(state, weights.clone(), &batch)?;
        for (col, &y) in logits.column_iter().zip(&labels) {
            if argmax_lowest(col.into()) == y as usize {
                correct += 1;
            }
        }
        loss_sum += cross_entropy_per_sample(&logits, &labels)?.iter().sum::<f64>();
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss_sum / data.len() as f64,
    })
}

/// Per-layer mean (over samples) of the combined L2 norm of each layer's
/// activation, both after tanh and before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub post_tanh: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    /// Mean combined norm of the network input.
    pub input: f64,
}

pub fn layer_norm_profile(state: &NetworkState, data: &PreprocessedDataset) -> Result<NormProfile> {
    if data.is_empty() {
        return Err(Error::InvalidInput("profile dataset is empty".into()));
    }
    let depth = state.layers.len();
    let weights = state.materialize()?;
    let mut post = vec![0.0; depth];
    let mut pre = vec![0.0; depth];
    let mut input = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = data.maps.gather(chunk);
        input += batch.sample_norms().iter().sum::<f64>();
        let (_, cache) = forward_with(state, weights.clone(), &batch)?;
        for l in 0..depth {
            pre[l] += cache.pre_tanh[l].sample_norms().iter().sum::<f64>();
            let after = if l + 1 < depth { &cache.inputs[l + 1] } else { &cache.output };
            post[l] += after.sample_norms().iter().sum::<f64>();
        }
    }
    let count = data.len() as f64;
    Ok(NormProfile {
        post_tanh: post.into_iter().map(|v| v / count).collect(),
        pre_tanh: pre.into_iter().map(|v| v / count).collect(),
        input: input / count,
    })
}

/// Runs the first `k` samples through `state` and records every layer's pairs.
pub fn capture(state: &NetworkState, data: &PreprocessedDataset, k: usize) -> Result<Vec<LayerPairs>> {
    let k = k.min(data.len());
    if k == 0 {
        return Err(Error::InvalidInput("nothing to capture".into()));
    }
    let (_, pairs) = forward(state, &data.maps.head(k), true)?;
    Ok(pairs.expect("capture requested"))
}

/// Train and validation metrics after one epoch (`-1` = before training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: i64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub norm_profile: NormProfile,
}

pub fn epoch_metrics(
    epoch: i64,
    state: &NetworkState,
    train: &PreprocessedDataset,
    val: &PreprocessedDataset,
) -> Result<EpochMetrics> {
    let t = evaluate(state, train, EVAL_BATCH)?;
    let v = evaluate(state, val, EVAL_BATCH)?;
    Ok(EpochMetrics {
        epoch,
        train_acc: t.accuracy,
        val_acc: v.accuracy,
        train_loss: t.loss,
        val_loss: v.loss,
        norm_profile: layer_norm_profile(state, val)?,
    })
}

/// End-to-end cross-entropy training of `state` in place. `on_epoch` sees the
/// epoch index, its mean batch loss, and the state after that epoch.
pub fn train_network<E>(
    state: &mut NetworkState,
    data: &PreprocessedDataset,
    config: &TrainConfig,
    mut on_epoch: E,
) -> Result<Vec<f64>>
where
    E: FnMut(usize, f64, &NetworkState) -> Result<()>,
{
    if data.dim() != state.config.dim {
        return Err(Error::Shape(format!(
            "data maps are {0}x{0}, network expects {1}x{1}",
            data.dim(),
            state.config.dim
        )));
    }
    let mut blocks = state.to_blocks();
    let mut scratch = state.clone();
    let outcome = train_epochs(
        &mut blocks,
        data.len(),
        config,
        |params, idx| {
            scratch.set_blocks(params)?;
            let batch = data.maps.gather(idx);
            let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
            loss_and_grad(&scratch, &batch, &labels)
        },
        |epoch, params, mean| {
            let mut snapshot = state.clone();
            snapshot.set_blocks(params)?;
            on_epoch(epoch, mean, &snapshot)
        },
    )?;
    state.set_blocks(&blocks)?;
    Ok(outcome.history)
}

/// Trains a Xavier-initialized baseline network with cross-entropy.
pub fn train_baseline(
    config: NetworkConfig,
    train: &TrainConfig,
    data: &PreprocessedDataset,
    seed: u64,
) -> Result<(NetworkState, Vec<f64>)> {
    if config.mode != Mode::Baseline {
        return Err(Error::InvalidInput("train_baseline needs a baseline config".into()));
    }
    let mut state = NetworkState::xavier(config, seed)?;
    let mut cfg = train.clone();
    cfg.seed = seed;
    let history = train_network(&mut state, data, &cfg, |_, _, _| Ok(()))?;
    Ok((state, history))
}

#[derive(Debug, Clone)]
pub enum UnitaryInit {
    Xavier,
    FromProjection {
        layers: Vec<[SkewParams; 2]>,
        head: DenseHead,
    },
}

/// Builds the initial unitary state for `init`, then trains for
/// `train.epochs` epochs (zero allowed). Metrics are logged before training
/// (epoch −1) and after every epoch.
pub fn train_unitary(
    config: NetworkConfig,
    train: &TrainConfig,
    epochs: usize,
    train_data: &PreprocessedDataset,
    val_data: &PreprocessedDataset,
    seed: u64,
    init: UnitaryInit,
) -> Result<(NetworkState, Vec<EpochMetrics>)> {
    if config.mode != Mode::Unitary {
        return Err(Error::InvalidInput("train_unitary needs a unitary config".into()));
    }
    let mut state = match init {
        UnitaryInit::Xavier => NetworkState::xavier(config, seed)?,
        UnitaryInit::FromProjection { layers, head } => {
            NetworkState::from_projection(config, layers, head, seed)?
        }
    };
    let mut log = vec![epoch_metrics(-1, &state, train_data, val_data)?];
    if epochs > 0 {
        let mut cfg = train.clone();
        cfg.seed = seed;
        cfg.epochs = epochs;
        train_network(&mut state, train_data, &cfg, |epoch, _, snapshot| {
            log.push(epoch_metrics(epoch as i64, snapshot, train_data, val_data)?);
            Ok(())
        })?;
    }
    Ok((state, log))
}
