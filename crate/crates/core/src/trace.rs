//! Recorded per-layer activation pairs used as projection targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Channel, ChannelBatch};

/// `(a_i, a_{i+1})` pairs for one channel of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPairs {
    pub inputs: ChannelBatch,
    pub targets: ChannelBatch,
}

impl ChannelPairs {
    pub fn new(inputs: ChannelBatch, targets: ChannelBatch) -> Result<Self> {
        if inputs.matrix().shape() != targets.matrix().shape() {
            return Err(Error::Shape(format!(
                "inputs {:?} and targets {:?} differ",
                inputs.matrix().shape(),
                targets.matrix().shape()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn samples(&self) -> usize {
        self.inputs.batch()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPairs {
    pub re: ChannelPairs,
    pub im: ChannelPairs,
}

impl LayerPairs {
    pub fn channel(&self, ch: Channel) -> &ChannelPairs {
        match ch {
            Channel::Re => &self.re,
            Channel::Im => &self.im,
        }
    }
}

/// Where a trace came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSource {
    pub seed: u64,
    pub config_hash: String,
    pub state_hash: String,
}

/// Per-layer inputs and post-normalization, pre-tanh targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<LayerPairs>,
    pub source: TraceSource,
}

impl ActivationTrace {
    pub fn new(layers: Vec<LayerPairs>, source: TraceSource) -> Result<Self> {
        let t = Self { layers, source };
        t.validate()?;
        Ok(t)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].re.dim()
    }

    pub fn samples(&self) -> usize {
        self.layers[0].re.samples()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::InvalidInput("trace has no layers".into()))?;
        let shape = first.re.inputs.matrix().shape();
        if first.re.samples() == 0 {
            return Err(Error::InvalidInput("trace has no samples".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for ch in Channel::BOTH {
                let pairs = layer.channel(ch);
                if pairs.inputs.matrix().shape() != shape || pairs.targets.matrix().shape() != shape {
                    return Err(Error::Shape(format!(
                        "layer {i} channel {ch} has shape {:?}, expected {shape:?}",
                        pairs.inputs.matrix().shape()
                    )));
                }
            }
        }
        Ok(())
    }
}
