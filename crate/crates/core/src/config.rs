//! Pipeline configuration file (TOML), with full-scale and desk-scale presets.
//!
//! Each training section uses the same keys: `learning_rate`, `optimizer`,
//! `batch_size`, `epochs`, `loss`, plus the RMSprop constants. Every key has a
//! default, so a partial file only overrides what it names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Mode, NetworkConfig};
use crate::optim::{LossKind, StopRule, TrainConfig, DEFAULT_RMS_DECAY, DEFAULT_RMS_EPS};
use crate::projection::ProjectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Rmsprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub rms_decay: f64,
    pub rms_eps: f64,
}

impl TrainSection {
    fn network(epochs: usize) -> Self {
        Self {
            learning_rate: 1e-4,
            optimizer: Optimizer::Rmsprop,
            batch_size: 512,
            epochs,
            loss: LossKind::CrossEntropy,
            rms_decay: DEFAULT_RMS_DECAY,
            rms_eps: DEFAULT_RMS_EPS,
        }
    }

    pub fn to_train_config(&self, seed: u64, early_stop: Option<StopRule>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            loss: self.loss,
            rms_decay: self.rms_decay,
            rms_eps: self.rms_eps,
            early_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub dim: usize,
    /// Unit-norm step in the baseline. `false` gives the plain non-unitary comparator.
    pub baseline_normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training images to use; 0 means all.
    pub train_samples: usize,
    /// Validation images to use; 0 means all.
    pub val_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSection {
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSection {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub init_std: f64,
    pub early_stop: bool,
    pub stop_rel_improvement: f64,
    pub stop_abs_threshold: f64,
}

impl ProjectionSection {
    pub fn train(&self) -> TrainSection {
        TrainSection {
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss,
            rms_decay: self.rms_decay,
            rms_eps: self.rms_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: NetworkSection,
    pub data: DataSection,
    pub baseline: TrainSection,
    pub capture: CaptureSection,
    pub projection: ProjectionSection,
    pub unitary: TrainSection,
}

impl PipelineConfig {
    /// 50 layers of 28×28 maps on full MNIST.
    pub fn full() -> Self {
        let stop = StopRule::default();
        Self {
            network: NetworkSection {
                depth: 50,
                dim: 28,
                baseline_normalize: true,
            },
            data: DataSection {
                train_samples: 0,
                val_samples: 0,
            },
            baseline: TrainSection::network(100),
            capture: CaptureSection { samples: 30_000 },
            projection: ProjectionSection {
                learning_rate: 1e-4,
                optimizer: Optimizer::Rmsprop,
                batch_size: 512,
                epochs: 10,
                loss: LossKind::MeanSquaredError,
                rms_decay: DEFAULT_RMS_DECAY,
                rms_eps: DEFAULT_RMS_EPS,
                init_std: 0.01,
                early_stop: true,
                stop_rel_improvement: stop.rel_improvement,
                stop_abs_threshold: stop.abs_threshold,
            },
            unitary: TrainSection::network(100),
        }
    }

    /// 10 layers of 16×16 maps on a few thousand images, sized for a laptop.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.network.depth = 10;
        c.network.dim = 16;
        c.data.train_samples = 6000;
        c.data.val_samples = 1000;
        c.capture.samples = 2000;
        c.baseline.learning_rate = 1e-3;
        c.baseline.batch_size = 64;
        c.baseline.epochs = 10;
        c.unitary.learning_rate = 1e-3;
        c.unitary.batch_size = 64;
        c.unitary.epochs = 20;
        c.projection.learning_rate = 1e-2;
        c.projection.batch_size = 128;
        c.projection.epochs = 50;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidInput(format!(
                "preset: unknown name {other:?} (expected \"full\" or \"desk\")"
            ))),
        }
    }

    /// Parses a TOML document layered over `base`: keys it omits keep the
    /// base values.
    pub fn from_toml_over(text: &str, base: &Self) -> Result<Self> {
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        let mut merged = toml::Table::try_from(base).expect("config serializes");
        merge(&mut merged, overlay);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(text, &Self::desk())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network_config(Mode::Baseline).validate()?;
        let named = |section: &str, r: Result<()>| {
            r.map_err(|e| Error::InvalidInput(format!("{section}.{}", strip(e))))
        };
        named("baseline", self.baseline.to_train_config(0, None).validate())?;
        named("unitary", self.unitary.to_train_config(0, None).validate())?;
        named("projection", self.projection_config(0).train.validate())?;
        if !(self.projection.init_std >= 0.0 && self.projection.init_std.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "projection.init_std must be non-negative, got {}",
                self.projection.init_std
            )));
        }
        if self.capture.samples == 0 {
            return Err(Error::InvalidInput("capture.samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn network_config(&self, mode: Mode) -> NetworkConfig {
        NetworkConfig {
            depth: self.network.depth,
            dim: self.network.dim,
            mode,
            normalize: mode == Mode::Baseline && self.network.baseline_normalize,
        }
    }

    pub fn projection_config(&self, seed: u64) -> ProjectionConfig {
        let p = &self.projection;
        let stop = p.early_stop.then_some(StopRule {
            rel_improvement: p.stop_rel_improvement,
            abs_threshold: p.stop_abs_threshold,
        });
        ProjectionConfig {
            train: p.train().to_train_config(seed, stop),
            init_std: p.init_std,
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
