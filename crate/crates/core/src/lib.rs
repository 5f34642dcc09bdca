//! Orthogonal (unitary) weights for deep Fourier-domain networks, via Lie
//! parameterization and layer-wise projection of a trained baseline.
//!
//! The pipeline: train a baseline network, capture per-layer activation pairs,
//! fit `exp(L − Lᵀ)` to each layer's input/output behaviour, then train or
//! evaluate the resulting orthogonal network.

pub mod config;
pub mod data;
pub mod error;
pub mod formats;
pub mod layers;
pub mod lie;
pub mod maps;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod projection;
pub mod trace;

pub use error::{Error, ParseErrorKind, Result};
pub use lie::{OrthogonalMatrix, SkewMatrix, SkewParams};
pub use maps::{Channel, ChannelBatch, SplitBatch, SplitComplexMap};
pub use network::{Mode, NetworkConfig, NetworkState};
pub use optim::TrainConfig;
pub use projection::{ProjectionConfig, ProjectionResult};
pub use trace::ActivationTrace;
