//! Versioned binary containers for network states, activation traces, and
//! projection results.
//!
//! Every file is laid out as
//!
//! ```text
//! magic       4 bytes   b"UPST" | b"UPTR" | b"UPPR"
//! version     u32 LE
//! header_len  u64 LE
//! header      header_len bytes of UTF-8 JSON
//! payload     little-endian f64 values, layout fixed by the header
//! ```
//!
//! Matrices inside payloads are written sample by sample in row-major order.
//! See `docs/FORMATS.md` for the per-kind payload layouts.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{DenseHead, CLASSES};
use crate::lie::{param_count, SkewParams};
use crate::maps::{Channel, ChannelBatch};
use crate::network::{ChannelWeight, Mode, NetworkConfig, NetworkState};
use crate::projection::{FitEntry, LayerFit, ProjectionConfig, ProjectionResult};
use crate::trace::{ActivationTrace, ChannelPairs, LayerPairs, TraceSource};

pub const STATE_MAGIC: [u8; 4] = *b"UPST";
pub const TRACE_MAGIC: [u8; 4] = *b"UPTR";
pub const PROJECTION_MAGIC: [u8; 4] = *b"UPPR";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode<H: Serialize>(magic: [u8; 4], header: &H, payload: &[f64]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + payload.len() * 8);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Decoded<H> {
    header: H,
    payload: Vec<f64>,
}

fn decode<H: DeserializeOwned>(path: &Path, magic: [u8; 4], bytes: &[u8]) -> Result<Decoded<H>> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "file shorter than the fixed preamble"));
    }
    if bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "magic {:?} does not match expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(&magic)
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(Error::format(path, "header truncated"));
    }
    let header: H = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    let rest = &body[header_len..];
    if rest.len() % 8 != 0 {
        return Err(Error::format(path, "payload is not a whole number of f64 values"));
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoded { header, payload })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct PayloadReader<'a> {
    path: &'a Path,
    values: &'a [f64],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [f64]> {
        let end = self.pos + len;
        if end > self.values.len() {
            return Err(Error::format(self.path, "payload shorter than the header declares"));
        }
        let s = &self.values[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.values.len() {
            return Err(Error::format(self.path, "trailing payload values"));
        }
        Ok(())
    }
}

fn push_batch_row_major(out: &mut Vec<f64>, batch: &ChannelBatch) {
    let n = batch.dim();
    let m = batch.matrix();
    for b in 0..batch.batch() {
        for r in 0..n {
            for c in 0..n {
                out.push(m[(r, b * n + c)]);
            }
        }
    }
}

fn batch_from_row_major(values: &[f64], n: usize, samples: usize) -> ChannelBatch {
    let mut m = DMatrix::zeros(n, n * samples);
    for b in 0..samples {
        for r in 0..n {
            for c in 0..n {
                m[(r, b * n + c)] = values[(b * n + r) * n + c];
            }
        }
    }
    ChannelBatch::from_matrix(m).expect("square blocks")
}

// ---- network state ----

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateHeader {
    kind: String,
    config: NetworkConfig,
    config_hash: String,
    seed: u64,
    blocks: Vec<BlockHeader>,
}

pub fn encode_state(state: &NetworkState) -> Vec<u8> {
    let blocks = state.to_blocks();
    let header = StateHeader {
        kind: "network-state".into(),
        config: state.config.clone(),
        config_hash: state.config.hash(),
        seed: state.seed,
        blocks: blocks
            .iter()
            .map(|b| BlockHeader {
                name: b.name.clone(),
                len: b.values.len(),
            })
            .collect(),
    };
    let payload: Vec<f64> = blocks.into_iter().flat_map(|b| b.values).collect();
    encode(STATE_MAGIC, &header, &payload)
}

pub fn decode_state(path: &Path, bytes: &[u8]) -> Result<NetworkState> {
    let d: Decoded<StateHeader> = decode(path, STATE_MAGIC, bytes)?;
    let cfg = d.header.config;
    cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let n = cfg.dim;
    let per_layer = match cfg.mode {
        Mode::Baseline => n * n,
        Mode::Unitary => param_count(n),
    };
    let mut rd = PayloadReader {
        path,
        values: &d.payload,
        pos: 0,
    };
    let mut layers = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let mut pair = Vec::with_capacity(2);
        for _ in Channel::BOTH {
            let vals = rd.take(per_layer)?;
            pair.push(match cfg.mode {
                Mode::Baseline => ChannelWeight::Dense(DMatrix::from_row_slice(n, n, vals)),
                Mode::Unitary => ChannelWeight::Lie(SkewParams::new(n, vals.to_vec())?),
            });
        }
        let [re, im]: [ChannelWeight; 2] = pair.try_into().expect("two channels");
        layers.push([re, im]);
    }
    let f = cfg.features();
    let weight = DMatrix::from_row_slice(CLASSES, f, rd.take(CLASSES * f)?);
    let bias = DVector::from_column_slice(rd.take(CLASSES)?);
    rd.finish()?;
    let state = NetworkState {
        config: cfg,
        seed: d.header.seed,
        layers,
        head: DenseHead { weight, bias },
    };
    if state.config.hash() != d.header.config_hash {
        return Err(Error::format(path, "config hash does not match config"));
    }
    Ok(state)
}

pub fn write_state(path: &Path, state: &NetworkState) -> Result<()> {
    write_atomic(path, &encode_state(state))
}

pub fn read_state(path: &Path) -> Result<NetworkState> {
    decode_state(path, &read_file(path)?)
}

// ---- activation trace ----

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    depth: usize,
    dim: usize,
    channels: usize,
    samples: usize,
    source: TraceSource,
}

pub fn encode_trace(trace: &ActivationTrace) -> Vec<u8> {
    let header = TraceHeader {
        kind: "activation-trace".into(),
        depth: trace.depth(),
        dim: trace.dim(),
        channels: 2,
        samples: trace.samples(),
        source: trace.source.clone(),
    };
    let mut payload = Vec::with_capacity(trace.depth() * 4 * trace.samples() * trace.dim().pow(2));
    for layer in &trace.layers {
        for ch in Channel::BOTH {
            let pairs = layer.channel(ch);
            push_batch_row_major(&mut payload, &pairs.inputs);
            push_batch_row_major(&mut payload, &pairs.targets);
        }
    }
    encode(TRACE_MAGIC, &header, &payload)
}

pub fn decode_trace(path: &Path, bytes: &[u8]) -> Result<ActivationTrace> {
    let d: Decoded<TraceHeader> = decode(path, TRACE_MAGIC, bytes)?;
    let h = d.header;
    if h.channels != 2 || h.depth == 0 || h.dim == 0 || h.samples == 0 {
        return Err(Error::format(path, "trace header has empty or unsupported dimensions"));
    }
    let block = h.samples * h.dim * h.dim;
    let mut rd = PayloadReader {
        path,
        values: &d.payload,
        pos: 0,
    };
    let mut layers = Vec::with_capacity(h.depth);
    for _ in 0..h.depth {
        let mut chans = Vec::with_capacity(2);
        for _ in Channel::BOTH {
            let inputs = batch_from_row_major(rd.take(block)?, h.dim, h.samples);
            let targets = batch_from_row_major(rd.take(block)?, h.dim, h.samples);
            chans.push(ChannelPairs::new(inputs, targets)?);
        }
        let im = chans.pop().unwrap();
        let re = chans.pop().unwrap();
        layers.push(LayerPairs { re, im });
    }
    rd.finish()?;
    ActivationTrace::new(layers, h.source)
}

pub fn write_trace(path: &Path, trace: &ActivationTrace) -> Result<()> {
    write_atomic(path, &encode_trace(trace))
}

pub fn read_trace(path: &Path) -> Result<ActivationTrace> {
    decode_trace(path, &read_file(path)?)
}

// ---- projection result ----

#[derive(Debug, Serialize, Deserialize)]
struct FitHeader {
    layer: usize,
    channel: Channel,
    seed: u64,
    status: String,
    error: Option<String>,
    final_mse: Option<f64>,
    best_epoch: Option<usize>,
    history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectionHeader {
    kind: String,
    dim: usize,
    depth: usize,
    seed: u64,
    partial: bool,
    config: Option<ProjectionConfig>,
    fits: Vec<FitHeader>,
}

/// Projection result as stored on disk, with the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFile {
    pub result: ProjectionResult,
    pub config: Option<ProjectionConfig>,
}

pub fn encode_projection(result: &ProjectionResult, config: Option<&ProjectionConfig>) -> Vec<u8> {
    let n = result.dim;
    let mut payload = Vec::with_capacity(result.fits.len() * param_count(n));
    let fits = result
        .fits
        .iter()
        .map(|f| match &f.outcome {
            Ok(fit) => {
                payload.extend_from_slice(fit.params.entries());
                FitHeader {
                    layer: f.layer,
                    channel: f.channel,
                    seed: f.seed,
                    status: "ok".into(),
                    error: None,
                    final_mse: Some(fit.final_mse),
                    best_epoch: Some(fit.best_epoch),
                    history: fit.history.clone(),
                }
            }
            Err(msg) => {
                payload.extend(std::iter::repeat(0.0).take(param_count(n)));
                FitHeader {
                    layer: f.layer,
                    channel: f.channel,
                    seed: f.seed,
                    status: "failed".into(),
                    error: Some(msg.clone()),
                    final_mse: None,
                    best_epoch: None,
                    history: Vec::new(),
                }
            }
        })
        .collect();
    let header = ProjectionHeader {
        kind: "projection-result".into(),
        dim: n,
        depth: result.depth(),
        seed: result.seed,
        partial: result.partial(),
        config: config.cloned(),
        fits,
    };
    encode(PROJECTION_MAGIC, &header, &payload)
}

pub fn decode_projection(path: &Path, bytes: &[u8]) -> Result<ProjectionFile> {
    let d: Decoded<ProjectionHeader> = decode(path, PROJECTION_MAGIC, bytes)?;
    let h = d.header;
    let per = param_count(h.dim);
    if h.fits.len() != 2 * h.depth {
        return Err(Error::format(path, "fit count does not equal 2 × depth"));
    }
    let mut rd = PayloadReader {
        path,
        values: &d.payload,
        pos: 0,
    };
    let mut fits = Vec::with_capacity(h.fits.len());
    for fh in h.fits {
        let vals = rd.take(per)?;
        let outcome = if fh.status == "ok" {
            Ok(LayerFit {
                params: SkewParams::new(h.dim, vals.to_vec())?,
                history: fh.history,
                best_epoch: fh.best_epoch.unwrap_or(0),
                final_mse: fh
                    .final_mse
                    .ok_or_else(|| Error::format(path, "successful fit without final_mse"))?,
            })
        } else {
            Err(fh.error.unwrap_or_else(|| "unknown failure".into()))
        };
        fits.push(FitEntry {
            layer: fh.layer,
            channel: fh.channel,
            seed: fh.seed,
            outcome,
        });
    }
    rd.finish()?;
    Ok(ProjectionFile {
        result: ProjectionResult {
            dim: h.dim,
            seed: h.seed,
            fits,
        },
        config: h.config,
    })
}

pub fn write_projection(path: &Path, result: &ProjectionResult, config: Option<&ProjectionConfig>) -> Result<()> {
    write_atomic(path, &encode_projection(result, config))
}

pub fn read_projection(path: &Path) -> Result<ProjectionFile> {
    decode_projection(path, &read_file(path)?)
}
