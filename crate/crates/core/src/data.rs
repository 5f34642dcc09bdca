//! MNIST IDX ingestion, Fourier preprocessing, and synthetic planted traces.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, ParseErrorKind, Result};
use crate::layers::{self, CLASSES};
use crate::lie::{orthogonal_from_params, SkewParams};
use crate::maps::SplitBatch;
use crate::optim::{derive_seed, rng_for};
use crate::trace::{ActivationTrace, ChannelPairs, LayerPairs, TraceSource};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Decoded IDX images and labels. Pixels are stored image-major, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }

    /// First `k` samples (or all, if fewer).
    pub fn take(&self, k: usize) -> RawDataset {
        let k = k.min(self.len());
        RawDataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..k * self.rows * self.cols].to_vec(),
            labels: self.labels[..k].to_vec(),
        }
    }
}

/// Reads a whole file, transparently inflating gzip (sniffed by magic bytes).
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: ParseErrorKind, offset: usize) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            kind,
            offset: offset as u64,
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(ParseErrorKind::Truncated, self.bytes.len()))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(ParseErrorKind::Truncated, self.bytes.len()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(self.err(ParseErrorKind::BadMagic { expected, found }, 0));
        }
        Ok(())
    }
}

/// Parses an IDX image file and its matching label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let img_bytes = read_maybe_gz(images_path)?;
    let mut img = Cursor {
        path: images_path,
        bytes: &img_bytes,
        pos: 0,
    };
    img.magic(IMAGE_MAGIC)?;
    let count = img.u32()?;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let pixels = img.take(count as usize * rows * cols)?.to_vec();

    let lab_bytes = read_maybe_gz(labels_path)?;
    let mut lab = Cursor {
        path: labels_path,
        bytes: &lab_bytes,
        pos: 0,
    };
    lab.magic(LABEL_MAGIC)?;
    let label_count = lab.u32()?;
    if label_count != count {
        return Err(lab.err(
            ParseErrorKind::CountMismatch {
                images: count,
                labels: label_count,
            },
            4,
        ));
    }
    let start = lab.pos;
    let labels = lab.take(count as usize)?.to_vec();
    if let Some(i) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(lab.err(ParseErrorKind::BadLabel(labels[i]), start + i));
    }
    Ok(RawDataset {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Writes uncompressed IDX image and label files.
pub fn write_idx(images_path: &Path, labels_path: &Path, data: &RawDataset) -> Result<()> {
    let mut img = Vec::with_capacity(16 + data.pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(data.len() as u32).to_be_bytes());
    img.extend_from_slice(&(data.rows as u32).to_be_bytes());
    img.extend_from_slice(&(data.cols as u32).to_be_bytes());
    img.extend_from_slice(&data.pixels);
    let mut lab = Vec::with_capacity(8 + data.labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Locates `<prefix>-images-idx3-ubyte[.gz]`, accepting either spelling.
fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return gz;
    }
    plain
}

/// Training (`train-*`) and validation (`t10k-*`) splits from a directory.
/// The four IDX paths under `dir` (train images, train labels, validation
/// images, validation labels), preferring uncompressed names.
pub fn mnist_files(dir: &Path) -> [PathBuf; 4] {
    [
        find_idx(dir, "train-images-idx3-ubyte"),
        find_idx(dir, "train-labels-idx1-ubyte"),
        find_idx(dir, "t10k-images-idx3-ubyte"),
        find_idx(dir, "t10k-labels-idx1-ubyte"),
    ]
}

pub fn load_mnist_dir(dir: &Path) -> Result<(RawDataset, RawDataset)> {
    let train = load_idx(
        &find_idx(dir, "train-images-idx3-ubyte"),
        &find_idx(dir, "train-labels-idx1-ubyte"),
    )?;
    let val = load_idx(
        &find_idx(dir, "t10k-images-idx3-ubyte"),
        &find_idx(dir, "t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, val))
}

/// Fourier-domain maps with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedDataset {
    pub maps: SplitBatch,
    pub labels: Vec<u8>,
}

impl PreprocessedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.maps.dim()
    }

    pub fn gather(&self, indices: &[usize]) -> PreprocessedDataset {
        PreprocessedDataset {
            maps: self.maps.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn head(&self, k: usize) -> PreprocessedDataset {
        let k = k.min(self.len());
        PreprocessedDataset {
            maps: self.maps.head(k),
            labels: self.labels[..k].to_vec(),
        }
    }
}

/// 2-D DFT with orthonormal scaling `1/√(H·W)`; returns `(re, im)`.
pub fn fft2_orthonormal(img: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (h, w) = img.shape();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    // row-major complex buffer
    let mut buf: Vec<Complex<f64>> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| Complex::new(img[(r, c)], 0.0))
        .collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let re = DMatrix::from_fn(h, w, |r, c| buf[r * w + c].re * scale);
    let im = DMatrix::from_fn(h, w, |r, c| buf[r * w + c].im * scale);
    (re, im)
}

fn unit_image(raw: &RawDataset, i: usize) -> DMatrix<f64> {
    let px = raw.image(i);
    DMatrix::from_fn(raw.rows, raw.cols, |r, c| px[r * raw.cols + c] as f64 / 255.0)
}

/// Scales pixels to `[0, 1]` and applies the orthonormal 2-D FFT.
pub fn fft_preprocess(raw: &RawDataset) -> Result<PreprocessedDataset> {
    preprocess(raw, raw.rows)
}

/// Border cropped from 28×28 sources before downsampling.
pub const CROP_BORDER: usize = 2;

/// Box-filter weights mapping `src` samples onto `dst` samples.
fn area_weights(src: usize, dst: usize) -> DMatrix<f64> {
    let step = src as f64 / dst as f64;
    DMatrix::from_fn(dst, src, |k, i| {
        let lo = (k as f64 * step).max(i as f64);
        let hi = ((k + 1) as f64 * step).min((i + 1) as f64);
        ((hi - lo).max(0.0)) / step
    })
}

/// Center-crops `CROP_BORDER` pixels and area-resamples to `n × n`.
pub fn downsample(img: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let (h, w) = img.shape();
    if (h, w) == (n, n) {
        return img.clone();
    }
    let b = if h > 2 * CROP_BORDER + n / 2 { CROP_BORDER } else { 0 };
    let crop = img.view((b, b), (h - 2 * b, w - 2 * b));
    let rows = area_weights(h - 2 * b, n);
    let cols = area_weights(w - 2 * b, n);
    rows * crop * cols.transpose()
}

/// Scales, optionally downsamples to `n × n`, and Fourier transforms every image.
pub fn preprocess(raw: &RawDataset, n: usize) -> Result<PreprocessedDataset> {
    if raw.rows != raw.cols {
        return Err(Error::InvalidInput(format!(
            "images must be square, got {}x{}",
            raw.rows, raw.cols
        )));
    }
    if raw.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if n < 2 || n > raw.rows {
        return Err(Error::InvalidInput(format!(
            "map dimension {n} must lie in 2..={}",
            raw.rows
        )));
    }
    let mut maps = SplitBatch::zeros(n, raw.len());
    for i in 0..raw.len() {
        let img = downsample(&unit_image(raw, i), n);
        let (re, im) = fft2_orthonormal(&img);
        maps.re.sample_mut(i).copy_from(&re);
        maps.im.sample_mut(i).copy_from(&im);
    }
    Ok(PreprocessedDataset {
        maps,
        labels: raw.labels.clone(),
    })
}

/// Parameters for [`synth_orthogonal_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub depth: usize,
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
    /// Rescale every target to the unit-norm scale `√(2n²)`.
    pub normalize: bool,
    /// Standard deviation of the planted skew parameters.
    pub skew_std: f64,
}

impl SynthSpec {
    pub fn new(depth: usize, dim: usize, samples: usize, seed: u64) -> Self {
        Self {
            depth,
            dim,
            samples,
            seed,
            normalize: false,
            skew_std: 0.1,
        }
    }
}

/// A planted trace and the skew parameters that generated it, indexed `[layer][channel]`.
pub struct PlantedTrace {
    pub trace: ActivationTrace,
    pub planted: Vec<[SkewParams; 2]>,
}

/// Standard-normal inputs pushed through planted rotations `exp(S)` layer by
/// layer; each layer's target becomes the next layer's input.
pub fn synth_orthogonal_trace(spec: SynthSpec) -> Result<PlantedTrace> {
    let SynthSpec {
        depth,
        dim: n,
        samples,
        seed,
        ..
    } = spec;
    if n < 2 || samples == 0 || depth == 0 {
        return Err(Error::InvalidInput(format!(
            "synthetic trace needs n ≥ 2, samples ≥ 1, depth ≥ 1 (got {n}, {samples}, {depth})"
        )));
    }
    let normal = StandardNormal;
    let mut input_rng = rng_for(derive_seed(seed, &[0x1_0000]));
    let mut current = SplitBatch::zeros(n, samples);
    for v in current
        .re
        .matrix_mut()
        .iter_mut()
        .chain(current.im.matrix_mut().iter_mut())
    {
        *v = normal.sample(&mut input_rng);
    }

    let mut layers = Vec::with_capacity(depth);
    let mut planted = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut params = Vec::with_capacity(2);
        for ch in 0..2u64 {
            let mut rng = rng_for(derive_seed(seed, &[l as u64, ch]));
            let entries = (0..crate::lie::param_count(n))
                .map(|_| spec.skew_std * <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
                .collect();
            params.push(SkewParams::new(n, entries)?);
        }
        let w_re = orthogonal_from_params(&params[0])?;
        let w_im = orthogonal_from_params(&params[1])?;
        let mut out = layers::orthogonal_layer_forward(&current, &w_re, &w_im)?;
        if spec.normalize {
            out = layers::unit_norm_forward(&out)?;
        }
        layers.push(LayerPairs {
            re: ChannelPairs::new(current.re.clone(), out.re.clone())?,
            im: ChannelPairs::new(current.im.clone(), out.im.clone())?,
        });
        let [p_re, p_im]: [SkewParams; 2] = params.try_into().expect("two channels");
        planted.push([p_re, p_im]);
        current = out;
    }
    let trace = ActivationTrace::new(
        layers,
        TraceSource {
            seed,
            config_hash: "synthetic".into(),
            state_hash: String::new(),
        },
    )?;
    Ok(PlantedTrace { trace, planted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_only_dc() {
        let v = 0.6;
        let (re, im) = fft2_orthonormal(&DMatrix::from_element(28, 28, v));
        assert!((re[(0, 0)] - 28.0 * v).abs() < 1e-12);
        for r in 0..28 {
            for c in 0..28 {
                if (r, c) != (0, 0) {
                    assert!(re[(r, c)].abs() < 1e-12);
                }
                assert!(im[(r, c)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn area_weights_rows_sum_to_one() {
        let w = area_weights(24, 16);
        for r in w.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        // constant image stays constant
        let img = DMatrix::from_element(28, 28, 0.25);
        let d = downsample(&img, 16);
        assert!(d.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn non_square_rejected() {
        let raw = RawDataset {
            rows: 2,
            cols: 3,
            pixels: vec![0; 6],
            labels: vec![1],
        };
        assert!(matches!(fft_preprocess(&raw), Err(Error::InvalidInput(_))));
    }
}
