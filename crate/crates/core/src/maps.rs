//! Activation-map containers.
//!
//! A batch of `B` square `n×n` maps for one channel is a single `n × (n·B)`
//! matrix with sample `b` occupying columns `b·n .. (b+1)·n`. Left
//! multiplication by a weight then acts on the whole batch in one product, and
//! `g · Xᵀ` sums the weight gradient over the batch.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitComplexMap {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl SplitComplexMap {
    pub fn new(re: DMatrix<f64>, im: DMatrix<f64>) -> Result<Self> {
        if !re.is_square() || re.shape() != im.shape() {
            return Err(Error::Shape(format!(
                "split-complex map channels must be equal squares, got {:?} and {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    /// Combined Frobenius norm of both channels.
    pub fn norm(&self) -> f64 {
        (self.re.norm_squared() + self.im.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch {
    data: DMatrix<f64>,
}

impl ChannelBatch {
    pub fn zeros(n: usize, batch: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n * batch),
        }
    }

    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if n == 0 || data.ncols() % n != 0 {
            return Err(Error::Shape(format!(
                "channel batch must be n × n·B, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_samples(samples: &[DMatrix<f64>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("empty sample list".into()))?;
        let n = first.nrows();
        let mut out = Self::zeros(n, samples.len());
        for (b, s) in samples.iter().enumerate() {
            if s.shape() != (n, n) {
                return Err(Error::Shape(format!(
                    "sample {b} is {:?}, expected ({n}, {n})",
                    s.shape()
                )));
            }
            out.sample_mut(b).copy_from(s);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn batch(&self) -> usize {
        self.data.ncols() / self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn sample(&self, b: usize) -> nalgebra::DMatrixView<'_, f64> {
        let n = self.dim();
        self.data.view((0, b * n), (n, n))
    }

    pub fn sample_mut(&mut self, b: usize) -> nalgebra::DMatrixViewMut<'_, f64> {
        let n = self.dim();
        self.data.view_mut((0, b * n), (n, n))
    }

    /// Raw column-major storage of sample `b`.
    pub fn sample_slice(&self, b: usize) -> &[f64] {
        let nn = self.dim() * self.dim();
        &self.data.as_slice()[b * nn..(b + 1) * nn]
    }

    pub fn sample_slice_mut(&mut self, b: usize) -> &mut [f64] {
        let nn = self.dim() * self.dim();
        &mut self.data.as_mut_slice()[b * nn..(b + 1) * nn]
    }

    /// New batch holding the listed samples in order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let n = self.dim();
        let nn = n * n;
        let src = self.data.as_slice();
        let mut buf = Vec::with_capacity(nn * indices.len());
        for &i in indices {
            buf.extend_from_slice(&src[i * nn..(i + 1) * nn]);
        }
        Self {
            data: DMatrix::from_vec(n, n * indices.len(), buf),
        }
    }

    /// First `k` samples.
    pub fn head(&self, k: usize) -> Self {
        let n = self.dim();
        Self {
            data: self.data.columns(0, n * k).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Batch of split-complex maps: independent real and imaginary channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBatch {
    pub re: ChannelBatch,
    pub im: ChannelBatch,
}

impl SplitBatch {
    pub fn new(re: ChannelBatch, im: ChannelBatch) -> Result<Self> {
        if re.matrix().shape() != im.matrix().shape() {
            return Err(Error::Shape(format!(
                "channel shapes differ: {:?} vs {:?}",
                re.matrix().shape(),
                im.matrix().shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(n: usize, batch: usize) -> Self {
        Self {
            re: ChannelBatch::zeros(n, batch),
            im: ChannelBatch::zeros(n, batch),
        }
    }

    pub fn from_maps(maps: &[SplitComplexMap]) -> Result<Self> {
        let re: Vec<_> = maps.iter().map(|m| m.re.clone()).collect();
        let im: Vec<_> = maps.iter().map(|m| m.im.clone()).collect();
        Self::new(ChannelBatch::from_samples(&re)?, ChannelBatch::from_samples(&im)?)
    }

    pub fn map(&self, b: usize) -> SplitComplexMap {
        SplitComplexMap {
            re: self.re.sample(b).into_owned(),
            im: self.im.sample(b).into_owned(),
        }
    }

    pub fn dim(&self) -> usize {
        self.re.dim()
    }

    pub fn batch(&self) -> usize {
        self.re.batch()
    }

    pub fn channel(&self, ch: Channel) -> &ChannelBatch {
        match ch {
            Channel::Re => &self.re,
            Channel::Im => &self.im,
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            re: self.re.gather(indices),
            im: self.im.gather(indices),
        }
    }

    pub fn head(&self, k: usize) -> Self {
        Self {
            re: self.re.head(k),
            im: self.im.head(k),
        }
    }

    /// Per-sample combined Frobenius norm over both channels.
    pub fn sample_norms(&self) -> Vec<f64> {
        (0..self.batch())
            .map(|b| {
                let r: f64 = self.re.sample_slice(b).iter().map(|v| v * v).sum();
                let i: f64 = self.im.sample_slice(b).iter().map(|v| v * v).sum();
                (r + i).sqrt()
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Which half of a split-complex map a weight acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Re,
    Im,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Re, Channel::Im];

    pub fn index(self) -> usize {
        match self {
            Channel::Re => 0,
            Channel::Im => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Re => "re",
            Channel::Im => "im",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
