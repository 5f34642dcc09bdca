//! Forward and reverse passes for every layer in the network.
//!
//! Each backward function returns the exact reverse-mode gradient of its
//! forward. Reductions over the batch run in a fixed order, so results do not
//! depend on thread scheduling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lie::OrthogonalMatrix;
use crate::maps::{ChannelBatch, SplitBatch};

pub const CLASSES: usize = 10;

fn check_weight(w: &DMatrix<f64>, x: &ChannelBatch, which: &str) -> Result<()> {
    if w.shape() != (x.dim(), x.dim()) {
        return Err(Error::Shape(format!(
            "{which} weight is {:?} but maps are {}x{}",
            w.shape(),
            x.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// `out.re = W_re · x.re`, `out.im = W_im · x.im` for arbitrary square weights.
pub fn matmul_layer_forward(
    x: &SplitBatch,
    w_re: &DMatrix<f64>,
    w_im: &DMatrix<f64>,
) -> Result<SplitBatch> {
    check_weight(w_re, &x.re, "re")?;
    check_weight(w_im, &x.im, "im")?;
    Ok(SplitBatch {
        re: ChannelBatch::from_matrix(w_re * x.re.matrix())?,
        im: ChannelBatch::from_matrix(w_im * x.im.matrix())?,
    })
}

pub fn orthogonal_layer_forward(
    x: &SplitBatch,
    w_re: &OrthogonalMatrix,
    w_im: &OrthogonalMatrix,
) -> Result<SplitBatch> {
    matmul_layer_forward(x, w_re.as_matrix(), w_im.as_matrix())
}

#[derive(Debug, Clone)]
pub struct MatmulGrads {
    pub input: SplitBatch,
    pub weight_re: DMatrix<f64>,
    pub weight_im: DMatrix<f64>,
}

/// Adjoints of [`matmul_layer_forward`]: `g_x = Wᵀ·g`, `g_W = g·xᵀ` summed over the batch.
pub fn matmul_layer_backward(
    x: &SplitBatch,
    w_re: &DMatrix<f64>,
    w_im: &DMatrix<f64>,
    g_out: &SplitBatch,
) -> Result<MatmulGrads> {
    check_weight(w_re, &x.re, "re")?;
    check_weight(w_im, &x.im, "im")?;
    if g_out.re.matrix().shape() != x.re.matrix().shape()
        || g_out.im.matrix().shape() != x.im.matrix().shape()
    {
        return Err(Error::Shape("upstream gradient does not match layer input".into()));
    }
    Ok(MatmulGrads {
        input: SplitBatch {
            re: ChannelBatch::from_matrix(w_re.tr_mul(g_out.re.matrix()))?,
            im: ChannelBatch::from_matrix(w_im.tr_mul(g_out.im.matrix()))?,
        },
        weight_re: g_out.re.matrix() * x.re.matrix().transpose(),
        weight_im: g_out.im.matrix() * x.im.matrix().transpose(),
    })
}

pub fn orthogonal_layer_backward(
    x: &SplitBatch,
    w_re: &OrthogonalMatrix,
    w_im: &OrthogonalMatrix,
    g_out: &SplitBatch,
) -> Result<MatmulGrads> {
    matmul_layer_backward(x, w_re.as_matrix(), w_im.as_matrix(), g_out)
}

pub fn tanh_forward(x: &SplitBatch) -> SplitBatch {
    SplitBatch {
        re: ChannelBatch::from_matrix(x.re.matrix().map(f64::tanh)).expect("shape preserved"),
        im: ChannelBatch::from_matrix(x.im.matrix().map(f64::tanh)).expect("shape preserved"),
    }
}

/// Gradient through tanh given the stored forward output `y`.
pub fn tanh_backward(y: &SplitBatch, g: &SplitBatch) -> SplitBatch {
    let chan = |y: &ChannelBatch, g: &ChannelBatch| {
        ChannelBatch::from_matrix(y.matrix().zip_map(g.matrix(), |y, g| g * (1.0 - y * y)))
            .expect("shape preserved")
    };
    SplitBatch {
        re: chan(&y.re, &g.re),
        im: chan(&y.im, &g.im),
    }
}

/// Target norm of a normalized map: `√(2·n²)`, i.e. unit RMS per element.
pub fn unit_norm_scale(n: usize) -> f64 {
    ((2 * n * n) as f64).sqrt()
}

/// Rescales every sample to combined Frobenius norm `√(2·n²)`.
pub fn unit_norm_forward(x: &SplitBatch) -> Result<SplitBatch> {
    let c = unit_norm_scale(x.dim());
    let norms = x.sample_norms();
    let mut out = x.clone();
    for (b, &s) in norms.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Degenerate { sample: b });
        }
        let k = c / s;
        out.re.sample_slice_mut(b).iter_mut().for_each(|v| *v *= k);
        out.im.sample_slice_mut(b).iter_mut().for_each(|v| *v *= k);
    }
    Ok(out)
}

/// `g_x = (c/s)·(g − (⟨g, x⟩/s²)·x)` per sample.
pub fn unit_norm_backward(x: &SplitBatch, g: &SplitBatch) -> Result<SplitBatch> {
    if g.re.matrix().shape() != x.re.matrix().shape() {
        return Err(Error::Shape("unit-norm gradient does not match input".into()));
    }
    let c = unit_norm_scale(x.dim());
    let norms = x.sample_norms();
    let mut out = g.clone();
    for (b, &s) in norms.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::Degenerate { sample: b });
        }
        let dot: f64 = dot(x.re.sample_slice(b), g.re.sample_slice(b))
            + dot(x.im.sample_slice(b), g.im.sample_slice(b));
        let radial = dot / (s * s);
        let k = c / s;
        for (o, xv) in out.re.sample_slice_mut(b).iter_mut().zip(x.re.sample_slice(b)) {
            *o = k * (*o - radial * xv);
        }
        for (o, xv) in out.im.sample_slice_mut(b).iter_mut().zip(x.im.sample_slice(b)) {
            *o = k * (*o - radial * xv);
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flattens each sample channel-major (all of `re` row-major, then all of
/// `im` row-major) into a column of an `F × B` matrix, `F = 2n²`.
pub fn flatten(x: &SplitBatch) -> DMatrix<f64> {
    let n = x.dim();
    let nn = n * n;
    let batch = x.batch();
    let mut out = DMatrix::zeros(2 * nn, batch);
    for b in 0..batch {
        let mut col = out.column_mut(b);
        for (offset, ch) in [(0, &x.re), (nn, &x.im)] {
            let m = ch.matrix();
            for r in 0..n {
                for c in 0..n {
                    col[offset + r * n + c] = m[(r, b * n + c)];
                }
            }
        }
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: &DMatrix<f64>, n: usize) -> Result<SplitBatch> {
    let nn = n * n;
    if flat.nrows() != 2 * nn {
        return Err(Error::Shape(format!(
            "flat features have {} rows, expected {}",
            flat.nrows(),
            2 * nn
        )));
    }
    let batch = flat.ncols();
    let mut out = SplitBatch::zeros(n, batch);
    for b in 0..batch {
        let col = flat.column(b);
        for r in 0..n {
            for c in 0..n {
                out.re.matrix_mut()[(r, b * n + c)] = col[r * n + c];
                out.im.matrix_mut()[(r, b * n + c)] = col[nn + r * n + c];
            }
        }
    }
    Ok(out)
}

/// The final non-orthogonal `10 × F` classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseHead {
    pub fn zeros(features: usize) -> Self {
        Self {
            weight: DMatrix::zeros(CLASSES, features),
            bias: DVector::zeros(CLASSES),
        }
    }

    pub fn features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, x_flat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_flat.nrows() != self.features() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.features(),
                x_flat.nrows()
            )));
        }
        let mut z = &self.weight * x_flat;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        Ok(z)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub loss: f64,
    /// `CLASSES × B` softmax probabilities.
    pub probabilities: DMatrix<f64>,
    pub grad_input: DMatrix<f64>,
    pub grad_head: DenseHead,
}

/// Column-wise softmax with max subtraction.
pub fn softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

/// Per-sample `−log softmax(z)[label]`, computed as `logsumexp(z) − z[label]`.
pub fn cross_entropy_per_sample(logits: &DMatrix<f64>, labels: &[u8]) -> Result<Vec<f64>> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    Ok(logits
        .column_iter()
        .zip(labels)
        .map(|(col, &y)| {
            let m = col.max();
            let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - col[y as usize]
        })
        .collect())
}

fn check_labels(labels: &[u8], classes: usize, batch: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range 0..{}", classes - 1)));
    }
    Ok(())
}

/// Dense head followed by softmax cross-entropy, with all gradients.
pub fn dense_softmax_ce(
    x_flat: &DMatrix<f64>,
    head: &DenseHead,
    labels: &[u8],
) -> Result<CrossEntropyOutput> {
    let logits = head.logits(x_flat)?;
    let per_sample = cross_entropy_per_sample(&logits, labels)?;
    let batch = labels.len();
    let loss = per_sample.iter().sum::<f64>() / batch as f64;
    let probabilities = softmax(&logits);

    let mut g_logits = probabilities.clone();
    for (b, &y) in labels.iter().enumerate() {
        g_logits[(y as usize, b)] -= 1.0;
    }
    g_logits /= batch as f64;

    let grad_weight = &g_logits * x_flat.transpose();
    let grad_bias = g_logits.column_sum();
    let grad_input = head.weight.tr_mul(&g_logits);
    Ok(CrossEntropyOutput {
        loss,
        probabilities,
        grad_input,
        grad_head: DenseHead {
            weight: grad_weight,
            bias: grad_bias,
        },
    })
}

/// Mean squared error and its gradient `2(pred − true)/count`.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "mse operands have {} and {} elements",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse of empty tensors".into()));
    }
    let count = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / count
        })
        .collect();
    Ok((sum / count, grad))
}
