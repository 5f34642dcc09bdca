//! Skew-symmetric parameterization of SO(n) through the matrix exponential.
//!
//! A layer's free parameters are the strictly-lower-triangular entries of a
//! matrix `L`. The weight is `W = exp(L - Lᵀ)`, which is orthogonal with unit
//! determinant for any real `L`. Reverse-mode gradients flow back through the
//! exponential via its Fréchet derivative, evaluated with the block-matrix
//! identity
//!
//! ```text
//! exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]]
//! ```
//!
//! The exponential itself is scaling-and-squaring around the degree-13 Padé
//! approximant (Higham 2005).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest 1-norm for which the unscaled [13/13] Padé approximant meets unit
/// roundoff in double precision.
pub const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Tolerance on `‖WᵀW − I‖_max` checked whenever an [`OrthogonalMatrix`] is built.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Tolerance on `|det W − 1|`.
pub const DETERMINANT_TOL: f64 = 1e-8;

/// Strictly-lower-triangular free parameters of one Lie-parameterized weight.
///
/// Entries are stored row-major over positions `(i, j)` with `i > j`, so the
/// entry for `(i, j)` lives at `i(i-1)/2 + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewParams {
    n: usize,
    entries: Vec<f64>,
}

impl SkewParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; param_count(n)],
        }
    }

    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if entries.len() != param_count(n) {
            return Err(Error::Shape(format!(
                "dimension {n} needs {} skew parameters, got {}",
                param_count(n),
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    /// Value at `(i, j)` for `i > j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i > j && i < self.n);
        self.entries[tri_index(i, j)]
    }

    /// The materialized strictly-lower-triangular `L`.
    pub fn lower_matrix(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 1..self.n {
            for j in 0..i {
                l[(i, j)] = self.get(i, j);
            }
        }
        l
    }
}

/// Number of free parameters for dimension `n`.
pub fn param_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

/// An exactly antisymmetric matrix `S = L − Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn neg(&self) -> SkewMatrix {
        SkewMatrix(-&self.0)
    }

    pub fn scale(&self, factor: f64) -> SkewMatrix {
        SkewMatrix(&self.0 * factor)
    }
}

/// A materialized `W = exp(S)` that passed the orthogonality and determinant
/// checks at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix(DMatrix<f64>);

impl OrthogonalMatrix {
    /// Wraps `w` after checking `‖WᵀW − I‖_max ≤ 1e−10` and `|det W − 1| ≤ 1e−8`.
    pub fn try_new(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Shape(format!(
                "orthogonal matrix must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let defect = orthogonality_defect(&w);
        if !(defect <= ORTHOGONALITY_TOL) {
            return Err(Error::Numeric(format!(
                "‖WᵀW − I‖_max = {defect:e} exceeds {ORTHOGONALITY_TOL:e}"
            )));
        }
        let det = w.clone().determinant();
        if !((det - 1.0).abs() <= DETERMINANT_TOL) {
            return Err(Error::Numeric(format!("det W = {det} is not 1")));
        }
        Ok(Self(w))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `‖WᵀW − I‖_max`.
pub fn orthogonality_defect(w: &DMatrix<f64>) -> f64 {
    let n = w.ncols();
    let gram = w.transpose() * w;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = (gram[(i, j)] - target).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

pub fn skew_from_params(p: &SkewParams) -> SkewMatrix {
    let n = p.n;
    let mut s = DMatrix::zeros(n, n);
    for i in 1..n {
        for j in 0..i {
            let v = p.get(i, j);
            s[(i, j)] = v;
            s[(j, i)] = -v;
        }
    }
    SkewMatrix(s)
}

/// Chain rule through `S = L − Lᵀ`: entry `(i, j)` receives `g[i][j] − g[j][i]`.
pub fn params_grad_from_skew_grad(g: &DMatrix<f64>) -> Result<SkewParams> {
    if !g.is_square() || g.nrows() == 0 {
        return Err(Error::Shape(format!(
            "skew gradient must be square, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let n = g.nrows();
    let mut entries = Vec::with_capacity(param_count(n));
    for i in 1..n {
        for j in 0..i {
            entries.push(g[(i, j)] - g[(j, i)]);
        }
    }
    Ok(SkewParams { n, entries })
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Number of squarings for a matrix of 1-norm `norm`.
pub fn squaring_count(norm: f64) -> u32 {
    if norm <= THETA_13 {
        0
    } else {
        (norm / THETA_13).log2().ceil().max(0.0) as u32
    }
}

/// Exponential of an arbitrary square matrix by scaling-and-squaring with the
/// [13/13] Padé approximant.
pub fn expm_general(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "expm argument")?;
    let n = a.nrows();
    let s = squaring_count(norm1(a));
    let a = if s > 0 { a * 2f64.powi(-(s as i32)) } else { a.clone() };

    let b = &PADE_13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = v - u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `W = exp(S)` for skew `S`.
pub fn expm(s: &SkewMatrix) -> Result<OrthogonalMatrix> {
    OrthogonalMatrix::try_new(expm_general(&s.0)?)
}

/// Convenience: `exp(L − Lᵀ)` straight from parameters.
pub fn orthogonal_from_params(p: &SkewParams) -> Result<OrthogonalMatrix> {
    expm(&skew_from_params(p))
}

/// Fréchet derivative `D exp(A)[E]` of the exponential at an arbitrary square
/// `A` in direction `E`, read off the upper-right block of `exp([[A, E], [0, A]])`.
pub fn expm_frechet_general(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.shape() != e.shape() {
        return Err(Error::Shape(format!(
            "Fréchet derivative needs equal square shapes, got {:?} and {:?}",
            a.shape(),
            e.shape()
        )));
    }
    check_finite(e, "Fréchet direction")?;
    let n = a.nrows();
    let e_norm = norm1(e);
    if e_norm == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(e.clone());
    }
    // The map is linear in E; rescaling E by a power of two to unit size keeps
    // the block norm (and the squaring count) driven by A alone.
    let k = e_norm.log2().round() as i32;
    let scale_down = 2f64.powi(-k);

    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(&(e * scale_down));
    let exp_block = expm_general(&block)?;
    Ok(exp_block.view((0, n), (n, n)) * 2f64.powi(k))
}

pub fn expm_frechet(s: &SkewMatrix, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    expm_frechet_general(&s.0, e)
}

/// Reverse-mode adjoint of [`expm`]: returns `gS` with
/// `⟨gS, E⟩ = ⟨gW, D exp(S)[E]⟩` for every `E`.
pub fn expm_backward(s: &SkewMatrix, grad_w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    expm_frechet_general(&s.0.transpose(), grad_w)
}

/// Full parameter gradient for a scalar loss of `W = exp(L − Lᵀ)` given `∂loss/∂W`.
pub fn params_grad_from_weight_grad(p: &SkewParams, grad_w: &DMatrix<f64>) -> Result<SkewParams> {
    let s = skew_from_params(p);
    let gs = expm_backward(&s, grad_w)?;
    params_grad_from_skew_grad(&gs)
}
