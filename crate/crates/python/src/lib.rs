//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use unitary_core::data::{synth_orthogonal_trace, SynthSpec};
use unitary_core::formats::{read_projection, read_state, read_trace, write_state};
use unitary_core::lie;
use unitary_core::maps::{ChannelBatch, SplitBatch};
use unitary_core::metrics::box_stats as core_box_stats;
use unitary_core::network::{forward, Mode};
use unitary_core::projection::{project_layer, ProjectionConfig};
use unitary_core::trace::ChannelPairs;
use unitary_core::{Channel, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn batch(maps: &[Vec<Vec<f64>>]) -> PyResult<ChannelBatch> {
    let samples = maps.iter().map(|m| matrix(m)).collect::<PyResult<Vec<_>>>()?;
    ChannelBatch::from_samples(&samples).map_err(to_py)
}

fn unbatch(b: &ChannelBatch) -> Vec<Vec<Vec<f64>>> {
    (0..b.batch()).map(|i| rows(&b.sample(i).into_owned())).collect()
}

/// Strictly lower-triangular Lie parameters of an n×n skew matrix.
#[pyclass(name = "SkewParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySkewParams {
    inner: lie::SkewParams,
}

#[pymethods]
impl PySkewParams {
    #[new]
    fn new(n: usize, entries: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: lie::SkewParams::new(n, entries).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn zeros(n: usize) -> Self {
        Self {
            inner: lie::SkewParams::zeros(n),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn entries(&self) -> Vec<f64> {
        self.inner.entries().to_vec()
    }

    /// `L − Lᵀ`.
    fn skew(&self) -> Vec<Vec<f64>> {
        rows(lie::skew_from_params(&self.inner).as_matrix())
    }

    /// `exp(L − Lᵀ)`.
    fn orthogonal(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(lie::orthogonal_from_params(&self.inner).map_err(to_py)?.as_matrix()))
    }

    /// Parameter gradient of a loss given its gradient with respect to the weight.
    fn grad_from_weight_grad(&self, grad_w: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let g = lie::params_grad_from_weight_grad(&self.inner, &matrix(&grad_w)?).map_err(to_py)?;
        Ok(g.into_entries())
    }

    fn __repr__(&self) -> String {
        format!("SkewParams(n={}, {} entries)", self.inner.dim(), self.inner.entries().len())
    }
}

/// Matrix exponential of a square matrix.
#[pyfunction]
fn expm(a: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&lie::expm_general(&matrix(&a)?).map_err(to_py)?))
}

/// Directional derivative `D exp(A)[E]`.
#[pyfunction]
fn expm_frechet(a: Vec<Vec<f64>>, e: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&lie::expm_frechet_general(&matrix(&a)?, &matrix(&e)?).map_err(to_py)?))
}

/// Adjoint of [`expm_frechet`]: the gradient with respect to `A` given one with respect to `exp(A)`.
#[pyfunction]
fn expm_backward(a: Vec<Vec<f64>>, grad: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let a = matrix(&a)?;
    Ok(rows(&lie::expm_frechet_general(&a.transpose(), &matrix(&grad)?).map_err(to_py)?))
}

/// `max |WᵀW − I|`.
#[pyfunction]
fn orthogonality_defect(w: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(lie::orthogonality_defect(&matrix(&w)?))
}

/// Fits `exp(L − Lᵀ)·x ≈ y` over the given map pairs.
/// Returns `(params, loss_history, final_mse)`.
#[pyfunction]
#[pyo3(signature = (inputs, targets, learning_rate=1e-2, batch_size=128, epochs=50, seed=0, early_stop=true))]
fn project_pairs(
    inputs: Vec<Vec<Vec<f64>>>,
    targets: Vec<Vec<Vec<f64>>>,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    early_stop: bool,
) -> PyResult<(PySkewParams, Vec<f64>, f64)> {
    let pairs = ChannelPairs::new(batch(&inputs)?, batch(&targets)?).map_err(to_py)?;
    let mut cfg = ProjectionConfig::default();
    cfg.train.learning_rate = learning_rate;
    cfg.train.batch_size = batch_size;
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    if !early_stop {
        cfg.train.early_stop = None;
    }
    let fit = project_layer(&pairs, &cfg).map_err(to_py)?;
    Ok((PySkewParams { inner: fit.params }, fit.history, fit.final_mse))
}

/// One channel of a planted orthogonal map: `(inputs, targets, planted)` with
/// `targets[k] = exp(planted)·inputs[k]`.
#[pyfunction]
#[pyo3(signature = (n, samples, seed=0))]
fn planted_pairs(n: usize, samples: usize, seed: u64) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>, PySkewParams)> {
    let p = synth_orthogonal_trace(SynthSpec::new(1, n, samples, seed)).map_err(to_py)?;
    let pairs = p.trace.layers[0].channel(Channel::Re);
    Ok((
        unbatch(&pairs.inputs),
        unbatch(&pairs.targets),
        PySkewParams {
            inner: p.planted[0][0].clone(),
        },
    ))
}

/// `(min, q1, median, q3, max)` with exclusive-median quartiles.
#[pyfunction]
fn box_stats(values: Vec<f64>) -> PyResult<(f64, f64, f64, f64, f64)> {
    let b = core_box_stats(&values).ok_or_else(|| PyValueError::new_err("need at least one non-NaN value"))?;
    Ok((b.min, b.q1, b.median, b.q3, b.max))
}

/// A saved network (baseline or unitary).
#[pyclass(name = "NetworkState", frozen)]
struct PyNetworkState {
    inner: unitary_core::NetworkState,
}

#[pymethods]
impl PyNetworkState {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_state(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_state(&path, &self.inner).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (depth, dim, unitary=true, seed=0))]
    fn xavier(depth: usize, dim: usize, unitary: bool, seed: u64) -> PyResult<Self> {
        let mode = if unitary { Mode::Unitary } else { Mode::Baseline };
        let config = unitary_core::NetworkConfig {
            depth,
            dim,
            mode,
            normalize: mode == Mode::Baseline,
        };
        Ok(Self {
            inner: unitary_core::NetworkState::xavier(config, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.config.depth
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config.dim
    }

    #[getter]
    fn unitary(&self) -> bool {
        self.inner.config.mode == Mode::Unitary
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// Logits (one list of 10 per sample) for split-complex input maps.
    fn logits(&self, re: Vec<Vec<Vec<f64>>>, im: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let maps = SplitBatch::new(batch(&re)?, batch(&im)?).map_err(to_py)?;
        let (logits, _) = forward(&self.inner, &maps, false).map_err(to_py)?;
        Ok((0..logits.ncols()).map(|j| logits.column(j).iter().copied().collect()).collect())
    }
}

/// `(depth, dim, samples)` of an activation trace file.
#[pyfunction]
fn trace_info(path: PathBuf) -> PyResult<(usize, usize, usize)> {
    let t = read_trace(&path).map_err(to_py)?;
    Ok((t.depth(), t.dim(), t.samples()))
}

/// Per-fit `(layer, channel, final_mse)` of a projection file; failed fits give `None`.
#[pyfunction]
fn projection_summary(path: PathBuf) -> PyResult<Vec<(usize, String, Option<f64>)>> {
    let p = read_projection(&path).map_err(to_py)?;
    Ok(p.result
        .fits
        .iter()
        .map(|f| (f.layer, f.channel.to_string(), f.outcome.as_ref().ok().map(|x| x.final_mse)))
        .collect())
}

#[pymodule]
fn unitary(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkewParams>()?;
    m.add_class::<PyNetworkState>()?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(expm_frechet, m)?)?;
    m.add_function(wrap_pyfunction!(expm_backward, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality_defect, m)?)?;
    m.add_function(wrap_pyfunction!(project_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(planted_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(box_stats, m)?)?;
    m.add_function(wrap_pyfunction!(trace_info, m)?)?;
    m.add_function(wrap_pyfunction!(projection_summary, m)?)?;
    Ok(())
}
