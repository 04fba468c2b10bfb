use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pidnet::checkpoint;
use pidnet::dataio::{self, align, Manifest, SynthOptions};
use pidnet::metrics;
use pidnet::model::{grad_check_fixture, ModalityBundle, PidnetModel};
use pidnet::numcore::{RngState, SequenceTensor};
use pidnet::wavelet::{dwt1, idwt1, SubbandPair, WaveletBasis, WaveletFilters};
use pidnet::Error;

type Matrix = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Shape { .. } | Error::CheckpointMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyIOError::new_err(e.to_string()),
    }
}

fn tensor(rows: &Matrix) -> PyResult<SequenceTensor> {
    SequenceTensor::from_rows(rows).map_err(py_err)
}

fn rows(t: &SequenceTensor) -> Matrix {
    (0..t.channels()).map(|c| t.row(c).to_vec()).collect()
}

fn bundle(rgb: &Matrix, flow: &Matrix, audio: &Matrix) -> PyResult<ModalityBundle> {
    Ok(ModalityBundle::new(tensor(rgb)?, tensor(flow)?, tensor(audio)?))
}

fn basis(name: &str) -> PyResult<WaveletFilters> {
    let b: WaveletBasis = name.parse().map_err(py_err)?;
    Ok(WaveletFilters::new(b))
}

/// Training configuration (`key = value` text form).
#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: pidnet::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Defaults, with `text` overrides applied when given.
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let mut inner = pidnet::TrainConfig::default();
        if let Some(t) = text {
            inner.apply_text(t).map_err(py_err)?;
            inner.validate().map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn micro() -> Self {
        Self {
            inner: pidnet::TrainConfig::micro(),
        }
    }

    #[staticmethod]
    fn test_profile() -> Self {
        Self {
            inner: pidnet::TrainConfig::test_profile(),
        }
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(py_err)?;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(channels={}, ablation={})", self.inner.channels, self.get("ablation").unwrap_or_default())
    }
}

/// A model with its parameters.
#[pyclass(name = "Model")]
struct PyModel {
    inner: PidnetModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: &PyTrainConfig, dims: [usize; 3]) -> PyResult<Self> {
        Ok(Self {
            inner: PidnetModel::new(&config.inner, dims).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims
    }

    #[getter]
    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.inner.config.clone(),
        }
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.store.num_trainable()
    }

    /// Normalized score of one sample; each modality is `channels × time`
    /// and is aligned to the model's length first.
    fn predict(&self, rgb: Matrix, flow: Matrix, audio: Matrix) -> PyResult<f64> {
        let b = bundle(&rgb, &flow, &audio)?;
        let a = align(&b, self.inner.config.align_length, false, false, &mut RngState::new(0)).map_err(py_err)?;
        self.inner.predict_one(&a).map_err(py_err)
    }

    /// `(stage, role, sigma list)` for every gated block.
    fn gate_trace(&self, rgb: Matrix, flow: Matrix, audio: Matrix) -> PyResult<Vec<(usize, String, Vec<f64>)>> {
        let b = bundle(&rgb, &flow, &audio)?;
        let a = align(&b, self.inner.config.align_length, false, false, &mut RngState::new(0)).map_err(py_err)?;
        let (_, trace) = self.inner.gate_trace(&a).map_err(py_err)?;
        Ok(trace.into_iter().map(|r| (r.stage, r.role.to_string(), r.sigma)).collect())
    }

    /// Per-module maximum relative gradient error on the fixed fixture.
    fn grad_check(&self) -> PyResult<BTreeMap<String, f64>> {
        let (_, batch, targets) = grad_check_fixture(&self.inner.config);
        if batch[0].dims() != self.inner.dims {
            return Err(PyValueError::new_err("grad_check needs a model with dims (6, 5, 4)"));
        }
        let rep = self.inner.grad_check(&batch, &targets, &Default::default()).map_err(py_err)?;
        Ok(rep.per_module())
    }
}

/// Spearman correlation; `None` when either input is constant.
#[pyfunction]
fn spearman(p: Vec<f64>, q: Vec<f64>) -> PyResult<Option<f64>> {
    metrics::spearman(&p, &q).map_err(py_err)
}

#[pyfunction]
fn fisher_z_avg(rhos: Vec<f64>) -> PyResult<f64> {
    Ok(metrics::fisher_z_avg(&rhos).map_err(py_err)?.rho)
}

/// One-level analysis: `(low, high)`.
#[pyfunction]
#[pyo3(signature = (x, wavelet="haar"))]
fn dwt(x: Matrix, wavelet: &str) -> PyResult<(Matrix, Matrix)> {
    let pair = dwt1(&tensor(&x)?, &basis(wavelet)?).map_err(py_err)?;
    Ok((rows(&pair.low), rows(&pair.high)))
}

#[pyfunction]
#[pyo3(signature = (low, high, length, wavelet="haar"))]
fn idwt(low: Matrix, high: Matrix, length: usize, wavelet: &str) -> PyResult<Matrix> {
    let pair = SubbandPair {
        low: tensor(&low)?,
        high: tensor(&high)?,
        level: 1,
        original_len: length,
    };
    Ok(rows(&idwt1(&pair, &basis(wavelet)?, length).map_err(py_err)?))
}

/// Reads a feature file into `{"rgb": ..., "flow": ..., "audio": ...}`.
#[pyfunction]
fn read_sample(path: PathBuf) -> PyResult<BTreeMap<String, Matrix>> {
    let b = dataio::read_sample(&path).map_err(py_err)?;
    Ok(["rgb", "flow", "audio"]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), rows(b.get(i))))
        .collect())
}

#[pyfunction]
fn write_sample(path: PathBuf, rgb: Matrix, flow: Matrix, audio: Matrix) -> PyResult<()> {
    dataio::write_sample(&path, &bundle(&rgb, &flow, &audio)?).map_err(py_err)
}

/// Writes a synthetic corpus and returns the number of samples.
#[pyfunction]
#[pyo3(signature = (out, n, seed=0, dims=[32, 32, 24], len_range=(12, 24), val_frac=0.25, align_length=16))]
fn gen_synth(
    out: PathBuf,
    n: usize,
    seed: u64,
    dims: [usize; 3],
    len_range: (usize, usize),
    val_frac: f64,
    align_length: usize,
) -> PyResult<usize> {
    let opts = SynthOptions {
        n,
        seed,
        dims,
        len_range,
        val_frac,
        align_length,
    };
    Ok(dataio::gen_synth(&opts, &out).map_err(py_err)?.entries.len())
}

/// Trains on a manifest; returns the model and the history rows
/// `(epoch, train_loss, val_rho, val_mse)`.
#[pyfunction]
fn train(
    py: Python<'_>,
    config: &PyTrainConfig,
    manifest: PathBuf,
) -> PyResult<(PyModel, Vec<(usize, f64, Option<f64>, f64)>)> {
    let cfg = config.inner.clone();
    let run = py
        .detach(move || -> pidnet::Result<_> {
            let m = Manifest::load(&manifest)?;
            pidnet::train::train_manifest(&cfg, &m)
        })
        .map_err(py_err)?;
    let history = run
        .fit
        .history
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.val_rho, r.val_mse))
        .collect();
    Ok((PyModel { inner: run.model }, history))
}

#[pymodule]
fn pidnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_z_avg, m)?)?;
    m.add_function(wrap_pyfunction!(dwt, m)?)?;
    m.add_function(wrap_pyfunction!(idwt, m)?)?;
    m.add_function(wrap_pyfunction!(read_sample, m)?)?;
    m.add_function(wrap_pyfunction!(write_sample, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
