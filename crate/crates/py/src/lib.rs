//! Python bindings. Datasets cross the boundary as lists of rows.

use std::path::PathBuf;

use gsn_core::checkpoint::{load_checkpoint, save_checkpoint};
use gsn_core::config::parse_recon;
use gsn_core::eval::{csl_estimate, kl_divergence as kl, stationary_distribution as stationary};
use gsn_core::gsn::{chain_rng, collect_latents, exact_transition_matrix, run_chain, train};
use gsn_core::net::SgdConfig;
use gsn_core::random::seeded;
use gsn_core::{CorruptionSpec, Dataset, NoiseLevel, TrainConfig, TrainMode};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: gsn_core::Error) -> PyErr {
    use gsn_core::Error as E;
    match e {
        E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::Config(_) | E::InvalidArgument(_) | E::Shape(_) | E::Data(_) | E::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(d: &Dataset) -> Vec<Vec<f64>> {
    d.rows().map(<[f64]>::to_vec).collect()
}

#[pyfunction]
#[pyo3(signature = (n, jitter=0.02, seed=0))]
fn gen_spiral(n: usize, jitter: f64, seed: u64) -> Vec<Vec<f64>> {
    rows(&gsn_core::data::gen_spiral(n, jitter, seed))
}

/// Grayscale images in [0, 1] from an IDX file (gzip allowed).
#[pyfunction]
#[pyo3(signature = (path, max_examples=None))]
fn load_mnist_idx(path: PathBuf, max_examples: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    gsn_core::data::load_mnist_idx(&path, max_examples)
        .map(|d| rows(&d))
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (data, threshold=0.5))]
fn binarize(data: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<f64>>> {
    let d = Dataset::from_rows(&data, gsn_core::DataKind::Continuous).map_err(py_err)?;
    gsn_core::data::binarize(&d, threshold)
        .map(|b| rows(&b))
        .map_err(py_err)
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    kl(&p, &q).map_err(py_err)
}

#[pyclass(name = "GsnModel")]
struct PyGsnModel {
    inner: gsn_core::GsnModel,
}

impl PyGsnModel {
    fn dataset(&self, data: &[Vec<f64>]) -> PyResult<Dataset> {
        let d = Dataset::from_rows(data, self.inner.data_kind()).map_err(py_err)?;
        self.inner.check_data(&d).map_err(py_err)?;
        Ok(d)
    }
}

#[pymethods]
impl PyGsnModel {
    /// `corruption` is "gaussian" (uses `sigma`) or "salt_pepper" (uses
    /// `level`, or a fresh level per corruption when `dynamic`).
    #[new]
    #[pyo3(signature = (recon, n_dims, hidden=64, nade_hidden=32, k=5, corruption=None, sigma=0.3, level=0.25, dynamic=false, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        recon: &str,
        n_dims: usize,
        hidden: usize,
        nade_hidden: usize,
        k: usize,
        corruption: Option<&str>,
        sigma: f64,
        level: f64,
        dynamic: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = parse_recon(recon).map_err(py_err)?;
        let corruption = match corruption.unwrap_or(match kind.data_kind() {
            gsn_core::DataKind::Binary => "salt_pepper",
            gsn_core::DataKind::Continuous => "gaussian",
        }) {
            "gaussian" => CorruptionSpec::Gaussian { sigma },
            "salt_pepper" => CorruptionSpec::SaltPepper {
                level: if dynamic {
                    NoiseLevel::Dynamic
                } else {
                    NoiseLevel::Fixed(level)
                },
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown corruption {other:?}"
                )))
            }
        };
        let mut spec = gsn_core::ModelSpec::new(kind, n_dims, corruption);
        spec.hidden = hidden;
        spec.nade_hidden = nade_hidden;
        spec.k = k;
        let inner = gsn_core::GsnModel::new(spec, &mut seeded(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_dims(&self) -> usize {
        self.inner.n_dims()
    }

    /// Trains in place and returns the mean loss of each epoch.
    #[pyo3(signature = (data, epochs, batch_size=20, lr=0.01, momentum=0.9, walkback_k=0, seed=0, threads=1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        data: Vec<Vec<f64>>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        momentum: f64,
        walkback_k: usize,
        seed: u64,
        threads: usize,
    ) -> PyResult<Vec<f64>> {
        let d = self.dataset(&data)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            sgd: SgdConfig {
                learning_rate: lr,
                momentum,
                weight_decay: 0.0,
            },
            mode: if walkback_k > 0 {
                TrainMode::Walkback
            } else {
                TrainMode::Plain
            },
            walkback_k,
            seed,
            threads,
        };
        let reports = train(&mut self.inner, &d, &cfg, |_, _| Ok(())).map_err(py_err)?;
        Ok(reports.iter().map(|r| r.nll).collect())
    }

    /// `log P(x | encoder(x_tilde))`.
    fn log_prob(&self, x: Vec<f64>, x_tilde: Vec<f64>) -> PyResult<f64> {
        self.inner
            .log_prob_given_latent(&x, &x_tilde)
            .map_err(py_err)
    }

    /// States of a chain started at `x0`, including `x0` itself.
    #[pyo3(signature = (x0, n_steps, seed=0, record_every=1))]
    fn run_chain(
        &self,
        x0: Vec<f64>,
        n_steps: usize,
        seed: u64,
        record_every: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let states = run_chain(
            &self.inner,
            &x0,
            n_steps,
            &mut chain_rng(seed),
            record_every,
        )
        .map_err(py_err)?;
        Ok(states.into_iter().map(|s| s.x).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner, Default::default()).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = load_checkpoint(&path).map_err(py_err)?;
        Ok(Self { inner })
    }
}

/// Stationary distribution of a small binary model's chain, indexed by the
/// state's bit pattern (bit i is dimension i).
#[pyfunction]
#[pyo3(signature = (model, tol=1e-12))]
fn stationary_distribution(model: &PyGsnModel, tol: f64) -> PyResult<Vec<f64>> {
    let t = exact_transition_matrix(&model.inner).map_err(py_err)?;
    stationary(&t, tol).map_err(py_err)
}

/// Mean conservative sampling-based log-likelihood of `test` using latents
/// from one chain started at `x0`.
#[pyfunction]
#[pyo3(signature = (model, test, x0, n_samples, stride=1, seed=0))]
fn csl(
    model: &PyGsnModel,
    test: Vec<Vec<f64>>,
    x0: Vec<f64>,
    n_samples: usize,
    stride: usize,
    seed: u64,
) -> PyResult<f64> {
    let test = model.dataset(&test)?;
    let latents = collect_latents(
        &model.inner,
        &x0,
        n_samples,
        stride,
        0,
        &mut chain_rng(seed),
    )
    .map_err(py_err)?;
    csl_estimate(&model.inner, &test, &latents, stride)
        .map(|r| r.mean)
        .map_err(py_err)
}

#[pymodule]
fn gsn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGsnModel>()?;
    m.add_function(wrap_pyfunction!(gen_spiral, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist_idx, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(csl, m)?)?;
    Ok(())
}
