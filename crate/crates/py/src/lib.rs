//! Python bindings: networks, datasets, the NTK spectrum and the one-step
//! certificate.

use ntk_stop::bench::is_refusal;
use ntk_stop::certificate::{self as cert, BetaMode, CertifyConfig, M1Mode, PoolSampler, StopCertificate};
use ntk_stop::error::Error;
use ntk_stop::ntk;
use ntk_stop::shallow_net::{Activation, Dataset, NetworkState};
use ntk_stop::vdp_mpc::{generate_dataset as gen, DataGenConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(ntk_stop_py, CertificateRefused, PyException);

fn to_py(e: Error) -> PyErr {
    if is_refusal(&e) {
        CertificateRefused::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyclass(name = "Dataset", module = "ntk_stop_py", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Rows of `inputs` must have unit Euclidean norm.
    #[new]
    fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> PyResult<Self> {
        let d = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err("ragged input rows"));
        }
        let flat = inputs.into_iter().flatten().collect();
        Ok(Self { inner: Dataset::new(d, flat, targets).map_err(to_py)? })
    }

    #[staticmethod]
    fn read_csv(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Dataset::read_csv(&path).map_err(to_py)? })
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets().to_vec()
    }

    fn input(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.input(i).to_vec())
    }
}

#[pyclass(name = "Network", module = "ntk_stop_py", from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: NetworkState,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (d, m, mu, activation = "tanh", seed = 0))]
    fn new(d: usize, m: usize, mu: f64, activation: &str, seed: u64) -> PyResult<Self> {
        let act: Activation = activation.parse().map_err(to_py)?;
        Ok(Self { inner: NetworkState::init(d, m, mu, act, seed).map_err(to_py)? })
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.input_dim() {
            return Err(PyValueError::new_err("input dimension mismatch"));
        }
        Ok(self.inner.forward(&x))
    }

    /// One full-batch gradient step; returns the new network.
    fn gd_step(&self, data: &PyDataset, eta: f64) -> PyResult<Self> {
        data.inner.bind(&self.inner).map_err(to_py)?;
        Ok(Self { inner: self.inner.gd_step(&data.inner, eta) })
    }

    fn training_error(&self, data: &PyDataset) -> PyResult<Vec<f64>> {
        data.inner.bind(&self.inner).map_err(to_py)?;
        Ok(self.inner.training_error(&data.inner))
    }

    fn test_loss(&self, data: &PyDataset) -> PyResult<f64> {
        data.inner.bind(&self.inner).map_err(to_py)?;
        Ok(self.inner.test_loss(&data.inner))
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn signs(&self) -> Vec<f64> {
        self.inner.signs().to_vec()
    }
}

#[pyclass(name = "Certificate", module = "ntk_stop_py", frozen)]
struct PyCertificate {
    inner: StopCertificate,
}

#[pymethods]
impl PyCertificate {
    #[getter]
    fn gamma1(&self) -> f64 {
        self.inner.gamma1
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn eta1(&self) -> f64 {
        self.inner.eta1
    }

    #[getter]
    fn t1(&self) -> f64 {
        self.inner.t1
    }

    #[getter]
    fn big_omega1(&self) -> f64 {
        self.inner.big_omega1
    }

    #[getter]
    fn pop_bound(&self) -> f64 {
        self.inner.pop_bound
    }

    #[getter]
    fn reliability(&self) -> &'static str {
        self.inner.reliability.as_str()
    }

    /// Every field, as rendered in the key=value report.
    fn to_text(&self) -> String {
        self.inner.to_key_value()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json(&Default::default()).map_err(to_py)
    }
}

/// Runs the one-step certificate. `pool` feeds the Monte-Carlo estimate of
/// `M1`; `mc_trials = 0` uses the worst-case formula instead.
#[pyfunction]
#[pyo3(signature = (network, train, pool, seed = 0, mc_trials = 500, beta = None, delta = 0.05))]
fn certify(
    network: &PyNetwork,
    train: &PyDataset,
    pool: &PyDataset,
    seed: u64,
    mc_trials: usize,
    beta: Option<f64>,
    delta: f64,
) -> PyResult<(PyCertificate, PyNetwork)> {
    let config = CertifyConfig {
        m1_mode: if mc_trials == 0 { M1Mode::Conservative } else { M1Mode::MonteCarlo { trials: mc_trials } },
        beta: beta.map_or(BetaMode::Star, BetaMode::Explicit),
        delta,
        ..CertifyConfig::default()
    };
    let mut sampler = PoolSampler::new(&pool.inner, seed);
    let out = cert::certify(&network.inner, &train.inner, &mut sampler, &config).map_err(to_py)?;
    Ok((PyCertificate { inner: out.cert }, PyNetwork { inner: out.s1 }))
}

/// `gamma1` from its scalar inputs.
#[pyfunction]
#[pyo3(signature = (m1, v0_norm1, lambda1_lo, a1, n, m, mu, alpha1 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn gamma1(m1: f64, v0_norm1: f64, lambda1_lo: f64, a1: f64, n: usize, m: usize, mu: f64, alpha1: f64) -> PyResult<f64> {
    cert::gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, alpha1).map_err(to_py)
}

#[pyfunction]
fn beta_star(gamma1: f64) -> PyResult<f64> {
    cert::beta_star(gamma1).map_err(to_py)
}

/// NTK eigenvalues in descending order.
#[pyfunction]
fn ntk_spectrum(network: &PyNetwork, data: &PyDataset) -> PyResult<Vec<f64>> {
    Ok(ntk::ntk_matrix(&network.inner, &data.inner).map_err(to_py)?.eig.values)
}

/// MPC imitation data sized for a network of width `m` and scale `mu`.
/// Returns `(train, test, u_scale)`.
#[pyfunction]
#[pyo3(signature = (n, n_test, seed, m = 10, mu = 10.0))]
fn generate_dataset(n: usize, n_test: usize, seed: u64, m: usize, mu: f64) -> PyResult<(PyDataset, PyDataset, f64)> {
    let (train, test, rec) = gen(n, n_test, seed, &DataGenConfig::default(), m, mu).map_err(to_py)?;
    Ok((PyDataset { inner: train }, PyDataset { inner: test }, rec.u_scale))
}

#[pymodule]
fn ntk_stop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyCertificate>()?;
    m.add("CertificateRefused", m.py().get_type::<CertificateRefused>())?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(gamma1, m)?)?;
    m.add_function(wrap_pyfunction!(beta_star, m)?)?;
    m.add_function(wrap_pyfunction!(ntk_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    Ok(())
}
