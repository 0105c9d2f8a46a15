//! Python module `servtime_py`: simulators, the intensity head and the metrics.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use servtime::eval;
use servtime::mempool;
use servtime::rpp::{IntensityHead, QuadConfig};
use servtime::synth::{self, DatasetFamily};
use servtime::Error;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `(arrival, departure or None)` rows of a synthetic trace.
#[pyfunction]
#[pyo3(signature = (family, horizon, seed=0))]
fn simulate(family: &str, horizon: f64, seed: u64) -> PyResult<Vec<(f64, Option<f64>)>> {
    let family: DatasetFamily = family.parse().map_err(py_err)?;
    let trace = synth::make_dataset(family, horizon, seed).map_err(py_err)?;
    Ok(trace.events().iter().map(|e| (e.arrival, e.departure)).collect())
}

/// Hawkes arrival times on `[0, horizon]` with exponential kernel.
#[pyfunction]
#[pyo3(signature = (base_rate, alpha, beta, horizon, seed=0))]
fn simulate_hawkes(base_rate: f64, alpha: f64, beta: f64, horizon: f64, seed: u64) -> PyResult<Vec<f64>> {
    let spec = synth::HawkesSpec::new(base_rate, alpha, beta).map_err(py_err)?;
    synth::simulate_hawkes(&spec, horizon, seed).map_err(py_err)
}

#[pyfunction]
fn simulate_ps_queue(arrivals: Vec<f64>, requirements: Vec<f64>) -> PyResult<Vec<f64>> {
    synth::simulate_ps_queue(&arrivals, &requirements).map_err(py_err)
}

/// `(block_time, unconfirmed_count, accepted_count)` rows of a sawtooth mempool series.
#[pyfunction]
#[pyo3(signature = (rate, block_rate, horizon, seed=0))]
fn simulate_mempool(rate: f64, block_rate: f64, horizon: f64, seed: u64) -> PyResult<Vec<(f64, f64, f64)>> {
    let s = mempool::simulate_sawtooth(rate, block_rate, horizon, seed).map_err(py_err)?;
    Ok(s.records()
        .iter()
        .map(|r| (r.block_time, r.unconfirmed, r.accepted))
        .collect())
}

/// Intensity `exp(alpha + w * delta)` of the next arrival.
#[pyclass(name = "IntensityHead", frozen)]
struct PyHead(IntensityHead);

#[pymethods]
impl PyHead {
    #[new]
    fn new(alpha: f64, w: f64) -> Self {
        Self(IntensityHead::new(alpha, w))
    }

    fn intensity(&self, delta: f64) -> PyResult<f64> {
        self.0.intensity(delta).map_err(py_err)
    }

    fn survival(&self, tau: f64) -> PyResult<f64> {
        self.0.survival(tau).map_err(py_err)
    }

    fn log_density(&self, delta: f64) -> PyResult<f64> {
        self.0.log_f_star(delta).map_err(py_err)
    }

    /// Gap with CDF value `y`, or `None` when `y` falls in the defective mass.
    fn inverse_cdf(&self, y: f64) -> PyResult<Option<f64>> {
        self.0.inverse_cdf(y).map_err(py_err)
    }

    /// `(mean gap, defective)`.
    fn expected_next(&self) -> PyResult<(f64, bool)> {
        self.0.expected_next(&QuadConfig::default()).map_err(py_err)
    }

    #[getter]
    fn survival_at_infinity(&self) -> f64 {
        self.0.survival_at_infinity()
    }
}

#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    eval::ks_two_sample(&a, &b).map_err(py_err)
}

#[pyfunction]
fn prediction_error(observed: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    eval::prediction_error(&observed, &predicted).map_err(py_err)
}

#[pyfunction]
fn mean_baseline(train: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    eval::mean_baseline(&train, &test).map_err(py_err)
}

#[pymodule]
fn servtime_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHead>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_hawkes, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ps_queue, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_mempool, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_error, m)?)?;
    m.add_function(wrap_pyfunction!(mean_baseline, m)?)?;
    Ok(())
}
