//! Python bindings for `wsched`.
//!
//! Models, policies and traces are wrapped as classes; reports come back as
//! plain dicts decoded from their JSON form.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use wsched::conditions::{condition_report, necessity_stats, ConditionProbe, Thresholds};
use wsched::harness::{self, HarnessError, RunOptions, Task};
use wsched::lyapunov::{build_grid_2d, drift_estimate, GridSpec, LyapunovGrid2D, RayPotential, RaySteps};
use wsched::rate_region::{ergodic_boundary_point, scale_to_boundary, support};
use wsched::stability::classify;
use wsched::vector::Norm;
use wsched::{simulate as simulate_core, ArrivalModel, ChannelModel, ObservationModel, Policy, PolicySpec};
use wsched::{QueueState, RatePolytope, SimTrace, WeightVector};

fn to_py_err(e: wsched::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn queue(q: Vec<f64>) -> PyResult<QueueState> {
    QueueState::new(q).map_err(to_py_err)
}

fn parse_norm(norm: &str) -> PyResult<Norm> {
    match norm {
        "l1" => Ok(Norm::L1),
        "l2" => Ok(Norm::L2),
        "linf" => Ok(Norm::Linf),
        other => Err(PyValueError::new_err(format!("unknown norm {other:?}; expected l1, l2 or linf"))),
    }
}

/// Finite-state i.i.d. channel: one rate polytope per state.
#[pyclass(name = "ChannelModel", module = "pywsched", frozen)]
struct PyChannelModel {
    inner: ChannelModel,
}

#[pymethods]
impl PyChannelModel {
    /// `states` is a list of `(probability, vertices)` pairs.
    #[new]
    fn new(states: Vec<(f64, Vec<Vec<f64>>)>, rate_bound: f64) -> PyResult<Self> {
        let states = states
            .into_iter()
            .map(|(p, v)| RatePolytope::new(v, rate_bound).map(|r| (p, r)))
            .collect::<wsched::Result<Vec<_>>>()
            .map_err(to_py_err)?;
        let inner = ChannelModel::new(states, rate_bound).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn rate_bound(&self) -> f64 {
        self.inner.rate_bound()
    }

    /// Expected rate vector when every state serves its `weights`-max vertex.
    fn ergodic_boundary_point(&self, weights: Vec<f64>) -> PyResult<Vec<f64>> {
        let mu = WeightVector::new(weights).map_err(to_py_err)?;
        let r = ergodic_boundary_point(&self.inner, &mu).map_err(to_py_err)?;
        Ok(r.into_vec())
    }

    /// Scale that puts `direction` on the ergodic region boundary.
    fn scale_to_boundary(&self, direction: Vec<f64>) -> PyResult<f64> {
        scale_to_boundary(&self.inner, &direction).map_err(to_py_err)
    }

    /// Support function of the ergodic region at `normal`.
    fn support(&self, normal: Vec<f64>) -> PyResult<f64> {
        if normal.len() != self.inner.dim() {
            return Err(PyValueError::new_err("normal has the wrong dimension"));
        }
        Ok(support(&self.inner, &normal))
    }
}

/// Per-user i.i.d. arrival processes.
#[pyclass(name = "ArrivalModel", module = "pywsched", frozen)]
struct PyArrivalModel {
    inner: ArrivalModel,
}

#[pymethods]
impl PyArrivalModel {
    /// Deterministic arrivals equal to `rho` every slot.
    #[staticmethod]
    fn constant(rho: Vec<f64>, bound: f64) -> PyResult<Self> {
        ArrivalModel::constant(&rho, bound).map(|inner| Self { inner }).map_err(to_py_err)
    }

    /// Arrivals of `size` with probability `rho_i / size`, else zero.
    #[staticmethod]
    fn bernoulli(rho: Vec<f64>, size: f64, bound: f64) -> PyResult<Self> {
        ArrivalModel::scaled_bernoulli(&rho, size, bound).map(|inner| Self { inner }).map_err(to_py_err)
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means()
    }
}

/// A scheduling policy built from a name and parameters.
#[pyclass(name = "Policy", module = "pywsched", frozen)]
struct PyPolicy {
    inner: Arc<dyn Policy>,
    dim: usize,
}

#[pymethods]
impl PyPolicy {
    /// Parameterless policy by name, e.g. `mwm` or `exp_counterexample`.
    #[new]
    fn new(name: &str, channel: &PyChannelModel) -> PyResult<Self> {
        Self::from_json(&format!("{{\"name\": {}}}", serde_json::Value::from(name)), channel)
    }

    /// Policy from a JSON object in scenario syntax, e.g.
    /// `{"name": "exp_rule", "eta": 0.5}`.
    #[staticmethod]
    fn from_json(spec: &str, channel: &PyChannelModel) -> PyResult<Self> {
        let spec: PolicySpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = spec.build(&channel.inner).map_err(to_py_err)?;
        Ok(Self { inner: Arc::from(inner), dim: channel.inner.dim() })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    fn weights(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        let q = queue(q)?;
        if q.dim() != self.dim {
            return Err(PyValueError::new_err(format!("expected {} users, got {}", self.dim, q.dim())));
        }
        self.inner.weights(&q).map(WeightVector::into_vec).map_err(to_py_err)
    }
}

/// A simulated queue trajectory.
#[pyclass(name = "Trace", module = "pywsched", frozen)]
struct PyTrace {
    inner: SimTrace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Queue states `q(0) … q(horizon)`.
    fn queues(&self) -> Vec<Vec<f64>> {
        (0..=self.inner.len()).map(|n| self.inner.q(n).to_vec()).collect()
    }

    /// Weights applied in each slot.
    fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|n| self.inner.mu(n).to_vec()).collect()
    }

    fn final_q(&self) -> Vec<f64> {
        self.inner.final_q().to_vec()
    }

    /// Whether every slot satisfies the queue recursion.
    fn replay_ok(&self) -> bool {
        self.inner.replay().is_ok()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py_err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Zero-circulation grid potential of a two-user policy.
#[pyclass(name = "Grid2D", module = "pywsched", frozen)]
struct PyGrid {
    inner: LyapunovGrid2D,
}

#[pymethods]
impl PyGrid {
    #[getter]
    fn cell_count(&self) -> usize {
        self.inner.cell_count()
    }

    #[getter]
    fn max_loop_residual(&self) -> f64 {
        self.inner.max_loop_residual()
    }

    fn f(&self, q: Vec<f64>) -> PyResult<f64> {
        self.inner.interpolate_f(&queue(q)?).map_err(to_py_err)
    }

    fn v(&self, q: Vec<f64>) -> PyResult<f64> {
        self.inner.interpolate_v(&queue(q)?).map_err(to_py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (channel, arrivals, policy, initial_q, horizon, seed, delay_slots=0, quantization_step=0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    channel: &PyChannelModel,
    arrivals: &PyArrivalModel,
    policy: &PyPolicy,
    initial_q: Vec<f64>,
    horizon: usize,
    seed: u64,
    delay_slots: usize,
    quantization_step: f64,
) -> PyResult<PyTrace> {
    let om = ObservationModel::new(delay_slots, quantization_step).map_err(to_py_err)?;
    let q0 = queue(initial_q)?;
    let (cm, am, p) = (&channel.inner, &arrivals.inner, policy.inner.clone());
    let inner = py.detach(|| simulate_core(cm, am, &*p, &om, &q0, horizon, seed)).map_err(to_py_err)?;
    Ok(PyTrace { inner })
}

/// Stability report of a trace under the `‖q‖₁` potential.
#[pyfunction]
#[pyo3(signature = (trace, b=100.0, slope_tol=1e-3))]
fn classify_trace<'py>(py: Python<'py>, trace: &PyTrace, b: f64, slope_tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let report = classify(&trace.inner, None, b, slope_tol).map_err(to_py_err)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (trace, eps=0.2, c2=10.0, norm="linf"))]
fn necessity<'py>(py: Python<'py>, trace: &PyTrace, eps: f64, c2: f64, norm: &str) -> PyResult<Bound<'py, PyAny>> {
    let stats = necessity_stats(&trace.inner, eps, c2, parse_norm(norm)?).map_err(to_py_err)?;
    to_dict(py, &stats)
}

/// Sampling check of the two sufficient conditions on `policy`.
#[pyfunction]
#[pyo3(signature = (policy, norm_levels, samples_per_level=2000, c1=10.0, c2=10.0, eps1=0.05, eps2=0.05, seed=0, norm="linf"))]
#[allow(clippy::too_many_arguments)]
fn check_conditions<'py>(
    py: Python<'py>,
    policy: &PyPolicy,
    norm_levels: Vec<f64>,
    samples_per_level: usize,
    c1: f64,
    c2: f64,
    eps1: f64,
    eps2: f64,
    seed: u64,
    norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let probe = ConditionProbe { norm_levels, samples_per_level, c1, c2, seed, norm: parse_norm(norm)? };
    probe.validate().map_err(to_py_err)?;
    let p = policy.inner.clone();
    let m = policy.dim;
    let report = py
        .detach(|| condition_report(&*p, m, &probe, Thresholds { eps1, eps2 }))
        .map_err(to_py_err)?;
    to_dict(py, &report)
}

/// One-step drift of the ray-integral potential of `policy` at `q`.
#[pyfunction]
#[pyo3(signature = (policy, channel, arrivals, q, n_samples=1000, seed=0, steps_per_unit=4.0))]
#[allow(clippy::too_many_arguments)]
fn drift<'py>(
    py: Python<'py>,
    policy: &PyPolicy,
    channel: &PyChannelModel,
    arrivals: &PyArrivalModel,
    q: Vec<f64>,
    n_samples: usize,
    seed: u64,
    steps_per_unit: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let pot = RayPotential::new(policy.inner.clone(), RaySteps::PerUnit(steps_per_unit)).map_err(to_py_err)?;
    let q = queue(q)?;
    let est = drift_estimate(&*policy.inner, &channel.inner, &arrivals.inner, &q, &pot, n_samples, seed)
        .map_err(to_py_err)?;
    to_dict(py, &est)
}

/// Builds the zero-circulation grid potential of a two-user policy.
#[pyfunction]
#[pyo3(signature = (policy, base, extent, init_cell=1.0))]
fn build_grid(py: Python<'_>, policy: &PyPolicy, base: [f64; 2], extent: [f64; 2], init_cell: f64) -> PyResult<PyGrid> {
    let p = policy.inner.clone();
    let inner = py.detach(|| build_grid_2d(p, GridSpec::new(base, extent, init_cell))).map_err(to_py_err)?;
    Ok(PyGrid { inner })
}

/// Runs a scenario file like the command-line tool and returns the summary.
#[pyfunction]
#[pyo3(signature = (task, scenario, out, jobs=1, seed_override=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    task: &str,
    scenario: PathBuf,
    out: PathBuf,
    jobs: usize,
    seed_override: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let task = match task {
        "simulate" => Task::Simulate,
        "check-conditions" => Task::CheckConditions,
        "necessity" => Task::Necessity,
        "lyapunov" => Task::Lyapunov,
        "report" => Task::Report,
        other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
    };
    let opts = RunOptions { out, jobs, seed_override };
    let summary = py.detach(|| harness::run(task, &scenario, &opts)).map_err(|e| match e {
        HarnessError::Validation(_) => PyValueError::new_err(e.to_string()),
        HarnessError::Runtime(_) => PyRuntimeError::new_err(e.to_string()),
    })?;
    to_dict(py, &summary)
}

#[pymodule]
fn pywsched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannelModel>()?;
    m.add_class::<PyArrivalModel>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyGrid>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(classify_trace, m)?)?;
    m.add_function(wrap_pyfunction!(necessity, m)?)?;
    m.add_function(wrap_pyfunction!(check_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(drift, m)?)?;
    m.add_function(wrap_pyfunction!(build_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
