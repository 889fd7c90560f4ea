//! Python bindings for the `lprev_cbf` crate.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lprev_cbf::baselines::{self, prev_cbf};
use lprev_cbf::config::RunConfig;
use lprev_cbf::filter::Policy;
use lprev_cbf::matops::{self, Mat, Vector};
use lprev_cbf::plant::{DelaySystem, DisturbanceSignal, Sinusoid};
use lprev_cbf::sim::{self as core_sim, RunMetrics, SimTrace, VIOLATION_TOL};
use lprev_cbf::{Error, LPrevEngine};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Infeasible { .. } | Error::NoStoppingTime { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    matops::mat(rows.len(), ncols, &flat).map_err(to_py)
}

fn from_mat(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Matrix exponential `e^{A t}`.
#[pyfunction]
fn expm(a: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_mat(&matops::expm(&to_mat(&a)?, t).map_err(to_py)?))
}

/// `∫₀^t e^{A(t−τ)} B dτ`.
#[pyfunction]
fn conv_const(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_mat(&matops::conv_const(&to_mat(&a)?, &to_mat(&b)?, t).map_err(to_py)?))
}

#[pyfunction]
fn solve_qp_scalar(k: f64, p: f64, q: f64, lo: f64, hi: f64) -> PyResult<f64> {
    lprev_cbf::solve_qp_scalar(k, p, q, (lo, hi)).map_err(to_py)
}

#[pyfunction]
fn standard_h(y_m: f64, a_max: f64, y: f64, y_dot: f64) -> f64 {
    baselines::standard_h(y_m, a_max, y, y_dot)
}

#[pyfunction]
#[pyo3(signature = (u_m, e_dot_max=0.1326, e_max=0.2, tau_max=0.43, inertia=1.0, damping=2.0, stiffness=2.0))]
fn standard_amax_exo(
    u_m: f64,
    e_dot_max: f64,
    e_max: f64,
    tau_max: f64,
    inertia: f64,
    damping: f64,
    stiffness: f64,
) -> PyResult<f64> {
    baselines::standard_amax_exo(u_m, e_dot_max, e_max, tau_max, inertia, damping, stiffness).map_err(to_py)
}

/// `ẋ = A x + B u(t − T_i) + B_d d`, `y = C x`, single output.
#[pyclass(name = "DelaySystem", frozen)]
struct PyDelaySystem {
    inner: DelaySystem,
}

#[pymethods]
impl PyDelaySystem {
    #[new]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        bd: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        t_i: f64,
        t_p: f64,
        u_m: Vec<f64>,
        d_m: Vec<f64>,
        y_m: f64,
    ) -> PyResult<Self> {
        let inner = DelaySystem::new(
            to_mat(&a)?,
            to_mat(&b)?,
            to_mat(&bd)?,
            to_mat(&c)?,
            t_i,
            t_p,
            Vector::from_vec(u_m),
            Vector::from_vec(d_m),
            y_m,
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn input_delay(&self) -> f64 {
        self.inner.input_delay()
    }

    #[getter]
    fn preview_horizon(&self) -> f64 {
        self.inner.preview_horizon()
    }

    #[getter]
    fn y_m(&self) -> f64 {
        self.inner.y_m()
    }

    fn __repr__(&self) -> String {
        format!(
            "DelaySystem(n={}, T_i={}, T_p={})",
            self.inner.states(),
            self.inner.input_delay(),
            self.inner.preview_horizon()
        )
    }
}

/// Single-channel disturbance `amplitude · sin(omega · t + phase)`.
#[pyclass(name = "Sinusoid", frozen)]
struct PySinusoid {
    inner: Arc<dyn DisturbanceSignal>,
}

#[pymethods]
impl PySinusoid {
    #[new]
    #[pyo3(signature = (amplitude, omega, phase=0.0))]
    fn new(amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            inner: Arc::new(Sinusoid { amplitude, omega, phase }),
        }
    }

    fn __call__(&self, t: f64) -> f64 {
        self.inner.value(t)[0]
    }
}

#[pyclass(name = "Barrier", frozen, get_all)]
struct PyBarrier {
    h: f64,
    t_s: f64,
    sigma: f64,
    z_w: Vec<f64>,
    p: Vec<f64>,
    q: f64,
    y: f64,
    y_dot: f64,
}

#[pymethods]
impl PyBarrier {
    fn __repr__(&self) -> String {
        format!("Barrier(h={:.6e}, T_s={:.6e}, q={:.6e})", self.h, self.t_s, self.q)
    }
}

/// Limited-preview barrier; `unlimited=True` gives the full-preview variant.
#[pyclass(name = "Engine", frozen)]
struct PyEngine {
    inner: LPrevEngine,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (system, step, alpha=1.0, unlimited=false))]
    fn new(system: &PyDelaySystem, step: f64, alpha: f64, unlimited: bool) -> PyResult<Self> {
        let engine = if unlimited {
            prev_cbf(&system.inner, step)
        } else {
            LPrevEngine::new(system.inner.clone(), step)
        };
        let inner = engine.and_then(|e| e.with_alpha(alpha)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Barrier value and constraint row at predicted state `z`, time `t`.
    fn barrier(&self, z: Vec<f64>, disturbance: &PySinusoid, t: f64) -> PyResult<PyBarrier> {
        let window = self.inner.preview_window(&disturbance.inner, t).map_err(to_py)?;
        let e = self.inner.barrier(&Vector::from_vec(z), &window).map_err(to_py)?;
        Ok(PyBarrier {
            h: e.h,
            t_s: e.t_s,
            sigma: e.sigma,
            z_w: e.z_w.iter().copied().collect(),
            p: e.p.iter().copied().collect(),
            q: e.q,
            y: e.y,
            y_dot: e.y_dot,
        })
    }

    fn stopping_time(&self, z: Vec<f64>, disturbance: &PySinusoid, t: f64) -> PyResult<f64> {
        let window = self.inner.preview_window(&disturbance.inner, t).map_err(to_py)?;
        self.inner.stopping_time(&Vector::from_vec(z), &window).map_err(to_py)
    }
}

/// A built-in scenario with optional overrides.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: core_sim::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name="exo", um=None, tp=None, step=None, duration=None))]
    fn new(name: &str, um: Option<f64>, tp: Option<f64>, step: Option<f64>, duration: Option<f64>) -> PyResult<Self> {
        let cfg = RunConfig {
            scenario: name.to_string(),
            um,
            tp,
            step,
            duration,
            ..RunConfig::default()
        };
        Ok(Self {
            inner: cfg.build_scenario().map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn u_m(&self) -> f64 {
        self.inner.u_m()
    }

    fn a_max(&self) -> PyResult<f64> {
        self.inner.amax.a_max(self.inner.u_m()).map_err(to_py)
    }
}

#[pyclass(name = "Metrics", frozen, get_all)]
struct PyMetrics {
    policy: String,
    u_m: f64,
    safe: bool,
    failure: Option<String>,
    violation_time: Option<f64>,
    t1: Option<f64>,
    median_t_s: Option<f64>,
    min_h: Option<f64>,
    max_abs_u: f64,
    steps: usize,
}

impl From<RunMetrics> for PyMetrics {
    fn from(m: RunMetrics) -> Self {
        Self {
            policy: m.policy.name().to_string(),
            u_m: m.u_m,
            safe: m.safe(),
            violation_time: m.violation_time,
            t1: m.t1,
            median_t_s: m.t_s.map(|q| q.median),
            min_h: m.min_h,
            max_abs_u: m.max_abs_u,
            steps: m.steps,
            failure: m.failure,
        }
    }
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        let t1 = self.t1.map_or("None".to_string(), |t| t.to_string());
        let safe = if self.safe { "True" } else { "False" };
        format!("Metrics(policy={}, u_m={}, safe={safe}, t1={t1})", self.policy, self.u_m)
    }
}

/// Column view of a closed-loop run.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: SimTrace,
    failure: Option<String>,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.t).collect()
    }

    /// Predicted output `C z`.
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.y).collect()
    }

    /// First plant state component.
    #[getter]
    fn e(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.x[0]).collect()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.u).collect()
    }

    #[getter]
    fn k(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.k).collect()
    }

    #[getter]
    fn h(&self) -> Vec<Option<f64>> {
        self.inner.records.iter().map(|r| r.h).collect()
    }

    #[getter]
    fn intervened(&self) -> Vec<bool> {
        self.inner.records.iter().map(|r| r.intervened).collect()
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.failure.clone()
    }

    fn metrics(&self) -> PyMetrics {
        let m = core_sim::metrics(&self.inner, VIOLATION_TOL);
        match &self.failure {
            Some(f) => m.with_failure(f.clone()).into(),
            None => m.into(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

fn parse_policy(policy: &str) -> PyResult<Policy> {
    policy.parse().map_err(to_py)
}

/// Closed-loop run; solver failures end the trace early and are reported
/// through `Trace.failure`.
#[pyfunction]
#[pyo3(signature = (scenario, policy="lprev", alpha=1.0))]
fn simulate(py: Python<'_>, scenario: &PyScenario, policy: &str, alpha: f64) -> PyResult<PyTrace> {
    let policy = parse_policy(policy)?;
    let scn = scenario.inner.clone();
    let run = py.detach(move || core_sim::simulate(&scn, policy, alpha));
    Ok(match run {
        Ok(inner) => PyTrace { inner, failure: None },
        Err(fail) => PyTrace {
            failure: Some(fail.to_string()),
            inner: *fail.trace,
        },
    })
}

/// Runs every filter over `grid` and returns one `Metrics` per run.
#[pyfunction]
#[pyo3(signature = (scenario, grid, policies=vec!["standard".to_string(), "lprev".to_string(), "prev".to_string()], alpha=1.0))]
fn sweep(py: Python<'_>, scenario: &PyScenario, grid: Vec<f64>, policies: Vec<String>, alpha: f64) -> PyResult<Vec<PyMetrics>> {
    let policies = policies.iter().map(|p| parse_policy(p)).collect::<PyResult<Vec<_>>>()?;
    let scn = scenario.inner.clone();
    let rows = py.detach(move || core_sim::sweep_um(&scn, &policies, &grid, alpha));
    Ok(rows.into_iter().map(PyMetrics::from).collect())
}

#[pymodule]
fn lprev_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(conv_const, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp_scalar, m)?)?;
    m.add_function(wrap_pyfunction!(standard_h, m)?)?;
    m.add_function(wrap_pyfunction!(standard_amax_exo, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_class::<PyDelaySystem>()?;
    m.add_class::<PySinusoid>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PyBarrier>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyMetrics>()?;
    Ok(())
}
