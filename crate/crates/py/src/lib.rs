//! Python bindings for the `ksrs` simulation library.

use std::collections::BTreeMap;

use ::ksrs::engine::{CycleStats, EventRecord, RecordOptions};
use ::ksrs::experiments::{self, ExperimentResult};
use ::ksrs::policy::{self, Arrival, PolicyAction};
use ::ksrs::{build_ksrs, derive_params, Error, QState, SimState};
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pythonize::{depythonize, pythonize};
use serde::de::DeserializeOwned;
use serde::Serialize;

pyo3::create_exception!(ksrs, CapExceededError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Range(_) | Error::UnsupportedTopology(_) => PyValueError::new_err(e.to_string()),
        Error::CapExceeded(_) => CapExceededError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn ser<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    pythonize(py, v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Defaults of `T` overlaid with the given keyword arguments.
fn config_from<T>(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut base = serde_json::to_value(T::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    if let Some(kw) = kwargs {
        let extra: serde_json::Map<String, serde_json::Value> =
            depythonize(kw.as_any()).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let obj = base.as_object_mut().expect("configs serialize to objects");
        for (k, v) in extra {
            if !obj.contains_key(&k) {
                return Err(PyValueError::new_err(format!("unknown option {k:?}")));
            }
            obj.insert(k, v);
        }
    }
    serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[derive(Serialize)]
struct TableOut<'a> {
    header: &'a [String],
    rows: &'a [Vec<String>],
}

fn result_dict<'py>(py: Python<'py>, res: &ExperimentResult) -> PyResult<Bound<'py, PyAny>> {
    let obj = ser(py, res)?;
    let tables: BTreeMap<&str, TableOut> = res
        .tables
        .iter()
        .map(|(k, t)| (k.as_str(), TableOut { header: &t.header, rows: &t.rows }))
        .collect();
    obj.set_item("tables", ser(py, &tables)?)?;
    obj.set_item("runtime_secs", res.runtime_secs)?;
    Ok(obj)
}

fn state_of(q: (u64, u64, u64, u64)) -> QState {
    QState::new(q.0, q.1, q.2, q.3)
}

fn tuple_of(q: QState) -> (u64, u64, u64, u64) {
    let [a, b, c, d] = q.0;
    (a, b, c, d)
}

/// Derived constants of the hold policy for one `delta`.
#[pyclass(name = "PolicyParams", frozen, module = "ksrs")]
pub struct PyParams {
    inner: ::ksrs::PolicyParams,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: derive_params(delta).map_err(to_py)?,
        })
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }
    #[getter]
    fn gamma2(&self) -> f64 {
        self.inner.gamma2
    }
    #[getter]
    fn gamma4(&self) -> f64 {
        self.inner.gamma4
    }
    #[getter]
    fn gamma24(&self) -> f64 {
        self.inner.gamma24
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    #[getter]
    fn beta1(&self) -> f64 {
        self.inner.beta1
    }
    #[getter]
    fn beta2(&self) -> f64 {
        self.inner.beta2
    }
    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }
    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }
    #[getter]
    fn eta_condition_holds(&self) -> bool {
        self.inner.eta_condition_holds
    }
    #[getter]
    fn second_moment_holds(&self) -> bool {
        self.inner.second_moment_holds
    }
    #[getter]
    fn hold_exponent(&self) -> f64 {
        self.inner.hold_exponent()
    }
    #[getter]
    fn regime(&self) -> String {
        serde_json::to_value(self.inner.regime())
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("PolicyParams(delta={}, eta={:.6}, regime={})", self.inner.delta, self.inner.eta, self.regime())
    }
}

#[pyfunction]
fn psi_star(s: f64, params: &PyParams) -> PyResult<f64> {
    policy::psi_star(s, &params.inner).map_err(to_py)
}

#[pyfunction]
fn big_psi(s: f64) -> PyResult<f64> {
    if !(s >= 0.0) {
        return Err(PyValueError::new_err(format!("big_psi needs s >= 0, got {s}")));
    }
    Ok(policy::big_psi(s))
}

#[pyfunction]
fn psi_seq(n: u64, params: &PyParams) -> PyResult<f64> {
    if n == 0 {
        return Err(PyValueError::new_err("psi_seq is defined for n >= 1"));
    }
    Ok(policy::psi_seq(n, &params.inner))
}

#[pyfunction]
fn hold_survival(k: u64, params: &PyParams) -> f64 {
    policy::hold_survival(k, &params.inner)
}

#[pyfunction]
fn flush_closure(state: (u64, u64, u64, u64)) -> (u64, u64, u64, u64) {
    tuple_of(policy::flush_closure(state_of(state)))
}

/// Decision at an arrival to `buffer` (1 or 3); `state` counts the arrival.
#[pyfunction]
fn decide_arrival(buffer: u8, state: (u64, u64, u64, u64), u: f64, params: &PyParams) -> PyResult<&'static str> {
    let arrival = match buffer {
        1 => Arrival::Buffer1,
        3 => Arrival::Buffer3,
        _ => return Err(PyValueError::new_err(format!("arrivals go to buffer 1 or 3, got {buffer}"))),
    };
    Ok(match policy::decide_arrival(arrival, &state_of(state), u, &params.inner) {
        PolicyAction::ServeFinite => "serve_finite",
        PolicyAction::FlushBuffer1 => "flush1",
        PolicyAction::FlushBuffer3 => "flush3",
        PolicyAction::Hold => "hold",
    })
}

fn event_dict<'py>(py: Python<'py>, rec: &EventRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", rec.t)?;
    d.set_item("kind", rec.kind.as_str())?;
    d.set_item("state", tuple_of(rec.state_after))?;
    d.set_item("flushed1", rec.flushed1)?;
    d.set_item("flushed3", rec.flushed3)?;
    Ok(d)
}

fn cycle_dict<'py>(py: Python<'py>, c: &CycleStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("start", c.start)?;
    d.set_item("duration", c.duration)?;
    d.set_item("events", c.events)?;
    d.set_item("sup_norm", c.sup_norm)?;
    d.set_item("norm_integrals", c.norm_integrals.to_vec())?;
    Ok(d)
}

/// A running simulation of the network.
#[pyclass(name = "Simulator", module = "ksrs")]
pub struct PySimulator {
    sim: SimState,
}

#[pymethods]
impl PySimulator {
    #[new]
    #[pyo3(signature = (delta, init = (0, 0, 0, 1), seed = 1, stream = 0))]
    fn new(delta: f64, init: (u64, u64, u64, u64), seed: u64, stream: u64) -> PyResult<Self> {
        let params = derive_params(delta).map_err(to_py)?;
        let sim = SimState::init(&build_ksrs(&params), &params, state_of(init), seed, stream).map_err(to_py)?;
        Ok(Self { sim })
    }

    #[getter]
    fn state(&self) -> (u64, u64, u64, u64) {
        tuple_of(self.sim.state())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.sim.time()
    }

    #[getter]
    fn busy(&self) -> (f64, f64) {
        let [a, b] = self.sim.busy();
        (a, b)
    }

    #[getter]
    fn events(&self) -> u64 {
        self.sim.events()
    }

    fn set_event_cap(&mut self, cap: u64) {
        self.sim.set_event_cap(cap);
    }

    /// Advances one event and returns it.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rec = self.sim.next_event();
        event_dict(py, &rec)
    }

    /// Runs until the clock passes `horizon`; returns times and states of
    /// the recorded log (thinned to a grid for long runs).
    #[pyo3(signature = (horizon, full_limit = 1_000_000, grid_points = 100_000))]
    fn run_until_time<'py>(
        &mut self,
        py: Python<'py>,
        horizon: f64,
        full_limit: usize,
        grid_points: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = RecordOptions { full_limit, grid_points };
        let traj = py.detach(|| self.sim.run_until_time(horizon, opts));
        let (t, q): (Vec<f64>, Vec<(u64, u64, u64, u64)>) = if traj.thinned {
            traj.samples.iter().map(|s| (s.t, tuple_of(s.q))).unzip()
        } else {
            traj.records.iter().map(|r| (r.t, tuple_of(r.state_after))).unzip()
        };
        let d = PyDict::new(py);
        d.set_item("t", t)?;
        d.set_item("state", q)?;
        d.set_item("thinned", traj.thinned)?;
        d.set_item("summary", ser(py, &traj.summary)?)?;
        Ok(d)
    }

    /// Runs `n` events and counts invariant violations.
    fn run_checked<'py>(&mut self, py: Python<'py>, n: u64) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| self.sim.run_checked(n));
        ser(py, &report)
    }

    /// The next `n` regeneration cycles through (0,0,0,1).
    fn regen_cycles<'py>(&mut self, py: Python<'py>, n: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cycles = py
            .detach(|| self.sim.regen_cycles(QState::ATOM, n))
            .map_err(|e| to_py(e.into()))?;
        cycles.iter().map(|c| cycle_dict(py, c)).collect()
    }
}

macro_rules! experiment {
    ($(#[$doc:meta])* $name:ident, $cfg:ty, $run:path) => {
        $(#[$doc])*
        #[pyfunction]
        #[pyo3(signature = (**kwargs))]
        fn $name<'py>(py: Python<'py>, kwargs: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
            let cfg: $cfg = config_from(kwargs)?;
            let start = std::time::Instant::now();
            let mut res = py.detach(|| $run(&cfg)).map_err(to_py)?;
            res.runtime_secs = start.elapsed().as_secs_f64();
            result_dict(py, &res)
        }
    };
}

experiment!(
    /// M/M/1 emptying-time oracle.
    mm1_emptying_oracle, experiments::Mm1Config, experiments::mm1_emptying_oracle
);
experiment!(
    /// Poisson large-deviation check.
    poisson_ld_check, experiments::LdConfig, experiments::poisson_ld_check
);
experiment!(
    /// Telescoping check of the hold probabilities.
    psi_check, experiments::PsiConfig, experiments::psi_check
);
experiment!(
    /// Draining from (0,0,0,n).
    drain_experiment, experiments::DrainConfig, experiments::drain_experiment
);
experiment!(
    /// Hold event: policy path against the independent oracle.
    hold_event_experiment, experiments::HoldConfig, experiments::hold_event_experiment
);
experiment!(
    /// Cascade event probabilities.
    cascade_experiment, experiments::CascadeConfig, experiments::cascade_experiment
);
experiment!(
    /// Long-run occupation tail from regeneration cycles.
    tail_occupation, experiments::TailConfig, experiments::tail_occupation
);
experiment!(
    /// Lyapunov function and drift estimates.
    drift_estimate, experiments::DriftConfig, experiments::drift_estimate
);
experiment!(
    /// Fluid-scaled trajectories.
    fluid_experiment, experiments::FluidConfig, experiments::fluid_experiment
);

/// Log-space lower bound on the cascade probability.
#[pyfunction]
#[pyo3(signature = (n, params, alpha = 1.0))]
fn cascade_bound<'py>(py: Python<'py>, n: u32, params: &PyParams, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    let b = experiments::cascade_bound(n, alpha, &params.inner).map_err(to_py)?;
    let obj = ser(py, &b)?;
    obj.set_item("telescoped_holds", b.telescoped_holds())?;
    Ok(obj)
}

/// Simulation and experiments for the KSRS network under the randomized
/// hold policy.
#[pymodule]
mod ksrs {
    #[pymodule_export]
    use super::{
        big_psi, cascade_bound, cascade_experiment, decide_arrival, drain_experiment, drift_estimate,
        fluid_experiment, flush_closure, hold_event_experiment, hold_survival, mm1_emptying_oracle,
        poisson_ld_check, psi_check, psi_seq, psi_star, tail_occupation, CapExceededError, PyParams,
        PySimulator,
    };

    use pyo3::prelude::*;

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("__version__", ::ksrs::experiments::VERSION)
    }
}
