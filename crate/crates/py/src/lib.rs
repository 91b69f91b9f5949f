//! Python bindings. Module name: `canalnav`.

use std::path::PathBuf;

use canalnav_core::commands::{self, CommandError, SimulateOverrides};
use canalnav_core::dynamics::{self, ActuatorState, Param, ParamSet, VesselState};
use canalnav_core::geometry::Point;
use canalnav_core::ocp::{self, NmpcConfig};
use canalnav_core::perception::{self, LineSegment, PerceptionConfig, PointCloud};
use canalnav_core::sim::{self, ControllerKind, Scenario};
use canalnav_core::sysid::{self, SysIdConfig, SysIdReport, TrialDataset, TrialSpec};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn core_err(e: canalnav_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cmd_err(e: CommandError) -> PyErr {
    match e {
        CommandError::Usage(m) => PyValueError::new_err(m),
        CommandError::Runtime(e) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn controller(name: Option<&str>) -> PyResult<Option<ControllerKind>> {
    name.map(|n| ControllerKind::parse(n).ok_or_else(|| PyValueError::new_err(format!("unknown controller `{n}`"))))
        .transpose()
}

fn param_by_key(key: &str) -> PyResult<Param> {
    Param::ALL
        .iter()
        .copied()
        .find(|p| p.key() == key)
        .ok_or_else(|| PyKeyError::new_err(key.to_string()))
}

/// Vessel model constants.
#[pyclass(name = "ParamSet", skip_from_py_object)]
#[derive(Clone)]
struct PyParamSet {
    inner: ParamSet,
}

#[pymethods]
impl PyParamSet {
    #[staticmethod]
    fn reference_boat() -> Self {
        Self {
            inner: ParamSet::reference_boat(),
        }
    }

    #[staticmethod]
    fn simulation_boat() -> Self {
        Self {
            inner: ParamSet::simulation_boat(),
        }
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        Param::ALL.iter().map(|p| p.key()).collect()
    }

    fn get(&self, key: &str) -> PyResult<f64> {
        Ok(self.inner.get(param_by_key(key)?))
    }

    fn set(&mut self, key: &str, value: f64) -> PyResult<()> {
        self.inner.set(param_by_key(key)?, value);
        Ok(())
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for p in Param::ALL {
            d.set_item(p.key(), self.inner.get(p))?;
        }
        Ok(d)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(core_err)
    }

    fn __repr__(&self) -> String {
        let body: Vec<String> = Param::ALL
            .iter()
            .map(|p| format!("{}={:.6e}", p.key(), self.inner.get(*p)))
            .collect();
        format!("ParamSet({})", body.join(", "))
    }
}

/// Pose and body-frame velocity.
#[pyclass(name = "VesselState", skip_from_py_object)]
#[derive(Clone)]
struct PyVesselState {
    inner: VesselState,
}

#[pymethods]
impl PyVesselState {
    #[new]
    #[pyo3(signature = (x=0.0, y=0.0, psi=0.0, u=0.0, v=0.0, r=0.0))]
    fn new(x: f64, y: f64, psi: f64, u: f64, v: f64, r: f64) -> Self {
        Self {
            inner: VesselState::new(x, y, psi, u, v, r),
        }
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }
    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }
    #[getter]
    fn psi(&self) -> f64 {
        self.inner.psi
    }
    #[getter]
    fn u(&self) -> f64 {
        self.inner.u
    }
    #[getter]
    fn v(&self) -> f64 {
        self.inner.v
    }
    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    fn to_tuple(&self) -> (f64, f64, f64, f64, f64, f64) {
        let a = self.inner.to_array();
        (a[0], a[1], a[2], a[3], a[4], a[5])
    }

    fn kinetic_energy(&self, params: &PyParamSet) -> f64 {
        dynamics::kinetic_energy(&self.inner, &params.inner)
    }

    /// One RK4 step with actuators held at (throttle, steering) percent.
    fn step(&self, throttle: f64, steering: f64, params: &PyParamSet, dt: f64) -> PyResult<Self> {
        let act = ActuatorState::new(throttle, steering);
        dynamics::rk4_step(&self.inner, &act, &params.inner, dt)
            .map(|inner| Self { inner })
            .map_err(core_err)
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "VesselState(x={:.3}, y={:.3}, psi={:.4}, u={:.3}, v={:.3}, r={:.4})",
            s.x, s.y, s.psi, s.u, s.v, s.r
        )
    }
}

/// Wall segment given by center, direction and length.
#[pyclass(name = "LineSegment", skip_from_py_object)]
#[derive(Clone)]
struct PyLineSegment {
    inner: LineSegment,
}

#[pymethods]
impl PyLineSegment {
    #[new]
    fn new(x_c: f64, y_c: f64, theta: f64, length: f64) -> Self {
        Self {
            inner: LineSegment::new(x_c, y_c, theta, length),
        }
    }

    #[staticmethod]
    fn from_endpoints(a: (f64, f64), b: (f64, f64)) -> Self {
        Self {
            inner: LineSegment::from_endpoints(Point::new(a.0, a.1), Point::new(b.0, b.1)),
        }
    }

    #[getter]
    fn x_c(&self) -> f64 {
        self.inner.x_c
    }
    #[getter]
    fn y_c(&self) -> f64 {
        self.inner.y_c
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }
    #[getter]
    fn length(&self) -> f64 {
        self.inner.length
    }

    fn endpoints(&self) -> ((f64, f64), (f64, f64)) {
        let (a, b) = self.inner.endpoints();
        ((a.x, a.y), (b.x, b.y))
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        perception::point_segment_distance(x, y, &self.inner)
    }

    /// Smooth obstacle constraint at (x, y); nonnegative means clear.
    #[pyo3(signature = (x, y, slack=0.0))]
    fn constraint(&self, x: f64, y: f64, slack: f64) -> f64 {
        ocp::obstacle_constraint_value(&Point::new(x, y), &self.inner, slack, &NmpcConfig::default())
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "LineSegment(x_c={:.3}, y_c={:.3}, theta={:.4}, length={:.3})",
            s.x_c, s.y_c, s.theta, s.length
        )
    }
}

/// One system-identification trial log.
#[pyclass(name = "Trial", skip_from_py_object)]
#[derive(Clone)]
struct PyTrial {
    inner: TrialDataset,
}

#[pymethods]
impl PyTrial {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }
    #[getter]
    fn states(&self) -> Vec<[f64; 6]> {
        self.inner.states.iter().map(|s| s.to_array()).collect()
    }
    #[getter]
    fn inputs(&self) -> Vec<(f64, f64)> {
        self.inner.inputs.iter().map(|a| (a.throttle, a.steering)).collect()
    }
    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Simulate a scripted trial ("acceleration", "deceleration" or "zigzag").
#[pyfunction]
#[pyo3(signature = (kind, params, seed=0, noise=[0.0; 6]))]
fn generate_trial(kind: &str, params: &PyParamSet, seed: u64, noise: [f64; 6]) -> PyResult<PyTrial> {
    let spec = match kind {
        "acceleration" => TrialSpec::acceleration(),
        "deceleration" => TrialSpec::deceleration(),
        "zigzag" => TrialSpec::zigzag(),
        other => return Err(PyValueError::new_err(format!("unknown trial kind `{other}`"))),
    };
    sysid::generate_trial(&spec, &params.inner, noise, seed)
        .map(|inner| PyTrial { inner })
        .map_err(core_err)
}

fn report_tuple(py: Python<'_>, r: SysIdReport) -> PyResult<(PyParamSet, Bound<'_, PyDict>)> {
    let d = PyDict::new(py);
    d.set_item("initial_cost", r.initial_cost)?;
    d.set_item("final_cost", r.final_cost)?;
    d.set_item("rms", r.rms.to_vec())?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    Ok((PyParamSet { inner: r.fitted }, d))
}

/// Fit the surge constants; returns (fitted params, report dict).
#[pyfunction]
fn identify_surge<'py>(
    py: Python<'py>,
    trials: Vec<PyRef<'py, PyTrial>>,
    guess: &PyParamSet,
) -> PyResult<(PyParamSet, Bound<'py, PyDict>)> {
    let data: Vec<TrialDataset> = trials.iter().map(|t| t.inner.clone()).collect();
    let r = sysid::identify_surge(&data, &SysIdConfig::surge(guess.inner)).map_err(core_err)?;
    report_tuple(py, r)
}

/// Fit the sway and yaw constants with the surge constants held fixed.
#[pyfunction]
fn identify_sway_yaw<'py>(
    py: Python<'py>,
    trials: Vec<PyRef<'py, PyTrial>>,
    surge: &PyParamSet,
    guess: &PyParamSet,
) -> PyResult<(PyParamSet, Bound<'py, PyDict>)> {
    let data: Vec<TrialDataset> = trials.iter().map(|t| t.inner.clone()).collect();
    let r = sysid::identify_sway_yaw(&data, &surge.inner, &SysIdConfig::sway_yaw(guess.inner)).map_err(core_err)?;
    report_tuple(py, r)
}

/// Extract wall segments from an iterable of (x, y, z) points in the body frame.
#[pyfunction]
fn detect_segments(points: Vec<[f64; 3]>) -> Vec<PyLineSegment> {
    let (_, segs) = perception::detect_segments(&PointCloud::new(points), &PerceptionConfig::default());
    segs.into_iter().map(|inner| PyLineSegment { inner }).collect()
}

/// Run a scenario given as TOML text and return its metrics as a dict.
#[pyfunction]
#[pyo3(signature = (toml_text, controller=None, duration=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    toml_text: &str,
    controller: Option<&str>,
    duration: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut sc = Scenario::from_toml_str(toml_text).map_err(core_err)?;
    if let Some(c) = self::controller(controller)? {
        sc.controller = c;
    }
    if let Some(d) = duration {
        sc.duration = d;
    }
    let (_, m) = py.detach(|| sim::run_closed_loop(&sc)).map_err(core_err)?;
    json_to_py(py, &m.to_json())
}

/// `canalnav simulate` equivalent; writes into `out` and returns the metrics.
#[pyfunction]
#[pyo3(signature = (config, out, controller=None, duration=None, seed=None))]
fn simulate<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: PathBuf,
    controller: Option<&str>,
    duration: Option<f64>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let o = SimulateOverrides {
        controller: self::controller(controller)?,
        seed,
        duration,
    };
    let (_, m) = py
        .detach(|| commands::cmd_simulate(&config, &out, &o))
        .map_err(cmd_err)?;
    json_to_py(py, &m.to_json())
}

/// `canalnav compare` equivalent; returns the formatted table.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None))]
fn compare(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<String> {
    let rows = py
        .detach(|| commands::cmd_compare(&config, &out, seed))
        .map_err(cmd_err)?;
    Ok(commands::format_comparison_table(&rows))
}

/// `canalnav sysid` equivalent; returns the fitted params.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None))]
fn sysid_command(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<PyParamSet> {
    let o = py
        .detach(|| commands::cmd_sysid(&config, &out, seed))
        .map_err(cmd_err)?;
    Ok(PyParamSet { inner: o.fitted })
}

#[pymodule]
fn canalnav(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyParamSet>()?;
    m.add_class::<PyVesselState>()?;
    m.add_class::<PyLineSegment>()?;
    m.add_class::<PyTrial>()?;
    m.add_function(wrap_pyfunction!(generate_trial, m)?)?;
    m.add_function(wrap_pyfunction!(identify_surge, m)?)?;
    m.add_function(wrap_pyfunction!(identify_sway_yaw, m)?)?;
    m.add_function(wrap_pyfunction!(detect_segments, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(sysid_command, m)?)?;
    Ok(())
}
