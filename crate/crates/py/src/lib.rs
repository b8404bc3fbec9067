//! Python bindings. Structured values (summaries, frames, commands, events)
//! cross the boundary as plain dicts with the same field names as the JSON
//! exports and the gateway protocol.

use std::path::PathBuf;

use minicar_core::config::{self, Policy, Preset, ScenarioConfig};
use minicar_core::coordination;
use minicar_core::game::{self, Command, LoggedCommand};
use minicar_core::idm::{self, FrontTarget, IdmParams};
use minicar_core::record::{self, RunRecord};
use minicar_core::sim;
use minicar_core::track::build_track;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_policy(s: &str) -> PyResult<Policy> {
    match s {
        "egocentric" => Ok(Policy::Egocentric),
        "cooperative" => Ok(Policy::Cooperative),
        other => Err(value_err(format!("unknown policy `{other}`, expected egocentric or cooperative"))),
    }
}

fn parse_preset(s: &str) -> PyResult<Preset> {
    match s {
        "normal" => Ok(Preset::Normal),
        "aggressive" => Ok(Preset::Aggressive),
        other => Err(value_err(format!("unknown preset `{other}`, expected normal or aggressive"))),
    }
}

/// A fully resolved scenario configuration.
#[pyclass(name = "Scenario", module = "minicar", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// The sixteen-car stop-disturbance scenario for one scheme.
    #[new]
    #[pyo3(signature = (policy = "egocentric", preset = "normal"))]
    fn new(policy: &str, preset: &str) -> PyResult<Self> {
        Ok(Self { inner: ScenarioConfig::preset(parse_policy(policy)?, parse_preset(preset)?) })
    }

    /// Loads a TOML scenario (or a run's summary.json) and applies
    /// `dotted.key=value` overrides.
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn from_file(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        config::load_config(&path, &overrides).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (text, overrides = Vec::new()))]
    fn from_toml(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        config::parse_config(text, &overrides).map(|inner| Self { inner }).map_err(value_err)
    }

    /// A copy with `dotted.key=value` overrides applied and revalidated.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let table = toml::Table::try_from(&self.inner).map_err(runtime_err)?;
        config::resolve(table, &overrides).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, duration: f64) -> PyResult<()> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(value_err(format!("duration must be >= 0, got {duration}")));
        }
        self.inner.duration = duration;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, seed={}, duration={})", self.inner.name, self.inner.seed, self.inner.duration)
    }
}

/// The recorded outcome of a run.
#[pyclass(name = "RunResult", module = "minicar", frozen)]
struct PyRunResult {
    inner: RunRecord,
}

#[pymethods]
impl PyRunResult {
    /// Summary dict, including the resolved config.
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary())
    }

    /// `(mean, std)` of the sliding-window throughput in cars per second.
    fn throughput(&self) -> (f64, f64) {
        let t = self.inner.throughput();
        (t.mean, t.std)
    }

    #[getter]
    fn max_queue(&self) -> usize {
        self.inner.queue_stats().max_queue
    }

    #[getter]
    fn collisions(&self) -> usize {
        self.inner.collisions().len()
    }

    #[getter]
    fn ticks(&self) -> u64 {
        self.inner.ticks
    }

    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.events)
    }

    fn trajectory_csv(&self) -> String {
        self.inner.trajectory_csv()
    }

    fn spacetime_csv(&self) -> String {
        self.inner.spacetime_csv()
    }

    fn events_csv(&self) -> String {
        self.inner.events_csv()
    }

    /// Writes all artifacts into `dir` and returns their paths.
    fn export(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        record::export_record(&self.inner, &dir).map_err(runtime_err)
    }
}

/// An interactive session: step the world, submit commands, read frames.
#[pyclass(name = "Session", module = "minicar")]
struct PySession {
    inner: Option<game::Session>,
}

impl PySession {
    fn live(&mut self) -> PyResult<&mut game::Session> {
        self.inner.as_mut().ok_or_else(|| runtime_err("session already finished"))
    }
}

#[pymethods]
impl PySession {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        game::Session::new(scenario.inner.clone()).map(|s| Self { inner: Some(s) }).map_err(value_err)
    }

    /// Queues a command dict such as
    /// `{"vehicle": 0, "action": "manual", "throttle": 0.5, "steer": 0.0}`.
    fn submit(&mut self, command: &Bound<'_, PyAny>) -> PyResult<()> {
        let command: Command = from_py(command)?;
        self.live()?.submit(command);
        Ok(())
    }

    /// Advances `ticks` ticks. Returns the last frame produced on the way,
    /// or None if no frame boundary was crossed.
    #[pyo3(signature = (ticks = 1))]
    fn step(&mut self, py: Python<'_>, ticks: u64) -> PyResult<Option<Py<PyAny>>> {
        let session = self.live()?;
        let mut last = None;
        for _ in 0..ticks {
            if session.is_finished() {
                break;
            }
            if let Some(frame) = session.step().map_err(runtime_err)? {
                last = Some(frame);
            }
        }
        last.map(|f| to_py(py, &f)).transpose()
    }

    /// Current state plus all events not yet delivered.
    fn frame(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let frame = self.live()?.frame();
        to_py(py, &frame)
    }

    #[getter]
    fn time(&mut self) -> PyResult<f64> {
        Ok(self.live()?.world.time())
    }

    #[getter]
    fn tick(&mut self) -> PyResult<u64> {
        Ok(self.live()?.world.tick)
    }

    fn is_finished(&mut self) -> PyResult<bool> {
        Ok(self.live()?.is_finished())
    }

    fn command_log(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let log = self.live()?.command_log().to_vec();
        to_py(py, &log)
    }

    /// Ends the session and returns its record. The session cannot be used
    /// afterwards.
    fn finish(&mut self) -> PyResult<PyRunResult> {
        let session = self.inner.take().ok_or_else(|| runtime_err("session already finished"))?;
        Ok(PyRunResult { inner: session.into_record() })
    }
}

/// Runs a scenario to completion without holding the interpreter lock.
#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyRunResult> {
    let cfg = scenario.inner.clone();
    py.detach(|| sim::run_scenario(cfg)).map(|inner| PyRunResult { inner }).map_err(runtime_err)
}

/// Re-runs a session from its scenario and command log.
#[pyfunction]
fn replay(py: Python<'_>, scenario: &PyScenario, log: &Bound<'_, PyAny>) -> PyResult<PyRunResult> {
    let log: Vec<LoggedCommand> = from_py(log)?;
    let cfg = scenario.inner.clone();
    py.detach(|| game::replay(cfg, &log)).map(|inner| PyRunResult { inner }).map_err(runtime_err)
}

fn idm_preset(preset: &str) -> PyResult<IdmParams> {
    Ok(match parse_preset(preset)? {
        Preset::Normal => IdmParams::normal(),
        Preset::Aggressive => IdmParams::aggressive(),
    })
}

/// IDM acceleration (m/s^2) behind a leader `gap` meters ahead, or on free
/// road when `gap` is None. Uses the preset's plain jam distance.
#[pyfunction]
#[pyo3(signature = (v, gap = None, front_speed = 0.0, preset = "normal", max_decel = 2.0))]
fn idm_acceleration(v: f64, gap: Option<f64>, front_speed: f64, preset: &str, max_decel: f64) -> PyResult<f64> {
    let p = idm_preset(preset)?;
    let target = gap.map(|g| FrontTarget::real(g, v, front_speed));
    Ok(idm::idm_acceleration(v, target.as_ref(), &p, p.s0, max_decel))
}

#[pyfunction]
#[pyo3(signature = (v, approach_rate, preset = "normal"))]
fn desired_gap(v: f64, approach_rate: f64, preset: &str) -> PyResult<f64> {
    Ok(idm::desired_gap(v, approach_rate, &idm_preset(preset)?))
}

#[pyfunction]
fn escape_distance(front_speed: f64, v0: f64, wheelbase: f64) -> f64 {
    idm::escape_distance(front_speed, v0, wheelbase)
}

#[pyfunction]
fn urgency_weight(gap_to_front: f64, c: f64, kappa_u: f64) -> f64 {
    coordination::urgency_weight(gap_to_front, c, kappa_u)
}

#[pyfunction]
fn boosted_desired_speed(v0: f64, weight: f64, trail_gap: f64, range: f64, max_speed: f64) -> f64 {
    idm::boosted_desired_speed(v0, weight, trail_gap, range, max_speed)
}

type Sample = (usize, f64, f64, f64, f64, f64);

/// Lane centerline samples as `(lane_id, s, x, y, theta, kappa)` tuples.
#[pyfunction]
#[pyo3(signature = (scenario = None, resolution = 0.05))]
fn track_polyline(scenario: Option<&PyScenario>, resolution: f64) -> PyResult<Vec<Sample>> {
    if !(resolution > 0.0) {
        return Err(value_err(format!("resolution must be > 0, got {resolution}")));
    }
    let track_spec = scenario.map_or_else(|| ScenarioConfig::default().track, |s| s.inner.track.clone());
    let track = build_track(&track_spec).map_err(value_err)?;
    Ok(track.sample_polyline(resolution).into_iter().map(|p| (p.lane_id, p.s, p.x, p.y, p.theta, p.kappa)).collect())
}

#[pymodule]
pub fn minicar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(idm_acceleration, m)?)?;
    m.add_function(wrap_pyfunction!(desired_gap, m)?)?;
    m.add_function(wrap_pyfunction!(escape_distance, m)?)?;
    m.add_function(wrap_pyfunction!(urgency_weight, m)?)?;
    m.add_function(wrap_pyfunction!(boosted_desired_speed, m)?)?;
    m.add_function(wrap_pyfunction!(track_polyline, m)?)?;
    Ok(())
}
