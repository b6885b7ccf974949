//! Python module `walkcoach`: live sessions, scripted walks, log replay and
//! the crossover-study statistics.
//!
//! Structured values cross the boundary as plain Python dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde_json::Value;
use walkcoach_core::engine::{EngineConfig, Services, SessionEngine};
use walkcoach_core::geo::{haversine_m as haversine, GeoPoint, PoiStore, StreetGraph};
use walkcoach_core::scheduler::Feedback;
use walkcoach_core::session::{parse_jsonl, verify_log, SessionId};
use walkcoach_core::simulator::{run_scenario_with, ScenarioScript};
use walkcoach_core::stats;
use walkcoach_core::telemetry::WalkTick;
use walkcoach_core::{Condition, UserProfile};

create_exception!(walkcoach, WalkcoachError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    WalkcoachError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

fn condition(s: &str) -> PyResult<Condition> {
    s.parse().map_err(err)
}

fn profile(obj: &Bound<'_, PyAny>) -> PyResult<UserProfile> {
    let p: UserProfile = from_py(obj)?;
    p.validate().map_err(err)?;
    Ok(p)
}

/// One live session. Times are seconds; ticks use walk time.
#[pyclass(unsendable, module = "walkcoach")]
struct Session {
    engine: SessionEngine,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (profile, condition, origin, seed = 0, pois = None, graph = None))]
    fn new(
        profile: &Bound<'_, PyAny>,
        condition: &str,
        origin: (f64, f64),
        seed: u64,
        pois: Option<PathBuf>,
        graph: Option<PathBuf>,
    ) -> PyResult<Self> {
        let mut services = Services::default();
        if let Some(p) = pois {
            services.store = Arc::new(PoiStore::load(p).map_err(err)?);
        }
        if let Some(g) = graph {
            services.routing = Arc::new(StreetGraph::load(g).map_err(err)?);
        }
        let origin = GeoPoint::new(origin.0, origin.1).map_err(err)?;
        let engine = SessionEngine::new(
            self::profile(profile)?,
            self::condition(condition)?,
            services,
            EngineConfig::new(origin).with_seed(seed),
        )
        .map_err(err)?;
        Ok(Self { engine })
    }

    #[getter]
    fn session_id(&self) -> String {
        self.engine.state().session_id.to_string()
    }

    #[getter]
    fn phase(&self) -> String {
        self.engine.state().phase.to_string()
    }

    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.state().stats)
    }

    fn pending_prompts(&self) -> Vec<String> {
        self.engine.state().pending_prompt_ids()
    }

    fn chat<'py>(&mut self, py: Python<'py>, t: f64, text: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.chat(t, text).map_err(err)?)
    }

    fn confirm_route<'py>(&mut self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.confirm_route(t).map_err(err)?)
    }

    fn start<'py>(&mut self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.start_walk(t).map_err(err)?)
    }

    #[pyo3(signature = (t, lat, lon, flags = Vec::new()))]
    fn tick<'py>(&mut self, py: Python<'py>, t: f64, lat: f64, lon: f64, flags: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let tick: WalkTick =
            serde_json::from_value(serde_json::json!({"t": t, "lat": lat, "lon": lon, "flags": flags})).map_err(err)?;
        to_py(py, &self.engine.ingest_tick(&tick).map_err(err)?)
    }

    fn feedback<'py>(&mut self, py: Python<'py>, t: f64, prompt_id: &str, feedback: &str) -> PyResult<Bound<'py, PyAny>> {
        let fb: Feedback = serde_json::from_value(Value::String(feedback.to_ascii_lowercase())).map_err(err)?;
        to_py(py, &self.engine.feedback(t, prompt_id, fb).map_err(err)?)
    }

    /// Returns the walk summary.
    fn finish<'py>(&mut self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyAny>> {
        let (_, summary) = self.engine.finish(t).map_err(err)?;
        to_py(py, &summary)
    }

    fn close<'py>(&mut self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.close(t).map_err(err)?)
    }

    /// The event log as JSONL.
    fn log(&self) -> String {
        self.engine.state().to_jsonl()
    }
}

/// Run a scenario file and return its JSONL log.
#[pyfunction]
#[pyo3(signature = (scenario, profile, condition, seed = None))]
fn simulate(scenario: PathBuf, profile: &Bound<'_, PyAny>, condition: &str, seed: Option<u64>) -> PyResult<String> {
    let mut script = ScenarioScript::load(&scenario).map_err(err)?;
    if let Some(s) = seed {
        script.seed = s;
    }
    let mut services = Services::default();
    if let Some(f) = &script.pois {
        let path = script.base_dir.as_ref().map(|d| d.join(f)).unwrap_or_else(|| f.into());
        services.store = Arc::new(PoiStore::load(path).map_err(err)?);
    }
    let run = run_scenario_with(&script, &self::profile(profile)?, self::condition(condition)?, services).map_err(err)?;
    Ok(run.jsonl)
}

/// Rebuild a session from JSONL and verify its recorded stats.
#[pyfunction]
#[pyo3(signature = (jsonl, profile, condition, session_id = None))]
fn replay<'py>(
    py: Python<'py>,
    jsonl: &str,
    profile: &Bound<'py, PyAny>,
    condition: &str,
    session_id: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let events = parse_jsonl(jsonl).map_err(err)?;
    let id = SessionId::from(session_id.unwrap_or_else(|| "replay".into()));
    let state = verify_log(id, self::profile(profile)?, self::condition(condition)?, events).map_err(err)?;
    to_py(py, &state.stats)
}

fn records(csv_text: &str) -> PyResult<Vec<stats::QuestionnaireRecord>> {
    stats::read_responses(csv_text.as_bytes()).map_err(err)
}

fn construct(name: &str) -> PyResult<stats::CompositeSpec> {
    stats::CompositeSpec::by_name(name).ok_or_else(|| err(format!("unknown construct `{name}`")))
}

/// Mixed-model report for one composite. `text=True` gives the table.
#[pyfunction]
#[pyo3(signature = (csv_text, outcome = "positive_feelings", text = false))]
fn analyze<'py>(py: Python<'py>, csv_text: &str, outcome: &str, text: bool) -> PyResult<Bound<'py, PyAny>> {
    let report = stats::analyze(&records(csv_text)?, &construct(outcome)?).map_err(err)?;
    if text {
        Ok(report.to_string().into_pyobject(py)?.into_any())
    } else {
        to_py(py, &report)
    }
}

#[pyfunction]
#[pyo3(signature = (csv_text, construct_name = "positive_feelings"))]
fn reliability<'py>(py: Python<'py>, csv_text: &str, construct_name: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stats::reliability(&records(csv_text)?, &construct(construct_name)?).map_err(err)?)
}

/// Alpha of an observations x items matrix.
#[pyfunction]
fn cronbach_alpha(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    stats::cronbach_alpha(&matrix).map_err(err)
}

#[pyfunction]
fn standardized_alpha(k: usize, mean_r: f64) -> PyResult<f64> {
    stats::standardized_alpha(k, mean_r).map_err(err)
}

#[pyfunction]
fn marginal_effect(beta_info_only: f64, beta_interaction: f64) -> f64 {
    stats::marginal_effect_from(beta_info_only, beta_interaction)
}

/// Fit the crossover model to raw observations.
#[pyfunction]
fn fit_lmm<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    participant: Vec<String>,
    condition: Vec<String>,
    sequence: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let n = y.len();
    if participant.len() != n || condition.len() != n || sequence.len() != n {
        return Err(err("y, participant, condition and sequence must have equal length"));
    }
    let mut data = stats::LmmData::default();
    for i in 0..n {
        let seq: stats::Sequence = sequence[i].parse().map_err(err)?;
        data.push(y[i], participant[i].clone(), self::condition(&condition[i])?, seq);
    }
    to_py(py, &stats::fit_lmm_reml(&data).map_err(err)?)
}

#[pyfunction]
fn haversine_m(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    Ok(haversine(GeoPoint::new(a.0, a.1).map_err(err)?, GeoPoint::new(b.0, b.1).map_err(err)?))
}

#[pymodule]
fn walkcoach(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WalkcoachError", m.py().get_type::<WalkcoachError>())?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(reliability, m)?)?;
    m.add_function(wrap_pyfunction!(cronbach_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(standardized_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_effect, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lmm, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    Ok(())
}
