//! Scripted walks: turns a scenario (route plus pace phases) into a tick
//! trace and plays it through a full session.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, SessionEngine, Services};
use crate::error::ValidationError;
use crate::geo::{destination, GeoError, GeoPoint, PoiStore, RoutePlan};
use crate::profile::{Condition, UserProfile};
use crate::scheduler::Feedback;
use crate::session::{EventBody, SessionId, SessionState};
use crate::telemetry::{ContextFlags, WalkTick};

pub const DEFAULT_TICK_INTERVAL_S: f64 = 2.0;
/// Upper bound of the lateral positional jitter.
pub const JITTER_BOUND_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario route: {0}")]
    Geo(#[from] GeoError),
    #[error("{context}: {source}")]
    Step {
        context: String,
        #[source]
        source: Box<crate::Error>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPhase {
    pub duration_s: f64,
    pub pace_mps: f64,
    #[serde(default)]
    pub flags: ContextFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub bearing_deg: f64,
    pub length_m: f64,
}

/// Either an explicit `polyline` of `[lat, lon]` pairs or an `origin` plus
/// straight `legs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InlineRoute {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polyline: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub legs: Vec<Leg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RouteSpec {
    /// Path to a JSON file holding an [`InlineRoute`], relative to the scenario.
    File(String),
    Inline(InlineRoute),
}

impl InlineRoute {
    pub fn build(&self) -> Result<RoutePlan, ScenarioError> {
        let mut points = Vec::new();
        if !self.polyline.is_empty() {
            if self.origin.is_some() || !self.legs.is_empty() {
                return Err(ValidationError::new("route gives both a polyline and legs").into());
            }
            for &[lat, lon] in &self.polyline {
                points.push(GeoPoint::new(lat, lon)?);
            }
        } else {
            let [lat, lon] = self
                .origin
                .ok_or_else(|| ValidationError::new("route needs a polyline or an origin with legs"))?;
            let mut here = GeoPoint::new(lat, lon)?;
            points.push(here);
            for leg in &self.legs {
                if !(leg.length_m > 0.0) || !leg.length_m.is_finite() || !leg.bearing_deg.is_finite() {
                    return Err(ValidationError::new(format!("invalid leg {leg:?}")).into());
                }
                here = destination(here, leg.bearing_deg, leg.length_m);
                points.push(here);
            }
        }
        Ok(RoutePlan::from_polyline(points, Vec::new())?)
    }
}

impl RouteSpec {
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<RoutePlan, ScenarioError> {
        match self {
            RouteSpec::Inline(r) => r.build(),
            RouteSpec::File(f) => {
                let path = resolve_path(base_dir, f);
                let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })?;
                let inline: InlineRoute = serde_json::from_str(&text)?;
                inline.build()
            }
        }
    }
}

fn resolve_path(base_dir: Option<&Path>, f: &str) -> PathBuf {
    match base_dir {
        Some(b) if Path::new(f).is_relative() => b.join(f),
        _ => PathBuf::from(f),
    }
}

fn default_interval() -> f64 {
    DEFAULT_TICK_INTERVAL_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    pub route: RouteSpec,
    #[serde(default = "default_interval")]
    pub tick_interval_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub phases: Vec<ScenarioPhase>,
    /// Optional POI file used for in-walk suggestions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pois: Option<String>,
    /// Responses given, in rotation, to each delivered prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<Feedback>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioScript {
    pub fn new(route: InlineRoute, phases: Vec<ScenarioPhase>) -> Self {
        Self {
            name: String::new(),
            route: RouteSpec::Inline(route),
            tick_interval_s: DEFAULT_TICK_INTERVAL_S,
            seed: 0,
            phases,
            pois: None,
            feedback: Vec::new(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.tick_interval_s > 0.0) || !self.tick_interval_s.is_finite() {
            return Err(ValidationError::new(format!(
                "tick_interval_s must be positive, got {}",
                self.tick_interval_s
            )));
        }
        if self.phases.is_empty() {
            return Err(ValidationError::new("scenario has no phases"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.pace_mps >= 0.0) || !p.pace_mps.is_finite() {
                return Err(ValidationError::new(format!("phase {i}: pace must be >= 0, got {}", p.pace_mps)));
            }
            if !(p.duration_s >= 0.0) || !p.duration_s.is_finite() {
                return Err(ValidationError::new(format!(
                    "phase {i}: duration must be >= 0, got {}",
                    p.duration_s
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    /// Distance covered after `t` seconds of script time.
    pub fn offset_at(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let mut offset = 0.0;
        for p in &self.phases {
            let dt = (t - start).clamp(0.0, p.duration_s);
            offset += p.pace_mps * dt;
            start += p.duration_s;
        }
        offset
    }

    /// The phase active at `t`; phases own the half-open interval (start, end].
    pub fn phase_at(&self, t: f64) -> &ScenarioPhase {
        let mut end = 0.0;
        for p in &self.phases {
            end += p.duration_s;
            if t <= end {
                return p;
            }
        }
        self.phases.last().expect("validated non-empty")
    }

    pub fn resolve_route(&self) -> Result<RoutePlan, ScenarioError> {
        self.route.resolve(self.base_dir.as_deref())
    }
}

/// Smooth lateral wobble: two seeded sinusoids whose amplitudes sum to at
/// most [`JITTER_BOUND_M`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    amp: [f64; 2],
    period: [f64; 2],
    phase: [f64; 2],
}

impl Jitter {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            amp: [rng.random_range(0.5..2.0), rng.random_range(0.0..1.0)],
            period: [rng.random_range(60.0..120.0), rng.random_range(60.0..120.0)],
            phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        (0..2)
            .map(|i| self.amp[i] * (TAU * t / self.period[i] + self.phase[i]).sin())
            .sum()
    }
}

/// Ticks at `k × interval` (k ≥ 1) until the script or the route ends.
pub fn generate_trace(scenario: &ScenarioScript, route: &RoutePlan) -> Result<Vec<WalkTick>, ScenarioError> {
    scenario.validate()?;
    if route.segments.is_empty() {
        return Err(ValidationError::new("route must be segmented before simulation").into());
    }
    let jitter = Jitter::new(scenario.seed);
    let total_t = scenario.total_duration_s();
    let length = route.total_length_m;
    let mut ticks = Vec::new();
    let mut k: u64 = 1;
    loop {
        let t = k as f64 * scenario.tick_interval_s;
        if t > total_t + 1e-9 {
            break;
        }
        let offset = scenario.offset_at(t).min(length);
        let on_route = route.point_at(offset);
        let lateral = jitter.at(t);
        let p = destination(on_route, route.bearing_at(offset) + 90.0, lateral);
        ticks.push(WalkTick {
            t,
            location: p,
            flags: scenario.phase_at(t).flags.clone(),
        });
        if offset >= length {
            break;
        }
        k += 1;
    }
    Ok(ticks)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub state: SessionState,
    pub jsonl: String,
}

pub fn run_scenario(scenario: &ScenarioScript, profile: &UserProfile, condition: Condition) -> Result<ScenarioRun, ScenarioError> {
    let mut services = Services::default();
    if let Some(f) = &scenario.pois {
        let path = resolve_path(scenario.base_dir.as_deref(), f);
        services.store = Arc::new(PoiStore::load(path)?);
    }
    run_scenario_with(scenario, profile, condition, services)
}

pub fn run_scenario_with(
    scenario: &ScenarioScript,
    profile: &UserProfile,
    condition: Condition,
    services: Services,
) -> Result<ScenarioRun, ScenarioError> {
    scenario.validate()?;
    let step = |context: String| move |e: crate::Error| ScenarioError::Step {
        context,
        source: Box::new(e),
    };
    let route = scenario.resolve_route()?;
    let config = EngineConfig::new(route.polyline[0]).with_seed(scenario.seed);
    let mut engine = SessionEngine::with_id(SessionId::from_seed(scenario.seed), profile.clone(), condition, services, config)
        .map_err(step("session setup".into()))?;
    engine.confirm_custom_route(0.0, route).map_err(step("route confirmation".into()))?;
    engine.start_walk(0.0).map_err(step("walk start".into()))?;

    let trace = generate_trace(scenario, engine.state().route.as_ref().expect("confirmed"))?;
    let mut delivered = 0usize;
    for (i, tick) in trace.iter().enumerate() {
        let events = engine
            .ingest_tick(tick)
            .map_err(step(format!("tick {i} (t={} s, phase {})", tick.t, phase_index(scenario, tick.t))))?;
        if scenario.feedback.is_empty() {
            continue;
        }
        for e in events {
            if let EventBody::PromptDelivered(p) = e.body {
                let fb = scenario.feedback[delivered % scenario.feedback.len()];
                delivered += 1;
                engine
                    .feedback(e.t, &p.prompt_id, fb)
                    .map_err(step(format!("feedback on {}", p.prompt_id)))?;
            }
        }
    }
    let end = engine.state().last_t();
    engine.finish(end).map_err(step("summary".into()))?;
    engine.close(end).map_err(step("close".into()))?;
    let state = engine.into_state();
    let jsonl = state.to_jsonl();
    Ok(ScenarioRun { state, jsonl })
}

fn phase_index(scenario: &ScenarioScript, t: f64) -> usize {
    let mut end = 0.0;
    for (i, p) in scenario.phases.iter().enumerate() {
        end += p.duration_s;
        if t <= end {
            return i;
        }
    }
    scenario.phases.len().saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_m, nearest_on_route, segment_route};
    use crate::profile::FrequencyPref;

    fn straight(length: f64) -> InlineRoute {
        InlineRoute {
            origin: Some([31.27, 120.74]),
            legs: vec![Leg {
                bearing_deg: 0.0,
                length_m: length,
            }],
            ..Default::default()
        }
    }

    fn phase(duration_s: f64, pace_mps: f64) -> ScenarioPhase {
        ScenarioPhase {
            duration_s,
            pace_mps,
            flags: ContextFlags::new(),
        }
    }

    fn route_of(s: &ScenarioScript) -> RoutePlan {
        segment_route(s.resolve_route().unwrap(), FrequencyPref::Medium)
    }

    #[test]
    fn single_phase_kinematics() {
        let s = ScenarioScript::new(straight(1000.0), vec![phase(600.0, 1.0)]);
        let route = route_of(&s);
        let ticks = generate_trace(&s, &route).unwrap();
        assert_eq!(ticks.len(), 300);
        let (off, _) = nearest_on_route(&route, ticks.last().unwrap().location, 590.0);
        assert!((off - 600.0).abs() < 0.5, "{off}");
    }

    #[test]
    fn stop_phase_keeps_offset() {
        let s = ScenarioScript::new(straight(1000.0), vec![phase(100.0, 1.0), phase(120.0, 0.0)]);
        let route = route_of(&s);
        let ticks = generate_trace(&s, &route).unwrap();
        for tick in ticks.iter().filter(|t| t.t > 100.0) {
            let (off, _) = nearest_on_route(&route, tick.location, 90.0);
            assert!((off - 100.0).abs() < 1e-3, "{off}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let mut s = ScenarioScript::new(straight(1000.0), vec![phase(300.0, 1.3)]);
        let route = route_of(&s);
        let a = generate_trace(&s, &route).unwrap();
        assert_eq!(a, generate_trace(&s, &route).unwrap());
        s.seed = 99;
        assert_ne!(a, generate_trace(&s, &route).unwrap());
    }

    #[test]
    fn negative_pace_is_rejected() {
        let s = ScenarioScript::new(straight(1000.0), vec![phase(10.0, -1.0)]);
        let route = route_of(&s);
        assert!(matches!(generate_trace(&s, &route), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn playback_stops_at_route_end() {
        let s = ScenarioScript::new(straight(500.0), vec![phase(1000.0, 1.4)]);
        let route = route_of(&s);
        let ticks = generate_trace(&s, &route).unwrap();
        let last = ticks.last().unwrap();
        assert_eq!(last.t, 358.0);
        let (off, _) = nearest_on_route(&route, last.location, 480.0);
        assert!((off - 500.0).abs() < 1e-6);
    }

    #[test]
    fn jitter_is_bounded() {
        for seed in 0..50 {
            let j = Jitter::new(seed);
            for i in 0..600 {
                assert!(j.at(i as f64 * 0.7).abs() <= JITTER_BOUND_M);
            }
        }
    }

    #[test]
    fn jitter_stays_lateral() {
        let s = ScenarioScript::new(straight(1000.0), vec![phase(300.0, 1.0)]);
        let route = route_of(&s);
        for tick in generate_trace(&s, &route).unwrap() {
            let on = route.point_at(tick.t);
            assert!(haversine_m(on, tick.location) <= JITTER_BOUND_M + 1e-6);
        }
    }

    #[test]
    fn scenario_json_schema() {
        let text = r#"{
            "route": {"polyline": [[31.27, 120.74], [31.28, 120.74]]},
            "seed": 7,
            "phases": [{"duration_s": 60, "pace_mps": 1.2, "flags": ["crossing"]}]
        }"#;
        let s = ScenarioScript::from_json(text).unwrap();
        assert_eq!(s.tick_interval_s, 2.0);
        assert_eq!(s.seed, 7);
        assert_eq!(s.phases[0].flags.len(), 1);
        assert!(s.resolve_route().unwrap().total_length_m > 1000.0);
        assert!(ScenarioScript::from_json(r#"{"route": "r.json", "phases": []}"#).is_err());
    }

    #[test]
    fn route_file_is_relative_to_scenario() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r.json"), serde_json::to_string(&straight(800.0)).unwrap()).unwrap();
        let sc = dir.path().join("s.json");
        std::fs::write(&sc, r#"{"route": "r.json", "phases": [{"duration_s": 10, "pace_mps": 1}]}"#).unwrap();
        let s = ScenarioScript::load(&sc).unwrap();
        assert_eq!(s.name, "s");
        assert!((s.resolve_route().unwrap().total_length_m - 800.0).abs() < 1e-6);
    }

    #[test]
    fn run_produces_closed_session() {
        let s = ScenarioScript::new(straight(1000.0), vec![phase(800.0, 1.4)]);
        let run = run_scenario(&s, &UserProfile::new("P1"), Condition::InfoOnly).unwrap();
        assert_eq!(run.state.phase, crate::session::Phase::Closed);
        assert!(run.state.stats.goal_attained);
        assert_eq!(run.jsonl.lines().count(), run.state.event_log.len());
    }
}
