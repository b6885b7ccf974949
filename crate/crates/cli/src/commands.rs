//! Headless commands: scenario simulation, log replay, questionnaire
//! analysis, dataset synthesis and the HTTP service.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkcoach_core::engine::{AgentBackends, Services};
use walkcoach_core::geo::{GeoPoint, PoiStore, StreetGraph};
use walkcoach_core::session::{parse_jsonl, trigger_outcomes, verify_log, Outcome, SessionId, WalkStats};
use walkcoach_core::simulator::{run_scenario_with, ScenarioScript};
use walkcoach_core::stats::{
    analyze, read_responses, reliability, synthesize_responses, write_responses, AnalysisReport, CompositeSpec,
    CrossoverParams, ReliabilityReport,
};
use walkcoach_core::{Condition, UserProfile};

use crate::api::{router, AppConfig, AppState};
use crate::backend::HttpBackend;
use crate::error::CliError;

/// Sidecar written next to every log so it can be replayed on its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogMeta {
    pub session_id: String,
    pub profile: UserProfile,
    pub condition: Condition,
}

pub fn meta_path(log: &Path) -> PathBuf {
    log.with_extension("meta.json")
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_profile(path: &Path) -> Result<UserProfile, CliError> {
    let p: UserProfile = read_json(path)?;
    p.validate().map_err(walkcoach_core::Error::from)?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// simulate / replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub session_id: String,
    pub events: usize,
    pub delivered: usize,
    pub suppressed: usize,
    pub stats: WalkStats,
}

/// Run a scenario headlessly. The log goes to `out` when given.
pub fn simulate(
    scenario: &Path,
    profile: &UserProfile,
    condition: Condition,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(SimulationReport, String), CliError> {
    let mut script = ScenarioScript::load(scenario).map_err(walkcoach_core::Error::from)?;
    if let Some(seed) = seed {
        script.seed = seed;
    }
    let mut services = Services::default();
    if let Some(f) = &script.pois {
        let path = match &script.base_dir {
            Some(dir) => dir.join(f),
            None => PathBuf::from(f),
        };
        services.store = Arc::new(PoiStore::load(path).map_err(walkcoach_core::Error::from)?);
    }
    let run = run_scenario_with(&script, profile, condition, services).map_err(walkcoach_core::Error::from)?;
    let outcomes = trigger_outcomes(&run.state.event_log);
    let delivered = outcomes
        .iter()
        .filter(|o| matches!(o.outcome, Some(Outcome::Delivered { .. })))
        .count();
    let report = SimulationReport {
        session_id: run.state.session_id.to_string(),
        events: run.state.event_log.len(),
        delivered,
        suppressed: outcomes.len() - delivered,
        stats: run.state.stats.clone(),
    };
    if let Some(out) = out {
        write_text(out, &run.jsonl)?;
        let meta = LogMeta {
            session_id: report.session_id.clone(),
            profile: profile.clone(),
            condition,
        };
        write_text(&meta_path(out), &serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    }
    Ok((report, run.jsonl))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub events: usize,
    pub phase: String,
    pub stats: WalkStats,
}

/// Rebuild a session from its log and check it against the recorded summary.
/// Profile and condition come from the sidecar unless given.
pub fn replay(log: &Path, profile: Option<UserProfile>, condition: Option<Condition>) -> Result<ReplayReport, CliError> {
    let events = parse_jsonl(&read_text(log)?)?;
    let meta_file = meta_path(log);
    let meta: Option<LogMeta> = if meta_file.exists() { Some(read_json(&meta_file)?) } else { None };
    let id = meta
        .as_ref()
        .map(|m| SessionId::from(m.session_id.clone()))
        .unwrap_or_else(|| SessionId::from(log.file_stem().unwrap_or_default().to_string_lossy().into_owned()));
    let profile = profile
        .or_else(|| meta.as_ref().map(|m| m.profile.clone()))
        .ok_or_else(|| CliError::Usage(format!("no profile given and no {} found", meta_file.display())))?;
    let condition = condition
        .or_else(|| meta.as_ref().map(|m| m.condition))
        .ok_or_else(|| CliError::Usage(format!("no condition given and no {} found", meta_file.display())))?;
    let state = verify_log(id, profile, condition, events)?;
    Ok(ReplayReport {
        session_id: state.session_id.to_string(),
        events: state.event_log.len(),
        phase: state.phase.to_string(),
        stats: state.stats,
    })
}

// ---------------------------------------------------------------------------
// analyze / reliability / synthesize
// ---------------------------------------------------------------------------

fn construct(name: &str) -> Result<CompositeSpec, CliError> {
    CompositeSpec::by_name(name).ok_or_else(|| {
        CliError::Usage(format!("unknown construct `{name}` (expected positive_feelings or usage_experience)"))
    })
}

fn load_responses(path: &Path) -> Result<Vec<walkcoach_core::stats::QuestionnaireRecord>, CliError> {
    let f = fs::File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(read_responses(f)?)
}

pub fn analyze_file(path: &Path, outcome: &str) -> Result<AnalysisReport, CliError> {
    Ok(analyze(&load_responses(path)?, &construct(outcome)?)?)
}

pub fn reliability_file(path: &Path, name: &str) -> Result<ReliabilityReport, CliError> {
    Ok(reliability(&load_responses(path)?, &construct(name)?)?)
}

pub const PF_PARAMS: CrossoverParams = CrossoverParams {
    beta: [5.417, -0.806, 0.889, -0.444],
    var_intercept: 0.059,
    var_residual: 0.134,
};

pub const UX_PARAMS: CrossoverParams = CrossoverParams {
    beta: [5.278, -0.583, 0.944, -0.444],
    var_intercept: 0.019,
    var_residual: 0.142,
};

pub const ITEM_SD: f64 = 0.6;

/// Questionnaire CSV drawn from the fixed generating parameters.
pub fn synthesize(participants: usize, seed: u64) -> Result<String, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = synthesize_responses(participants, &PF_PARAMS, &UX_PARAMS, ITEM_SD, &mut rng)?;
    Ok(write_responses(&records)?)
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub addr: Option<SocketAddr>,
    pub graph: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub origin: Option<GeoPoint>,
}

/// Services from the configured graph, POI file and generation backend.
pub fn build_services(opts: &ServeOptions) -> Result<Services, CliError> {
    let mut services = Services::default();
    if let Some(p) = &opts.pois {
        services.store = Arc::new(PoiStore::load(p).map_err(walkcoach_core::Error::from)?);
    }
    if let Some(g) = &opts.graph {
        services.routing = Arc::new(StreetGraph::load(g).map_err(walkcoach_core::Error::from)?);
    }
    if let Some(http) = HttpBackend::from_env().map_err(CliError::Usage)? {
        services.backends = AgentBackends::uniform(Arc::new(http));
    }
    Ok(services)
}

pub async fn serve(opts: ServeOptions) -> Result<(), CliError> {
    let services = build_services(&opts)?;
    let state = AppState::new(
        services,
        AppConfig {
            data_dir: opts.data_dir.clone(),
            default_origin: opts.origin,
        },
    );
    let addr = opts.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| CliError::Io {
        path: addr.to_string(),
        source,
    })?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| CliError::Io {
            path: addr.to_string(),
            source,
        })
}
