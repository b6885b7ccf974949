//! The bridging agent and the three functional agents (geography,
//! accompaniment, summary) over a pluggable text-generation backend.
//!
//! Agents never talk to each other. Each one reads what it needs from the
//! session (or from a snapshot built from it) and its output is logged back
//! as events by the engine.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{haversine_m, plan_route, GeoError, GeoPoint, Poi, PoiProvider, PoiSource, PoiStore, RoutePlan, StreetGraph};
use crate::profile::{Condition, UserProfile};
use crate::scheduler::{PromptKind, PromptRequest};
use crate::session::{Event, EventBody, Phase, SessionState, WalkStats};
use crate::telemetry::TriggerKind;

pub const SHORTLIST_CAP: usize = 5;
pub const DEFAULT_SEARCH_RADIUS_M: f64 = 1500.0;

const DEFAULT_TABLE: &str = include_str!("../data/intents.json");
const FALLBACK_ENCOURAGEMENT: &str = "You're doing great{name_suffix}.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("session error: session is closed")]
    SessionClosed,
    #[error("planning error: {0}")]
    Planning(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("invalid intent table: {0}")]
    Table(String),
}

// ---------------------------------------------------------------------------
// Action tokens
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionToken {
    pub domain: String,
    pub action: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl ActionToken {
    pub fn new(domain: impl Into<String>, action: impl Into<String>) -> Self {
        Self {
            domain: domain.into(),
            action: action.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    /// Canonical text; keys in sorted order, values quoted only when needed.
    pub fn render(&self) -> String {
        let mut out = format!("{}.{}", self.domain, self.action);
        for (k, v) in &self.args {
            out.push(' ');
            out.push_str(k);
            out.push('=');
            if needs_quotes(v) {
                out.push('"');
                for c in v.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
            } else {
                out.push_str(v);
            }
        }
        out
    }
}

impl fmt::Display for ActionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn needs_quotes(v: &str) -> bool {
    v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\')
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '_'
}

fn is_key_char(c: char, first: bool) -> bool {
    c.is_ascii_lowercase() || c == '_' || (!first && c.is_ascii_digit())
}

/// Parse `domain.action key=value …`. Values may be double-quoted with `\"`
/// and `\\` escapes. Positions in errors are character offsets.
pub fn parse_action_token(text: &str) -> Result<ActionToken, AgentError> {
    let chars: Vec<char> = text.chars().collect();
    let err = |position: usize, message: &str| AgentError::Parse {
        position,
        message: message.to_string(),
    };
    let mut i = 0;

    let ident = |i: &mut usize, what: &str| -> Result<String, AgentError> {
        let start = *i;
        while *i < chars.len() && is_ident_char(chars[*i]) {
            *i += 1;
        }
        if *i == start {
            return Err(err(start, &format!("expected lowercase {what}")));
        }
        Ok(chars[start..*i].iter().collect())
    };

    let domain = ident(&mut i, "domain")?;
    if i >= chars.len() || chars[i] != '.' {
        return Err(err(i, "expected `.` after domain"));
    }
    i += 1;
    let action = ident(&mut i, "action")?;
    let mut args = BTreeMap::new();

    while i < chars.len() {
        if chars[i] != ' ' {
            return Err(err(i, "expected space before argument"));
        }
        while i < chars.len() && chars[i] == ' ' {
            i += 1;
        }
        if i == chars.len() {
            return Err(err(i, "trailing whitespace"));
        }
        let key_start = i;
        while i < chars.len() && is_key_char(chars[i], i == key_start) {
            i += 1;
        }
        if i == key_start {
            return Err(err(i, "expected argument key"));
        }
        let key: String = chars[key_start..i].iter().collect();
        if i >= chars.len() || chars[i] != '=' {
            return Err(err(i, "expected `=` after key"));
        }
        i += 1;
        let value = if i < chars.len() && chars[i] == '"' {
            let open = i;
            i += 1;
            let mut v = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err(open, "unterminated quoted value")),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => match chars.get(i + 1) {
                        Some(&c @ ('"' | '\\')) => {
                            v.push(c);
                            i += 2;
                        }
                        _ => return Err(err(i, "invalid escape")),
                    },
                    Some(&c) => {
                        v.push(c);
                        i += 1;
                    }
                }
            }
            if i < chars.len() && chars[i] != ' ' {
                return Err(err(i, "expected space after quoted value"));
            }
            v
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                if chars[i] == '"' || chars[i] == '\\' {
                    return Err(err(i, "quote or backslash in unquoted value"));
                }
                i += 1;
            }
            if i == start {
                return Err(err(i, "empty value"));
            }
            if i < chars.len() && chars[i] != ' ' {
                return Err(err(i, "unexpected whitespace"));
            }
            chars[start..i].iter().collect()
        };
        if args.insert(key, value).is_some() {
            return Err(err(key_start, "duplicate key"));
        }
    }
    Ok(ActionToken { domain, action, args })
}

// ---------------------------------------------------------------------------
// Intent table and generation backends
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Bridge,
    Geography,
    Accompany,
    Summary,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Bridge => "bridge",
            AgentRole::Geography => "geography",
            AgentRole::Accompany => "accompany",
            AgentRole::Summary => "summary",
        }
    }

    pub fn for_phase(phase: Phase) -> Option<AgentRole> {
        match phase {
            Phase::Planning => Some(AgentRole::Geography),
            Phase::Walking => Some(AgentRole::Accompany),
            Phase::Summary => Some(AgentRole::Summary),
            Phase::Closed => None,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRule {
    pub phase: Phase,
    pub keywords: Vec<String>,
    pub intent: String,
    pub token: String,
}

/// Keyword-driven intent classification plus response templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentTable {
    pub version: u32,
    /// Canonical tag -> keywords that imply it.
    pub tags: BTreeMap<String, Vec<String>>,
    pub rules: Vec<IntentRule>,
    pub encouragement_lexicon: Vec<String>,
    /// `role.intent` -> condition key (`info-only`, `info-motive` or `*`) -> variants.
    pub templates: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl IntentTable {
    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let table: IntentTable = serde_json::from_str(text).map_err(|e| AgentError::Table(e.to_string()))?;
        for rule in &table.rules {
            parse_action_token(&rule.token)?;
        }
        for phase in [Phase::Planning, Phase::Walking, Phase::Summary] {
            if !table.rules.iter().any(|r| r.phase == phase && r.keywords.is_empty()) {
                return Err(AgentError::Table(format!("no default rule for phase {phase}")));
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Table(e.to_string()))?;
        Self::from_json(&text)
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static IntentTable {
        static TABLE: OnceLock<IntentTable> = OnceLock::new();
        TABLE.get_or_init(|| IntentTable::from_json(DEFAULT_TABLE).expect("shipped intent table is valid"))
    }

    /// First matching rule for the phase; rules without keywords match anything.
    pub fn classify(&self, phase: Phase, message: &str) -> Option<&IntentRule> {
        let text = normalize(message);
        self.rules
            .iter()
            .filter(|r| r.phase == phase)
            .find(|r| r.keywords.is_empty() || r.keywords.iter().any(|k| text.contains(&normalize(k))))
    }

    /// Canonical tags mentioned in the message, in table order.
    pub fn extract_tags(&self, message: &str) -> Vec<String> {
        let text = normalize(message);
        self.tags
            .iter()
            .filter(|(tag, kws)| text.contains(tag.as_str()) || kws.iter().any(|k| text.contains(&normalize(k))))
            .map(|(tag, _)| tag.clone())
            .collect()
    }

    pub fn contains_encouragement(&self, text: &str) -> bool {
        let text = normalize(text);
        self.encouragement_lexicon.iter().any(|e| text.contains(&normalize(e)))
    }
}

pub fn encouragement_lexicon() -> &'static [String] {
    &IntentTable::builtin().encouragement_lexicon
}

/// Lowercase and strip common Latin diacritics.
pub fn normalize(text: &str) -> String {
    text.chars()
        .flat_map(char::to_lowercase)
        .map(|c| match c {
            'à' | 'á' | 'â' | 'ä' | 'ã' | 'å' => 'a',
            'è' | 'é' | 'ê' | 'ë' => 'e',
            'ì' | 'í' | 'î' | 'ï' => 'i',
            'ò' | 'ó' | 'ô' | 'ö' | 'õ' => 'o',
            'ù' | 'ú' | 'û' | 'ü' => 'u',
            'ç' => 'c',
            'ñ' => 'n',
            '\u{2019}' => '\'',
            c => c,
        })
        .collect()
}

pub trait GenerationBackend: Send + Sync {
    fn generate(
        &self,
        role: AgentRole,
        intent: &str,
        context: &Value,
        condition: Condition,
        seed: u64,
    ) -> Result<String, AgentError>;
}

/// Deterministic template filling driven by an [`IntentTable`].
#[derive(Debug, Clone)]
pub struct TemplateBackend {
    table: IntentTable,
}

impl Default for TemplateBackend {
    fn default() -> Self {
        Self {
            table: IntentTable::builtin().clone(),
        }
    }
}

impl TemplateBackend {
    pub fn new(table: IntentTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &IntentTable {
        &self.table
    }
}

impl GenerationBackend for TemplateBackend {
    fn generate(
        &self,
        role: AgentRole,
        intent: &str,
        context: &Value,
        condition: Condition,
        seed: u64,
    ) -> Result<String, AgentError> {
        let key = format!("{role}.{intent}");
        let variants = self
            .table
            .templates
            .get(&key)
            .and_then(|m| m.get(condition.as_str()).or_else(|| m.get("*")))
            .filter(|v| !v.is_empty())
            .ok_or_else(|| AgentError::Backend(format!("no template for `{key}`")))?;
        let template = &variants[(seed % variants.len() as u64) as usize];
        fill_template(template, context)
    }
}

/// Backend that always fails; stands in for an unreachable live model.
#[derive(Debug, Clone, Default)]
pub struct UnavailableBackend;

impl GenerationBackend for UnavailableBackend {
    fn generate(&self, _: AgentRole, _: &str, _: &Value, _: Condition, _: u64) -> Result<String, AgentError> {
        Err(AgentError::Backend("backend unavailable".into()))
    }
}

/// Replace `{field}` placeholders with values from a JSON object.
pub fn fill_template(template: &str, context: &Value) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| AgentError::Backend(format!("unclosed placeholder in `{template}`")))?;
        let name = &after[..close];
        let value = context
            .get(name)
            .ok_or_else(|| AgentError::Backend(format!("context lacks `{name}`")))?;
        match value {
            Value::String(s) => out.push_str(s),
            Value::Number(n) => out.push_str(&n.to_string()),
            Value::Bool(b) => out.push_str(if *b { "yes" } else { "no" }),
            other => out.push_str(&other.to_string()),
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Formatting helpers
// ---------------------------------------------------------------------------

/// Whole metres with thousands separators, e.g. `1,500 m`.
pub fn format_meters(m: f64) -> String {
    let n = m.max(0.0).round() as u64;
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out.push_str(" m");
    out
}

pub fn format_km(m: f64) -> String {
    format!("{:.1} km", m.max(0.0) / 1000.0)
}

pub fn format_minutes(s: f64) -> String {
    format!("{} min", (s.max(0.0) / 60.0).round() as u64)
}

fn format_distance(m: f64) -> String {
    if m >= 1000.0 {
        format_km(m)
    } else {
        format_meters(m)
    }
}

fn name_suffix(name: Option<&str>) -> String {
    match name {
        Some(n) if !n.trim().is_empty() => format!(", {}", n.trim()),
        _ => String::new(),
    }
}

// ---------------------------------------------------------------------------
// Bridging agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInvocation {
    pub agent: AgentRole,
    pub intent: String,
    pub token: ActionToken,
    pub reply: String,
}

/// Classify a user message to the agent owning the current phase.
pub fn bridge_route(
    user_msg: &str,
    state: &SessionState,
    table: &IntentTable,
    backend: &dyn GenerationBackend,
    seed: u64,
) -> Result<AgentInvocation, AgentError> {
    let agent = AgentRole::for_phase(state.phase).ok_or(AgentError::SessionClosed)?;
    let rule = table
        .classify(state.phase, user_msg)
        .ok_or_else(|| AgentError::Table(format!("no rule for phase {}", state.phase)))?;
    let mut token = parse_action_token(&rule.token)?;
    let tags = table.extract_tags(user_msg);
    if token.domain == "poi" && !tags.is_empty() {
        token.args.insert("tag".into(), tags.join(","));
    }
    if rule.intent == "route_plan" || rule.intent == "poi_detail" {
        let text = normalize(user_msg);
        if let Some(dest) = rule
            .keywords
            .iter()
            .find_map(|k| text.find(&normalize(k)).map(|at| text[at + normalize(k).len()..].trim().to_string()))
            .filter(|d| !d.is_empty())
        {
            token.args.insert("dest".into(), dest.trim_end_matches(['.', '!', '?']).to_string());
        }
    }
    let tag_phrase = if tags.is_empty() {
        String::new()
    } else {
        format!(" with {}", tags.join(" and "))
    };
    let ctx = json!({
        "message": user_msg,
        "phase": state.phase.to_string(),
        "tag_phrase": tag_phrase,
        "name_suffix": name_suffix(state.profile.display_name.as_deref()),
    });
    let reply = backend
        .generate(AgentRole::Bridge, &rule.intent, &ctx, state.condition, seed)
        .unwrap_or_else(|_| "One moment.".to_string());
    Ok(AgentInvocation {
        agent,
        intent: rule.intent.clone(),
        token,
        reply,
    })
}

// ---------------------------------------------------------------------------
// Geography agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub id: String,
    pub name: String,
    pub rationale: String,
}

/// Route construction delegated to an external or local router.
pub trait RoutingClient: Send + Sync {
    fn route(&self, origin: GeoPoint, waypoints: &[Poi]) -> Result<RoutePlan, GeoError>;
}

impl RoutingClient for StreetGraph {
    fn route(&self, origin: GeoPoint, waypoints: &[Poi]) -> Result<RoutePlan, GeoError> {
        plan_route(origin, waypoints, self)
    }
}

/// Joins origin and waypoints with straight legs; for deployments without a
/// street graph.
#[derive(Debug, Clone, Copy, Default)]
pub struct StraightLineRouter;

impl RoutingClient for StraightLineRouter {
    fn route(&self, origin: GeoPoint, waypoints: &[Poi]) -> Result<RoutePlan, GeoError> {
        if waypoints.is_empty() {
            return Err(GeoError::Planning("no waypoints to route through".into()));
        }
        let mut polyline = vec![origin];
        polyline.extend(waypoints.iter().map(|w| w.location));
        polyline.dedup();
        RoutePlan::from_polyline(polyline, waypoints.iter().map(|w| w.id.clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub message: String,
    pub token: ActionToken,
    pub origin: GeoPoint,
    pub radius_m: f64,
    /// POI ids to leave out (used for alternatives).
    pub exclude: Vec<String>,
}

impl PlanRequest {
    pub fn new(message: impl Into<String>, token: ActionToken, origin: GeoPoint) -> Self {
        Self {
            message: message.into(),
            token,
            origin,
            radius_m: DEFAULT_SEARCH_RADIUS_M,
            exclude: Vec::new(),
        }
    }

    fn query_tags(&self) -> Vec<String> {
        self.token
            .arg("tag")
            .map(|t| t.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default()
    }
}

pub fn preference_score(poi: &Poi, profile: &UserProfile) -> f64 {
    profile
        .interest_tags
        .iter()
        .filter(|it| poi.has_tag(&it.tag))
        .map(|it| it.weight)
        .sum()
}

/// Greedy nearest-neighbour visiting order from the origin.
pub fn order_waypoints(origin: GeoPoint, mut pois: Vec<Poi>) -> Vec<Poi> {
    let mut ordered = Vec::with_capacity(pois.len());
    let mut here = origin;
    while !pois.is_empty() {
        let (i, _) = pois
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                haversine_m(here, a.location)
                    .total_cmp(&haversine_m(here, b.location))
                    .then_with(|| a.id.cmp(&b.id))
            })
            .expect("non-empty");
        let next = pois.remove(i);
        here = next.location;
        ordered.push(next);
    }
    ordered
}

pub struct GeographyAgent<'a> {
    pub store: &'a PoiStore,
    pub provider: Option<&'a dyn PoiProvider>,
    pub routing: &'a dyn RoutingClient,
    pub backend: &'a dyn GenerationBackend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeographyPlan {
    pub shortlist: Vec<ShortlistEntry>,
    pub route: RoutePlan,
    pub reply: String,
    /// Set when a named destination was matched.
    pub explicit: bool,
}

impl GeographyAgent<'_> {
    /// Candidate retrieval, ranking and routing. The route is returned
    /// unsegmented.
    pub fn plan(
        &self,
        req: &PlanRequest,
        profile: &UserProfile,
        condition: Condition,
        seed: u64,
    ) -> Result<GeographyPlan, AgentError> {
        if self.store.is_empty() && self.provider.is_none() {
            return Err(AgentError::Planning("no points of interest are available".into()));
        }
        let text = normalize(&req.message);
        let named: Vec<&Poi> = self
            .store
            .pois()
            .iter()
            .filter(|p| !req.exclude.contains(&p.id))
            .filter(|p| {
                let name = normalize(&p.name);
                !name.is_empty() && (text.contains(&name) || req.token.arg("dest").is_some_and(|d| name.contains(d) && d.len() >= 4))
            })
            .collect();

        if named.len() == 1 {
            let dest = named[0].clone();
            let route = self.routing.route(req.origin, std::slice::from_ref(&dest))?;
            let dist = format_distance(haversine_m(req.origin, dest.location));
            let rationale = self
                .backend
                .generate(
                    AgentRole::Geography,
                    "rationale_destination",
                    &json!({ "name": dest.name, "distance": dist }),
                    condition,
                    seed,
                )
                .unwrap_or_else(|_| "Requested destination.".into());
            let reply = self.reply("route_plan", &dest.name, &route, 1, "", condition, seed);
            return Ok(GeographyPlan {
                shortlist: vec![ShortlistEntry {
                    id: dest.id.clone(),
                    name: dest.name.clone(),
                    rationale,
                }],
                route,
                reply,
                explicit: true,
            });
        }

        let query_tags = req.query_tags();
        let lookup = crate::geo::poi_lookup(
            req.origin,
            req.radius_m,
            &query_tags,
            self.store,
            self.provider,
            crate::geo::DEFAULT_POI_FLOOR,
        )?;
        let mut candidates: Vec<Poi> = lookup
            .pois
            .into_iter()
            .filter(|p| p.source != PoiSource::GapFill && !req.exclude.contains(&p.id))
            .collect();
        if candidates.is_empty() && !query_tags.is_empty() {
            candidates = self
                .store
                .within(req.origin, req.radius_m, &[])
                .into_iter()
                .filter(|p| !req.exclude.contains(&p.id))
                .collect();
        }
        // Ambiguous name matches are ranked ahead of everything else.
        let named_ids: Vec<&str> = named.iter().map(|p| p.id.as_str()).collect();
        for p in &named {
            if !candidates.iter().any(|c| c.id == p.id) {
                candidates.push((*p).clone());
            }
        }
        let mut scored: Vec<(bool, f64, f64, Poi)> = candidates
            .into_iter()
            .map(|p| {
                (
                    named_ids.contains(&p.id.as_str()),
                    preference_score(&p, profile),
                    haversine_m(req.origin, p.location),
                    p,
                )
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.2.total_cmp(&b.2))
                .then_with(|| a.3.id.cmp(&b.3.id))
        });
        let mut picked: Vec<(f64, Poi)> = scored.into_iter().take(SHORTLIST_CAP).map(|(_, _, d, p)| (d, p)).collect();

        // Drop waypoints the router cannot reach until a route exists.
        let route = loop {
            if picked.is_empty() {
                return Err(AgentError::Planning("no reachable candidates".into()));
            }
            let ordered = order_waypoints(req.origin, picked.iter().map(|(_, p)| p.clone()).collect());
            match self.routing.route(req.origin, &ordered) {
                Ok(r) => break r,
                Err(GeoError::Unreachable { waypoint }) | Err(GeoError::Snap { what: waypoint, .. })
                    if picked.iter().any(|(_, p)| waypoint.contains(&p.id)) =>
                {
                    picked.retain(|(_, p)| !waypoint.contains(&p.id));
                }
                Err(e) => return Err(e.into()),
            }
        };

        let shortlist: Vec<ShortlistEntry> = picked
            .iter()
            .enumerate()
            .map(|(i, (d, p))| {
                let matched: Vec<&str> = profile
                    .interest_tags
                    .iter()
                    .filter(|it| p.has_tag(&it.tag))
                    .map(|it| it.tag.as_str())
                    .collect();
                let (intent, ctx) = if matched.is_empty() {
                    ("rationale_plain", json!({ "distance": format_distance(*d) }))
                } else {
                    (
                        "rationale",
                        json!({ "tags": matched.join(" and "), "distance": format_distance(*d) }),
                    )
                };
                let rationale = self
                    .backend
                    .generate(AgentRole::Geography, intent, &ctx, condition, seed.wrapping_add(i as u64))
                    .unwrap_or_else(|_| format!("About {} away.", format_distance(*d)));
                ShortlistEntry {
                    id: p.id.clone(),
                    name: p.name.clone(),
                    rationale,
                }
            })
            .collect();
        let tag_phrase = if query_tags.is_empty() {
            String::new()
        } else {
            format!(" with {}", query_tags.join(" and "))
        };
        let intent = if req.token.action == "alternative" {
            "route_alternative"
        } else {
            "poi_nearby"
        };
        let reply = self.reply(intent, &shortlist[0].name, &route, shortlist.len(), &tag_phrase, condition, seed);
        Ok(GeographyPlan {
            shortlist,
            route,
            reply,
            explicit: false,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn reply(
        &self,
        intent: &str,
        first: &str,
        route: &RoutePlan,
        count: usize,
        tag_phrase: &str,
        condition: Condition,
        seed: u64,
    ) -> String {
        let ctx = json!({
            "first": first,
            "count": count,
            "length": format_distance(route.total_length_m),
            "tag_phrase": tag_phrase,
        });
        self.backend
            .generate(AgentRole::Geography, intent, &ctx, condition, seed)
            .unwrap_or_else(|_| format!("Suggested route via {first}, about {}.", format_distance(route.total_length_m)))
    }

    /// Short factual description of a named POI.
    pub fn detail(&self, req: &PlanRequest, condition: Condition, seed: u64) -> Option<String> {
        let text = normalize(&req.message);
        let poi = self.store.pois().iter().find(|p| text.contains(&normalize(&p.name)))?;
        let ctx = json!({
            "name": poi.name,
            "category": poi.category,
            "distance": format_distance(haversine_m(req.origin, poi.location)),
        });
        Some(
            self.backend
                .generate(AgentRole::Geography, "poi_detail", &ctx, condition, seed)
                .unwrap_or_else(|_| format!("{} ({})", poi.name, poi.category)),
        )
    }
}

pub fn geography_plan(
    req: &PlanRequest,
    profile: &UserProfile,
    store: &PoiStore,
    provider: Option<&dyn PoiProvider>,
    routing: &dyn RoutingClient,
    backend: &dyn GenerationBackend,
    condition: Condition,
    seed: u64,
) -> Result<(Vec<ShortlistEntry>, RoutePlan), AgentError> {
    let agent = GeographyAgent {
        store,
        provider,
        routing,
        backend,
    };
    agent.plan(req, profile, condition, seed).map(|p| (p.shortlist, p.route))
}

// ---------------------------------------------------------------------------
// Accompany agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub kind: PromptKind,
    pub text: String,
    /// True when the static template replaced a failed generation.
    pub fallback: bool,
    pub nearby: Vec<String>,
}

/// The factual part of a prompt; never contains encouragement.
pub fn factual_sentence(req: &PromptRequest) -> String {
    let c = &req.context;
    let remaining = format_meters(c.remaining_m);
    let mut s = match req.trigger.kind {
        TriggerKind::Milestone { fraction } if fraction >= 1.0 => {
            format!("Destination reached: {} walked.", format_meters(c.walked_m))
        }
        TriggerKind::Milestone { fraction } if (fraction - 0.5).abs() < 1e-9 => {
            format!("Halfway point: {remaining} remaining.")
        }
        TriggerKind::Milestone { fraction } if (fraction - 0.75).abs() < 1e-9 => {
            format!("Three quarters done: {remaining} remaining.")
        }
        TriggerKind::Milestone { fraction } => {
            format!("{}% done: {remaining} remaining.", (fraction * 100.0).round())
        }
        TriggerKind::GeofenceEntry { segment_index } => format!(
            "Segment {} of {}: {}% done, {remaining} remaining.",
            segment_index + 1,
            c.segment_count,
            (c.progress_fraction * 100.0).round()
        ),
        TriggerKind::Fatigue {
            current_pace,
            reference_pace,
        } => format!(
            "Current pace {current_pace:.1} m/s, earlier {reference_pace:.1} m/s; {remaining} remaining."
        ),
    };
    if !c.nearby.is_empty() {
        let names: Vec<&str> = c.nearby.iter().map(|p| p.name.as_str()).collect();
        s.push_str(&format!(" Nearby: {}.", names.join(", ")));
    }
    s
}

pub fn accompany_prompt(
    req: &PromptRequest,
    backend: &dyn GenerationBackend,
    condition: Condition,
    seed: u64,
) -> PromptMessage {
    let factual = factual_sentence(req);
    let nearby = req.context.nearby.iter().map(|p| p.name.clone()).collect();
    if req.kind == PromptKind::Info {
        return PromptMessage {
            kind: req.kind,
            text: factual,
            fallback: false,
            nearby,
        };
    }
    let intent = match req.trigger.kind {
        TriggerKind::Fatigue { .. } => "fatigue",
        TriggerKind::Milestone { .. } => "milestone",
        TriggerKind::GeofenceEntry { .. } => "encourage",
    };
    let suffix = name_suffix(req.context.display_name.as_deref());
    let ctx = json!({
        "name_suffix": suffix,
        "percent": (req.context.progress_fraction * 100.0).round(),
        "remaining": format_meters(req.context.remaining_m),
    });
    let (motive, fallback) = match backend.generate(AgentRole::Accompany, intent, &ctx, condition, seed) {
        Ok(t) if !t.trim().is_empty() => (t, false),
        _ => (FALLBACK_ENCOURAGEMENT.replace("{name_suffix}", &suffix), true),
    };
    PromptMessage {
        kind: req.kind,
        text: format!("{factual} {motive}"),
        fallback,
        nearby,
    }
}

/// Conversational reply during the walk (status or reassurance).
pub fn accompany_reply(
    intent: &str,
    state: &SessionState,
    backend: &dyn GenerationBackend,
    seed: u64,
) -> String {
    let total = state.route.as_ref().map(|r| r.total_length_m).unwrap_or(0.0);
    let walked = state.stats.distance_m;
    let ctx = json!({
        "percent": (state.stats.progress_fraction * 100.0).round(),
        "remaining": format_meters(total - walked),
        "pace": format!("{:.1}", state.tracker.current_pace.unwrap_or(0.0)),
        "name_suffix": name_suffix(state.profile.display_name.as_deref()),
    });
    backend
        .generate(AgentRole::Accompany, intent, &ctx, state.condition, seed)
        .unwrap_or_else(|_| {
            format!(
                "{}% done, {} remaining.",
                (state.stats.progress_fraction * 100.0).round(),
                format_meters(total - walked)
            )
        })
}

// ---------------------------------------------------------------------------
// Summary agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfThenPlan {
    pub cue_time: String,
    pub cue_place: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareCard {
    pub headline: String,
    pub distance_m: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub summary_text: String,
    pub if_then_plan: IfThenPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_card: Option<ShareCard>,
}

const CUE_TIMES: [&str; 3] = ["tomorrow at 7:30 am", "tomorrow after lunch", "this Saturday at 9:00 am"];

pub fn summarize_walk(
    stats: &WalkStats,
    route: Option<&RoutePlan>,
    profile: &UserProfile,
    waypoint_names: &[String],
    log: &[Event],
    backend: &dyn GenerationBackend,
    condition: Condition,
    seed: u64,
) -> WalkSummary {
    let planned = route.map(|r| r.total_length_m).unwrap_or(0.0);
    let walked = format_km(stats.distance_m);
    let minutes = format_minutes(stats.duration_s);
    let mut text = if stats.goal_attained {
        format!("You walked {walked} in {minutes} and reached the end of your route.")
    } else {
        format!(
            "You walked {walked} in {minutes}, {}% of the planned {}; the goal was not reached this time.",
            (stats.progress_fraction * 100.0).round(),
            format_km(planned)
        )
    };
    let fatigue_events = log.iter().filter(|e| matches!(e.body, EventBody::Fatigue(_))).count();
    let delivered = log
        .iter()
        .filter(|e| matches!(e.body, EventBody::PromptDelivered(_)))
        .count();
    if delivered > 0 {
        text.push_str(&format!(" {delivered} prompts accompanied you along the way."));
    }
    if condition == Condition::InfoMotive {
        let ctx = json!({ "name_suffix": name_suffix(profile.display_name.as_deref()) });
        if let Ok(extra) = backend.generate(AgentRole::Summary, "encourage", &ctx, condition, seed) {
            text.push(' ');
            text.push_str(&extra);
        }
    }

    let cue_time = CUE_TIMES[(seed % CUE_TIMES.len() as u64) as usize].to_string();
    let cue_place = match waypoint_names.first() {
        Some(n) => format!("at {n}"),
        None => "at the start of today's route".to_string(),
    };
    let action = if !stats.goal_attained {
        let target = (stats.distance_m + 500.0).min(planned.max(500.0));
        format!("walk {} of the same route", format_km(target))
    } else if fatigue_events > 0 {
        format!("walk the same {} route at an easier pace for the first kilometre", format_km(planned))
    } else {
        format!("walk the same {} route", format_km(planned))
    };
    let share_card = profile.share_opt_in.then(|| ShareCard {
        headline: format!("Walked {walked} in {minutes}"),
        distance_m: stats.distance_m,
        duration_s: stats.duration_s,
    });
    WalkSummary {
        summary_text: text,
        if_then_plan: IfThenPlan {
            cue_time,
            cue_place,
            action,
        },
        share_card,
    }
}

pub fn write_share_card(card: &ShareCard, path: impl AsRef<Path>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(card).map_err(std::io::Error::other)?;
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;
    use crate::scheduler::{ContextSnapshot, NearbyPoi};
    use crate::telemetry::{ContextFlags, TriggerEvent};
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn parses_documented_tokens() {
        let t = parse_action_token("poi.nearby radius=500 tag=cafe").unwrap();
        assert_eq!(t.domain, "poi");
        assert_eq!(t.action, "nearby");
        assert_eq!(t.arg("radius"), Some("500"));
        assert_eq!(t.arg("tag"), Some("cafe"));
        let t = parse_action_token("route.alternative").unwrap();
        assert_eq!(t, ActionToken::new("route", "alternative"));
    }

    #[test]
    fn rejects_bad_tokens_with_position() {
        match parse_action_token("poi.Nearby") {
            Err(AgentError::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        for bad in ["", "poi", "poi.", ".nearby", "poi.nearby x", "poi.nearby a=1 a=2", "poi.nearby a=\"x", "poi.nearby 1a=2", "poi.nearby a=\"x\"y"] {
            assert!(parse_action_token(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn quoted_values() {
        let t = parse_action_token(r#"route.plan dest="Riverside Park" note="say \"hi\" \\ bye""#).unwrap();
        assert_eq!(t.arg("dest"), Some("Riverside Park"));
        assert_eq!(t.arg("note"), Some(r#"say "hi" \ bye"#));
        assert_eq!(parse_action_token(&t.render()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn token_round_trip(
            domain in "[a-z_]{1,8}",
            action in "[a-z_]{1,8}",
            args in proptest::collection::btree_map("[a-z_][a-z0-9_]{0,6}", "\\PC{0,12}", 0..4),
        ) {
            let token = ActionToken { domain, action, args };
            let text = token.render();
            prop_assert_eq!(parse_action_token(&text).unwrap(), token);
        }
    }

    fn session(phase_walk: bool, cond: Condition) -> SessionState {
        use crate::session::RouteConfirmed;
        let mut s = SessionState::new(UserProfile::new("P1").with_name("Li"), cond).unwrap();
        if phase_walk {
            let a = pt(31.0, 120.0);
            let r = crate::geo::segment_route(
                RoutePlan::from_polyline(vec![a, destination(a, 0.0, 1000.0)], vec![]).unwrap(),
                Default::default(),
            );
            s.append_event(Event::new(0.0, EventBody::RouteConfirmed(RouteConfirmed { route: r })))
                .unwrap();
            s.transition(Phase::Walking, 0.0).unwrap();
        }
        s
    }

    #[test]
    fn bridge_routes_planning_to_geography() {
        let s = session(false, Condition::InfoMotive);
        let inv = bridge_route(
            "find me a quiet route with cafés",
            &s,
            IntentTable::builtin(),
            &TemplateBackend::default(),
            0,
        )
        .unwrap();
        assert_eq!(inv.agent, AgentRole::Geography);
        assert_eq!(inv.token, parse_action_token("poi.nearby tag=cafe").unwrap());
    }

    #[test]
    fn bridge_routes_tired_to_reassure() {
        let s = session(true, Condition::InfoMotive);
        for msg in ["I'm getting tired", "so TIRED now"] {
            let inv = bridge_route(msg, &s, IntentTable::builtin(), &TemplateBackend::default(), 0).unwrap();
            assert_eq!(inv.agent, AgentRole::Accompany);
            assert_eq!(inv.intent, "reassure");
            assert_eq!(inv.token.render(), "walk.reassure");
        }
    }

    #[test]
    fn bridge_rejects_closed_session() {
        let mut s = session(true, Condition::InfoMotive);
        s.transition(Phase::Summary, 1.0).unwrap();
        s.transition(Phase::Closed, 2.0).unwrap();
        assert!(matches!(
            bridge_route("hello", &s, IntentTable::builtin(), &TemplateBackend::default(), 0),
            Err(AgentError::SessionClosed)
        ));
    }

    #[test]
    fn bridge_extracts_destination() {
        let s = session(false, Condition::InfoOnly);
        let inv = bridge_route("Take me to Riverside Park!", &s, IntentTable::builtin(), &TemplateBackend::default(), 0).unwrap();
        assert_eq!(inv.intent, "route_plan");
        assert_eq!(inv.token.arg("dest"), Some("riverside park"));
    }

    #[test]
    fn template_backend_is_deterministic() {
        let b = TemplateBackend::default();
        let ctx = json!({"name_suffix": ", Li"});
        for seed in 0..5 {
            let a = b.generate(AgentRole::Accompany, "encourage", &ctx, Condition::InfoMotive, seed).unwrap();
            let c = b.generate(AgentRole::Accompany, "encourage", &ctx, Condition::InfoMotive, seed).unwrap();
            assert_eq!(a, c);
        }
        assert!(b.generate(AgentRole::Accompany, "nope", &ctx, Condition::InfoMotive, 0).is_err());
    }

    #[test]
    fn builtin_templates_respect_lexicon() {
        let table = IntentTable::builtin();
        for (key, by_cond) in &table.templates {
            for (cond, variants) in by_cond {
                for v in variants {
                    let motive_key = key.starts_with("accompany.encourage")
                        || key.starts_with("accompany.milestone")
                        || key.starts_with("accompany.fatigue")
                        || key == "summary.encourage";
                    if cond == "info-only" || (!motive_key && cond == "*") {
                        assert!(!table.contains_encouragement(v), "{key}/{cond}: {v}");
                    }
                    if motive_key {
                        assert!(table.contains_encouragement(v), "{key}/{cond}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(format_meters(1500.0), "1,500 m");
        assert_eq!(format_meters(999.6), "1,000 m");
        assert_eq!(format_meters(1_234_567.0), "1,234,567 m");
        assert_eq!(format_meters(-3.0), "0 m");
        assert_eq!(format_km(3000.0), "3.0 km");
        assert_eq!(format_minutes(2400.0), "40 min");
    }

    fn request(kind: TriggerKind, prompt: PromptKind, fraction: f64, remaining: f64) -> PromptRequest {
        PromptRequest {
            trigger: TriggerEvent {
                t: 0.0,
                kind,
                flags: ContextFlags::new(),
            },
            kind: prompt,
            context: ContextSnapshot {
                progress_fraction: fraction,
                remaining_m: remaining,
                walked_m: 3000.0 - remaining,
                pace_mps: Some(1.4),
                segment_index: 3,
                segment_count: 6,
                nearby: vec![],
                flags: ContextFlags::new(),
                display_name: Some("Li".into()),
            },
        }
    }

    #[test]
    fn info_prompt_is_factual_only() {
        let req = request(TriggerKind::Milestone { fraction: 0.5 }, PromptKind::Info, 0.5, 1500.0);
        let m = accompany_prompt(&req, &TemplateBackend::default(), Condition::InfoOnly, 3);
        assert_eq!(m.text, "Halfway point: 1,500 m remaining.");
        assert!(!m.fallback);
        assert!(!IntentTable::builtin().contains_encouragement(&m.text));
    }

    #[test]
    fn motive_prompt_names_user() {
        let req = request(TriggerKind::Milestone { fraction: 0.5 }, PromptKind::InfoMotive, 0.5, 1500.0);
        for seed in 0..4 {
            let m = accompany_prompt(&req, &TemplateBackend::default(), Condition::InfoMotive, seed);
            assert!(m.text.starts_with("Halfway point: 1,500 m remaining. "), "{}", m.text);
            assert!(m.text.contains("Li"));
            assert!(IntentTable::builtin().contains_encouragement(&m.text));
        }
    }

    fn imperative_start(text: &str) -> bool {
        const VERBS: [&str; 11] = ["turn", "go", "walk", "keep", "take", "head", "speed", "slow", "stop", "continue", "follow"];
        text.split(['.', '!', '?', ';'])
            .filter_map(|s| s.split_whitespace().next())
            .any(|w| VERBS.contains(&w.to_lowercase().as_str()))
    }

    #[test]
    fn fatigue_motivation_has_no_commands() {
        let req = request(
            TriggerKind::Fatigue {
                current_pace: 0.9,
                reference_pace: 1.4,
            },
            PromptKind::Motivation,
            0.6,
            1200.0,
        );
        for seed in 0..4 {
            let m = accompany_prompt(&req, &TemplateBackend::default(), Condition::InfoMotive, seed);
            assert!(m.text.contains("0.9 m/s"));
            assert!(m.text.to_lowercase().contains("slow"));
            assert!(!imperative_start(&m.text), "{}", m.text);
            assert!(IntentTable::builtin().contains_encouragement(&m.text));
        }
    }

    #[test]
    fn backend_failure_falls_back() {
        let req = request(TriggerKind::GeofenceEntry { segment_index: 2 }, PromptKind::InfoMotive, 0.33, 2000.0);
        let m = accompany_prompt(&req, &UnavailableBackend, Condition::InfoMotive, 0);
        assert!(m.fallback);
        assert!(m.text.starts_with("Segment 3 of 6"));
        assert!(m.text.ends_with("You're doing great, Li."));
    }

    #[test]
    fn nearby_names_are_listed() {
        let mut req = request(TriggerKind::GeofenceEntry { segment_index: 1 }, PromptKind::Info, 0.17, 2500.0);
        req.context.nearby = vec![
            NearbyPoi { id: "a".into(), name: "Lotus Cafe".into(), score: 0.9 },
            NearbyPoi { id: "b".into(), name: "Elm Park".into(), score: 0.7 },
        ];
        let m = accompany_prompt(&req, &TemplateBackend::default(), Condition::InfoOnly, 0);
        assert!(m.text.ends_with(" Nearby: Lotus Cafe, Elm Park."));
        assert_eq!(m.nearby, vec!["Lotus Cafe", "Elm Park"]);
    }

    fn store() -> PoiStore {
        let o = pt(31.0, 120.0);
        let at = |b: f64, d: f64| destination(o, b, d);
        PoiStore::new(vec![
            Poi::new("park1", "Riverside Park", "park", at(0.0, 600.0)).with_tags(["park", "waterfront"]),
            Poi::new("cafe1", "Lotus Cafe", "cafe", at(90.0, 400.0)).with_tags(["cafe"]),
            Poi::new("cafe2", "Bean Corner", "cafe", at(180.0, 700.0)).with_tags(["cafe", "bookstore"]),
            Poi::new("park2", "Elm Green", "park", at(270.0, 300.0)).with_tags(["park"]),
            Poi::new("mus1", "City Museum", "museum", at(45.0, 900.0)),
            Poi::new("cafe3", "Quiet Brew", "cafe", at(135.0, 1200.0)).with_tags(["cafe"]),
            Poi::new("mkt1", "Night Market", "market", at(300.0, 800.0)),
        ])
        .unwrap()
    }

    fn plan(msg: &str, profile: &UserProfile, store: &PoiStore) -> Result<(Vec<ShortlistEntry>, RoutePlan), AgentError> {
        let s = SessionState::new(profile.clone(), Condition::InfoMotive).unwrap();
        let inv = bridge_route(msg, &s, IntentTable::builtin(), &TemplateBackend::default(), 0).unwrap();
        let req = PlanRequest::new(msg, inv.token, pt(31.0, 120.0));
        geography_plan(&req, profile, store, None, &StraightLineRouter, &TemplateBackend::default(), Condition::InfoMotive, 0)
    }

    #[test]
    fn explicit_destination_branch() {
        let profile = UserProfile::new("P1").with_interest("cafe", 0.9);
        let store = store();
        let (shortlist, route) = plan("take me to Riverside Park", &profile, &store).unwrap();
        assert_eq!(shortlist.len(), 1);
        assert_eq!(shortlist[0].id, "park1");
        let end = *route.polyline.last().unwrap();
        assert!(haversine_m(end, store.get("park1").unwrap().location) < 1e-6);
    }

    #[test]
    fn vague_branch_ranks_by_weights() {
        let profile = UserProfile::new("P1").with_interest("cafe", 0.9).with_interest("park", 0.7);
        let store = store();
        let (shortlist, route) = plan("somewhere quiet with coffee", &profile, &store).unwrap();
        assert!(shortlist.len() <= SHORTLIST_CAP);
        // oracle: every cafe within the radius, sorted by summed weight then distance
        let o = pt(31.0, 120.0);
        let mut expected: Vec<(f64, f64, String)> = store
            .within(o, DEFAULT_SEARCH_RADIUS_M, &["cafe".to_string()])
            .iter()
            .map(|p| (preference_score(p, &profile), haversine_m(o, p.location), p.id.clone()))
            .collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let got: Vec<&str> = shortlist.iter().map(|e| e.id.as_str()).collect();
        let want: Vec<&str> = expected.iter().take(SHORTLIST_CAP).map(|e| e.2.as_str()).collect();
        assert_eq!(got, want);
        assert!(store.get(got[0]).unwrap().has_tag("cafe"));
        assert_eq!(route.waypoints.len(), shortlist.len());
        let mut ids: Vec<&str> = got.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), got.len());
    }

    #[test]
    fn untagged_request_uses_profile_scores() {
        let profile = UserProfile::new("P1").with_interest("cafe", 0.9).with_interest("park", 0.7);
        let (shortlist, _) = plan("anything nice around here", &profile, &store()).unwrap();
        assert_eq!(shortlist.len(), 5);
        assert!(shortlist[..3].iter().all(|e| e.id.starts_with("cafe")));
        assert!(shortlist[3..].iter().all(|e| e.id.starts_with("park")));
    }

    #[test]
    fn empty_store_is_planning_error() {
        let profile = UserProfile::new("P1");
        let empty = PoiStore::new(vec![]).unwrap();
        assert!(matches!(plan("a walk please", &profile, &empty), Err(AgentError::Planning(_))));
    }

    #[test]
    fn unreachable_waypoints_are_dropped() {
        let o = pt(31.0, 120.0);
        let mut nodes = BTreeMap::new();
        nodes.insert("o".to_string(), o);
        nodes.insert("a".to_string(), destination(o, 90.0, 400.0));
        nodes.insert("z".to_string(), destination(o, 180.0, 700.0));
        let edge = crate::geo::Edge {
            u: "o".into(),
            v: "a".into(),
            length_m: 400.0,
        };
        let graph = StreetGraph::new(nodes, vec![edge]).unwrap();
        let store = PoiStore::new(vec![
            Poi::new("cafe1", "Lotus Cafe", "cafe", destination(o, 90.0, 400.0)).with_tags(["cafe"]),
            Poi::new("cafe2", "Bean Corner", "cafe", destination(o, 180.0, 700.0)).with_tags(["cafe"]),
        ])
        .unwrap();
        let profile = UserProfile::new("P1").with_interest("cafe", 0.9);
        let req = PlanRequest::new("coffee", parse_action_token("poi.nearby tag=cafe").unwrap(), o);
        let (shortlist, route) =
            geography_plan(&req, &profile, &store, None, &graph, &TemplateBackend::default(), Condition::InfoOnly, 0).unwrap();
        assert_eq!(shortlist.len(), 1);
        assert_eq!(shortlist[0].id, "cafe1");
        assert_eq!(route.waypoints, vec!["cafe1"]);
    }

    #[test]
    fn summary_contents() {
        let stats = WalkStats {
            distance_m: 3000.0,
            duration_s: 2400.0,
            progress_fraction: 1.0,
            mean_pace_mps: 1.25,
            milestones_hit: vec![0.5, 0.75, 1.0],
            goal_attained: true,
        };
        let profile = UserProfile::new("P1").with_name("Li");
        let s = summarize_walk(&stats, None, &profile, &[], &[], &TemplateBackend::default(), Condition::InfoOnly, 0);
        assert!(s.summary_text.contains("3.0 km"));
        assert!(s.summary_text.contains("40 min"));
        assert!(!s.if_then_plan.cue_time.is_empty());
        assert!(!s.if_then_plan.cue_place.is_empty());
        assert!(!s.if_then_plan.action.is_empty());
        assert!(s.share_card.is_none());
        assert!(!IntentTable::builtin().contains_encouragement(&s.summary_text));

        let opted = profile.clone().with_share_opt_in(true);
        let s = summarize_walk(&stats, None, &opted, &[], &[], &TemplateBackend::default(), Condition::InfoMotive, 0);
        let card = s.share_card.unwrap();
        assert_eq!(card.distance_m, 3000.0);
        assert!(IntentTable::builtin().contains_encouragement(&s.summary_text));
    }

    #[test]
    fn zero_walk_summary() {
        let s = summarize_walk(
            &WalkStats::default(),
            None,
            &UserProfile::new("P1"),
            &[],
            &[],
            &UnavailableBackend,
            Condition::InfoMotive,
            0,
        );
        assert!(s.summary_text.contains("not reached"));
        assert!(!s.if_then_plan.action.is_empty());
    }

    #[test]
    fn share_card_file() {
        let dir = tempfile::tempdir().unwrap();
        let card = ShareCard {
            headline: "Walked 3.0 km in 40 min".into(),
            distance_m: 3000.0,
            duration_s: 2400.0,
        };
        let path = dir.path().join("card.json");
        write_share_card(&card, &path).unwrap();
        let back: ShareCard = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, card);
    }
}
