//! Shared session state, the walk-phase lifecycle and the append-only event
//! log through which the functional agents communicate.
//!
//! The log is the single source of truth: every mutation of a
//! [`SessionState`] happens by appending an [`Event`], and replaying a log
//! onto a fresh session reproduces the same state byte for byte.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentRole, ShortlistEntry, WalkSummary};
use crate::error::ValidationError;
use crate::geo::RoutePlan;
use crate::profile::{Condition, UserProfile};
use crate::scheduler::{record_feedback, Feedback, GateState, PromptKind, SchedulerError, SuppressReason};
use crate::telemetry::{ContextFlags, TelemetryError, TriggerKind, WalkTick, WalkTracker};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("phase error: cannot move from {from} to {to}")]
    Phase { from: Phase, to: Phase },
    #[error("phase error: {action} is not allowed while {phase}")]
    WrongPhase { action: &'static str, phase: Phase },
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("ordering error: event at t={t} precedes last logged t={last}")]
    Ordering { t: f64, last: f64 },
    #[error("session error: session is closed")]
    Closed,
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Planning,
    Walking,
    Summary,
    Closed,
}

impl Phase {
    pub fn successor(self) -> Option<Phase> {
        match self {
            Phase::Planning => Some(Phase::Walking),
            Phase::Walking => Some(Phase::Summary),
            Phase::Summary => Some(Phase::Closed),
            Phase::Closed => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn random() -> Self {
        SessionId(uuid::Uuid::new_v4().to_string())
    }

    /// Reproducible id for seeded, headless runs.
    pub fn from_seed(seed: u64) -> Self {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        SessionId(uuid::Builder::from_random_bytes(bytes).into_uuid().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        SessionId(s)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ChatIn,
    ChatOut,
    RouteConfirmed,
    Tick,
    GeofenceEntry,
    Milestone,
    Fatigue,
    PromptDelivered,
    PromptSuppressed,
    Feedback,
    PhaseChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatIn {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatOut {
    pub agent: AgentRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortlist: Option<Vec<ShortlistEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RoutePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<WalkSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<WalkStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChatOut {
    pub fn text(agent: AgentRole, text: impl Into<String>) -> Self {
        Self {
            agent,
            token: None,
            text: text.into(),
            shortlist: None,
            route: None,
            summary: None,
            stats: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfirmed {
    pub route: RoutePlan,
}

/// A raw tick plus the progress telemetry derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub walk_t: f64,
    pub lat: f64,
    pub lon: f64,
    pub flags: ContextFlags,
    pub offset_m: f64,
    pub fraction: f64,
    pub segment_index: usize,
    pub cross_track_m: f64,
    pub off_route: bool,
    pub pace_mps: Option<f64>,
}

impl TickRecord {
    pub fn tick(&self) -> Result<WalkTick, ValidationError> {
        Ok(WalkTick {
            t: self.walk_t,
            location: crate::geo::GeoPoint::new(self.lat, self.lon)?,
            flags: self.flags.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeofencePayload {
    pub segment_index: usize,
    pub flags: ContextFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestonePayload {
    pub fraction: f64,
    pub flags: ContextFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatiguePayload {
    pub current_pace: f64,
    pub reference_pace: f64,
    pub flags: ContextFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDelivered {
    pub prompt_id: String,
    /// Log index of the triggering event.
    pub trigger_seq: usize,
    pub kind: PromptKind,
    pub text: String,
    pub fallback: bool,
    #[serde(default)]
    pub nearby: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSuppressed {
    pub trigger_seq: usize,
    pub reason: SuppressReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    pub prompt_id: String,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub from: Phase,
    pub to: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    ChatIn(ChatIn),
    ChatOut(ChatOut),
    RouteConfirmed(RouteConfirmed),
    Tick(TickRecord),
    GeofenceEntry(GeofencePayload),
    Milestone(MilestonePayload),
    Fatigue(FatiguePayload),
    PromptDelivered(PromptDelivered),
    PromptSuppressed(PromptSuppressed),
    Feedback(FeedbackPayload),
    PhaseChange(PhaseChange),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::ChatIn(_) => EventKind::ChatIn,
            EventBody::ChatOut(_) => EventKind::ChatOut,
            EventBody::RouteConfirmed(_) => EventKind::RouteConfirmed,
            EventBody::Tick(_) => EventKind::Tick,
            EventBody::GeofenceEntry(_) => EventKind::GeofenceEntry,
            EventBody::Milestone(_) => EventKind::Milestone,
            EventBody::Fatigue(_) => EventKind::Fatigue,
            EventBody::PromptDelivered(_) => EventKind::PromptDelivered,
            EventBody::PromptSuppressed(_) => EventKind::PromptSuppressed,
            EventBody::Feedback(_) => EventKind::Feedback,
            EventBody::PhaseChange(_) => EventKind::PhaseChange,
        }
    }

    pub fn from_trigger(kind: &TriggerKind, flags: &ContextFlags) -> Self {
        match *kind {
            TriggerKind::GeofenceEntry { segment_index } => EventBody::GeofenceEntry(GeofencePayload {
                segment_index,
                flags: flags.clone(),
            }),
            TriggerKind::Milestone { fraction } => EventBody::Milestone(MilestonePayload {
                fraction,
                flags: flags.clone(),
            }),
            TriggerKind::Fatigue {
                current_pace,
                reference_pace,
            } => EventBody::Fatigue(FatiguePayload {
                current_pace,
                reference_pace,
                flags: flags.clone(),
            }),
        }
    }

    /// The trigger carried by a GeofenceEntry, Milestone or Fatigue event.
    pub fn trigger(&self) -> Option<(TriggerKind, &ContextFlags)> {
        match self {
            EventBody::GeofenceEntry(p) => Some((
                TriggerKind::GeofenceEntry {
                    segment_index: p.segment_index,
                },
                &p.flags,
            )),
            EventBody::Milestone(p) => Some((TriggerKind::Milestone { fraction: p.fraction }, &p.flags)),
            EventBody::Fatigue(p) => Some((
                TriggerKind::Fatigue {
                    current_pace: p.current_pace,
                    reference_pace: p.reference_pace,
                },
                &p.flags,
            )),
            _ => None,
        }
    }
}

/// One log entry; serialized as `{"t", "kind", "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since session start.
    pub t: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn new(t: f64, body: EventBody) -> Self {
        Self { t, body }
    }

    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }
}

pub fn event_to_json(event: &Event) -> String {
    serde_json::to_string(event).expect("events serialize")
}

pub fn to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&event_to_json(e));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| SessionError::Parse { line: i + 1, source }))
        .collect()
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WalkStats {
    pub distance_m: f64,
    pub duration_s: f64,
    pub progress_fraction: f64,
    pub mean_pace_mps: f64,
    pub milestones_hit: Vec<f64>,
    pub goal_attained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredPrompt {
    pub delivered_t: f64,
    pub trigger_seq: usize,
    pub kind: PromptKind,
    pub feedback: Option<Feedback>,
}

/// Latest route suggestion from the planning conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteProposal {
    pub shortlist: Vec<ShortlistEntry>,
    pub route: RoutePlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub profile: UserProfile,
    pub condition: Condition,
    pub phase: Phase,
    pub route: Option<RoutePlan>,
    pub stats: WalkStats,
    pub gate: GateState,
    pub event_log: Vec<Event>,
    pub proposal: Option<RouteProposal>,
    pub walk_start_t: Option<f64>,
    pub tracker: WalkTracker,
    pub prompts: BTreeMap<String, DeliveredPrompt>,
    /// Trigger kinds produced by the last tick that still await their event.
    pending_triggers: Vec<TriggerKind>,
    /// Trigger events (by log index) that still await a decision.
    undecided: Vec<usize>,
}

impl SessionState {
    /// Open a session in the Planning phase.
    pub fn new(profile: UserProfile, condition: Condition) -> Result<Self, SessionError> {
        Self::with_id(SessionId::random(), profile, condition)
    }

    pub fn with_id(session_id: SessionId, profile: UserProfile, condition: Condition) -> Result<Self, SessionError> {
        profile.validate()?;
        Ok(Self {
            session_id,
            profile,
            condition,
            phase: Phase::Planning,
            route: None,
            stats: WalkStats::default(),
            gate: GateState::default(),
            event_log: Vec::new(),
            proposal: None,
            walk_start_t: None,
            tracker: WalkTracker::default(),
            prompts: BTreeMap::new(),
            pending_triggers: Vec::new(),
            undecided: Vec::new(),
        })
    }

    /// Rebuild a session by re-appending every event of a log.
    pub fn replay(
        session_id: SessionId,
        profile: UserProfile,
        condition: Condition,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<Self, SessionError> {
        let mut state = Self::with_id(session_id, profile, condition)?;
        for (i, e) in events.into_iter().enumerate() {
            state
                .append_event(e)
                .map_err(|err| SessionError::Integrity(format!("event {i}: {err}")))?;
        }
        Ok(state)
    }

    pub fn last_t(&self) -> f64 {
        self.event_log.last().map(|e| e.t).unwrap_or(0.0)
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.event_log)
    }

    pub fn undecided_triggers(&self) -> &[usize] {
        &self.undecided
    }

    pub fn pending_prompt_ids(&self) -> Vec<String> {
        self.prompts
            .iter()
            .filter(|(_, p)| p.feedback.is_none())
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Move to the next phase, logging a PhaseChange.
    pub fn transition(&mut self, target: Phase, t: f64) -> Result<(), SessionError> {
        self.append_event(Event::new(
            t,
            EventBody::PhaseChange(PhaseChange {
                from: self.phase,
                to: target,
            }),
        ))
        .map(|_| ())
    }

    fn require_phase(&self, action: &'static str, allowed: &[Phase]) -> Result<(), SessionError> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else if self.phase == Phase::Closed {
            Err(SessionError::Closed)
        } else {
            Err(SessionError::WrongPhase {
                action,
                phase: self.phase,
            })
        }
    }

    /// Validate an event against the current state, apply it and log it.
    /// Returns the log index of the new entry.
    pub fn append_event(&mut self, event: Event) -> Result<usize, SessionError> {
        if !event.t.is_finite() {
            return Err(ValidationError::new("event time must be finite").into());
        }
        let last = self.last_t();
        if !self.event_log.is_empty() && event.t < last {
            return Err(SessionError::Ordering { t: event.t, last });
        }
        let seq = self.event_log.len();
        let decision = matches!(event.body, EventBody::PromptDelivered(_) | EventBody::PromptSuppressed(_));
        if !self.pending_triggers.is_empty() && event.body.trigger().is_none() && !decision {
            return Err(SessionError::Integrity(format!(
                "{:?} logged while tick triggers are still pending",
                event.kind()
            )));
        }
        match &event.body {
            EventBody::ChatIn(_) | EventBody::ChatOut(_) => {
                self.require_phase("chat", &[Phase::Planning, Phase::Walking, Phase::Summary])?;
                if let EventBody::ChatOut(out) = &event.body {
                    if let (Some(shortlist), Some(route)) = (&out.shortlist, &out.route) {
                        if self.phase == Phase::Planning {
                            self.proposal = Some(RouteProposal {
                                shortlist: shortlist.clone(),
                                route: route.clone(),
                            });
                        }
                    }
                }
            }
            EventBody::RouteConfirmed(rc) => {
                self.require_phase("route confirmation", &[Phase::Planning])?;
                if rc.route.segments.is_empty() {
                    return Err(SessionError::Precondition("confirmed route must be segmented".into()));
                }
                self.route = Some(rc.route.clone());
            }
            EventBody::PhaseChange(pc) => {
                if pc.from != self.phase || self.phase.successor() != Some(pc.to) {
                    return Err(SessionError::Phase {
                        from: self.phase,
                        to: pc.to,
                    });
                }
                if pc.to == Phase::Walking {
                    if self.route.is_none() {
                        return Err(SessionError::Precondition("a confirmed route is required to start walking".into()));
                    }
                    self.walk_start_t = Some(event.t);
                }
                if pc.to == Phase::Summary {
                    if let Some(&seq) = self.undecided.first() {
                        return Err(SessionError::Integrity(format!("trigger event {seq} has no decision")));
                    }
                }
                self.phase = pc.to;
            }
            EventBody::Tick(rec) => {
                self.require_phase("tick ingestion", &[Phase::Walking])?;
                if let Some(&seq) = self.undecided.first() {
                    return Err(SessionError::Integrity(format!("trigger event {seq} has no decision")));
                }
                let route = self.route.as_ref().expect("route present while walking");
                let start = self.walk_start_t.unwrap_or(0.0);
                if (start + rec.walk_t - event.t).abs() > 1e-9 {
                    return Err(SessionError::Integrity(format!(
                        "tick walk time {} does not match event time {}",
                        rec.walk_t, event.t
                    )));
                }
                let step = self.tracker.step(route, &rec.tick()?)?;
                let expected = tick_record(&rec.tick()?, &step.tracker);
                if &expected != rec {
                    return Err(SessionError::Integrity(format!(
                        "tick at t={} disagrees with recomputed telemetry",
                        event.t
                    )));
                }
                self.pending_triggers = step.triggers.iter().map(|t| t.kind).collect();
                self.tracker = step.tracker;
                let total = route.total_length_m;
                self.stats.progress_fraction = self.tracker.max_fraction;
                self.stats.distance_m = self.tracker.max_fraction * total;
                self.stats.duration_s = rec.walk_t;
                self.stats.mean_pace_mps = if rec.walk_t > 0.0 {
                    self.stats.distance_m / rec.walk_t
                } else {
                    0.0
                };
            }
            EventBody::GeofenceEntry(_) | EventBody::Milestone(_) | EventBody::Fatigue(_) => {
                self.require_phase("trigger logging", &[Phase::Walking])?;
                let (kind, _) = event.body.trigger().expect("trigger body");
                if self.pending_triggers.first() != Some(&kind) {
                    return Err(SessionError::Integrity(format!(
                        "trigger {kind:?} was not produced by the preceding tick"
                    )));
                }
                self.pending_triggers.remove(0);
                self.undecided.push(seq);
                match kind {
                    TriggerKind::GeofenceEntry { .. } => self.gate = self.gate.enter_segment(),
                    TriggerKind::Milestone { fraction } => {
                        if !self.stats.milestones_hit.contains(&fraction) {
                            self.stats.milestones_hit.push(fraction);
                            self.stats.milestones_hit.sort_by(f64::total_cmp);
                        }
                        if fraction >= 1.0 {
                            self.stats.goal_attained = true;
                        }
                    }
                    TriggerKind::Fatigue { .. } => {}
                }
            }
            EventBody::PromptDelivered(p) => {
                self.require_phase("prompt delivery", &[Phase::Walking])?;
                self.take_undecided(p.trigger_seq)?;
                if self.prompts.contains_key(&p.prompt_id) {
                    return Err(SessionError::Integrity(format!("duplicate prompt id `{}`", p.prompt_id)));
                }
                self.gate = self.gate.register_delivery(event.t);
                self.prompts.insert(
                    p.prompt_id.clone(),
                    DeliveredPrompt {
                        delivered_t: event.t,
                        trigger_seq: p.trigger_seq,
                        kind: p.kind,
                        feedback: None,
                    },
                );
            }
            EventBody::PromptSuppressed(p) => {
                self.require_phase("prompt suppression", &[Phase::Walking])?;
                self.take_undecided(p.trigger_seq)?;
            }
            EventBody::Feedback(fb) => {
                self.require_phase("feedback", &[Phase::Walking, Phase::Summary])?;
                let prompt = self
                    .prompts
                    .get(&fb.prompt_id)
                    .ok_or_else(|| SessionError::UnknownPrompt(fb.prompt_id.clone()))?;
                if prompt.feedback.is_some() {
                    return Err(SessionError::Precondition(format!(
                        "prompt `{}` already has feedback",
                        fb.prompt_id
                    )));
                }
                self.gate = record_feedback(&self.gate, fb.feedback)?;
                if let Some(p) = self.prompts.get_mut(&fb.prompt_id) {
                    p.feedback = Some(fb.feedback);
                }
            }
        }
        self.event_log.push(event);
        Ok(seq)
    }

    fn take_undecided(&mut self, trigger_seq: usize) -> Result<(), SessionError> {
        match self.undecided.iter().position(|&s| s == trigger_seq) {
            Some(0) => {
                self.undecided.remove(0);
                Ok(())
            }
            Some(_) => Err(SessionError::Integrity(format!(
                "trigger {trigger_seq} decided out of order"
            ))),
            None => Err(SessionError::Integrity(format!(
                "event {trigger_seq} is not an undecided trigger"
            ))),
        }
    }
}

/// Log record for a tick given the tracker state after processing it.
pub fn tick_record(tick: &WalkTick, after: &WalkTracker) -> TickRecord {
    TickRecord {
        walk_t: tick.t,
        lat: tick.location.lat,
        lon: tick.location.lon,
        flags: tick.flags.clone(),
        offset_m: after.progress.offset_m,
        fraction: after.progress.fraction,
        segment_index: after.progress.segment_index,
        cross_track_m: after.progress.cross_track_m,
        off_route: after.progress.off_route,
        pace_mps: after.current_pace,
    }
}

/// Replay a complete log and check it against the stats recorded with the
/// walk summary. A log without that record is reported as truncated.
pub fn verify_log(
    id: SessionId,
    profile: UserProfile,
    condition: Condition,
    events: Vec<Event>,
) -> Result<SessionState, SessionError> {
    let recorded = events.iter().rev().find_map(|e| match &e.body {
        EventBody::ChatOut(o) => o.stats.clone(),
        _ => None,
    });
    let state = SessionState::replay(id, profile, condition, events)?;
    let recorded =
        recorded.ok_or_else(|| SessionError::Integrity("log is truncated: no walk summary with stats".into()))?;
    if recorded != state.stats {
        return Err(SessionError::Integrity(format!(
            "recorded stats {recorded:?} differ from replayed {:?}",
            state.stats
        )));
    }
    Ok(state)
}

/// What became of a trigger: delivered as a prompt, or suppressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered { prompt_id: String, kind: PromptKind, text: String },
    Suppressed(SuppressReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerOutcome {
    pub t: f64,
    pub seq: usize,
    pub trigger: TriggerKind,
    pub outcome: Option<Outcome>,
}

/// Pair each trigger event in a log with its decision.
pub fn trigger_outcomes(events: &[Event]) -> Vec<TriggerOutcome> {
    let mut out: Vec<TriggerOutcome> = Vec::new();
    let mut by_seq = BTreeMap::new();
    for (seq, e) in events.iter().enumerate() {
        if let Some((trigger, _)) = e.body.trigger() {
            by_seq.insert(seq, out.len());
            out.push(TriggerOutcome {
                t: e.t,
                seq,
                trigger,
                outcome: None,
            });
            continue;
        }
        let (target, outcome) = match &e.body {
            EventBody::PromptDelivered(p) => (
                p.trigger_seq,
                Outcome::Delivered {
                    prompt_id: p.prompt_id.clone(),
                    kind: p.kind,
                    text: p.text.clone(),
                },
            ),
            EventBody::PromptSuppressed(p) => (p.trigger_seq, Outcome::Suppressed(p.reason)),
            _ => continue,
        };
        if let Some(&i) = by_seq.get(&target) {
            out[i].outcome = Some(outcome);
        }
    }
    out
}
