//! Per-session orchestration: routes user messages through the bridging
//! agent and drives ticks through telemetry, the scheduler and the
//! accompanying agent. Every outcome lands in the session log.

use std::sync::Arc;

use crate::agents::{
    accompany_prompt, accompany_reply, bridge_route, summarize_walk, AgentError, AgentRole, GenerationBackend,
    GeographyAgent, IntentTable, PlanRequest, RoutingClient, StraightLineRouter, TemplateBackend, WalkSummary,
    DEFAULT_SEARCH_RADIUS_M,
};
use crate::error::Result;
use crate::geo::{nearby_pois_in_segment, segment_route, GeoPoint, PoiProvider, PoiStore, RoutePlan};
use crate::profile::{Condition, UserProfile};
use crate::scheduler::{decide, ContextSnapshot, Decision, Feedback, NearbyPoi, SchedulerConfig};
use crate::session::{
    tick_record, ChatIn, ChatOut, Event, EventBody, FeedbackPayload, Phase, PromptDelivered, PromptSuppressed,
    RouteConfirmed, SessionError, SessionId, SessionState,
};
use crate::telemetry::{TriggerEvent, TriggerKind, WalkTick};

/// One generation backend per agent, so each can be swapped independently.
#[derive(Clone)]
pub struct AgentBackends {
    pub bridge: Arc<dyn GenerationBackend>,
    pub geography: Arc<dyn GenerationBackend>,
    pub accompany: Arc<dyn GenerationBackend>,
    pub summary: Arc<dyn GenerationBackend>,
}

impl AgentBackends {
    pub fn uniform(backend: Arc<dyn GenerationBackend>) -> Self {
        Self {
            bridge: backend.clone(),
            geography: backend.clone(),
            accompany: backend.clone(),
            summary: backend,
        }
    }
}

impl Default for AgentBackends {
    fn default() -> Self {
        Self::uniform(Arc::new(TemplateBackend::default()))
    }
}

/// Shared, read-only resources the agents draw on.
#[derive(Clone)]
pub struct Services {
    pub store: Arc<PoiStore>,
    pub provider: Option<Arc<dyn PoiProvider>>,
    pub routing: Arc<dyn RoutingClient>,
    pub backends: AgentBackends,
    pub table: Arc<IntentTable>,
}

impl Default for Services {
    fn default() -> Self {
        Self {
            store: Arc::new(PoiStore::default()),
            provider: None,
            routing: Arc::new(StraightLineRouter),
            backends: AgentBackends::default(),
            table: Arc::new(IntentTable::builtin().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub seed: u64,
    /// Where planning starts.
    pub origin: GeoPoint,
    pub search_radius_m: f64,
    pub scheduler: SchedulerConfig,
}

impl EngineConfig {
    pub fn new(origin: GeoPoint) -> Self {
        Self {
            seed: 0,
            origin,
            search_radius_m: DEFAULT_SEARCH_RADIUS_M,
            scheduler: SchedulerConfig::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Mix the session seed with a log position.
pub fn derive_seed(seed: u64, position: usize) -> u64 {
    let mut z = seed ^ (position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct SessionEngine {
    state: SessionState,
    services: Services,
    config: EngineConfig,
}

impl SessionEngine {
    pub fn new(profile: UserProfile, condition: Condition, services: Services, config: EngineConfig) -> Result<Self> {
        Self::with_id(SessionId::random(), profile, condition, services, config)
    }

    pub fn with_id(
        id: SessionId,
        profile: UserProfile,
        condition: Condition,
        services: Services,
        config: EngineConfig,
    ) -> Result<Self> {
        Ok(Self {
            state: SessionState::with_id(id, profile, condition)?,
            services,
            config,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn into_state(self) -> SessionState {
        self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn seed(&self) -> u64 {
        derive_seed(self.config.seed, self.state.event_log.len())
    }

    fn push(&mut self, t: f64, body: EventBody, out: &mut Vec<Event>) -> Result<usize> {
        let seq = self.state.append_event(Event::new(t, body))?;
        out.push(self.state.event_log[seq].clone());
        Ok(seq)
    }

    /// Conversation turn in any open phase.
    pub fn chat(&mut self, t: f64, text: &str) -> Result<Vec<Event>> {
        if self.state.phase == Phase::Closed {
            return Err(SessionError::Closed.into());
        }
        let mut out = Vec::new();
        self.push(t, EventBody::ChatIn(ChatIn { text: text.to_string() }), &mut out)?;
        let inv = bridge_route(
            text,
            &self.state,
            &self.services.table,
            self.services.backends.bridge.as_ref(),
            self.seed(),
        )
        .map_err(|e| match e {
            AgentError::SessionClosed => crate::Error::Session(SessionError::Closed),
            other => other.into(),
        })?;
        let token = inv.token.render();
        let mut ack = ChatOut::text(AgentRole::Bridge, inv.reply.clone());
        ack.token = Some(token.clone());
        self.push(t, EventBody::ChatOut(ack), &mut out)?;

        let seed = self.seed();
        let reply = match self.state.phase {
            Phase::Planning => self.plan_reply(text, inv.token, &inv.intent, seed),
            Phase::Walking => ChatOut::text(
                AgentRole::Accompany,
                accompany_reply(&inv.intent, &self.state, self.services.backends.accompany.as_ref(), seed),
            ),
            _ => {
                let summary = self.summary(seed);
                let mut o = ChatOut::text(AgentRole::Summary, summary.summary_text.clone());
                o.summary = Some(summary);
                o
            }
        };
        let mut reply = reply;
        reply.token = Some(token);
        self.push(t, EventBody::ChatOut(reply), &mut out)?;
        Ok(out)
    }

    fn plan_reply(&self, text: &str, token: crate::agents::ActionToken, intent: &str, seed: u64) -> ChatOut {
        let backend = self.services.backends.geography.as_ref();
        let agent = GeographyAgent {
            store: &self.services.store,
            provider: self.services.provider.as_deref(),
            routing: self.services.routing.as_ref(),
            backend,
        };
        let mut req = PlanRequest::new(text, token, self.config.origin);
        req.radius_m = self.config.search_radius_m;
        if intent == "poi_detail" {
            if let Some(d) = agent.detail(&req, self.state.condition, seed) {
                return ChatOut::text(AgentRole::Geography, d);
            }
        }
        if intent == "route_alternative" {
            if let Some(p) = &self.state.proposal {
                req.exclude = p.shortlist.iter().map(|e| e.id.clone()).collect();
            }
        }
        match agent.plan(&req, &self.state.profile, self.state.condition, seed) {
            Ok(plan) => {
                let mut o = ChatOut::text(AgentRole::Geography, plan.reply);
                o.shortlist = Some(plan.shortlist);
                o.route = Some(segment_route(plan.route, self.state.profile.prompt_frequency_pref));
                o
            }
            Err(e) => {
                let apology = backend
                    .generate(
                        AgentRole::Geography,
                        "apology",
                        &serde_json::json!({}),
                        self.state.condition,
                        seed,
                    )
                    .unwrap_or_else(|_| "Sorry, I could not plan a route for that request.".into());
                let mut o = ChatOut::text(AgentRole::Geography, apology);
                o.error = Some(e.to_string());
                o
            }
        }
    }

    /// Confirm the latest route proposal from the planning conversation.
    pub fn confirm_route(&mut self, t: f64) -> Result<Vec<Event>> {
        let route = self
            .state
            .proposal
            .as_ref()
            .map(|p| p.route.clone())
            .ok_or_else(|| SessionError::Precondition("no route has been proposed yet".into()))?;
        self.confirm_custom_route(t, route)
    }

    /// Confirm a scripted route; unsegmented routes are segmented by the
    /// profile's preference.
    pub fn confirm_custom_route(&mut self, t: f64, route: RoutePlan) -> Result<Vec<Event>> {
        let route = if route.segments.is_empty() {
            segment_route(route, self.state.profile.prompt_frequency_pref)
        } else {
            route
        };
        let mut out = Vec::new();
        self.push(t, EventBody::RouteConfirmed(RouteConfirmed { route }), &mut out)?;
        Ok(out)
    }

    pub fn start_walk(&mut self, t: f64) -> Result<Vec<Event>> {
        self.state.transition(Phase::Walking, t)?;
        Ok(vec![self.state.event_log.last().cloned().expect("just appended")])
    }

    /// Session time of a tick whose `t` counts from the walk start.
    pub fn session_time(&self, walk_t: f64) -> f64 {
        self.state.walk_start_t.unwrap_or(0.0) + walk_t
    }

    /// Ingest one tick (walk time) and decide on every trigger it raises.
    pub fn ingest_tick(&mut self, tick: &WalkTick) -> Result<Vec<Event>> {
        if self.state.phase != Phase::Walking {
            return Err(match self.state.phase {
                Phase::Closed => SessionError::Closed,
                phase => SessionError::WrongPhase {
                    action: "tick ingestion",
                    phase,
                },
            }
            .into());
        }
        let route = self.state.route.clone().expect("route present while walking");
        let step = self.state.tracker.step(&route, tick).map_err(SessionError::from)?;
        let t = self.session_time(tick.t);
        let mut out = Vec::new();
        self.push(t, EventBody::Tick(tick_record(tick, &step.tracker)), &mut out)?;

        for trig in &step.triggers {
            let seq = self.push(t, EventBody::from_trigger(&trig.kind, &trig.flags), &mut out)?;
            let event = TriggerEvent {
                t,
                kind: trig.kind,
                flags: trig.flags.clone(),
            };
            let context = self.snapshot(&route, &event)?;
            let (decision, _) = decide(&event, context, &self.state.gate, self.state.condition, &self.config.scheduler);
            let body = match decision {
                Decision::Deliver(req) => {
                    let msg = accompany_prompt(
                        &req,
                        self.services.backends.accompany.as_ref(),
                        self.state.condition,
                        self.seed(),
                    );
                    EventBody::PromptDelivered(PromptDelivered {
                        prompt_id: format!("p{}", self.state.prompts.len() + 1),
                        trigger_seq: seq,
                        kind: msg.kind,
                        text: msg.text,
                        fallback: msg.fallback,
                        nearby: msg.nearby,
                    })
                }
                Decision::Suppress(reason) => EventBody::PromptSuppressed(PromptSuppressed { trigger_seq: seq, reason }),
            };
            self.push(t, body, &mut out)?;
        }
        Ok(out)
    }

    fn snapshot(&self, route: &RoutePlan, event: &TriggerEvent) -> Result<ContextSnapshot> {
        let tracker = &self.state.tracker;
        let segment_index = match event.kind {
            TriggerKind::GeofenceEntry { segment_index } => segment_index,
            _ => tracker.progress.segment_index,
        };
        let nearby = nearby_pois_in_segment(route, segment_index, &self.services.store, &self.state.profile)?
            .into_iter()
            .map(|(p, score)| NearbyPoi {
                id: p.id,
                name: p.name,
                score,
            })
            .collect();
        let walked = tracker.max_fraction * route.total_length_m;
        Ok(ContextSnapshot {
            progress_fraction: tracker.max_fraction,
            remaining_m: (route.total_length_m - walked).max(0.0),
            walked_m: walked,
            pace_mps: tracker.current_pace,
            segment_index,
            segment_count: route.segments.len(),
            nearby,
            flags: event.flags.clone(),
            display_name: self.state.profile.display_name.clone(),
        })
    }

    pub fn feedback(&mut self, t: f64, prompt_id: &str, feedback: Feedback) -> Result<Vec<Event>> {
        let mut out = Vec::new();
        self.push(
            t,
            EventBody::Feedback(FeedbackPayload {
                prompt_id: prompt_id.to_string(),
                feedback,
            }),
            &mut out,
        )?;
        Ok(out)
    }

    fn summary(&self, seed: u64) -> WalkSummary {
        let names: Vec<String> = self
            .state
            .route
            .as_ref()
            .map(|r| {
                r.waypoints
                    .iter()
                    .map(|id| self.services.store.get(id).map(|p| p.name.clone()).unwrap_or_else(|| id.clone()))
                    .collect()
            })
            .unwrap_or_default();
        summarize_walk(
            &self.state.stats,
            self.state.route.as_ref(),
            &self.state.profile,
            &names,
            &self.state.event_log,
            self.services.backends.summary.as_ref(),
            self.state.condition,
            seed,
        )
    }

    /// End the walk (early or at the destination) and produce the summary.
    pub fn finish(&mut self, t: f64) -> Result<(Vec<Event>, WalkSummary)> {
        let mut out = Vec::new();
        self.state.transition(Phase::Summary, t)?;
        out.push(self.state.event_log.last().cloned().expect("just appended"));
        let summary = self.summary(self.seed());
        let mut o = ChatOut::text(AgentRole::Summary, summary.summary_text.clone());
        o.summary = Some(summary.clone());
        o.stats = Some(self.state.stats.clone());
        self.push(t, EventBody::ChatOut(o), &mut out)?;
        Ok((out, summary))
    }

    pub fn close(&mut self, t: f64) -> Result<Vec<Event>> {
        self.state.transition(Phase::Closed, t)?;
        Ok(vec![self.state.event_log.last().cloned().expect("just appended")])
    }
}
