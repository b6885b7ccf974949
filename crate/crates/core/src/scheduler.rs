//! Prompt gating: decides for every trigger whether to deliver a prompt,
//! of which kind, or to suppress it with a reason.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::Condition;
use crate::telemetry::{ContextFlag, ContextFlags, TriggerEvent, TriggerKind};

pub const MIN_INTERVAL_S: f64 = 90.0;
pub const MIN_MULTIPLIER: f64 = 1.0;
pub const MAX_MULTIPLIER: f64 = 2.0;
pub const BACKOFF_FACTOR: f64 = 1.5;
pub const RECOVERY_FACTOR: f64 = 0.8;
/// Consecutive ignores before the interval starts stretching.
pub const IGNORE_STREAK_THRESHOLD: u32 = 2;
pub const SEGMENT_QUOTA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("state error: feedback received but no prompt has been delivered")]
    NoDelivery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub last_prompt_t: Option<f64>,
    pub freq_multiplier: f64,
    pub ignored_streak: u32,
    pub prompts_in_segment: u32,
    pub min_interval_s: f64,
}

impl Default for GateState {
    fn default() -> Self {
        Self {
            last_prompt_t: None,
            freq_multiplier: MIN_MULTIPLIER,
            ignored_streak: 0,
            prompts_in_segment: 0,
            min_interval_s: MIN_INTERVAL_S,
        }
    }
}

impl GateState {
    /// Account for a delivered prompt at time `t`.
    pub fn register_delivery(&self, t: f64) -> GateState {
        GateState {
            last_prompt_t: Some(t),
            prompts_in_segment: self.prompts_in_segment + 1,
            ..self.clone()
        }
    }

    /// Reset the per-segment quota on entering a new geofence segment.
    pub fn enter_segment(&self) -> GateState {
        GateState {
            prompts_in_segment: 0,
            ..self.clone()
        }
    }

    pub fn effective_interval_s(&self) -> f64 {
        self.min_interval_s * self.freq_multiplier
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuppressReason {
    TooSoon,
    HighLoadContext,
    SegmentQuotaReached,
    FrequencyBackoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    Info,
    Motivation,
    InfoMotive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Engaged,
    Ignored,
    Dismissed,
}

/// A POI suggestion attached to a prompt context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyPoi {
    pub id: String,
    pub name: String,
    pub score: f64,
}

/// What the accompanying agent knows when it phrases a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ContextSnapshot {
    pub progress_fraction: f64,
    pub remaining_m: f64,
    pub walked_m: f64,
    pub pace_mps: Option<f64>,
    pub segment_index: usize,
    pub segment_count: usize,
    pub nearby: Vec<NearbyPoi>,
    pub flags: ContextFlags,
    pub display_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub trigger: TriggerEvent,
    pub kind: PromptKind,
    pub context: ContextSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Deliver(PromptRequest),
    Suppress(SuppressReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Suppress prompts while the walker is crossing a street. Disable to
    /// replay the behaviour of a deployment without this gate.
    pub suppress_high_load: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            suppress_high_load: true,
        }
    }
}

pub fn prompt_kind(trigger: &TriggerKind, condition: Condition) -> PromptKind {
    match (condition, trigger) {
        (Condition::InfoOnly, _) => PromptKind::Info,
        (Condition::InfoMotive, TriggerKind::Fatigue { .. }) => PromptKind::Motivation,
        (Condition::InfoMotive, _) => PromptKind::InfoMotive,
    }
}

/// Gate a trigger. Checks run in a fixed order: high-load context, minimum
/// interval, feedback backoff, then the per-segment quota for geofence
/// triggers (milestones and fatigue are exempt from the quota).
pub fn decide(
    event: &TriggerEvent,
    context: ContextSnapshot,
    gate: &GateState,
    condition: Condition,
    config: &SchedulerConfig,
) -> (Decision, GateState) {
    if config.suppress_high_load && event.flags.contains(&ContextFlag::Crossing) {
        return (Decision::Suppress(SuppressReason::HighLoadContext), gate.clone());
    }
    if let Some(last) = gate.last_prompt_t {
        let elapsed = event.t - last;
        if elapsed < gate.min_interval_s {
            return (Decision::Suppress(SuppressReason::TooSoon), gate.clone());
        }
        if elapsed < gate.effective_interval_s() {
            return (Decision::Suppress(SuppressReason::FrequencyBackoff), gate.clone());
        }
    }
    if event.kind.is_geofence() && gate.prompts_in_segment >= SEGMENT_QUOTA {
        return (Decision::Suppress(SuppressReason::SegmentQuotaReached), gate.clone());
    }
    let request = PromptRequest {
        trigger: event.clone(),
        kind: prompt_kind(&event.kind, condition),
        context,
    };
    (Decision::Deliver(request), gate.register_delivery(event.t))
}

/// Adapt prompt density to engagement.
pub fn record_feedback(gate: &GateState, feedback: Feedback) -> Result<GateState, SchedulerError> {
    if gate.last_prompt_t.is_none() {
        return Err(SchedulerError::NoDelivery);
    }
    let mut next = gate.clone();
    match feedback {
        Feedback::Ignored | Feedback::Dismissed => {
            next.ignored_streak += 1;
            if next.ignored_streak >= IGNORE_STREAK_THRESHOLD {
                next.freq_multiplier = (next.freq_multiplier * BACKOFF_FACTOR).min(MAX_MULTIPLIER);
            }
        }
        Feedback::Engaged => {
            next.ignored_streak = 0;
            next.freq_multiplier = (next.freq_multiplier * RECOVERY_FACTOR).max(MIN_MULTIPLIER);
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trigger(t: f64, kind: TriggerKind, flags: &[ContextFlag]) -> TriggerEvent {
        TriggerEvent {
            t,
            kind,
            flags: flags.iter().copied().collect(),
        }
    }

    const GEO1: TriggerKind = TriggerKind::GeofenceEntry { segment_index: 1 };
    const FATIGUE: TriggerKind = TriggerKind::Fatigue {
        current_pace: 0.9,
        reference_pace: 1.4,
    };

    fn delivered_at(t: f64) -> GateState {
        GateState::default().register_delivery(t).enter_segment()
    }

    #[test]
    fn crossing_suppresses() {
        let ev = trigger(500.0, GEO1, &[ContextFlag::Crossing]);
        let (d, g) = decide(&ev, ContextSnapshot::default(), &GateState::default(), Condition::InfoMotive, &SchedulerConfig::default());
        assert_eq!(d, Decision::Suppress(SuppressReason::HighLoadContext));
        assert_eq!(g, GateState::default());
    }

    #[test]
    fn crossing_gate_can_be_disabled() {
        let ev = trigger(500.0, GEO1, &[ContextFlag::Crossing]);
        let cfg = SchedulerConfig { suppress_high_load: false };
        let (d, _) = decide(&ev, ContextSnapshot::default(), &GateState::default(), Condition::InfoMotive, &cfg);
        assert!(matches!(d, Decision::Deliver(_)));
    }

    #[test]
    fn fatigue_delivers_motivation() {
        let gate = delivered_at(100.0);
        let ev = trigger(300.0, FATIGUE, &[]);
        let (d, g) = decide(&ev, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        match d {
            Decision::Deliver(req) => assert_eq!(req.kind, PromptKind::Motivation),
            other => panic!("expected delivery, got {other:?}"),
        }
        assert_eq!(g.last_prompt_t, Some(300.0));
    }

    #[test]
    fn too_soon_after_previous_prompt() {
        let gate = delivered_at(100.0);
        let ev = trigger(130.0, GEO1, &[]);
        let (d, _) = decide(&ev, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        assert_eq!(d, Decision::Suppress(SuppressReason::TooSoon));
    }

    #[test]
    fn backoff_window_reports_its_own_reason() {
        let mut gate = delivered_at(100.0);
        gate.freq_multiplier = 1.5;
        let ev = trigger(200.0, GEO1, &[]);
        let (d, _) = decide(&ev, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        assert_eq!(d, Decision::Suppress(SuppressReason::FrequencyBackoff));
        let ev = trigger(235.0, GEO1, &[]);
        let (d, _) = decide(&ev, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        assert!(matches!(d, Decision::Deliver(_)));
    }

    #[test]
    fn quota_applies_to_geofence_only() {
        let gate = GateState::default().register_delivery(0.0);
        assert_eq!(gate.prompts_in_segment, 1);
        let geo = trigger(500.0, GEO1, &[]);
        let (d, _) = decide(&geo, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        assert_eq!(d, Decision::Suppress(SuppressReason::SegmentQuotaReached));
        let ms = trigger(500.0, TriggerKind::Milestone { fraction: 0.5 }, &[]);
        let (d, _) = decide(&ms, ContextSnapshot::default(), &gate, Condition::InfoMotive, &SchedulerConfig::default());
        assert!(matches!(d, Decision::Deliver(_)));
    }

    #[test]
    fn info_only_always_maps_to_info() {
        for kind in [GEO1, FATIGUE, TriggerKind::Milestone { fraction: 0.75 }] {
            assert_eq!(prompt_kind(&kind, Condition::InfoOnly), PromptKind::Info);
        }
        assert_eq!(prompt_kind(&GEO1, Condition::InfoMotive), PromptKind::InfoMotive);
    }

    #[test]
    fn feedback_examples() {
        let g = GateState::default().register_delivery(10.0);
        let g = record_feedback(&g, Feedback::Ignored).unwrap();
        assert_eq!(g.freq_multiplier, 1.0);
        let g = record_feedback(&g, Feedback::Ignored).unwrap();
        assert_abs_diff_eq!(g.freq_multiplier, 1.5);

        let mut capped = GateState::default().register_delivery(10.0);
        capped.freq_multiplier = 2.0;
        let capped = record_feedback(&capped, Feedback::Ignored).unwrap();
        let capped = record_feedback(&capped, Feedback::Ignored).unwrap();
        assert_eq!(capped.freq_multiplier, 2.0);

        let mut g = GateState::default().register_delivery(10.0);
        g.freq_multiplier = 1.5;
        g.ignored_streak = 3;
        let g = record_feedback(&g, Feedback::Engaged).unwrap();
        assert_abs_diff_eq!(g.freq_multiplier, 1.2, epsilon = 1e-12);
        assert_eq!(g.ignored_streak, 0);
    }

    #[test]
    fn feedback_without_delivery_is_an_error() {
        assert_eq!(
            record_feedback(&GateState::default(), Feedback::Engaged),
            Err(SchedulerError::NoDelivery)
        );
    }

    proptest! {
        #[test]
        fn multiplier_stays_in_bounds(seq in proptest::collection::vec(0u8..3, 0..60)) {
            let mut g = GateState::default().register_delivery(0.0);
            for s in seq {
                let fb = [Feedback::Engaged, Feedback::Ignored, Feedback::Dismissed][s as usize];
                g = record_feedback(&g, fb).unwrap();
                prop_assert!(g.freq_multiplier >= MIN_MULTIPLIER && g.freq_multiplier <= MAX_MULTIPLIER);
            }
        }

        #[test]
        fn deliveries_respect_min_interval(
            gaps in proptest::collection::vec(1.0f64..200.0, 1..80),
            kinds in proptest::collection::vec(0u8..3, 80),
            crossing in proptest::collection::vec(any::<bool>(), 80),
        ) {
            let mut gate = GateState::default();
            let mut t = 0.0;
            let mut delivered: Vec<f64> = Vec::new();
            for (i, gap) in gaps.iter().enumerate() {
                t += gap;
                let kind = match kinds[i] {
                    0 => TriggerKind::GeofenceEntry { segment_index: i + 1 },
                    1 => TriggerKind::Milestone { fraction: 0.5 },
                    _ => FATIGUE,
                };
                if kind.is_geofence() {
                    gate = gate.enter_segment();
                }
                let flags: &[ContextFlag] = if crossing[i] { &[ContextFlag::Crossing] } else { &[] };
                let (d, g) = decide(&trigger(t, kind, flags), ContextSnapshot::default(), &gate, Condition::InfoOnly, &SchedulerConfig::default());
                if let Decision::Deliver(req) = d {
                    prop_assert_eq!(req.kind, PromptKind::Info);
                    delivered.push(t);
                }
                gate = g;
            }
            for w in delivered.windows(2) {
                prop_assert!(w[1] - w[0] >= MIN_INTERVAL_S);
            }
        }
    }
}
