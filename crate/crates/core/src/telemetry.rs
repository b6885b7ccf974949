//! Walk-tick ingestion and trigger detection: geofence entries, progress
//! milestones and fatigue from a sliding-window pace estimate.
//!
//! Telemetry only *emits* triggers. Whether a trigger turns into a prompt
//! (context flags, rate limits) is decided by the scheduler.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ValidationError;
use crate::geo::{haversine_m, project_progress, GeoPoint, ProgressInfo, RoutePlan};

pub const PACE_WINDOW_S: f64 = 60.0;
/// Relative pace drop that counts as a slow-down.
pub const FATIGUE_DROP: f64 = 0.30;
pub const FATIGUE_SUSTAIN_S: f64 = 15.0;
pub const FATIGUE_DEBOUNCE_S: f64 = 120.0;
/// Paces at or below this are treated as a stop, not fatigue.
pub const STOP_FLOOR_MPS: f64 = 0.2;
pub const MILESTONES: [f64; 3] = [0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("ordering error: tick at t={t} does not follow t={last}")]
    Ordering { t: f64, last: f64 },
    #[error("ordering error: tick at t={0} precedes the walk start")]
    BeforeStart(f64),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextFlag {
    #[serde(alias = "Crossing")]
    Crossing,
    #[serde(alias = "Noisy")]
    Noisy,
    #[serde(alias = "Conversing")]
    Conversing,
}

pub type ContextFlags = BTreeSet<ContextFlag>;

/// A timestamped position sample. Wire form: `{t, lat, lon, flags[]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TickWire", into = "TickWire")]
pub struct WalkTick {
    /// Seconds since walk start.
    pub t: f64,
    pub location: GeoPoint,
    pub flags: ContextFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TickWire {
    t: f64,
    lat: f64,
    lon: f64,
    #[serde(default)]
    flags: Vec<ContextFlag>,
}

impl TryFrom<TickWire> for WalkTick {
    type Error = ValidationError;

    fn try_from(w: TickWire) -> Result<Self, Self::Error> {
        if !w.t.is_finite() {
            return Err(ValidationError::new("tick time must be finite"));
        }
        Ok(WalkTick {
            t: w.t,
            location: GeoPoint::new(w.lat, w.lon)?,
            flags: w.flags.into_iter().collect(),
        })
    }
}

impl From<WalkTick> for TickWire {
    fn from(t: WalkTick) -> Self {
        TickWire {
            t: t.t,
            lat: t.location.lat,
            lon: t.location.lon,
            flags: t.flags.into_iter().collect(),
        }
    }
}

impl WalkTick {
    pub fn new(t: f64, location: GeoPoint) -> Self {
        Self {
            t,
            location,
            flags: ContextFlags::new(),
        }
    }

    pub fn with_flags(mut self, flags: impl IntoIterator<Item = ContextFlag>) -> Self {
        self.flags = flags.into_iter().collect();
        self
    }
}

// ---------------------------------------------------------------------------
// Pace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaceWindow {
    pub window_s: f64,
    samples: VecDeque<(f64, GeoPoint)>,
}

impl Default for PaceWindow {
    fn default() -> Self {
        Self::new(PACE_WINDOW_S)
    }
}

impl PaceWindow {
    pub fn new(window_s: f64) -> Self {
        Self {
            window_s,
            samples: VecDeque::new(),
        }
    }

    /// Add a sample and drop everything older than `window_s` before it.
    pub fn push(&mut self, t: f64, p: GeoPoint) {
        self.samples.push_back((t, p));
        while let Some(&(t0, _)) = self.samples.front() {
            if t - t0 > self.window_s {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span_s(&self) -> f64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }
}

/// Mean pace over the window; `None` with fewer than two samples.
pub fn window_pace(window: &PaceWindow) -> Option<f64> {
    if window.samples.len() < 2 {
        return None;
    }
    let dt = window.span_s();
    if dt <= 0.0 {
        return None;
    }
    let dist: f64 = window
        .samples
        .iter()
        .zip(window.samples.iter().skip(1))
        .map(|(a, b)| haversine_m(a.1, b.1))
        .sum();
    Some(dist / dt)
}

// ---------------------------------------------------------------------------
// Triggers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerKind {
    GeofenceEntry { segment_index: usize },
    Milestone { fraction: f64 },
    Fatigue { current_pace: f64, reference_pace: f64 },
}

impl TriggerKind {
    pub fn is_geofence(&self) -> bool {
        matches!(self, TriggerKind::GeofenceEntry { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub t: f64,
    pub kind: TriggerKind,
    pub flags: ContextFlags,
}

/// Milestone thresholds crossed in `(prev, new]`, in ascending order.
pub fn detect_milestone(prev_fraction: f64, new_fraction: f64) -> Vec<TriggerKind> {
    MILESTONES
        .iter()
        .filter(|&&m| prev_fraction < m && m <= new_fraction)
        .map(|&fraction| TriggerKind::Milestone { fraction })
        .collect()
}

/// Sustain/debounce bookkeeping for fatigue detection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FatigueDetector {
    below_since: Option<f64>,
    last_fired: Option<f64>,
}

impl FatigueDetector {
    pub fn last_fired(&self) -> Option<f64> {
        self.last_fired
    }
}

/// Fires when the current pace sits below `(1 - FATIGUE_DROP) × reference`
/// for `FATIGUE_SUSTAIN_S`, is above the stop floor, and the previous
/// fatigue trigger is at least `FATIGUE_DEBOUNCE_S` old.
pub fn detect_fatigue(
    t: f64,
    current: Option<f64>,
    reference: Option<f64>,
    state: &mut FatigueDetector,
) -> Option<TriggerKind> {
    let (current, reference) = match (current, reference) {
        (Some(c), Some(r)) if r > 0.0 => (c, r),
        _ => {
            state.below_since = None;
            return None;
        }
    };
    let slow = current > STOP_FLOOR_MPS && current < (1.0 - FATIGUE_DROP) * reference;
    if !slow {
        state.below_since = None;
        return None;
    }
    let since = *state.below_since.get_or_insert(t);
    if t - since < FATIGUE_SUSTAIN_S {
        return None;
    }
    if let Some(last) = state.last_fired {
        if t - last < FATIGUE_DEBOUNCE_S {
            return None;
        }
    }
    state.last_fired = Some(t);
    Some(TriggerKind::Fatigue {
        current_pace: current,
        reference_pace: reference,
    })
}

// ---------------------------------------------------------------------------
// Per-walk tracker
// ---------------------------------------------------------------------------

/// Everything telemetry remembers between ticks of one walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTracker {
    pub progress: ProgressInfo,
    /// Highest fraction reached so far.
    pub max_fraction: f64,
    pub last_tick_t: Option<f64>,
    pub entered_segment: usize,
    pub current_pace: Option<f64>,
    /// Mean pace of the most recently completed segment.
    pub reference_pace: Option<f64>,
    pub path_m: f64,
    window: PaceWindow,
    fatigue: FatigueDetector,
    last_point: Option<GeoPoint>,
    segment_path_m: f64,
    segment_start_t: f64,
}

impl Default for WalkTracker {
    fn default() -> Self {
        Self {
            progress: ProgressInfo::start(),
            max_fraction: 0.0,
            last_tick_t: None,
            entered_segment: 0,
            current_pace: None,
            reference_pace: None,
            path_m: 0.0,
            window: PaceWindow::default(),
            fatigue: FatigueDetector::default(),
            last_point: None,
            segment_path_m: 0.0,
            segment_start_t: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickStep {
    pub tracker: WalkTracker,
    pub progress: ProgressInfo,
    /// Ordered GeofenceEntry < Milestone < Fatigue.
    pub triggers: Vec<TriggerEvent>,
}

impl WalkTracker {
    /// Advance by one tick without mutating `self`.
    pub fn step(&self, route: &RoutePlan, tick: &WalkTick) -> Result<TickStep, TelemetryError> {
        if tick.t < 0.0 {
            return Err(TelemetryError::BeforeStart(tick.t));
        }
        if let Some(last) = self.last_tick_t {
            if !(tick.t > last) {
                return Err(TelemetryError::Ordering { t: tick.t, last });
            }
        }
        let mut next = self.clone();
        let progress = project_progress(route, tick.location, &self.progress);
        let step_m = self.last_point.map(|p| haversine_m(p, tick.location)).unwrap_or(0.0);
        next.path_m += step_m;
        next.segment_path_m += step_m;
        next.window.push(tick.t, tick.location);
        next.current_pace = window_pace(&next.window);
        next.last_point = Some(tick.location);
        next.last_tick_t = Some(tick.t);
        next.progress = progress;

        let mut kinds = Vec::new();
        if progress.segment_index > self.entered_segment {
            let elapsed = tick.t - self.segment_start_t;
            if elapsed > 0.0 {
                next.reference_pace = Some(next.segment_path_m / elapsed);
            }
            next.segment_path_m = 0.0;
            next.segment_start_t = tick.t;
            for k in self.entered_segment + 1..=progress.segment_index {
                kinds.push(TriggerKind::GeofenceEntry { segment_index: k });
            }
            next.entered_segment = progress.segment_index;
        }

        let new_max = self.max_fraction.max(progress.fraction);
        kinds.extend(detect_milestone(self.max_fraction, new_max));
        next.max_fraction = new_max;

        if let Some(f) = detect_fatigue(tick.t, next.current_pace, next.reference_pace, &mut next.fatigue) {
            kinds.push(f);
        }

        let triggers = kinds
            .into_iter()
            .map(|kind| TriggerEvent {
                t: tick.t,
                kind,
                flags: tick.flags.clone(),
            })
            .collect();
        Ok(TickStep {
            tracker: next,
            progress,
            triggers,
        })
    }
}
