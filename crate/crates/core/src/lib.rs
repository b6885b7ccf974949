//! Walking-companion orchestration: route planning over POIs, progress
//! tracking, prompt scheduling, an event-sourced session, deterministic
//! agents, a walk simulator and the crossover-study statistics.

pub mod agents;
pub mod engine;
pub mod error;
pub mod geo;
pub mod profile;
pub mod scheduler;
pub mod session;
pub mod simulator;
pub mod stats;
pub mod telemetry;

pub use error::{Error, Result, ValidationError};
pub use profile::{Condition, FrequencyPref, UserProfile};
pub use session::{Event, EventBody, EventKind, Phase, SessionId, SessionState};
