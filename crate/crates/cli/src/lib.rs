//! HTTP service, log persistence and headless commands around the
//! walking-companion engine.

pub mod api;
pub mod backend;
pub mod commands;
pub mod error;

pub use api::{router, AppConfig, AppState};
pub use error::{ApiError, CliError};
