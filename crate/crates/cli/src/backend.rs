//! Live generation backend speaking a vendor-neutral chat-completions
//! JSON protocol, configured from the environment.
//!
//! Request: `POST {base_url}/chat/completions` with
//! `{"model", "seed", "messages": [{"role": "system", "content"}, {"role": "user", "content"}]}`
//! where the user message is the agent's JSON context. Response:
//! `{"choices": [{"message": {"content": "..."}}]}`.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};
use walkcoach_core::agents::{AgentError, AgentRole, GenerationBackend};
use walkcoach_core::Condition;

pub const ENV_BACKEND: &str = "WALKCOACH_BACKEND";
pub const ENV_BASE_URL: &str = "WALKCOACH_LLM_BASE_URL";
pub const ENV_MODEL: &str = "WALKCOACH_LLM_MODEL";
pub const ENV_API_KEY: &str = "WALKCOACH_LLM_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub struct HttpBackend {
    pub base_url: String,
    pub model: String,
    api_key: Option<String>,
    pub timeout: Duration,
    // built lazily so construction is safe inside an async runtime
    client: OnceLock<reqwest::blocking::Client>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "***"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            timeout: DEFAULT_TIMEOUT,
            client: OnceLock::new(),
        }
    }

    /// `Ok(None)` selects the built-in templates.
    pub fn from_env() -> Result<Option<Self>, String> {
        let kind = std::env::var(ENV_BACKEND).unwrap_or_else(|_| "template".into());
        match kind.trim().to_ascii_lowercase().as_str() {
            "" | "template" => Ok(None),
            "http" | "live" => {
                let base = std::env::var(ENV_BASE_URL).map_err(|_| format!("{ENV_BACKEND}=http needs {ENV_BASE_URL}"))?;
                let model = std::env::var(ENV_MODEL).map_err(|_| format!("{ENV_BACKEND}=http needs {ENV_MODEL}"))?;
                Ok(Some(Self::new(base, model, std::env::var(ENV_API_KEY).ok())))
            }
            other => Err(format!("unknown {ENV_BACKEND} `{other}` (expected template or http)")),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, AgentError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| AgentError::Backend(e.to_string()))?;
        Ok(self.client.get_or_init(|| c))
    }
}

pub fn system_prompt(role: AgentRole, intent: &str, condition: Condition) -> String {
    let style = match condition {
        Condition::InfoOnly => "State facts only. Do not praise, encourage or motivate.",
        Condition::InfoMotive => "Be warm and encouraging without giving orders; ask rather than instruct.",
    };
    format!(
        "You are the {} agent of a walking companion. Task: {intent}. Reply with one or two short sentences \
         using only the JSON context you are given. {style}",
        role.as_str()
    )
}

pub fn request_body(model: &str, role: AgentRole, intent: &str, context: &Value, condition: Condition, seed: u64) -> Value {
    json!({
        "model": model,
        "seed": seed,
        "messages": [
            {"role": "system", "content": system_prompt(role, intent, condition)},
            {"role": "user", "content": context.to_string()},
        ],
    })
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, role: AgentRole, intent: &str, context: &Value, condition: Condition, seed: u64) -> Result<String, AgentError> {
        let mut req = self
            .client()?
            .post(format!("{}/chat/completions", self.base_url))
            .json(&request_body(&self.model, role, intent, context, condition, seed));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AgentError::Backend(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(AgentError::Backend(format!("backend returned {}", resp.status())));
        }
        let body: Value = resp.json().map_err(|e| AgentError::Backend(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| AgentError::Backend("response has no choices[0].message.content".into()))
    }
}
