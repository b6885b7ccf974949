//! User profile, prompting preference and study condition.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// How often the walker is willing to be interrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyPref {
    Low,
    #[default]
    Medium,
    High,
}

impl FrequencyPref {
    /// Target distance between geofence-triggered prompts.
    pub fn target_spacing_m(self) -> f64 {
        match self {
            FrequencyPref::Low => 800.0,
            FrequencyPref::Medium => 500.0,
            FrequencyPref::High => 300.0,
        }
    }
}

impl FromStr for FrequencyPref {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(FrequencyPref::Low),
            "medium" => Ok(FrequencyPref::Medium),
            "high" => Ok(FrequencyPref::High),
            other => Err(ValidationError::new(format!(
                "unknown prompt frequency preference `{other}`"
            ))),
        }
    }
}

/// The experimental manipulation a session runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    InfoOnly,
    InfoMotive,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::InfoOnly => "info-only",
            Condition::InfoMotive => "info-motive",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "infoonly" => Ok(Condition::InfoOnly),
            "infomotive" | "infomotivation" => Ok(Condition::InfoMotive),
            _ => Err(ValidationError::new(format!("unknown condition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestTag {
    pub tag: String,
    pub weight: f64,
}

impl InterestTag {
    pub fn new(tag: impl Into<String>, weight: f64) -> Self {
        Self {
            tag: tag.into(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub interest_tags: Vec<InterestTag>,
    #[serde(default)]
    pub prompt_frequency_pref: FrequencyPref,
    /// Whether the walker wants a share card exported after the walk.
    #[serde(default)]
    pub share_opt_in: bool,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            display_name: None,
            interest_tags: Vec::new(),
            prompt_frequency_pref: FrequencyPref::Medium,
            share_opt_in: false,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.display_name = Some(name.into());
        self
    }

    pub fn with_interest(mut self, tag: impl Into<String>, weight: f64) -> Self {
        self.interest_tags.push(InterestTag::new(tag, weight));
        self
    }

    pub fn with_pref(mut self, pref: FrequencyPref) -> Self {
        self.prompt_frequency_pref = pref;
        self
    }

    pub fn with_share_opt_in(mut self, opt_in: bool) -> Self {
        self.share_opt_in = opt_in;
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.user_id.trim().is_empty() {
            return Err(ValidationError::new("user_id must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for it in &self.interest_tags {
            if !(0.0..=1.0).contains(&it.weight) {
                return Err(ValidationError::new(format!(
                    "interest weight for `{}` is {} (must be in [0, 1])",
                    it.tag, it.weight
                )));
            }
            if it.tag.trim().is_empty() {
                return Err(ValidationError::new("interest tag must not be empty"));
            }
            if !seen.insert(it.tag.to_lowercase()) {
                return Err(ValidationError::new(format!(
                    "duplicate interest tag `{}`",
                    it.tag
                )));
            }
        }
        Ok(())
    }

    /// Preference weight for a tag, 0 when the tag is not listed.
    pub fn weight_of(&self, tag: &str) -> f64 {
        self.interest_tags
            .iter()
            .find(|it| it.tag.eq_ignore_ascii_case(tag))
            .map(|it| it.weight)
            .unwrap_or(0.0)
    }
}
