//! Debounced no-mask alerts, delivered on a background thread to a log sink
//! and an optional webhook, with retries and a dead-letter file.

mod dispatcher;
mod sinks;

use std::collections::HashMap;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use dispatcher::{replay_deadletter, AlertDispatcher, AlertSettings, DispatchStats, ReplayReport, SubmitOutcome};
pub use sinks::{deliver_webhook, AlertSink, LogSink, WebhookSink};

pub const NO_MASK_LABEL: &str = "No Mask";
pub const ALERTS_LOG: &str = "alerts.jsonl";
pub const DELIVERED_LOG: &str = "delivered.jsonl";
pub const DEADLETTER_LOG: &str = "deadletter.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum AlertError {
    #[error("invalid alert event: {0}")]
    Invalid(String),
    #[error("alert configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl AlertError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        AlertError::Io { path: path.to_path_buf(), source }
    }
}

/// Webhook payload and log record for one alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub event_id: String,
    pub timestamp: DateTime<Utc>,
    pub source_id: String,
    pub label: String,
    pub confidence: f64,
    pub frame_index: u64,
    pub snapshot_path: Option<String>,
}

impl AlertEvent {
    pub fn no_mask(source_id: &str, confidence: f64, frame_index: u64, timestamp: DateTime<Utc>) -> Self {
        AlertEvent {
            event_id: uuid::Uuid::new_v4().to_string(),
            timestamp,
            source_id: source_id.to_string(),
            label: NO_MASK_LABEL.to_string(),
            confidence,
            frame_index,
            snapshot_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), AlertError> {
        if self.label != NO_MASK_LABEL {
            return Err(AlertError::Invalid(format!("label must be {NO_MASK_LABEL:?}, got {:?}", self.label)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(AlertError::Invalid(format!("confidence {} outside [0,1]", self.confidence)));
        }
        if self.event_id.is_empty() {
            return Err(AlertError::Invalid("empty event_id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebounceScope {
    #[default]
    PerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebouncePolicy {
    /// Seconds; 0 disables debouncing.
    pub cooldown_s: f64,
    #[serde(default)]
    pub scope: DebounceScope,
}

impl Default for DebouncePolicy {
    fn default() -> Self {
        DebouncePolicy { cooldown_s: 10.0, scope: DebounceScope::PerSource }
    }
}

impl DebouncePolicy {
    pub fn new(cooldown_s: f64) -> Result<Self, AlertError> {
        if !cooldown_s.is_finite() || cooldown_s < 0.0 {
            return Err(AlertError::Config(format!("cooldown {cooldown_s} must be a finite value >= 0")));
        }
        Ok(DebouncePolicy { cooldown_s, scope: DebounceScope::PerSource })
    }

    pub fn disabled() -> Self {
        DebouncePolicy { cooldown_s: 0.0, scope: DebounceScope::PerSource }
    }
}

/// Per-source time of the last dispatch.
#[derive(Debug, Default)]
pub struct Debouncer {
    policy: DebouncePolicy,
    last: HashMap<String, DateTime<Utc>>,
}

impl Debouncer {
    pub fn new(policy: DebouncePolicy) -> Self {
        Debouncer { policy, last: HashMap::new() }
    }

    /// True (and recorded) when `source` has no dispatch within the cooldown
    /// before `at`.
    pub fn admit(&mut self, source: &str, at: DateTime<Utc>) -> bool {
        if self.policy.cooldown_s <= 0.0 {
            return true;
        }
        let cooldown_us = (self.policy.cooldown_s * 1e6).round() as i64;
        let ok = match self.last.get(source) {
            None => true,
            Some(prev) => (at - *prev).num_microseconds().is_none_or(|d| d >= cooldown_us),
        };
        if ok {
            self.last.insert(source.to_string(), at);
        }
        ok
    }
}
