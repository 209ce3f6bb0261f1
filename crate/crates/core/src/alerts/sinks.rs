use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::AlertEvent;

/// A delivery target. Failures are reported as text and retried by the
/// dispatcher.
pub trait AlertSink: Send {
    fn name(&self) -> &str;
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String>;
}

pub(crate) fn append_json_line(path: &Path, value: &impl serde::Serialize) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.flush()
}

/// Structured JSON-lines log; always configured.
pub struct LogSink {
    path: PathBuf,
}

impl LogSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        LogSink { path: path.into() }
    }
}

impl AlertSink for LogSink {
    fn name(&self) -> &str {
        "log"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String> {
        append_json_line(&self.path, event).map_err(|e| format!("{}: {e}", self.path.display()))
    }
}

/// POST the event as JSON; any 2xx status is success.
pub fn deliver_webhook(agent: &ureq::Agent, url: &str, event: &AlertEvent) -> Result<(), String> {
    let body = serde_json::to_string(event).map_err(|e| e.to_string())?;
    let resp = agent
        .post(url)
        .header("Content-Type", "application/json")
        .send(body.as_str())
        .map_err(|e| format!("POST {url}: {e}"))?;
    let status = resp.status();
    if status.is_success() {
        Ok(())
    } else {
        Err(format!("POST {url}: HTTP {}", status.as_u16()))
    }
}

pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        WebhookSink { url: url.to_string(), agent }
    }
}

impl AlertSink for WebhookSink {
    fn name(&self) -> &str {
        "webhook"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String> {
        deliver_webhook(&self.agent, &self.url, event)
    }
}
