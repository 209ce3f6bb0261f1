use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use super::sinks::{append_json_line, AlertSink, LogSink, WebhookSink};
use super::{AlertError, AlertEvent, DebouncePolicy, Debouncer, ALERTS_LOG, DEADLETTER_LOG, DELIVERED_LOG};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertSettings {
    /// Directory holding alerts.jsonl, delivered.jsonl and deadletter.jsonl.
    pub out_dir: PathBuf,
    pub policy: DebouncePolicy,
    pub queue_capacity: usize,
    /// Total delivery attempts per sink before dead-lettering.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub webhook_url: Option<String>,
    pub webhook_timeout_ms: u64,
}

impl AlertSettings {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        AlertSettings {
            out_dir: out_dir.into(),
            policy: DebouncePolicy::default(),
            queue_capacity: 64,
            max_attempts: 3,
            backoff_base_ms: 200,
            webhook_url: None,
            webhook_timeout_ms: 5000,
        }
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut bad = Vec::new();
        if !self.policy.cooldown_s.is_finite() || self.policy.cooldown_s < 0.0 {
            bad.push(format!("alerts.cooldown_s must be >= 0, got {}", self.policy.cooldown_s));
        }
        if self.queue_capacity == 0 {
            bad.push("alerts.queue_capacity must be > 0".into());
        }
        if self.max_attempts == 0 {
            bad.push("alerts.max_attempts must be > 0".into());
        }
        if let Some(url) = &self.webhook_url {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                bad.push(format!("alerts.webhook_url must be an http(s) URL, got {url:?}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Dispatched,
    Suppressed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchStats {
    pub submitted: u64,
    pub dispatched: u64,
    pub suppressed: u64,
    pub delivered: u64,
    pub dead_lettered: u64,
    /// Dispatched events dead-lettered because the queue was full.
    pub overflowed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DeadLetter {
    #[serde(flatten)]
    event: AlertEvent,
    failed_sink: String,
    error: String,
}

struct Shared {
    stats: Mutex<DispatchStats>,
    files: Mutex<()>,
    delivered: PathBuf,
    deadletter: PathBuf,
}

impl Shared {
    fn dead_letter(&self, event: &AlertEvent, sink: &str, error: &str) {
        let record = DeadLetter { event: event.clone(), failed_sink: sink.to_string(), error: error.to_string() };
        let _guard = self.files.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = append_json_line(&self.deadletter, &record) {
            log::error!("cannot write dead letter for {}: {e}", event.event_id);
        }
        self.stats.lock().unwrap_or_else(|p| p.into_inner()).dead_lettered += 1;
    }

    fn delivered(&self, event: &AlertEvent) {
        let _guard = self.files.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = append_json_line(&self.delivered, event) {
            log::error!("cannot record delivery of {}: {e}", event.event_id);
        }
        self.stats.lock().unwrap_or_else(|p| p.into_inner()).delivered += 1;
    }
}

fn deliver_with_retry(sink: &mut dyn AlertSink, event: &AlertEvent, attempts: u32, backoff: Duration) -> Result<(), String> {
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(backoff * 2u32.pow(attempt - 1));
        }
        match sink.deliver(event) {
            Ok(()) => return Ok(()),
            Err(e) => {
                log::warn!("sink {} attempt {} for {} failed: {e}", sink.name(), attempt + 1, event.event_id);
                last = e;
            }
        }
    }
    Err(last)
}

/// Debounces candidates on the caller's thread and delivers admitted events
/// on a worker thread. `submit` never waits on a sink.
pub struct AlertDispatcher {
    debouncer: Mutex<Debouncer>,
    tx: Option<Sender<AlertEvent>>,
    worker: Option<JoinHandle<()>>,
    shared: Arc<Shared>,
}

impl AlertDispatcher {
    /// Log sink plus a webhook sink when a URL is configured.
    pub fn new(settings: &AlertSettings) -> Result<Self, AlertError> {
        let mut sinks: Vec<Box<dyn AlertSink>> = vec![Box::new(LogSink::new(settings.out_dir.join(ALERTS_LOG)))];
        if let Some(url) = &settings.webhook_url {
            sinks.push(Box::new(WebhookSink::new(url, Duration::from_millis(settings.webhook_timeout_ms))));
        }
        Self::with_sinks(settings, sinks)
    }

    pub fn with_sinks(settings: &AlertSettings, mut sinks: Vec<Box<dyn AlertSink>>) -> Result<Self, AlertError> {
        settings.validate().map_err(|e| AlertError::Config(e.join("; ")))?;
        std::fs::create_dir_all(&settings.out_dir).map_err(|e| AlertError::io(&settings.out_dir, e))?;
        let shared = Arc::new(Shared {
            stats: Mutex::new(DispatchStats::default()),
            files: Mutex::new(()),
            delivered: settings.out_dir.join(DELIVERED_LOG),
            deadletter: settings.out_dir.join(DEADLETTER_LOG),
        });
        let (tx, rx) = bounded::<AlertEvent>(settings.queue_capacity);
        let attempts = settings.max_attempts;
        let backoff = Duration::from_millis(settings.backoff_base_ms);
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("alert-dispatch".into())
            .spawn(move || {
                for event in rx {
                    let mut failure = None;
                    for sink in sinks.iter_mut() {
                        if let Err(e) = deliver_with_retry(sink.as_mut(), &event, attempts, backoff) {
                            failure.get_or_insert((sink.name().to_string(), e));
                        }
                    }
                    match failure {
                        None => worker_shared.delivered(&event),
                        Some((sink, e)) => worker_shared.dead_letter(&event, &sink, &e),
                    }
                }
            })
            .map_err(|e| AlertError::io(&settings.out_dir, e))?;
        Ok(AlertDispatcher {
            debouncer: Mutex::new(Debouncer::new(settings.policy)),
            tx: Some(tx),
            worker: Some(worker),
            shared,
        })
    }

    pub fn submit(&self, event: AlertEvent) -> Result<SubmitOutcome, AlertError> {
        event.validate()?;
        let admitted = self.debouncer.lock().unwrap_or_else(|p| p.into_inner()).admit(&event.source_id, event.timestamp);
        {
            let mut s = self.shared.stats.lock().unwrap_or_else(|p| p.into_inner());
            s.submitted += 1;
            if admitted {
                s.dispatched += 1;
            } else {
                s.suppressed += 1;
            }
        }
        if !admitted {
            return Ok(SubmitOutcome::Suppressed);
        }
        let tx = self.tx.as_ref().ok_or_else(|| AlertError::Config("dispatcher is closed".into()))?;
        match tx.try_send(event) {
            Ok(()) => {}
            Err(TrySendError::Full(event)) | Err(TrySendError::Disconnected(event)) => {
                self.shared.stats.lock().unwrap_or_else(|p| p.into_inner()).overflowed += 1;
                self.shared.dead_letter(&event, "queue", "dispatch queue full");
            }
        }
        Ok(SubmitOutcome::Dispatched)
    }

    pub fn stats(&self) -> DispatchStats {
        *self.shared.stats.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Stop accepting events, drain the queue and wait for the worker.
    pub fn close(mut self) -> DispatchStats {
        self.shutdown();
        self.stats()
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            if w.join().is_err() {
                log::error!("alert worker panicked");
            }
        }
    }
}

impl Drop for AlertDispatcher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub delivered: usize,
    pub duplicates: usize,
    pub still_failed: usize,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, AlertError> {
    let f = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AlertError::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| AlertError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("skipping malformed line in {}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Re-deliver dead-lettered events. Events already in the delivered log, and
/// repeated event ids, are skipped, so replaying twice delivers nothing new.
pub fn replay_deadletter(
    out_dir: &Path,
    sinks: &mut [Box<dyn AlertSink>],
    max_attempts: u32,
) -> Result<ReplayReport, AlertError> {
    let delivered_path = out_dir.join(DELIVERED_LOG);
    let deadletter_path = out_dir.join(DEADLETTER_LOG);
    let mut seen: HashSet<String> =
        read_lines::<AlertEvent>(&delivered_path)?.into_iter().map(|e| e.event_id).collect();
    let mut report = ReplayReport::default();
    let mut remaining = Vec::new();
    for record in read_lines::<DeadLetter>(&deadletter_path)? {
        if !seen.insert(record.event.event_id.clone()) {
            report.duplicates += 1;
            continue;
        }
        let mut failure = None;
        for sink in sinks.iter_mut() {
            if let Err(e) = deliver_with_retry(sink.as_mut(), &record.event, max_attempts, Duration::ZERO) {
                failure.get_or_insert((sink.name().to_string(), e));
            }
        }
        match failure {
            None => {
                append_json_line(&delivered_path, &record.event).map_err(|e| AlertError::io(&delivered_path, e))?;
                report.delivered += 1;
            }
            Some((failed_sink, error)) => {
                report.still_failed += 1;
                remaining.push(DeadLetter { event: record.event, failed_sink, error });
            }
        }
    }
    let mut body = Vec::new();
    for r in &remaining {
        body.extend(serde_json::to_vec(r).map_err(|e| AlertError::Config(e.to_string()))?);
        body.push(b'\n');
    }
    crate::fsutil::write_atomic(&deadletter_path, &body).map_err(|e| AlertError::io(&deadletter_path, e))?;
    Ok(report)
}
