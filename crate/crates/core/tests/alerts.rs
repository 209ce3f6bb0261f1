use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, Utc};
use maskwatch_core::alerts::{
    replay_deadletter, AlertDispatcher, AlertEvent, AlertSettings, AlertSink, DebouncePolicy, LogSink, WebhookSink,
    ALERTS_LOG, DEADLETTER_LOG, DELIVERED_LOG,
};
use maskwatch_core::live::stream_epoch;

/// Minimal HTTP server answering every request with the next status from
/// `statuses` (repeating the last). Request bodies are sent on the channel.
fn webhook_stub(statuses: Vec<u16>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/hook", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let status = statuses[i.min(statuses.len() - 1)];
            let _ = write!(stream, "HTTP/1.1 {status} X\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
            let _ = stream.flush();
            if tx.send(String::from_utf8(body).unwrap()).is_err() {
                break;
            }
        }
    });
    (url, rx)
}

fn settings(dir: &std::path::Path, cooldown: f64) -> AlertSettings {
    let mut s = AlertSettings::new(dir);
    s.policy = DebouncePolicy::new(cooldown).unwrap();
    s.backoff_base_ms = 1;
    s.webhook_timeout_ms = 2000;
    s
}

fn lines(path: &std::path::Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn at(seconds: i64) -> DateTime<Utc> {
    stream_epoch() + TimeDelta::seconds(seconds)
}

#[test]
fn webhook_receives_the_event_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (url, bodies) = webhook_stub(vec![200]);
    let mut s = settings(dir.path(), 10.0);
    s.webhook_url = Some(url);
    let d = AlertDispatcher::new(&s).unwrap();
    let mut ev = AlertEvent::no_mask("cam0", 0.93, 17, at(0));
    ev.snapshot_path = Some("snap.jpg".into());
    let id = ev.event_id.clone();
    d.submit(ev).unwrap();
    let stats = d.close();
    assert_eq!((stats.delivered, stats.dead_lettered), (1, 0));

    let body: serde_json::Value = serde_json::from_str(&bodies.recv_timeout(Duration::from_secs(5)).unwrap()).unwrap();
    let mut keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["confidence", "event_id", "frame_index", "label", "snapshot_path", "source_id", "timestamp"]);
    assert_eq!(body["event_id"], id.as_str());
    assert_eq!(body["label"], "No Mask");
    assert_eq!(body["frame_index"], 17);
    assert_eq!(body["timestamp"], "2024-01-01T00:00:00Z");
    assert_eq!(lines(&dir.path().join(DELIVERED_LOG)).len(), 1);
    assert_eq!(lines(&dir.path().join(ALERTS_LOG)).len(), 1);
}

#[test]
fn three_webhook_failures_dead_letter_the_event() {
    let dir = tempfile::tempdir().unwrap();
    let (url, bodies) = webhook_stub(vec![500]);
    let mut s = settings(dir.path(), 10.0);
    s.webhook_url = Some(url);
    let d = AlertDispatcher::new(&s).unwrap();
    let ev = AlertEvent::no_mask("cam0", 0.9, 1, at(0));
    let id = ev.event_id.clone();
    d.submit(ev).unwrap();
    let stats = d.close();
    assert_eq!((stats.delivered, stats.dead_lettered), (0, 1));
    let attempts = bodies.try_iter().count();
    assert_eq!(attempts, 3);
    let dead = lines(&dir.path().join(DEADLETTER_LOG));
    assert_eq!(dead.len(), 1);
    assert!(dead[0].to_string().contains(&id));
}

#[test]
fn replay_delivers_once_and_skips_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let (bad_url, _) = webhook_stub(vec![503]);
    let mut s = settings(dir.path(), 0.0);
    s.webhook_url = Some(bad_url);
    let d = AlertDispatcher::new(&s).unwrap();
    for i in 0..3 {
        d.submit(AlertEvent::no_mask("cam0", 0.9, i, at(i as i64))).unwrap();
    }
    assert_eq!(d.close().dead_lettered, 3);

    let (good_url, bodies) = webhook_stub(vec![200]);
    let mut sinks: Vec<Box<dyn AlertSink>> = vec![Box::new(WebhookSink::new(&good_url, Duration::from_secs(2)))];
    let first = replay_deadletter(dir.path(), &mut sinks, 3).unwrap();
    assert_eq!((first.delivered, first.still_failed), (3, 0));
    let second = replay_deadletter(dir.path(), &mut sinks, 3).unwrap();
    assert_eq!(second.delivered, 0);
    assert_eq!(bodies.try_iter().count(), 3);
}

/// Counts dispatches under the half-open rule with a plain loop.
fn oracle_dispatches(times: &[f64], cooldown: f64) -> usize {
    let mut last: Option<f64> = None;
    let mut n = 0;
    for &t in times {
        if last.is_none_or(|l| t - l >= cooldown) {
            last = Some(t);
            n += 1;
        }
    }
    n
}

#[test]
fn hundred_candidates_at_one_hertz_give_ten_dispatches() {
    let dir = tempfile::tempdir().unwrap();
    let d = AlertDispatcher::new(&settings(dir.path(), 10.0)).unwrap();
    for i in 0..100 {
        d.submit(AlertEvent::no_mask("cam0", 0.95, i, at(i as i64))).unwrap();
    }
    let stats = d.close();
    let times: Vec<f64> = (0..100).map(|i| i as f64).collect();
    assert_eq!(oracle_dispatches(&times, 10.0), 10);
    assert_eq!(stats.dispatched, 10);
    assert_eq!(stats.suppressed, 90);
    assert_eq!(lines(&dir.path().join(ALERTS_LOG)).len(), 10);
}

struct Stalled(mpsc::Receiver<()>);

impl AlertSink for Stalled {
    fn name(&self) -> &str {
        "stalled"
    }

    fn deliver(&mut self, _: &AlertEvent) -> Result<(), String> {
        let _ = self.0.recv_timeout(Duration::from_secs(10));
        Ok(())
    }
}

#[test]
fn submit_stays_fast_while_the_sink_is_stalled() {
    let dir = tempfile::tempdir().unwrap();
    let (release, gate) = mpsc::channel();
    let s = settings(dir.path(), 0.0);
    let sinks: Vec<Box<dyn AlertSink>> = vec![Box::new(LogSink::new(dir.path().join(ALERTS_LOG))), Box::new(Stalled(gate))];
    let d = AlertDispatcher::with_sinks(&s, sinks).unwrap();
    let mut worst = Duration::ZERO;
    for i in 0..50 {
        let ev = AlertEvent::no_mask("cam0", 0.9, i, at(i as i64));
        let t = Instant::now();
        d.submit(ev).unwrap();
        worst = worst.max(t.elapsed());
    }
    assert!(worst <= Duration::from_millis(10), "worst submit latency {worst:?}");
    for _ in 0..50 {
        let _ = release.send(());
    }
    assert_eq!(d.close().delivered, 50);
}
