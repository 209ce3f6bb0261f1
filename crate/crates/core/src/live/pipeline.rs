use std::collections::VecDeque;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::source::{Frame, FrameSource};
use super::{annotate, crop_and_classify, detect_faces, AnnotatedFrame, FaceClassifier, FaceDetector, LiveError};
use super::{DEFAULT_ALERT_THRESHOLD, DEFAULT_MARGIN};
use crate::alerts::{AlertDispatcher, AlertEvent, SubmitOutcome, NO_MASK_LABEL};

pub const RUN_LOG: &str = "run_log.jsonl";

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub alert_threshold: f64,
    pub margin: f64,
    /// Capture, inference and sink delivery on separate threads.
    pub threaded: bool,
    /// Drop the oldest queued frame instead of waiting when inference falls
    /// behind. `None` follows the source: live sources drop, files wait.
    pub realtime: Option<bool>,
    pub queue_capacity: usize,
    pub max_frames: Option<u64>,
    /// Where alert snapshots are written as `<event_id>.jpg`.
    pub snapshot_dir: Option<PathBuf>,
    pub stop: Arc<AtomicBool>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            alert_threshold: DEFAULT_ALERT_THRESHOLD,
            margin: DEFAULT_MARGIN,
            threaded: true,
            realtime: None,
            queue_capacity: 2,
            max_frames: None,
            snapshot_dir: None,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<(), LiveError> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.alert_threshold) {
            bad.push(format!("alert_threshold must be in [0,1], got {}", self.alert_threshold));
        }
        if !(0.0..=1.0).contains(&self.margin) {
            bad.push(format!("margin must be in [0,1], got {}", self.margin));
        }
        if self.queue_capacity == 0 {
            bad.push("queue_capacity must be > 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(LiveError::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames_seen: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    pub detections: u64,
    pub alerts_emitted: u64,
    pub alerts_suppressed: u64,
    pub sink_errors: u64,
}

/// Receives every processed frame, in frame order.
pub trait FrameSink: Send {
    fn name(&self) -> &str;
    fn write(&mut self, frame: &AnnotatedFrame) -> Result<(), String>;
    fn finish(&mut self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Serialize)]
struct LogDetection<'a> {
    #[serde(rename = "box")]
    bbox: crate::geometry::Rect,
    label: &'a str,
    confidence: f32,
}

#[derive(Serialize)]
struct LogRecord<'a> {
    frame_index: u64,
    timestamp: String,
    detections: Vec<LogDetection<'a>>,
}

/// JSON-lines run log, one record per processed frame.
pub struct RunLogSink {
    path: PathBuf,
    out: BufWriter<std::fs::File>,
}

impl RunLogSink {
    pub fn create(path: &Path) -> Result<Self, LiveError> {
        let io = |e| LiveError::Io { path: path.to_path_buf(), source: e };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = std::fs::File::create(path).map_err(io)?;
        Ok(RunLogSink { path: path.to_path_buf(), out: BufWriter::new(file) })
    }
}

impl FrameSink for RunLogSink {
    fn name(&self) -> &str {
        "run-log"
    }

    fn write(&mut self, frame: &AnnotatedFrame) -> Result<(), String> {
        let record = LogRecord {
            frame_index: frame.frame_index,
            timestamp: frame.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            detections: frame
                .detections
                .iter()
                .map(|(d, r, label)| LogDetection { bbox: d.bbox, label, confidence: r.confidence })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| e.to_string())?;
        writeln!(self.out, "{line}").map_err(|e| format!("{}: {e}", self.path.display()))
    }

    fn finish(&mut self) -> Result<(), String> {
        self.out.flush().map_err(|e| format!("{}: {e}", self.path.display()))
    }
}

/// Annotated frames as numbered JPEG files.
pub struct ImageDirSink {
    dir: PathBuf,
}

impl ImageDirSink {
    pub fn create(dir: &Path) -> Result<Self, LiveError> {
        std::fs::create_dir_all(dir).map_err(|e| LiveError::Io { path: dir.to_path_buf(), source: e })?;
        Ok(ImageDirSink { dir: dir.to_path_buf() })
    }
}

impl FrameSink for ImageDirSink {
    fn name(&self) -> &str {
        "annotated-frames"
    }

    fn write(&mut self, frame: &AnnotatedFrame) -> Result<(), String> {
        let path = self.dir.join(format!("frame_{:06}.jpg", frame.frame_index));
        frame.frame.save(&path).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Default)]
struct QueueState {
    frames: VecDeque<Frame>,
    producer_done: bool,
    consumer_gone: bool,
    dropped: u64,
}

/// Bounded hand-off between capture and inference.
struct FrameQueue {
    state: Mutex<QueueState>,
    changed: Condvar,
    capacity: usize,
    drop_oldest: bool,
}

impl FrameQueue {
    fn new(capacity: usize, drop_oldest: bool) -> Self {
        FrameQueue { state: Mutex::new(QueueState::default()), changed: Condvar::new(), capacity, drop_oldest }
    }

    /// Returns false once the consumer has gone away.
    fn push(&self, frame: Frame) -> bool {
        let mut s = self.state.lock().expect("queue lock");
        if self.drop_oldest {
            if s.frames.len() == self.capacity {
                s.frames.pop_front();
                s.dropped += 1;
            }
        } else {
            while s.frames.len() == self.capacity && !s.consumer_gone {
                s = self.changed.wait(s).expect("queue lock");
            }
        }
        if s.consumer_gone {
            return false;
        }
        s.frames.push_back(frame);
        self.changed.notify_all();
        true
    }

    fn pop(&self) -> Option<Frame> {
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(f) = s.frames.pop_front() {
                self.changed.notify_all();
                return Some(f);
            }
            if s.producer_done {
                return None;
            }
            s = self.changed.wait(s).expect("queue lock");
        }
    }

    fn finish_producer(&self) {
        self.state.lock().expect("queue lock").producer_done = true;
        self.changed.notify_all();
    }

    fn abandon(&self) {
        self.state.lock().expect("queue lock").consumer_gone = true;
        self.changed.notify_all();
    }

    fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }
}

struct Inference<'a> {
    detector: &'a dyn FaceDetector,
    classifier: &'a dyn FaceClassifier,
    alerts: Option<&'a AlertDispatcher>,
    source_id: String,
    opts: &'a PipelineOptions,
    summary: RunSummary,
}

impl Inference<'_> {
    fn process(&mut self, frame: Frame) -> Result<AnnotatedFrame, LiveError> {
        let detections = detect_faces(&frame.image, self.detector);
        let results = crop_and_classify(&frame.image, &detections, self.classifier, self.opts.margin)?;
        let annotated = annotate(&frame.image, &results, self.classifier.label_map(), frame.index, frame.timestamp)?;
        self.summary.frames_processed += 1;
        self.summary.detections += annotated.detections.len() as u64;
        if let Some(dispatcher) = self.alerts {
            for (_, result, display) in &annotated.detections {
                let confidence = result.confidence as f64;
                if display == NO_MASK_LABEL && confidence >= self.opts.alert_threshold {
                    self.emit(dispatcher, confidence, &annotated);
                }
            }
        }
        Ok(annotated)
    }

    fn emit(&mut self, dispatcher: &AlertDispatcher, confidence: f64, frame: &AnnotatedFrame) {
        let mut event = AlertEvent::no_mask(&self.source_id, confidence.min(1.0), frame.frame_index, frame.timestamp);
        let snapshot = self.opts.snapshot_dir.as_ref().map(|d| d.join(format!("{}.jpg", event.event_id)));
        if let Some(path) = &snapshot {
            let written = path.parent().map_or(Ok(()), std::fs::create_dir_all).map_err(|e| e.to_string());
            match written.and_then(|_| frame.frame.save(path).map_err(|e| e.to_string())) {
                Ok(()) => event.snapshot_path = Some(path.display().to_string()),
                Err(e) => {
                    log::warn!("snapshot {}: {e}", path.display());
                    self.summary.sink_errors += 1;
                }
            }
        }
        match dispatcher.submit(event) {
            Ok(SubmitOutcome::Dispatched) => self.summary.alerts_emitted += 1,
            Ok(SubmitOutcome::Suppressed) => {
                self.summary.alerts_suppressed += 1;
                if let Some(path) = &snapshot {
                    let _ = std::fs::remove_file(path);
                }
            }
            Err(e) => {
                log::warn!("alert rejected: {e}");
                self.summary.sink_errors += 1;
            }
        }
    }
}

fn deliver(sinks: &mut [Box<dyn FrameSink>], frame: &AnnotatedFrame) -> u64 {
    let mut errors = 0;
    for sink in sinks.iter_mut() {
        if let Err(e) = sink.write(frame) {
            log::warn!("sink {} failed on frame {}: {e}", sink.name(), frame.frame_index);
            errors += 1;
        }
    }
    errors
}

fn finish(sinks: &mut [Box<dyn FrameSink>]) -> u64 {
    let mut errors = 0;
    for sink in sinks.iter_mut() {
        if let Err(e) = sink.finish() {
            log::warn!("sink {} failed to finish: {e}", sink.name());
            errors += 1;
        }
    }
    errors
}

fn should_stop(opts: &PipelineOptions, seen: u64) -> bool {
    opts.stop.load(Ordering::Relaxed) || opts.max_frames.is_some_and(|m| seen >= m)
}

/// Process `source` until it ends, `opts.max_frames` is reached or
/// `opts.stop` is set. Sinks are drained before returning.
pub fn run_pipeline(
    source: &mut dyn FrameSource,
    detector: &dyn FaceDetector,
    classifier: &dyn FaceClassifier,
    mut sinks: Vec<Box<dyn FrameSink>>,
    alerts: Option<&AlertDispatcher>,
    opts: &PipelineOptions,
) -> Result<RunSummary, LiveError> {
    opts.validate()?;
    let mut inference = Inference {
        detector,
        classifier,
        alerts,
        source_id: source.source_id().to_string(),
        opts,
        summary: RunSummary::default(),
    };

    if !opts.threaded {
        let mut seen = 0;
        while !should_stop(opts, seen) {
            let Some(frame) = source.next_frame()? else { break };
            seen += 1;
            let annotated = inference.process(frame)?;
            inference.summary.sink_errors += deliver(&mut sinks, &annotated);
        }
        inference.summary.frames_seen = seen;
        inference.summary.sink_errors += finish(&mut sinks);
        return Ok(inference.summary);
    }

    let drop_oldest = opts.realtime.unwrap_or_else(|| source.is_live());
    let queue = FrameQueue::new(opts.queue_capacity, drop_oldest);
    let (to_sinks, from_inference) = crossbeam_channel::bounded::<AnnotatedFrame>(opts.queue_capacity);

    let (capture, infer, sink_errors) = std::thread::scope(|scope| {
        let queue = &queue;
        let capture = scope.spawn(move || -> Result<u64, LiveError> {
            let mut seen = 0;
            let result = loop {
                if should_stop(opts, seen) {
                    break Ok(seen);
                }
                match source.next_frame() {
                    Ok(Some(frame)) => {
                        seen += 1;
                        if !queue.push(frame) {
                            break Ok(seen);
                        }
                    }
                    Ok(None) => break Ok(seen),
                    Err(e) => break Err(e),
                }
            };
            queue.finish_producer();
            result
        });
        let sink_thread = scope.spawn(move || {
            let mut errors = 0;
            for frame in from_inference.iter() {
                errors += deliver(&mut sinks, &frame);
            }
            errors + finish(&mut sinks)
        });

        let mut infer = Ok(());
        while let Some(frame) = queue.pop() {
            match inference.process(frame) {
                Ok(annotated) => {
                    if to_sinks.send(annotated).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    infer = Err(e);
                    break;
                }
            }
        }
        queue.abandon();
        drop(to_sinks);
        let capture = capture.join().expect("capture thread panicked");
        let sink_errors = sink_thread.join().expect("sink thread panicked");
        (capture, infer, sink_errors)
    });
    infer?;
    let seen = capture?;
    let mut summary = inference.summary;
    summary.frames_seen = seen;
    summary.frames_dropped = queue.dropped();
    summary.sink_errors += sink_errors;
    debug_assert_eq!(summary.frames_seen, summary.frames_processed + summary.frames_dropped);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::live::source::{stream_epoch, SourceKind};
    use crate::live::FaceDetection;
    use crate::model::{default_label_map, ClassificationResult, LabelMap};
    use image::RgbImage;
    use std::time::Duration;

    /// Emits `n` tiny frames as fast as asked.
    struct Counter {
        n: u64,
        next: u64,
        live: bool,
    }

    impl FrameSource for Counter {
        fn source_id(&self) -> &str {
            "counter"
        }
        fn kind(&self) -> SourceKind {
            if self.live {
                SourceKind::CameraIndex
            } else {
                SourceKind::Synthetic
            }
        }
        fn frame_size(&self) -> (u32, u32) {
            (32, 32)
        }
        fn fps_hint(&self) -> Option<f64> {
            None
        }
        fn next_frame(&mut self) -> Result<Option<Frame>, LiveError> {
            if self.next == self.n {
                return Ok(None);
            }
            self.next += 1;
            Ok(Some(Frame { index: self.next - 1, timestamp: stream_epoch(), image: RgbImage::new(32, 32) }))
        }
    }

    struct OneFace(Duration);
    impl FaceDetector for OneFace {
        fn name(&self) -> &str {
            "one"
        }
        fn detect(&self, _: &RgbImage) -> Vec<FaceDetection> {
            std::thread::sleep(self.0);
            vec![FaceDetection { bbox: Rect::new(2, 2, 28, 28), detector_confidence: None }]
        }
    }

    struct Fixed(LabelMap);
    impl FaceClassifier for Fixed {
        fn label_map(&self) -> &LabelMap {
            &self.0
        }
        fn classify(&self, crops: &[RgbImage]) -> Result<Vec<ClassificationResult>, LiveError> {
            Ok(crops.iter().map(|_| ClassificationResult::from_scores(vec![0.2, 0.8])).collect())
        }
    }

    struct Recorder(Arc<Mutex<Vec<u64>>>);
    impl FrameSink for Recorder {
        fn name(&self) -> &str {
            "recorder"
        }
        fn write(&mut self, f: &AnnotatedFrame) -> Result<(), String> {
            self.0.lock().unwrap().push(f.frame_index);
            Ok(())
        }
    }

    #[test]
    fn empty_source_gives_zero_summary() {
        for threaded in [false, true] {
            let opts = PipelineOptions { threaded, ..Default::default() };
            let mut src = Counter { n: 0, next: 0, live: false };
            let s = run_pipeline(&mut src, &OneFace(Duration::ZERO), &Fixed(default_label_map()), vec![], None, &opts).unwrap();
            assert_eq!(s, RunSummary::default());
        }
    }

    #[test]
    fn file_sources_never_drop_and_match_sequential() {
        let seq = PipelineOptions { threaded: false, ..Default::default() };
        let thr = PipelineOptions::default();
        let classifier = Fixed(default_label_map());
        let a = run_pipeline(&mut Counter { n: 20, next: 0, live: false }, &OneFace(Duration::from_millis(2)), &classifier, vec![], None, &seq).unwrap();
        let b = run_pipeline(&mut Counter { n: 20, next: 0, live: false }, &OneFace(Duration::from_millis(2)), &classifier, vec![], None, &thr).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames_processed, 20);
        assert_eq!(a.detections, 20);
    }

    #[test]
    fn slow_inference_on_live_source_drops_oldest_in_order() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let opts = PipelineOptions::default();
        let mut src = Counter { n: 200, next: 0, live: true };
        let s = run_pipeline(
            &mut src,
            &OneFace(Duration::from_millis(3)),
            &Fixed(default_label_map()),
            vec![Box::new(Recorder(seen.clone()))],
            None,
            &opts,
        )
        .unwrap();
        assert_eq!(s.frames_seen, 200);
        assert!(s.frames_dropped > 0);
        assert_eq!(s.frames_seen, s.frames_processed + s.frames_dropped);
        let order = seen.lock().unwrap();
        assert_eq!(order.len() as u64, s.frames_processed);
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        // The newest frame always survives drop-oldest.
        assert_eq!(*order.last().unwrap(), 199);
    }

    #[test]
    fn max_frames_and_stop_flag_end_the_run() {
        let opts = PipelineOptions { max_frames: Some(5), ..Default::default() };
        let s = run_pipeline(&mut Counter { n: 50, next: 0, live: false }, &OneFace(Duration::ZERO), &Fixed(default_label_map()), vec![], None, &opts).unwrap();
        assert_eq!((s.frames_seen, s.frames_processed), (5, 5));

        let stop = PipelineOptions { stop: Arc::new(AtomicBool::new(true)), ..Default::default() };
        let s = run_pipeline(&mut Counter { n: 50, next: 0, live: false }, &OneFace(Duration::ZERO), &Fixed(default_label_map()), vec![], None, &stop).unwrap();
        assert_eq!(s.frames_seen, 0);
    }

    #[test]
    fn run_log_has_one_record_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RUN_LOG);
        let sink = RunLogSink::create(&path).unwrap();
        let opts = PipelineOptions::default();
        run_pipeline(&mut Counter { n: 4, next: 0, live: false }, &OneFace(Duration::ZERO), &Fixed(default_label_map()), vec![Box::new(sink)], None, &opts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 4);
        assert_eq!(records[3]["frame_index"], 3);
        assert_eq!(records[0]["detections"][0]["label"], "No Mask");
        assert_eq!(records[0]["detections"][0]["box"], serde_json::json!([2, 2, 28, 28]));
    }

    #[test]
    fn invalid_options_are_rejected() {
        let opts = PipelineOptions { alert_threshold: 1.5, ..Default::default() };
        let err = run_pipeline(&mut Counter { n: 1, next: 0, live: false }, &OneFace(Duration::ZERO), &Fixed(default_label_map()), vec![], None, &opts);
        assert!(matches!(err, Err(LiveError::Config(_))));
    }
}
