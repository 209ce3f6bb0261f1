use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;

use chrono::Utc;
use maskwatch_core::alerts::{AlertDispatcher, AlertEvent, DebouncePolicy, DEADLETTER_LOG};
use maskwatch_core::dataset::{
    read_tensor_cache, scan_dataset, split_manifest, synthesize_dataset, write_tensor_cache, DatasetManifest,
    ImageSample, SampleEntry,
};
use maskwatch_core::live::{
    run_pipeline, ArtifactClassifier, CascadeDetector, FfmpegSource, FrameSink, FrameSource, ImageDirSink,
    ImageSequenceSource, PipelineOptions, RunLogSink, SyntheticSource, SyntheticSpec, RUN_LOG,
};
use maskwatch_core::model::{build_model, load_artifact, save_artifact, LabelMap, ModelConfig, TrainingMeta};
use maskwatch_core::preprocess::{preprocess_batch, PreprocessConfig};
use maskwatch_core::train_eval::{
    compute_report_n, dataset_fingerprint, emit_curves, evaluate_artifact, predict_labels, train as fit, MetricsReport,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{write_resolved, AppConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_CACHE: &str = "train.mwtc";
pub const VALIDATION_CACHE: &str = "validation.mwtc";
pub const PREPROCESS: &str = "preprocess.json";
pub const ARTIFACT: &str = "model.mwma";
pub const HISTORY: &str = "history.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const SUMMARY: &str = "summary.json";

fn stamp() -> String {
    Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn out_dir(out: Option<PathBuf>, cfg: &AppConfig, prefix: &str, stamped: bool) -> Result<PathBuf, CliError> {
    let dir = out.unwrap_or_else(|| {
        let name = if stamped { format!("{prefix}-{}-{}", stamp(), cfg.seed) } else { format!("{prefix}-{}", cfg.seed) };
        cfg.run_dir.join(name)
    });
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    maskwatch_core::fsutil::write_atomic(path, text.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, what))
    }
}

fn label_map(categories: &[String]) -> LabelMap {
    categories.iter().enumerate().map(|(i, c)| (i as u8, c.clone())).collect()
}

fn load_samples<'a>(root: &Path, entries: impl Iterator<Item = &'a SampleEntry>) -> Result<Vec<ImageSample>, CliError> {
    entries.map(|e| ImageSample::load(root, e).map_err(CliError::from)).collect()
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

pub fn synth(cfg: &AppConfig) -> Result<(), CliError> {
    let root = &cfg.dataset.root;
    if let Some(corpus) = &cfg.dataset.corpus {
        require(corpus, "face corpus directory")?;
    }
    std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    let report = synthesize_dataset(root, &cfg.synth, cfg.dataset.corpus.as_deref(), cfg.seed)?;
    write_resolved(cfg, root)?;
    emit(&json!({ "command": "synth", "root": root, "report": report }));
    Ok(())
}

pub fn ingest(cfg: &AppConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let root = &cfg.dataset.root;
    require(root, "dataset root")?;
    let dir = out_dir(out, cfg, "dataset", false)?;
    let scanned = scan_dataset(root, &cfg.dataset.categories, cfg.seed)?;
    let manifest = split_manifest(&scanned, cfg.dataset.validation_fraction)?;
    manifest.save(&dir.join(MANIFEST))?;

    let train = preprocess_batch(&load_samples(root, manifest.train_entries())?, &cfg.preprocess)?;
    write_tensor_cache(&train, &dir.join(TRAIN_CACHE))?;
    let validation = preprocess_batch(&load_samples(root, manifest.validation_entries())?, &cfg.preprocess)?;
    write_tensor_cache(&validation, &dir.join(VALIDATION_CACHE))?;
    write_json(&dir.join(PREPROCESS), &cfg.preprocess)?;
    write_resolved(cfg, &dir)?;
    emit(&json!({
        "command": "ingest",
        "out": dir,
        "samples": manifest.len(),
        "class_counts": manifest.class_counts,
        "train": train.n,
        "validation": validation.n,
        "skipped": manifest.skipped.count,
    }));
    Ok(())
}

pub fn train(cfg: &AppConfig, data: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    for (name, what) in [(MANIFEST, "dataset manifest"), (TRAIN_CACHE, "train cache"), (VALIDATION_CACHE, "validation cache"), (PREPROCESS, "preprocess config")] {
        require(&data.join(name), what)?;
    }
    let manifest = DatasetManifest::load(&data.join(MANIFEST))?;
    let preprocess: PreprocessConfig = read_json(&data.join(PREPROCESS))?;
    let train_batch = read_tensor_cache(&data.join(TRAIN_CACHE))?;
    let val_batch = read_tensor_cache(&data.join(VALIDATION_CACHE))?;
    let dir = out_dir(out, cfg, "train", true)?;
    write_resolved(cfg, &dir)?;

    let mut model = build_model(ModelConfig {
        num_classes: manifest.categories.len(),
        freeze_backbone: cfg.model.freeze_backbone,
        seed: cfg.seed,
    })?;
    let backbone_init = match &cfg.model.backbone_weights {
        Some(path) => {
            require(path, "backbone weights")?;
            model.load_backbone(path)?
        }
        None if cfg.model.calibrate_batch_norm => {
            let n = cfg.model.calibration_images.min(train_batch.n);
            let idx: Vec<usize> = (0..n).collect();
            model.calibrate_batch_norm(&train_batch.select(&idx))?;
            format!("random:seed={}:bn-calibrated:n={n}", cfg.seed)
        }
        None => format!("random:seed={}", cfg.seed),
    };
    if cfg.model.backbone_weights.is_none() {
        log::warn!("training without pretrained backbone weights; accuracy will be limited");
    }

    let run = fit(&mut model, &train_batch, &val_batch, &cfg.hyperparams, cfg.seed)?;
    let curves = emit_curves(&run, &dir)?;
    write_json(&dir.join(HISTORY), &run)?;

    let labels = label_map(&manifest.categories);
    let best = run.best().copied().ok_or_else(|| CliError::Failed("training produced no epochs".into()))?;
    let meta = TrainingMeta {
        epochs: run.epochs,
        seed: cfg.seed,
        dataset_fingerprint: dataset_fingerprint(&train_batch),
        final_val_accuracy: best.val_acc,
        final_val_loss: best.val_loss,
        backbone_init,
        best_epoch: Some(run.best_epoch),
    };
    let artifact = dir.join(ARTIFACT);
    save_artifact(&model, &labels, &preprocess, &meta, &artifact)?;

    let predicted = predict_labels(&model, &val_batch)?;
    let report = compute_report_n(&val_batch.labels, &predicted, labels.len())?;
    write_report(&report, &labels, &dir)?;
    emit(&json!({
        "command": "train",
        "out": dir,
        "artifact": artifact,
        "curves_csv": curves.csv,
        "curves_png": curves.png,
        "best_epoch": run.best_epoch,
        "val_accuracy": best.val_acc,
        "val_loss": best.val_loss,
        "stopped_early": run.stopped_early,
    }));
    Ok(())
}

fn write_report(report: &MetricsReport, labels: &LabelMap, dir: &Path) -> Result<String, CliError> {
    let table = report.to_table(labels);
    write_json(&dir.join(REPORT_JSON), report)?;
    let txt = dir.join(REPORT_TXT);
    maskwatch_core::fsutil::write_atomic(&txt, table.as_bytes()).map_err(|e| CliError::io(&txt, e))?;
    Ok(table)
}

/// `y_true,y_pred` rows of class ids; a non-numeric first row is a header.
pub fn read_predictions(path: &Path) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match cols.as_slice() {
            [a, b] => a.parse::<u8>().ok().zip(b.parse::<u8>().ok()),
            _ => None,
        };
        match parsed {
            Some((a, b)) => {
                t.push(a);
                p.push(b);
            }
            None if n == 0 => {}
            None => return Err(CliError::Failed(format!("{}:{}: expected two class ids, got {line:?}", path.display(), n + 1))),
        }
    }
    Ok((t, p))
}

pub fn eval(cfg: &AppConfig, data: Option<&Path>, predictions: Option<&Path>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (report, labels) = match (predictions, &cfg.model.artifact) {
        (Some(csv), _) => {
            require(csv, "predictions file")?;
            let (t, p) = read_predictions(csv)?;
            let labels = label_map(&cfg.dataset.categories);
            (compute_report_n(&t, &p, labels.len())?, labels)
        }
        (None, Some(artifact_path)) => {
            let data = data.ok_or_else(|| CliError::Usage(vec!["eval with --artifact needs --data".into()]))?;
            require(artifact_path, "model artifact")?;
            require(&data.join(MANIFEST), "dataset manifest")?;
            let artifact = load_artifact(artifact_path)?;
            let manifest = DatasetManifest::load(&data.join(MANIFEST))?;
            let samples = load_samples(Path::new(&manifest.root), manifest.validation_entries())?;
            (evaluate_artifact(&artifact, &samples)?, artifact.label_map.clone())
        }
        (None, None) => return Err(CliError::Usage(vec!["eval needs --predictions or --artifact".into()])),
    };
    let dir = out_dir(out, cfg, "eval", true)?;
    write_resolved(cfg, &dir)?;
    let table = write_report(&report, &labels, &dir)?;
    print!("{table}");
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn open_source(cfg: &AppConfig) -> Result<Box<dyn FrameSource>, CliError> {
    let spec = cfg
        .source
        .spec
        .as_deref()
        .ok_or_else(|| CliError::Usage(vec!["run needs --source (camera index, video, image directory or .json spec)".into()]))?;
    let size = (cfg.source.frame_width, cfg.source.frame_height);
    if let Ok(index) = spec.parse::<u32>() {
        return Ok(Box::new(FfmpegSource::camera(index, size)?));
    }
    let path = Path::new(spec);
    require(path, "frame source")?;
    if path.is_dir() {
        return Ok(Box::new(ImageSequenceSource::open(path, cfg.source.fps)?));
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "synthetic".into());
        return Ok(Box::new(SyntheticSource::new(id, SyntheticSpec::from_json(&text)?)?));
    }
    Ok(Box::new(FfmpegSource::video_file(path, size, Some(cfg.source.fps))?))
}

pub fn run(cfg: &AppConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let artifact_path = cfg
        .model
        .artifact
        .as_deref()
        .ok_or_else(|| CliError::Usage(vec!["run needs --artifact".into()]))?;
    require(artifact_path, "model artifact")?;
    let artifact = load_artifact(artifact_path)?;
    let mut source = open_source(cfg)?;

    let mut detector = match &cfg.pipeline.cascade {
        Some(xml) => {
            require(xml, "cascade file")?;
            CascadeDetector::from_xml_file(xml)?
        }
        None => CascadeDetector::bundled()?,
    };
    *detector.params_mut() = cfg.detect_params();
    let classifier = ArtifactClassifier::new(&artifact)?;

    let dir = out_dir(out, cfg, "live", true)?;
    write_resolved(cfg, &dir)?;
    let mut sinks: Vec<Box<dyn FrameSink>> = vec![Box::new(RunLogSink::create(&dir.join(RUN_LOG))?)];
    if cfg.pipeline.save_frames {
        sinks.push(Box::new(ImageDirSink::create(&dir.join("frames"))?));
    }
    let dispatcher = AlertDispatcher::new(&cfg.alerts.settings(&dir.join("alerts")))?;

    let opts = PipelineOptions {
        alert_threshold: cfg.alerts.threshold,
        margin: cfg.pipeline.margin,
        threaded: cfg.pipeline.threaded,
        realtime: cfg.pipeline.realtime,
        queue_capacity: cfg.pipeline.queue_capacity,
        max_frames: cfg.source.max_frames,
        snapshot_dir: cfg.alerts.snapshots.then(|| dir.join("snapshots")),
        ..PipelineOptions::default()
    };
    let stop = opts.stop.clone();
    if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let source_id = source.source_id().to_string();
    let result = run_pipeline(source.as_mut(), &detector, &classifier, sinks, Some(&dispatcher), &opts);
    let alerts = dispatcher.close();
    let summary = result?;
    let doc = json!({ "source_id": source_id, "summary": summary, "alerts": alerts });
    write_json(&dir.join(SUMMARY), &doc)?;
    emit(&json!({ "command": "run", "out": dir, "summary": summary, "alerts": alerts }));
    Ok(())
}

pub fn alert_test(cfg: &AppConfig, confidence: f64, out: Option<PathBuf>) -> Result<(), CliError> {
    let dir = out_dir(out, cfg, "alert-test", true)?;
    write_resolved(cfg, &dir)?;
    let mut settings = cfg.alerts.settings(&dir.join("alerts"));
    settings.policy = DebouncePolicy::disabled();
    let dispatcher = AlertDispatcher::new(&settings)?;
    let event = AlertEvent::no_mask("alert-test", confidence, 0, Utc::now());
    let event_id = event.event_id.clone();
    dispatcher.submit(event)?;
    let stats = dispatcher.close();
    emit(&json!({
        "command": "alert-test",
        "out": dir,
        "event_id": event_id,
        "webhook": settings.webhook_url,
        "stats": stats,
    }));
    if stats.dead_lettered > 0 {
        return Err(CliError::Failed(format!(
            "webhook delivery failed after {} attempts; event {event_id} written to {}",
            settings.max_attempts,
            settings.out_dir.join(DEADLETTER_LOG).display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_csv_accepts_header_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "y_true,y_pred\n0,1\n1,1\n\n").unwrap();
        assert_eq!(read_predictions(&p).unwrap(), (vec![0, 1], vec![1, 1]));
        std::fs::write(&p, "0,1\nx,1\n").unwrap();
        assert!(read_predictions(&p).is_err());
    }
}
