//! Layered application configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, the file
//! named by `MASKWATCH_CONFIG`, then command-line flags. Files may be JSON or
//! TOML (chosen by extension) and may set any subset of keys.

use std::path::{Path, PathBuf};

use maskwatch_core::alerts::{AlertSettings, DebouncePolicy};
use maskwatch_core::dataset::{SynthConfig, DEFAULT_CATEGORIES};
use maskwatch_core::live::{DetectParams, PipelineOptions};
use maskwatch_core::preprocess::PreprocessConfig;
use maskwatch_core::train_eval::Hyperparams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const CONFIG_ENV: &str = "MASKWATCH_CONFIG";
pub const RESOLVED_CONFIG: &str = "resolved-config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub seed: u64,
    /// Parent of generated run directories.
    pub run_dir: PathBuf,
    pub dataset: DatasetSettings,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub hyperparams: Hyperparams,
    pub model: ModelSettings,
    pub source: SourceSettings,
    pub pipeline: PipelineSettings,
    pub alerts: AlertConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 42,
            run_dir: PathBuf::from("runs"),
            dataset: DatasetSettings::default(),
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            hyperparams: Hyperparams::default(),
            model: ModelSettings::default(),
            source: SourceSettings::default(),
            pipeline: PipelineSettings::default(),
            alerts: AlertConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSettings {
    pub root: PathBuf,
    pub categories: Vec<String>,
    pub validation_fraction: f64,
    /// Directory of aligned, unmasked face crops used by `synth`.
    pub corpus: Option<PathBuf>,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            root: PathBuf::from("data"),
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            validation_fraction: 0.2,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub freeze_backbone: bool,
    /// torchvision-layout safetensors with `features.*` tensors.
    pub backbone_weights: Option<PathBuf>,
    /// Re-estimate batch-norm statistics on training images before training
    /// a backbone that has no pretrained weights.
    pub calibrate_batch_norm: bool,
    pub calibration_images: usize,
    /// Trained artifact used by `eval` and `run`.
    pub artifact: Option<PathBuf>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            freeze_backbone: true,
            backbone_weights: None,
            calibrate_batch_norm: true,
            calibration_images: 32,
            artifact: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSettings {
    /// Camera index, video file, image directory, or synthetic spec (`.json`).
    pub spec: Option<String>,
    pub frame_width: u32,
    pub frame_height: u32,
    pub fps: f64,
    pub max_frames: Option<u64>,
}

impl Default for SourceSettings {
    fn default() -> Self {
        SourceSettings { spec: None, frame_width: 640, frame_height: 480, fps: 10.0, max_frames: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub margin: f64,
    pub threaded: bool,
    pub realtime: Option<bool>,
    pub queue_capacity: usize,
    /// OpenCV-format cascade XML replacing the bundled detector.
    pub cascade: Option<PathBuf>,
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub min_face_size: u32,
    pub save_frames: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        let d = DetectParams::default();
        let p = PipelineOptions::default();
        PipelineSettings {
            margin: p.margin,
            threaded: p.threaded,
            realtime: p.realtime,
            queue_capacity: p.queue_capacity,
            cascade: None,
            scale_factor: d.scale_factor,
            min_neighbors: d.min_neighbors,
            min_face_size: d.min_size,
            save_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlertConfig {
    pub threshold: f64,
    pub cooldown_s: f64,
    pub webhook_url: Option<String>,
    pub webhook_timeout_ms: u64,
    pub queue_capacity: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub snapshots: bool,
}

impl Default for AlertConfig {
    fn default() -> Self {
        let s = AlertSettings::new("alerts");
        AlertConfig {
            threshold: maskwatch_core::live::DEFAULT_ALERT_THRESHOLD,
            cooldown_s: s.policy.cooldown_s,
            webhook_url: None,
            webhook_timeout_ms: s.webhook_timeout_ms,
            queue_capacity: s.queue_capacity,
            max_attempts: s.max_attempts,
            backoff_base_ms: s.backoff_base_ms,
            snapshots: true,
        }
    }
}

impl AlertConfig {
    pub fn settings(&self, out_dir: &Path) -> AlertSettings {
        AlertSettings {
            out_dir: out_dir.to_path_buf(),
            policy: DebouncePolicy { cooldown_s: self.cooldown_s, ..DebouncePolicy::default() },
            queue_capacity: self.queue_capacity,
            max_attempts: self.max_attempts,
            backoff_base_ms: self.backoff_base_ms,
            webhook_url: self.webhook_url.clone(),
            webhook_timeout_ms: self.webhook_timeout_ms,
        }
    }
}

impl AppConfig {
    /// Every invalid field, not just the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if self.dataset.categories.len() < 2 {
            bad.push("dataset.categories needs at least two names".to_string());
        }
        if !(self.dataset.validation_fraction > 0.0 && self.dataset.validation_fraction < 1.0) {
            bad.push(format!("dataset.validation_fraction must be in (0,1), got {}", self.dataset.validation_fraction));
        }
        if let Err(e) = self.synth.validate() {
            bad.extend(e);
        }
        if let Err(e) = self.preprocess.validate() {
            bad.extend(e);
        }
        if let Err(e) = self.hyperparams.validate() {
            bad.extend(e);
        }
        if self.model.calibration_images == 0 {
            bad.push("model.calibration_images must be > 0".into());
        }
        if self.source.frame_width < 24 || self.source.frame_height < 24 {
            bad.push("source.frame_width and source.frame_height must be >= 24".into());
        }
        if !(self.source.fps.is_finite() && self.source.fps > 0.0) {
            bad.push(format!("source.fps must be > 0, got {}", self.source.fps));
        }
        if !(0.0..=1.0).contains(&self.pipeline.margin) {
            bad.push(format!("pipeline.margin must be in [0,1], got {}", self.pipeline.margin));
        }
        if self.pipeline.queue_capacity == 0 {
            bad.push("pipeline.queue_capacity must be > 0".into());
        }
        if !(self.pipeline.scale_factor > 1.0) {
            bad.push(format!("pipeline.scale_factor must be > 1, got {}", self.pipeline.scale_factor));
        }
        if self.pipeline.min_face_size < 24 {
            bad.push(format!("pipeline.min_face_size must be >= 24, got {}", self.pipeline.min_face_size));
        }
        if !(0.0..=1.0).contains(&self.alerts.threshold) {
            bad.push(format!("alerts.threshold must be in [0,1], got {}", self.alerts.threshold));
        }
        if let Err(e) = self.alerts.settings(Path::new(".")).validate() {
            bad.extend(e);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(bad))
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            scale_factor: self.pipeline.scale_factor,
            min_neighbors: self.pipeline.min_neighbors,
            min_size: self.pipeline.min_face_size,
            ..DetectParams::default()
        }
    }
}

/// Recursively overlay `top` onto `base`; objects merge key by key, anything
/// else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_layer(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str::<Value>(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str::<Value>(&text).map_err(|e| e.to_string())
    };
    let value = parsed.map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    if !value.is_object() {
        return Err(CliError::Config(vec![format!("{}: top level must be a table/object", path.display())]));
    }
    Ok(value)
}

/// Set a dotted key, e.g. `("alerts.threshold", 0.5)`.
pub fn set(value: &mut Value, dotted: &str, v: impl Serialize) {
    let mut node = value;
    let parts: Vec<&str> = dotted.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .expect("config tree is objects")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .expect("config tree is objects")
        .insert(parts[parts.len() - 1].to_string(), serde_json::to_value(v).expect("serializable flag"));
}

/// Defaults, then `config_file`, then `env_file`, then `overrides`.
pub fn resolve(config_file: Option<&Path>, env_file: Option<&Path>, overrides: Value) -> Result<AppConfig, CliError> {
    let mut tree = serde_json::to_value(AppConfig::default()).expect("defaults serialize");
    for layer in [config_file, env_file].into_iter().flatten() {
        merge(&mut tree, read_layer(layer)?);
    }
    merge(&mut tree, overrides);
    let cfg: AppConfig = serde_json::from_value(tree).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_resolved(cfg: &AppConfig, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join(RESOLVED_CONFIG);
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    maskwatch_core::fsutil::write_atomic(&path, text.as_bytes()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = write(dir.path(), "a.json", r#"{"seed": 1, "alerts": {"threshold": 0.5, "cooldown_s": 3}}"#);
        let env = write(dir.path(), "b.toml", "seed = 2\n[alerts]\nthreshold = 0.6\n");
        let mut flags = json!({});
        set(&mut flags, "seed", 3u64);
        let cfg = resolve(Some(&file), Some(&env), flags).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.alerts.threshold, 0.6);
        assert_eq!(cfg.alerts.cooldown_s, 3.0);
        assert_eq!(cfg.alerts.max_attempts, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = write(dir.path(), "a.json", r#"{"alerts": {"thresold": 0.5}}"#);
        assert!(matches!(resolve(Some(&file), None, json!({})), Err(CliError::Config(_))));
    }

    #[test]
    fn every_bad_field_is_reported() {
        let mut flags = json!({});
        set(&mut flags, "alerts.threshold", 2.0);
        set(&mut flags, "hyperparams.batch_size", 0);
        set(&mut flags, "dataset.validation_fraction", 1.5);
        match resolve(None, None, flags) {
            Err(CliError::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut flags = json!({});
        set(&mut flags, "source.spec", "fixture.json");
        let cfg = resolve(None, None, flags).unwrap();
        let path = write_resolved(&cfg, dir.path()).unwrap();
        assert_eq!(resolve(Some(&path), None, json!({})).unwrap(), cfg);
    }
}
