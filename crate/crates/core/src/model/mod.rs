//! MobileNetV2 mask classifier: construction, prediction and persistence.

mod artifact;
pub mod depthwise;
pub mod layers;
mod net;
pub mod params;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifact::{load_artifact, save_artifact, ModelArtifact, TrainingMeta, ARTIFACT_MAGIC, ARTIFACT_VERSION};
pub use net::{
    batch_tensor, build_model, dropout_rng, results_from_logits, HeadPass, MaskNet, ModelConfig, ARCHITECTURE_ID,
    BACKBONE_PREFIX, DROPOUT, FEATURE_DIM, HEAD_PREFIX, HIDDEN_DIM, INPUT_SIZE, INVERTED_RESIDUAL_SETTING,
    STEM_CHANNELS,
};

use crate::error::ShapeError;
use crate::geometry::Rect;

/// Class id to category name.
pub type LabelMap = BTreeMap<u8, String>;

pub fn default_label_map() -> LabelMap {
    crate::dataset::DEFAULT_CATEGORIES.iter().enumerate().map(|(i, c)| (i as u8, c.to_string())).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("tensor backend error: {0}")]
    Backend(#[from] candle_core::Error),
    #[error("weights error: {0}")]
    Weights(String),
    #[error("class id {0} is not in the label map")]
    UnknownClass(u8),
    #[error("artifact version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("invalid artifact: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub scores: Vec<f32>,
    pub label: u8,
    pub confidence: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_box: Option<Rect>,
}

impl ClassificationResult {
    /// Softmax (computed in f64) and argmax; equal scores go to the lower id.
    pub fn from_logits(logits: &[f32]) -> Self {
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let scores: Vec<f32> = exps.iter().map(|e| (e / sum) as f32).collect();
        Self::from_scores(scores)
    }

    pub fn from_scores(scores: Vec<f32>) -> Self {
        let mut label = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[label] {
                label = i;
            }
        }
        let confidence = scores.get(label).copied().unwrap_or(0.0);
        ClassificationResult { scores, label: label as u8, confidence, face_box: None }
    }

    pub fn with_box(mut self, face_box: Rect) -> Self {
        self.face_box = Some(face_box);
        self
    }
}

/// Text shown for a category.
pub fn display_name(category: &str) -> &str {
    match category {
        "With_Face_Mask" => "Face Mask",
        "Without_Mask" => "No Mask",
        other => other,
    }
}

/// On-screen label for a result: "Face Mask" or "No Mask".
pub fn decide_label(result: &ClassificationResult, labels: &LabelMap) -> Result<String, ModelError> {
    labels
        .get(&result.label)
        .map(|c| display_name(c).to_string())
        .ok_or(ModelError::UnknownClass(result.label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_for_clear_and_tied_scores() {
        let map = default_label_map();
        let r = ClassificationResult::from_scores(vec![0.9, 0.1]);
        assert_eq!(decide_label(&r, &map).unwrap(), "Face Mask");
        let r = ClassificationResult::from_scores(vec![0.1, 0.9]);
        assert_eq!(decide_label(&r, &map).unwrap(), "No Mask");
        let r = ClassificationResult::from_scores(vec![0.5, 0.5]);
        assert_eq!(r.label, 0);
        assert_eq!(decide_label(&r, &map).unwrap(), "Face Mask");
    }

    #[test]
    fn unknown_class_is_mapping_error() {
        let mut map = default_label_map();
        map.remove(&1);
        let r = ClassificationResult::from_scores(vec![0.2, 0.8]);
        assert!(matches!(decide_label(&r, &map), Err(ModelError::UnknownClass(1))));
    }

    #[test]
    fn softmax_of_extreme_logits_is_finite() {
        let r = ClassificationResult::from_logits(&[1e30, -1e30]);
        assert_eq!(r.scores, vec![1.0, 0.0]);
        let r = ClassificationResult::from_logits(&[3.0, 3.0]);
        assert_eq!(r.label, 0);
        assert_eq!(r.confidence, 0.5);
    }
}
