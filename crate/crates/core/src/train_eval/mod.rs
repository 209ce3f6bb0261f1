//! Training loop, classification metrics and learning-curve output.

mod curves;
mod metrics;
mod train;

pub use curves::{emit_curves, read_curves_csv, render_curves, CurveFiles, CSV_HEADER, CURVES_CSV, CURVES_PNG, TRAIN_COLOR, VAL_COLOR};
pub use metrics::{compute_report, compute_report_n, f1_score, AverageMetrics, ClassMetrics, MetricsReport};
pub use train::{dataset_fingerprint, predict_labels, train, EpochRecord, Hyperparams, TrainingRun};

use crate::dataset::ImageSample;
use crate::model::{ModelArtifact, ModelError};
use crate::preprocess::{preprocess_batch, PreprocessError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged in epoch {epoch} (non-finite loss) after {} completed epochs", history.len())]
    Diverged { epoch: usize, history: Vec<EpochRecord> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<candle_core::Error> for TrainError {
    fn from(e: candle_core::Error) -> Self {
        TrainError::Model(ModelError::Backend(e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("y_true has {y_true} labels but y_pred has {y_pred}")]
    LengthMismatch { y_true: usize, y_pred: usize },
    #[error("no labels to score")]
    Empty,
    #[error("label {0} is outside the label map")]
    UnknownLabel(u8),
    #[error("cannot write {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("malformed curves file: {0}")]
    Parse(String),
}

/// Score an artifact on labeled samples, preprocessing each with the
/// artifact's embedded configuration.
pub fn evaluate_artifact(artifact: &ModelArtifact, samples: &[ImageSample]) -> Result<MetricsReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let model = artifact.instantiate()?;
    let batch = preprocess_batch(samples, &artifact.preprocess_config)?;
    let predicted = predict_labels(&model, &batch)?;
    Ok(compute_report_n(&batch.labels, &predicted, model.num_classes())?)
}
