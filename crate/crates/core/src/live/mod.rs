//! Frame-by-frame processing: acquire, detect faces, classify crops,
//! annotate, and hand no-mask decisions to the alert dispatcher.

pub mod cascade;
pub mod cascade_train;
mod pipeline;
mod source;

use std::path::Path;

use chrono::{DateTime, Utc};
use image::{Rgb, RgbImage};
use serde::Serialize;

pub use cascade::{Cascade, DetectParams};
pub use pipeline::{run_pipeline, FrameSink, ImageDirSink, PipelineOptions, RunLogSink, RunSummary, RUN_LOG};
pub use source::{
    stream_epoch, FfmpegSource, FixtureFace, FixtureLabel, Frame, FrameSource, ImageSequenceSource, SourceKind,
    SyntheticSource, SyntheticSpec,
};

use crate::geometry::Rect;
use crate::model::{decide_label, ClassificationResult, LabelMap, MaskNet, ModelArtifact, ModelError};
use crate::preprocess::{preprocess_image, ChannelOrder, PreprocessConfig};
use crate::render::draw::{draw_rect, draw_text, fill_rect};
use crate::render::font::text_width;
use crate::TensorBatch;

/// Smallest face side the detector reports, in pixels.
pub const MIN_FACE_SIZE: i32 = 24;
pub const DEFAULT_MARGIN: f64 = 0.10;
pub const DEFAULT_ALERT_THRESHOLD: f64 = 0.80;
pub const MASK_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const NO_MASK_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

const BUNDLED_CASCADE: &str = include_str!("../../assets/face_cascade.xml");

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error("face detector unavailable: {0}")]
    Detector(String),
    #[error("cannot open source {source_id}: {message}")]
    SourceOpen { source_id: String, message: String },
    #[error("frame {index}: {message}")]
    Frame { index: u64, message: String },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("classifying detection {index}: {source}")]
    Classify { index: usize, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaceDetection {
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub detector_confidence: Option<f64>,
}

pub trait FaceDetector: Send {
    fn name(&self) -> &str;
    /// Candidate boxes in frame coordinates; may be unclipped.
    fn detect(&self, frame: &RgbImage) -> Vec<FaceDetection>;
}

/// Viola-Jones cascade detector.
#[derive(Debug, Clone)]
pub struct CascadeDetector {
    cascade: Cascade,
    params: DetectParams,
}

impl CascadeDetector {
    pub fn new(cascade: Cascade, params: DetectParams) -> Result<Self, LiveError> {
        if cascade.stages.is_empty() {
            return Err(LiveError::Detector("cascade has no stages".into()));
        }
        Ok(CascadeDetector { cascade, params })
    }

    /// The cascade shipped with the crate, trained on procedural faces.
    pub fn bundled() -> Result<Self, LiveError> {
        Self::new(Cascade::from_opencv_xml(BUNDLED_CASCADE)?, DetectParams::default())
    }

    /// Any OpenCV-format Haar cascade XML file.
    pub fn from_xml_file(path: &Path) -> Result<Self, LiveError> {
        let text = std::fs::read_to_string(path).map_err(|e| LiveError::Detector(format!("{}: {e}", path.display())))?;
        Self::new(Cascade::from_opencv_xml(&text)?, DetectParams::default())
    }

    pub fn params_mut(&mut self) -> &mut DetectParams {
        &mut self.params
    }
}

impl FaceDetector for CascadeDetector {
    fn name(&self) -> &str {
        "haar-cascade"
    }

    fn detect(&self, frame: &RgbImage) -> Vec<FaceDetection> {
        let gray = cascade::to_gray(frame);
        self.cascade
            .detect(&gray, &self.params)
            .into_iter()
            .map(|(bbox, n)| FaceDetection { bbox, detector_confidence: Some(n as f64 / (n as f64 + 1.0)) })
            .collect()
    }
}

/// Run `detector`, clip boxes to the frame and drop those below the minimum size.
pub fn detect_faces(frame: &RgbImage, detector: &dyn FaceDetector) -> Vec<FaceDetection> {
    let (w, h) = frame.dimensions();
    detector
        .detect(frame)
        .into_iter()
        .filter_map(|d| {
            let bbox = d.bbox.clip(w, h)?;
            (bbox.w >= MIN_FACE_SIZE && bbox.h >= MIN_FACE_SIZE).then_some(FaceDetection { bbox, ..d })
        })
        .collect()
}

/// Something that turns face crops into class scores.
pub trait FaceClassifier: Send {
    fn label_map(&self) -> &LabelMap;
    fn classify(&self, crops: &[RgbImage]) -> Result<Vec<ClassificationResult>, LiveError>;
}

/// A trained artifact ready for inference.
pub struct ArtifactClassifier {
    model: MaskNet,
    labels: LabelMap,
    preprocess: PreprocessConfig,
}

impl ArtifactClassifier {
    pub fn new(artifact: &ModelArtifact) -> Result<Self, LiveError> {
        Ok(ArtifactClassifier {
            model: artifact.instantiate()?,
            labels: artifact.label_map.clone(),
            preprocess: artifact.preprocess_config.clone(),
        })
    }
}

impl FaceClassifier for ArtifactClassifier {
    fn label_map(&self) -> &LabelMap {
        &self.labels
    }

    fn classify(&self, crops: &[RgbImage]) -> Result<Vec<ClassificationResult>, LiveError> {
        let t = self.preprocess.target_size as usize;
        let mut batch = TensorBatch::empty(t, t, 3);
        for (index, crop) in crops.iter().enumerate() {
            let values = preprocess_image(crop, ChannelOrder::Rgb, &self.preprocess)
                .map_err(|e| LiveError::Classify { index, source: ModelError::Shape(e) })?;
            batch.push(&values, 0).map_err(|e| LiveError::Classify { index, source: ModelError::Shape(e) })?;
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.model.predict(&batch)?)
    }
}

/// Crop each detection grown by `margin` per side (clipped to the frame),
/// classify the crops in one batch, and return results in detection order.
pub fn crop_and_classify(
    frame: &RgbImage,
    detections: &[FaceDetection],
    classifier: &dyn FaceClassifier,
    margin: f64,
) -> Result<Vec<(FaceDetection, ClassificationResult)>, LiveError> {
    if detections.is_empty() {
        return Ok(Vec::new());
    }
    let (w, h) = frame.dimensions();
    let mut crops = Vec::with_capacity(detections.len());
    for (index, d) in detections.iter().enumerate() {
        let r = d.bbox.expand(margin).clip(w, h).ok_or_else(|| LiveError::Classify {
            index,
            source: ModelError::Config(format!("detection {:?} lies outside the frame", d.bbox)),
        })?;
        crops.push(image::imageops::crop_imm(frame, r.x as u32, r.y as u32, r.w as u32, r.h as u32).to_image());
    }
    let results = classifier.classify(&crops)?;
    Ok(detections.iter().zip(results).map(|(d, r)| (*d, r.with_box(d.bbox))).collect())
}

#[derive(Debug, Clone)]
pub struct AnnotatedFrame {
    pub frame: RgbImage,
    pub detections: Vec<(FaceDetection, ClassificationResult, String)>,
    pub frame_index: u64,
    pub timestamp: DateTime<Utc>,
}

pub fn label_color(display: &str) -> Rgb<u8> {
    if display == "Face Mask" {
        MASK_COLOR
    } else {
        NO_MASK_COLOR
    }
}

/// Draw a box and caption per detection on a copy of `frame`.
pub fn annotate(
    frame: &RgbImage,
    results: &[(FaceDetection, ClassificationResult)],
    labels: &LabelMap,
    frame_index: u64,
    timestamp: DateTime<Utc>,
) -> Result<AnnotatedFrame, LiveError> {
    let mut out = frame.clone();
    let mut detections = Vec::with_capacity(results.len());
    for (d, r) in results {
        let display = decide_label(r, labels)?;
        let color = label_color(&display);
        draw_rect(&mut out, d.bbox, color, 2);
        let caption = format!("{display} {:.0}%", r.confidence * 100.0);
        let (tw, th) = (text_width(&caption, 2) as i32 + 6, 18);
        let ty = if d.bbox.y >= th { d.bbox.y - th } else { d.bbox.bottom() };
        fill_rect(&mut out, Rect::new(d.bbox.x, ty, tw, th), color);
        draw_text(&mut out, d.bbox.x + 3, ty + 2, &caption, Rgb([255, 255, 255]), 2);
        detections.push((*d, r.clone(), display));
    }
    Ok(AnnotatedFrame { frame: out, detections, frame_index, timestamp })
}
