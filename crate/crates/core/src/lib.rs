//! Face-mask detection toolkit: dataset ingestion, preprocessing, a MobileNetV2
//! classifier, training and evaluation, a live detection pipeline and alert
//! dispatch.

pub mod alerts;
pub mod batch;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod geometry;
pub mod live;
pub mod model;
pub mod preprocess;
pub mod render;
pub mod train_eval;

pub use batch::TensorBatch;
pub use error::{Error, Result, ShapeError};
pub use geometry::Rect;
