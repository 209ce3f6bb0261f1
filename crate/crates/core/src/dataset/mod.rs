//! Labeled image directories: scanning, shuffling, stratified splitting,
//! synthetic mask overlay and the on-disk tensor cache.

mod cache;
mod manifest;
mod overlay;
mod scan;
mod split;
mod synth;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use cache::{read_tensor_cache, write_tensor_cache, CACHE_MAGIC, CACHE_VERSION, DTYPE_F32};
pub use manifest::{DatasetManifest, SampleEntry, Skipped, Splits, MANIFEST_VERSION, SHUFFLE_ALGORITHM};
pub use overlay::{overlay_mask, MaskOverlaySpec, Placement, Quad};
pub use scan::{decode_image, scan_dataset, seeded_shuffle, IMAGE_EXTENSIONS};
pub use split::split_manifest;
pub use synth::{synthesize_dataset, SynthConfig, SynthReport};

use crate::preprocess::ChannelOrder;

/// Category directory names; the index is the class id.
pub const DEFAULT_CATEGORIES: [&str; 2] = ["With_Face_Mask", "Without_Mask"];
pub const WITH_MASK: u8 = 0;
pub const WITHOUT_MASK: u8 = 1;

/// Where a sample came from. Synthetic samples are named with a `cmfd_`
/// (correctly worn) or `imfd_` (incorrectly worn) file-name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Natural,
    SyntheticCorrect,
    SyntheticIncorrect,
}

impl Origin {
    pub fn from_file_name(name: &str) -> Origin {
        let lower = name.to_ascii_lowercase();
        if lower.starts_with("cmfd_") {
            Origin::SyntheticCorrect
        } else if lower.starts_with("imfd_") {
            Origin::SyntheticIncorrect
        } else {
            Origin::Natural
        }
    }

    pub fn file_prefix(self) -> &'static str {
        match self {
            Origin::Natural => "face_",
            Origin::SyntheticCorrect => "cmfd_",
            Origin::SyntheticIncorrect => "imfd_",
        }
    }
}

/// One decoded, labeled image.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub path: PathBuf,
    pub pixels: RgbImage,
    pub channel_order: ChannelOrder,
    pub label: u8,
    pub origin: Origin,
}

impl ImageSample {
    /// Decode the manifest entry `entry`, resolved against `root`.
    pub fn load(root: &Path, entry: &SampleEntry) -> Result<ImageSample, DatasetError> {
        let path = root.join(&entry.path);
        let pixels = decode_image(&path)?;
        Ok(ImageSample { path, pixels, channel_order: ChannelOrder::Rgb, label: entry.label, origin: entry.origin })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset configuration error: {0}")]
    Config(String),
    #[error("no readable images under {0}")]
    Empty(PathBuf),
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("tensor cache format error: {0}")]
    Format(String),
    #[error("tensor cache corrupt: {0}")]
    Corrupt(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.into(), source }
    }
}
