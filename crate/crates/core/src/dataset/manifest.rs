use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Origin};

pub const MANIFEST_VERSION: u32 = 1;

/// Name of the shuffle recorded in every manifest: Fisher-Yates driven by
/// ChaCha8 seeded through `seed_from_u64`, bounded draws by 128-bit
/// multiply-high of `next_u64`.
pub const SHUFFLE_ALGORITHM: &str = "fisher-yates/chacha8-seed_from_u64/u64-mulhi";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: u8,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub count: usize,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub shuffle: String,
    pub root: String,
    pub categories: Vec<String>,
    pub samples: Vec<SampleEntry>,
    pub class_counts: BTreeMap<u8, usize>,
    pub splits: Splits,
    pub skipped: Skipped,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train_entries(&self) -> impl Iterator<Item = &SampleEntry> {
        self.splits.train.iter().map(|&i| &self.samples[i])
    }

    pub fn validation_entries(&self) -> impl Iterator<Item = &SampleEntry> {
        self.splits.validation.iter().map(|&i| &self.samples[i])
    }

    /// Checks the structural invariants: every index in exactly one split and
    /// class counts that add up.
    pub fn check(&self) -> Result<(), DatasetError> {
        let mut seen = vec![0u8; self.samples.len()];
        for &i in self.splits.train.iter().chain(&self.splits.validation) {
            if i >= self.samples.len() {
                return Err(DatasetError::Manifest(format!("split index {i} out of range")));
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(DatasetError::Manifest(format!("sample {i} appears in {} splits", seen[i])));
        }
        let total: usize = self.class_counts.values().sum();
        if total != self.samples.len() {
            return Err(DatasetError::Manifest(format!(
                "class counts sum to {total}, expected {}",
                self.samples.len()
            )));
        }
        Ok(())
    }

    /// Canonical JSON: pretty-printed, maps in key order, trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let m: DatasetManifest = serde_json::from_str(text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        crate::fsutil::write_atomic(path, self.to_json().as_bytes()).map_err(|e| DatasetError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_json(&text)
    }
}
