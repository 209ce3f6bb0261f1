//! Model artifact container.
//!
//! ```text
//! "MWMA" | u32 version | u64 header length | header JSON
//! u64 weights length | safetensors blob | u32 CRC-32 of all preceding bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{build_model, MaskNet, ModelConfig, ARCHITECTURE_ID, INPUT_SIZE};
use super::{LabelMap, ModelError};
use crate::preprocess::PreprocessConfig;

pub const ARTIFACT_MAGIC: [u8; 4] = *b"MWMA";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub final_val_accuracy: f64,
    pub final_val_loss: f64,
    /// Where backbone weights came from: a checkpoint name or "scratch".
    #[serde(default)]
    pub backbone_init: String,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture_id: String,
    label_map: LabelMap,
    #[serde(default)]
    preprocess_config: Option<PreprocessConfig>,
    training_meta: TrainingMeta,
    model_config: ModelConfig,
}

/// A loaded, validated artifact. Weights stay serialized until
/// [`ModelArtifact::instantiate`].
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub architecture_id: String,
    pub label_map: LabelMap,
    pub preprocess_config: PreprocessConfig,
    pub training_meta: TrainingMeta,
    pub model_config: ModelConfig,
    pub weights: Vec<u8>,
}

impl ModelArtifact {
    pub fn instantiate(&self) -> Result<MaskNet, ModelError> {
        let model = build_model(self.model_config.clone())?;
        model.params().load_safetensors(&self.weights, "", false)?;
        Ok(model)
    }
}

pub fn save_artifact(
    model: &MaskNet,
    label_map: &LabelMap,
    preprocess_config: &PreprocessConfig,
    meta: &TrainingMeta,
    path: &Path,
) -> Result<(), ModelError> {
    let header = Header {
        format_version: ARTIFACT_VERSION,
        architecture_id: ARCHITECTURE_ID.to_string(),
        label_map: label_map.clone(),
        preprocess_config: Some(preprocess_config.clone()),
        training_meta: meta.clone(),
        model_config: model.config().clone(),
    };
    let problems = validate(&header);
    if !problems.is_empty() {
        return Err(ModelError::Validation(problems));
    }
    let header = serde_json::to_vec(&header).map_err(|e| ModelError::Config(e.to_string()))?;
    let weights = model.params().to_safetensors()?;
    let bytes = encode(&header, &weights);
    crate::fsutil::write_atomic(path, &bytes).map_err(|e| ModelError::io(path, e))
}

fn encode(header: &[u8], weights: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + 8 + weights.len() + 4);
    out.extend_from_slice(&ARTIFACT_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    out.extend_from_slice(weights);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn validate(h: &Header) -> Vec<String> {
    let mut problems = Vec::new();
    if h.architecture_id != ARCHITECTURE_ID {
        problems.push(format!("architecture_id {:?} is not {ARCHITECTURE_ID:?}", h.architecture_id));
    }
    let expected: Vec<u8> = (0..h.model_config.num_classes as u8).collect();
    let ids: Vec<u8> = h.label_map.keys().copied().collect();
    if ids != expected {
        problems.push(format!("label_map ids {ids:?} do not match head classes {expected:?}"));
    }
    match &h.preprocess_config {
        None => problems.push("preprocess_config is missing".into()),
        Some(cfg) => {
            if let Err(errs) = cfg.validate() {
                problems.extend(errs.into_iter().map(|e| format!("preprocess_config: {e}")));
            } else if cfg.target_size as usize != INPUT_SIZE {
                problems.push(format!("preprocess_config.target_size must be {INPUT_SIZE}"));
            }
        }
    }
    problems
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<ModelArtifact, ModelError> {
    if bytes.len() < 8 || bytes[..4] != ARTIFACT_MAGIC {
        return Err(ModelError::Corrupt("not a model artifact (bad magic)".into()));
    }
    let version = read_u32(bytes, 4);
    if version != ARTIFACT_VERSION {
        return Err(ModelError::Version { found: version, expected: ARTIFACT_VERSION });
    }
    let truncated = || ModelError::Corrupt("artifact is truncated".into());
    if bytes.len() < 16 {
        return Err(truncated());
    }
    let header_len = usize::try_from(read_u64(bytes, 8)).map_err(|_| truncated())?;
    let header_end = 16usize.checked_add(header_len).ok_or_else(truncated)?;
    if bytes.len() < header_end + 8 {
        return Err(truncated());
    }
    let weights_len = usize::try_from(read_u64(bytes, header_end)).map_err(|_| truncated())?;
    let weights_end = (header_end + 8).checked_add(weights_len).ok_or_else(truncated)?;
    if bytes.len() != weights_end + 4 {
        return Err(truncated());
    }
    if crc32fast::hash(&bytes[..weights_end]) != read_u32(bytes, weights_end) {
        return Err(ModelError::Corrupt("checksum mismatch".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| ModelError::Validation(vec![format!("header: {e}")]))?;
    let problems = validate(&header);
    if !problems.is_empty() {
        return Err(ModelError::Validation(problems));
    }
    Ok(ModelArtifact {
        architecture_id: header.architecture_id,
        label_map: header.label_map,
        preprocess_config: header.preprocess_config.expect("validated"),
        training_meta: header.training_meta,
        model_config: header.model_config,
        weights: bytes[header_end + 8..weights_end].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_label_map;

    fn header(pre: Option<PreprocessConfig>) -> Header {
        Header {
            format_version: ARTIFACT_VERSION,
            architecture_id: ARCHITECTURE_ID.into(),
            label_map: default_label_map(),
            preprocess_config: pre,
            training_meta: TrainingMeta::default(),
            model_config: ModelConfig::default(),
        }
    }

    #[test]
    fn missing_preprocess_config_fails_validation() {
        let h = serde_json::to_vec(&header(None)).unwrap();
        let err = decode(&encode(&h, b"")).unwrap_err();
        match err {
            ModelError::Validation(p) => assert!(p.iter().any(|m| m.contains("preprocess_config"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_map_must_match_head() {
        let mut h = header(Some(PreprocessConfig::default()));
        h.label_map.insert(2, "Other".into());
        assert!(!validate(&h).is_empty());
    }

    #[test]
    fn version_and_checksum_are_checked() {
        let h = serde_json::to_vec(&header(Some(PreprocessConfig::default()))).unwrap();
        let mut bytes = encode(&h, b"abc");
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(ModelError::Version { found: 9, .. })));
        let mut bytes = encode(&h, b"abc");
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(matches!(decode(&bytes), Err(ModelError::Corrupt(_))));
        let bytes = encode(&h, b"abc");
        assert!(matches!(decode(&bytes[..bytes.len() - 10]), Err(ModelError::Corrupt(_))));
    }
}
