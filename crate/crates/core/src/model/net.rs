use candle_core::{Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BnMode, ConvBn, ConvSpec, InvertedResidual, Linear};
use super::params::{Init, ParamStore};
use super::{ClassificationResult, ModelError};
use crate::batch::TensorBatch;

pub const ARCHITECTURE_ID: &str = "mobilenet_v2-1.0+gap-dense128-dropout0.5";
pub const INPUT_SIZE: usize = 224;
pub const FEATURE_DIM: usize = 1280;
pub const HIDDEN_DIM: usize = 128;
pub const DROPOUT: f64 = 0.5;
pub const BACKBONE_PREFIX: &str = "features.";
pub const HEAD_PREFIX: &str = "head.";

/// (expansion t, output channels c, repeats n, first stride s) per stage.
pub const INVERTED_RESIDUAL_SETTING: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];
pub const STEM_CHANNELS: usize = 32;

/// Images per forward chunk during inference; bounds peak memory.
const PREDICT_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub freeze_backbone: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { num_classes: 2, freeze_backbone: true, seed: 0 }
    }
}

/// MobileNetV2 feature extractor followed by the classification head.
#[derive(Debug, Clone)]
pub struct MaskNet {
    config: ModelConfig,
    params: ParamStore,
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
    last: ConvBn,
    hidden: Linear,
    output: Linear,
}

/// Build an untrained model. Weights are drawn from a stream seeded by
/// `config.seed`, so two builds with the same seed are identical.
pub fn build_model(config: ModelConfig) -> Result<MaskNet, ModelError> {
    if config.num_classes < 2 {
        return Err(ModelError::Config(format!("num_classes must be at least 2, got {}", config.num_classes)));
    }
    let mut store = ParamStore::new();
    let mut init = Init::new(config.seed);
    let stem = ConvBn::new(
        &mut store,
        &mut init,
        "features.0.0",
        "features.0.1",
        ConvSpec { c_in: 3, c_out: STEM_CHANNELS, kernel: 3, stride: 2, depthwise: false, relu6: true },
    )?;
    let mut blocks = Vec::new();
    let mut c_in = STEM_CHANNELS;
    for (t, c, n, s) in INVERTED_RESIDUAL_SETTING {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let prefix = format!("features.{}", blocks.len() + 1);
            blocks.push(InvertedResidual::new(&mut store, &mut init, &prefix, c_in, c, stride, t)?);
            c_in = c;
        }
    }
    let last_idx = blocks.len() + 1;
    let last = ConvBn::new(
        &mut store,
        &mut init,
        &format!("features.{last_idx}.0"),
        &format!("features.{last_idx}.1"),
        ConvSpec { c_in, c_out: FEATURE_DIM, kernel: 1, stride: 1, depthwise: false, relu6: true },
    )?;
    // The head draws from its own stream so its initial values do not depend on
    // the backbone layout.
    let mut head_init = Init::new(config.seed ^ 0x6865_6164);
    let hidden = Linear::new(&mut store, &mut head_init, "head.hidden", FEATURE_DIM, HIDDEN_DIM)?;
    let output = Linear::new(&mut store, &mut head_init, "head.output", HIDDEN_DIM, config.num_classes)?;
    Ok(MaskNet { config, params: store, stem, blocks, last, hidden, output })
}

/// Per-forward options for the head.
pub struct HeadPass<'a> {
    pub train: bool,
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

impl MaskNet {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn set_freeze_backbone(&mut self, freeze: bool) {
        self.config.freeze_backbone = freeze;
    }

    /// Load backbone weights from a torchvision-layout safetensors file.
    /// Returns a description for the training metadata.
    pub fn load_backbone(&self, path: &std::path::Path) -> Result<String, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
        let loaded = self.params.load_safetensors(&bytes, BACKBONE_PREFIX, true)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        log::info!("loaded {loaded} backbone tensors from {}", path.display());
        Ok(format!("pretrained:{name}:crc32={:08x}", crc32fast::hash(&bytes)))
    }

    /// Number of inverted-residual blocks.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn backbone_checksum(&self) -> Result<u32, ModelError> {
        self.params.checksum(BACKBONE_PREFIX)
    }

    pub fn head_checksum(&self) -> Result<u32, ModelError> {
        self.params.checksum(HEAD_PREFIX)
    }

    /// Parameters the optimizer should update.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.params.trainable(HEAD_PREFIX);
        if !self.config.freeze_backbone {
            vars.extend(self.params.trainable(BACKBONE_PREFIX));
        }
        vars
    }

    fn check_input(&self, shape: (usize, usize, usize, usize)) -> Result<(), ModelError> {
        let (_, h, w, c) = shape;
        if (h, w, c) != (INPUT_SIZE, INPUT_SIZE, 3) {
            return Err(ModelError::Shape(crate::error::ShapeError::new(format!(
                "expected (\u{b7},{INPUT_SIZE},{INPUT_SIZE},3), got (\u{b7},{h},{w},{c})"
            ))));
        }
        Ok(())
    }

    /// Backbone features (N, 1280) for an NHWC tensor.
    pub fn features(&self, x_nhwc: &Tensor, mode: BnMode, grad: bool) -> Result<Tensor, ModelError> {
        let x = x_nhwc.permute((0, 3, 1, 2))?.contiguous()?;
        let mut y = self.stem.forward(&x, mode, grad)?;
        for b in &self.blocks {
            y = b.forward(&y, mode, grad)?;
        }
        y = self.last.forward(&y, mode, grad)?;
        Ok(y.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    /// Head logits (N, num_classes) from backbone features.
    pub fn head_logits(&self, features: &Tensor, pass: HeadPass<'_>) -> Result<Tensor, ModelError> {
        let h = self.hidden.forward(features, pass.train)?.relu()?;
        let h = match (pass.train, pass.dropout_rng) {
            (true, Some(rng)) => {
                let keep = 1.0 - DROPOUT;
                let mask: Vec<f32> =
                    (0..h.elem_count()).map(|_| if rng.random_bool(keep) { (1.0 / keep) as f32 } else { 0.0 }).collect();
                let mask = Tensor::from_vec(mask, h.shape(), h.device())?;
                (h * mask)?
            }
            _ => h,
        };
        self.output.forward(&h, pass.train)
    }

    /// Feature extraction for a whole batch in inference mode, chunked.
    pub fn extract_features(&self, batch: &TensorBatch) -> Result<Tensor, ModelError> {
        self.check_input(batch.shape())?;
        let mut parts = Vec::new();
        for start in (0..batch.n).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(batch.n);
            let x = batch_tensor(batch, start, end)?;
            parts.push(self.features(&x, BnMode::Eval, false)?);
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros((0, FEATURE_DIM), candle_core::DType::F32, &Device::Cpu)?);
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Re-estimate batch-norm running statistics from `batch` without touching
    /// learned weights. Useful for a backbone that was never trained.
    pub fn calibrate_batch_norm(&self, batch: &TensorBatch) -> Result<(), ModelError> {
        self.check_input(batch.shape())?;
        if batch.n == 0 {
            return Err(ModelError::Config("calibration batch is empty".into()));
        }
        let x = batch_tensor(batch, 0, batch.n)?;
        self.features(&x, BnMode::Calibrate, false)?;
        Ok(())
    }

    /// Inference-mode logits for rows `start..end`.
    pub fn logits(&self, batch: &TensorBatch) -> Result<Tensor, ModelError> {
        let feats = self.extract_features(batch)?;
        if batch.n == 0 {
            return Ok(Tensor::zeros((0, self.config.num_classes), candle_core::DType::F32, &Device::Cpu)?);
        }
        self.head_logits(&feats, HeadPass { train: false, dropout_rng: None })
    }

    /// Classify every row of an (N, 224, 224, 3) batch.
    pub fn predict(&self, batch: &TensorBatch) -> Result<Vec<ClassificationResult>, ModelError> {
        let logits = self.logits(batch)?;
        results_from_logits(&logits)
    }

    /// Predict from precomputed backbone features.
    pub fn predict_features(&self, feats: &Tensor) -> Result<Vec<ClassificationResult>, ModelError> {
        let logits = self.head_logits(feats, HeadPass { train: false, dropout_rng: None })?;
        results_from_logits(&logits)
    }
}

pub fn batch_tensor(batch: &TensorBatch, start: usize, end: usize) -> Result<Tensor, ModelError> {
    let len = batch.image_len();
    let data = batch.data[start * len..end * len].to_vec();
    Ok(Tensor::from_vec(data, (end - start, batch.height, batch.width, batch.channels), &Device::Cpu)?)
}

/// Softmax in f64 per row, then argmax with ties to the lower id.
pub fn results_from_logits(logits: &Tensor) -> Result<Vec<ClassificationResult>, ModelError> {
    let rows = logits.to_vec2::<f32>()?;
    Ok(rows.iter().map(|r| ClassificationResult::from_logits(r)).collect())
}

/// Seeded RNG for dropout masks.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x6472_6f70)
}
