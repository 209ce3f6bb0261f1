use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::batch::TensorBatch;
use crate::dataset::seeded_shuffle;
use crate::model::layers::BnMode;
use crate::model::{batch_tensor, dropout_rng, HeadPass, MaskNet, HEAD_PREFIX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer_id: String,
    pub epochs: usize,
    /// Stop after this many epochs without a lower validation loss.
    pub early_stop_patience: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-4,
            batch_size: 32,
            optimizer_id: "adam".into(),
            epochs: 20,
            early_stop_patience: Some(5),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut bad = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push(format!("hyperparams.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            bad.push("hyperparams.batch_size must be > 0".into());
        }
        if self.optimizer_id != "adam" {
            bad.push(format!("hyperparams.optimizer_id {:?} is not supported (use \"adam\")", self.optimizer_id));
        }
        if self.epochs == 0 {
            bad.push("hyperparams.epochs must be > 0".into());
        }
        if self.early_stop_patience == Some(0) {
            bad.push("hyperparams.early_stop_patience must be > 0 when set".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Epoch whose weights were kept (highest validation accuracy).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub backbone_frozen: bool,
}

impl TrainingRun {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.best_epoch)
    }
}

fn targets(labels: &[u8]) -> Result<Tensor, TrainError> {
    let t: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    Ok(Tensor::from_vec(t, labels.len(), &Device::Cpu)?)
}

fn correct(logits: &Tensor, labels: &[u8]) -> Result<usize, TrainError> {
    let rows = logits.to_vec2::<f32>()?;
    Ok(rows
        .iter()
        .zip(labels)
        .filter(|(r, &l)| crate::model::ClassificationResult::from_logits(r).label == l)
        .count())
}

/// Inputs to one epoch: cached features for a frozen backbone, raw images otherwise.
enum Inputs<'a> {
    Features(Tensor),
    Images(&'a TensorBatch),
}

/// Images per backward pass when the backbone trains; bounds activation memory.
const IMAGE_MICRO_BATCH: usize = 2;

impl Inputs<'_> {
    fn micro_batch(&self) -> usize {
        match self {
            Inputs::Features(_) => usize::MAX,
            Inputs::Images(_) => IMAGE_MICRO_BATCH,
        }
    }

    fn rows(&self, model: &MaskNet, idx: &[usize], train: bool) -> Result<Tensor, TrainError> {
        match self {
            Inputs::Features(f) => {
                let ids = Tensor::from_vec(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), idx.len(), &Device::Cpu)?;
                Ok(f.index_select(&ids, 0)?)
            }
            Inputs::Images(b) => {
                let sub = b.select(idx);
                let x = batch_tensor(&sub, 0, sub.n)?;
                let mode = if train { BnMode::Train } else { BnMode::Eval };
                Ok(model.features(&x, mode, train)?)
            }
        }
    }
}

/// Add the gradients of `vars` in `extra` into `acc`.
fn accumulate(mut acc: GradStore, extra: GradStore, vars: &[Var]) -> Result<GradStore, TrainError> {
    for v in vars {
        if let Some(g) = extra.get(v) {
            let sum = match acc.get(v) {
                Some(a) => (a + g)?,
                None => g.clone(),
            };
            acc.insert(v, sum);
        }
    }
    Ok(acc)
}

fn evaluate(model: &MaskNet, inputs: &Inputs<'_>, labels: &[u8], batch_size: usize) -> Result<(f64, f64), TrainError> {
    let mut loss_sum = 0.0;
    let mut hits = 0;
    for chunk in (0..labels.len()).collect::<Vec<_>>().chunks(batch_size) {
        let feats = inputs.rows(model, chunk, false)?;
        let logits = model.head_logits(&feats, HeadPass { train: false, dropout_rng: None })?;
        let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
        let loss = candle_nn::loss::cross_entropy(&logits, &targets(&y)?)?.to_scalar::<f32>()? as f64;
        loss_sum += loss * chunk.len() as f64;
        hits += correct(&logits, &y)?;
    }
    Ok((loss_sum / labels.len() as f64, hits as f64 / labels.len() as f64))
}

/// Train with Adam and cross-entropy, recording per-epoch metrics.
///
/// With a frozen backbone the features of both splits are computed once in
/// inference mode and only the head is optimized. The weights of the epoch
/// with the highest validation accuracy are restored at the end (earlier
/// epoch on ties). A non-finite loss aborts with the history so far.
pub fn train(
    model: &mut MaskNet,
    train_data: &TensorBatch,
    val_data: &TensorBatch,
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainingRun, TrainError> {
    hp.validate().map_err(TrainError::Config)?;
    if train_data.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_data.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let k = model.num_classes() as u8;
    if let Some(&bad) = train_data.labels.iter().chain(&val_data.labels).find(|&&l| l >= k) {
        return Err(TrainError::Config(vec![format!("label {bad} exceeds the model's {k} classes")]));
    }

    let frozen = model.config().freeze_backbone;
    let (train_in, val_in) = if frozen {
        (Inputs::Features(model.extract_features(train_data)?), Inputs::Features(model.extract_features(val_data)?))
    } else {
        (Inputs::Images(train_data), Inputs::Images(val_data))
    };
    let keep_prefix = if frozen { HEAD_PREFIX } else { "" };

    let params = ParamsAdamW { lr: hp.learning_rate, weight_decay: 0.0, ..Default::default() };
    let vars = model.trainable_vars();
    let mut opt = AdamW::new(vars.clone(), params)?;
    let mut drop_rng = dropout_rng(seed);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_improved = 0;
    let mut stopped_early = false;

    for epoch in 1..=hp.epochs {
        let mut order: Vec<usize> = (0..train_data.n).collect();
        seeded_shuffle(&mut order, seed.wrapping_add(epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(hp.batch_size) {
            let y: Vec<u8> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let mut grads: Option<GradStore> = None;
            let mut value = 0.0;
            for (part, part_y) in chunk.chunks(train_in.micro_batch()).zip(y.chunks(train_in.micro_batch())) {
                let feats = train_in.rows(model, part, true)?;
                let logits = model.head_logits(&feats, HeadPass { train: true, dropout_rng: Some(&mut drop_rng) })?;
                let weight = part.len() as f64 / chunk.len() as f64;
                let loss = (candle_nn::loss::cross_entropy(&logits, &targets(part_y)?)? * weight)?;
                value += loss.to_scalar::<f32>()? as f64;
                hits += correct(&logits, part_y)?;
                let g = loss.backward()?;
                grads = Some(match grads {
                    None => g,
                    Some(acc) => accumulate(acc, g, &vars)?,
                });
            }
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, history });
            }
            opt.step(&grads.expect("non-empty chunk"))?;
            loss_sum += value * chunk.len() as f64;
        }
        let (val_loss, val_acc) = evaluate(model, &val_in, &val_data.labels, hp.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, history });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.n as f64,
            train_acc: hits as f64 / train_data.n as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        history.push(record);

        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, model.params().snapshot(keep_prefix)?));
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            since_improved = 0;
        } else {
            since_improved += 1;
        }
        if hp.early_stop_patience.is_some_and(|p| since_improved >= p) {
            stopped_early = epoch < hp.epochs;
            break;
        }
    }

    let (_, best_epoch, weights) = best.expect("at least one epoch ran");
    model.params().restore(&weights)?;
    Ok(TrainingRun {
        epochs: history.len(),
        history,
        seed,
        hyperparams: hp.clone(),
        best_epoch,
        stopped_early,
        backbone_frozen: frozen,
    })
}

/// Stable identifier of a tensor batch: CRC-32 of values and labels plus size.
pub fn dataset_fingerprint(batch: &TensorBatch) -> String {
    let mut h = crc32fast::Hasher::new();
    for v in &batch.data {
        h.update(&v.to_le_bytes());
    }
    h.update(&batch.labels);
    format!("crc32:{:08x}:n={}", h.finalize(), batch.n)
}

/// Predicted labels for a batch, in row order.
pub fn predict_labels(model: &MaskNet, batch: &TensorBatch) -> Result<Vec<u8>, TrainError> {
    Ok(model.predict(batch)?.into_iter().map(|r| r.label).collect())
}
