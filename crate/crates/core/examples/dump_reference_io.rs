//! Writes seeded weights and backbone input/output for comparison with
//! torchvision (see scripts/torchvision_reference.py).

use std::collections::HashMap;

use maskwatch_core::model::{batch_tensor, build_model, layers::BnMode, ModelConfig};
use maskwatch_core::preprocess::{normalize, resize};
use maskwatch_core::render::face::render_face_crop;
use maskwatch_core::TensorBatch;
use rand::SeedableRng;

fn main() {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "/tmp".into()));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut batch = TensorBatch::empty(224, 224, 3);
    for _ in 0..2 {
        let (img, _) = render_face_crop(224, &mut rng);
        batch.push(&normalize(&resize(&img, 224).unwrap(), 255.0), 0).unwrap();
    }
    let model = build_model(ModelConfig { num_classes: 2, freeze_backbone: true, seed: 5 }).unwrap();
    model.calibrate_batch_norm(&batch).unwrap();
    std::fs::write(out.join("weights.safetensors"), model.params().to_safetensors().unwrap()).unwrap();
    let x = batch_tensor(&batch, 0, batch.n).unwrap();
    let f = model.features(&x, BnMode::Eval, false).unwrap();
    let io = HashMap::from([("x".to_string(), x), ("features".to_string(), f)]);
    candle_core::safetensors::save(&io, out.join("io.safetensors")).unwrap();
}
