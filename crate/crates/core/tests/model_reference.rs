//! Backbone output checked against torchvision's MobileNetV2 run on the same
//! seeded weights and input (fixture produced by scripts/torchvision_reference.py).

use maskwatch_core::model::{build_model, ModelConfig, FEATURE_DIM};
use maskwatch_core::preprocess::{normalize, resize};
use maskwatch_core::render::face::render_face_crop;
use maskwatch_core::TensorBatch;
use rand::SeedableRng;

#[derive(serde::Deserialize)]
struct Golden {
    model_seed: u64,
    render_seed: u64,
    images: usize,
    features: Vec<Vec<f32>>,
}

#[test]
fn backbone_matches_torchvision_reference() {
    let golden: Golden =
        serde_json::from_str(include_str!("fixtures/torchvision_mobilenet_v2_features.json")).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(golden.render_seed);
    let mut batch = TensorBatch::empty(224, 224, 3);
    for _ in 0..golden.images {
        let (img, _) = render_face_crop(224, &mut rng);
        batch.push(&normalize(&resize(&img, 224).unwrap(), 255.0), 0).unwrap();
    }
    let model = build_model(ModelConfig { num_classes: 2, freeze_backbone: true, seed: golden.model_seed }).unwrap();
    model.calibrate_batch_norm(&batch).unwrap();
    let ours: Vec<Vec<f32>> = model.extract_features(&batch).unwrap().to_vec2().unwrap();
    assert_eq!(ours.len(), golden.images);
    let mut worst = 0f32;
    for (a, b) in ours.iter().zip(&golden.features) {
        assert_eq!(a.len(), FEATURE_DIM);
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-4, "max abs difference {worst}");
}
