//! Regenerates the bundled face cascade from procedural training data.
//!
//! cargo run --release -p maskwatch-core --example train_cascade [out.xml]

use maskwatch_core::live::cascade_train::{train_cascade, CascadeTrainConfig};

fn main() {
    env_logger::init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "crates/core/assets/face_cascade.xml".into());
    let cascade = train_cascade(&CascadeTrainConfig::default());
    std::fs::write(&out, cascade.to_opencv_xml()).expect("write cascade");
    println!("{} stages, {} features -> {out}", cascade.stages.len(), cascade.features.len());
}
