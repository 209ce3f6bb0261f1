use std::hint::black_box;

use candle_core::{Device, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use image::RgbImage;
use maskwatch_core::live::{CascadeDetector, FaceDetector, SyntheticSource, SyntheticSpec};
use maskwatch_core::model::depthwise::depthwise_conv2d;
use maskwatch_core::preprocess::{preprocess_image, ChannelOrder, PreprocessConfig};
use maskwatch_core::train_eval::compute_report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn preprocess(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let px: Vec<u8> = (0..640 * 480 * 3).map(|_| rng.random()).collect();
    let img = RgbImage::from_raw(640, 480, px).unwrap();
    let cfg = PreprocessConfig::default();
    c.bench_function("preprocess_640x480_to_224", |b| {
        b.iter(|| preprocess_image(black_box(&img), ChannelOrder::Bgr, &cfg).unwrap())
    });
}

fn depthwise(c: &mut Criterion) {
    let dev = Device::Cpu;
    let x = Tensor::randn(0f32, 1.0, (1, 144, 56, 56), &dev).unwrap();
    let w = Tensor::randn(0f32, 1.0, (144, 1, 3, 3), &dev).unwrap();
    c.bench_function("depthwise_3x3_144x56x56_stride1", |b| {
        b.iter(|| depthwise_conv2d(black_box(&x), &w, 1, 1).unwrap())
    });
    c.bench_function("depthwise_3x3_144x56x56_stride2", |b| {
        b.iter(|| depthwise_conv2d(black_box(&x), &w, 2, 1).unwrap())
    });
}

fn cascade(c: &mut Criterion) {
    let detector = CascadeDetector::bundled().unwrap();
    let frame = SyntheticSource::new("bench", SyntheticSpec::alternating(1, 3, 2)).unwrap().render(0);
    c.bench_function("cascade_detect_640x480", |b| b.iter(|| detector.detect(black_box(&frame))));
}

fn report(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
    let p: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
    c.bench_function("compute_report_10k", |b| b.iter(|| compute_report(black_box(&t), black_box(&p)).unwrap()));
}

criterion_group!(benches, preprocess, depthwise, cascade, report);
criterion_main!(benches);
