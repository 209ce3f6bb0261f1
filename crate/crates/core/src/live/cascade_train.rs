//! Cascade training on procedurally rendered faces.
//!
//! Each stage is a Gentle AdaBoost ensemble of regression stumps over a random
//! pool of Haar-like features. The stage threshold is lowered until the
//! required hit rate on positives is met, and stages are added until the
//! estimated false-alarm rate is low enough. Negatives for later stages are
//! mined from face-free scenes: only windows that the current cascade still
//! accepts are kept. Besides face-free scenes, full scenes with people are
//! scanned like a live frame, and every accepted window away from a face
//! becomes a hard negative.

use image::imageops::FilterType;
use image::{GrayImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cascade::{to_gray, Cascade, DetectParams, HaarFeature, IntegralImage, Stage, WeakClassifier, WeightedRect};
use crate::dataset::{overlay_mask, MaskOverlaySpec, Placement};
use crate::geometry::Rect;
use crate::render::face::{add_noise, draw_background, draw_body, draw_face, mask_template, FaceStyle};

#[derive(Debug, Clone)]
pub struct CascadeTrainConfig {
    pub window: u32,
    pub positives: usize,
    pub negatives: usize,
    pub feature_pool: usize,
    pub max_stages: usize,
    pub max_weak_per_stage: usize,
    pub min_hit_rate: f64,
    pub max_false_alarm: f64,
    pub seed: u64,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            window: 24,
            positives: 1500,
            negatives: 3000,
            feature_pool: 5000,
            max_stages: 20,
            max_weak_per_stage: 60,
            min_hit_rate: 0.995,
            max_false_alarm: 0.5,
            seed: 7,
        }
    }
}

/// Square detection window for a drawn face: the face width, centred a little
/// below the middle of the box, which spans brows to chin.
pub fn face_window(face_box: Rect) -> Rect {
    let side = face_box.w;
    let cx = face_box.x as f64 + face_box.w as f64 / 2.0;
    let cy = face_box.y as f64 + face_box.h as f64 * 0.56;
    Rect::new((cx - side as f64 / 2.0).round() as i32, (cy - side as f64 / 2.0).round() as i32, side, side)
}

/// Draw a person (optionally masked) with `face_box` into `img`.
pub fn draw_person(img: &mut RgbImage, face_box: Rect, style: &FaceStyle, mask: Option<Placement>, rng: &mut impl Rng) {
    let shirt = Rgb([rng.random(), rng.random(), rng.random()]);
    draw_body(img, face_box, style.skin, shirt);
    draw_face(img, face_box, style);
    if let Some(p) = mask {
        let spec = MaskOverlaySpec::new(mask_template(rng), p);
        if let Some(b) = face_box.clip(img.width(), img.height()) {
            if b == face_box {
                if let Ok(out) = overlay_mask(img, face_box, &spec) {
                    *img = out;
                }
            }
        }
    }
}

fn random_mask(rng: &mut impl Rng) -> Option<Placement> {
    match rng.random_range(0..10) {
        0..=3 => None,
        4..=7 => Some(Placement::Correct),
        8 => Some(Placement::IncorrectNoseOut),
        _ => Some(Placement::IncorrectChinOnly),
    }
}

fn crop_gray(gray: &GrayImage, r: Rect, size: u32) -> Option<GrayImage> {
    let c = r.clip(gray.width(), gray.height())?;
    if c != r {
        return None;
    }
    let sub = image::imageops::crop_imm(gray, r.x as u32, r.y as u32, r.w as u32, r.h as u32).to_image();
    Some(image::imageops::resize(&sub, size, size, FilterType::Triangle))
}

fn positive_sample(size: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    loop {
        let fw = rng.random_range(40..110);
        let fh = (fw as f64 * rng.random_range(1.12..1.28)) as i32;
        let (cw, ch) = (fw as u32 * 2 + 20, fh as u32 * 2 + 20);
        let mut img = RgbImage::new(cw, ch);
        draw_background(&mut img, rng);
        let face = Rect::new((cw as i32 - fw) / 2, (ch as i32 - fh) / 3, fw, fh);
        let style = FaceStyle::random(rng);
        draw_person(&mut img, face, &style, random_mask(rng), rng);
        add_noise(&mut img, rng.random_range(0.0..6.0), rng);
        let win = face_window(face);
        let j = (win.w as f64 * 0.04).max(1.0) as i32;
        let s = (win.w as f64 * rng.random_range(0.95..1.05)).round() as i32;
        let jittered = Rect::new(win.x + rng.random_range(-j..=j), win.y + rng.random_range(-j..=j), s, s);
        if let Some(c) = crop_gray(&to_gray(&img), jittered, size) {
            return c;
        }
    }
}

/// A face-free scene: background clutter plus bodies whose heads are out of
/// frame or partially visible at a large offset.
fn negative_scene(rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (rng.random_range(160..360), rng.random_range(120..280));
    let mut img = RgbImage::new(w, h);
    draw_background(&mut img, rng);
    if rng.random_bool(0.5) {
        // A person whose face is mostly outside the frame: windows near it see
        // hair, shoulders and face edges but never a centred face.
        let fw = rng.random_range(60..140);
        let fh = (fw as f64 * 1.2) as i32;
        let x = if rng.random_bool(0.5) { -fw * 3 / 5 } else { w as i32 - fw * 2 / 5 };
        let y = rng.random_range(-fh / 2..h as i32 - fh / 2);
        let style = FaceStyle::random(rng);
        let shirt = Rgb([rng.random(), rng.random(), rng.random()]);
        let face = Rect::new(x, y, fw, fh);
        draw_body(&mut img, face, style.skin, shirt);
        draw_face(&mut img, face, &style);
    }
    add_noise(&mut img, rng.random_range(0.0..6.0), rng);
    to_gray(&img)
}

struct Sample {
    ii: IntegralImage,
}

fn sample_from(gray: &GrayImage) -> Sample {
    Sample { ii: IntegralImage::new(gray) }
}

/// Random Haar features of the classic edge, line and checkerboard types,
/// written as a full-area rectangle with weight -1 plus positive sub-rectangles.
fn feature_pool(window: u32, count: usize, rng: &mut ChaCha8Rng) -> Vec<HaarFeature> {
    let n = window as i32;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let kind = rng.random_range(0..5);
        let (ux, uy) = match kind {
            0 => (2, 1),
            1 => (1, 2),
            2 => (3, 1),
            3 => (1, 3),
            _ => (2, 2),
        };
        let cw = rng.random_range(1..=n / ux);
        let ch = rng.random_range(1..=n / uy);
        let (fw, fh) = (cw * ux, ch * uy);
        if fw * fh < 8 {
            continue;
        }
        let x = rng.random_range(0..=n - fw);
        let y = rng.random_range(0..=n - fh);
        let r = |x: i32, y: i32, w: i32, h: i32, weight: f32| WeightedRect {
            x: x as u8,
            y: y as u8,
            w: w as u8,
            h: h as u8,
            weight,
        };
        let mut rects = vec![r(x, y, fw, fh, -1.0)];
        match kind {
            0 => rects.push(r(x + cw, y, cw, ch, 2.0)),
            1 => rects.push(r(x, y + ch, cw, ch, 2.0)),
            2 => rects.push(r(x + cw, y, cw, ch, 3.0)),
            3 => rects.push(r(x, y + ch, cw, ch, 3.0)),
            _ => {
                rects.push(r(x, y, cw, ch, 2.0));
                rects.push(r(x + cw, y + ch, cw, ch, 2.0));
            }
        }
        out.push(HaarFeature { rects });
    }
    out
}

struct StumpFit {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
    score: f64,
}

/// Best weighted least-squares stump for one feature given its sorted order.
fn fit_stump(feature: usize, values: &[f32], order: &[u32], y: &[f64], w: &[f64]) -> StumpFit {
    let total_w: f64 = w.iter().sum();
    let total_s: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
    let mut best = StumpFit { feature, threshold: f64::NEG_INFINITY, left: 0.0, right: total_s / total_w, score: f64::NEG_INFINITY };
    let (mut lw, mut ls) = (0.0, 0.0);
    for k in 0..order.len() - 1 {
        let i = order[k] as usize;
        lw += w[i];
        ls += w[i] * y[i];
        let (v0, v1) = (values[i], values[order[k + 1] as usize]);
        if v0 == v1 {
            continue;
        }
        let rw = total_w - lw;
        let rs = total_s - ls;
        if lw <= 1e-12 || rw <= 1e-12 {
            continue;
        }
        let score = ls * ls / lw + rs * rs / rw;
        if score > best.score {
            best = StumpFit { feature, threshold: (v0 as f64 + v1 as f64) / 2.0, left: ls / lw, right: rs / rw, score };
        }
    }
    best
}

fn normalized_values(features: &[HaarFeature], samples: &[Sample], cascade: &Cascade) -> Vec<Vec<f32>> {
    let inv: Vec<f64> = samples.iter().map(|s| cascade.inv_norm(&s.ii, 0, 0, 0.0).unwrap_or(1.0)).collect();
    features
        .par_iter()
        .map(|f| samples.iter().zip(&inv).map(|(s, k)| (f.raw(&s.ii, 0, 0) * k) as f32).collect())
        .collect()
}

fn train_stage(
    features: &[HaarFeature],
    pos: &[Sample],
    neg: &[Sample],
    cascade: &Cascade,
    cfg: &CascadeTrainConfig,
) -> (Stage, Vec<usize>) {
    let samples: Vec<&Sample> = pos.iter().chain(neg).collect();
    let owned: Vec<Sample> = samples.iter().map(|s| Sample { ii: s.ii.clone() }).collect();
    let values = normalized_values(features, &owned, cascade);
    let orders: Vec<Vec<u32>> = values
        .par_iter()
        .map(|v| {
            let mut o: Vec<u32> = (0..v.len() as u32).collect();
            o.sort_by(|&a, &b| v[a as usize].total_cmp(&v[b as usize]));
            o
        })
        .collect();
    let n_pos = pos.len();
    let y: Vec<f64> = (0..samples.len()).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();
    let mut w: Vec<f64> = (0..samples.len()).map(|i| if i < n_pos { 0.5 / n_pos as f64 } else { 0.5 / neg.len() as f64 }).collect();
    let mut score = vec![0.0f64; samples.len()];
    let mut weak = Vec::new();
    let mut used = Vec::new();
    let mut threshold = 0.0;
    for _ in 0..cfg.max_weak_per_stage {
        let best = (0..features.len())
            .into_par_iter()
            .map(|f| fit_stump(f, &values[f], &orders[f], &y, &w))
            .reduce_with(|a, b| if b.score > a.score || (b.score == a.score && b.feature < a.feature) { b } else { a })
            .expect("non-empty pool");
        for i in 0..samples.len() {
            let h = if (values[best.feature][i] as f64) < best.threshold { best.left } else { best.right };
            score[i] += h;
            w[i] *= (-y[i] * h).exp();
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        used.push(best.feature);
        weak.push(WeakClassifier::stump(best.feature, best.threshold, best.left, best.right));

        let mut pos_scores: Vec<f64> = score[..n_pos].to_vec();
        pos_scores.sort_by(|a, b| a.total_cmp(b));
        let miss = ((1.0 - cfg.min_hit_rate) * n_pos as f64).floor() as usize;
        threshold = pos_scores[miss.min(n_pos - 1)] - 1e-6;
        let fa = score[n_pos..].iter().filter(|&&s| s >= threshold).count() as f64 / neg.len() as f64;
        if fa <= cfg.max_false_alarm {
            break;
        }
    }
    (Stage { threshold, weak }, used)
}

/// A frame-like scene with one to three people and the windows of their faces.
fn people_scene(rng: &mut ChaCha8Rng) -> (GrayImage, Vec<Rect>) {
    let (w, h) = (320u32, 240u32);
    let mut img = RgbImage::new(w, h);
    draw_background(&mut img, rng);
    let n = rng.random_range(1..=3);
    let slot = w as i32 / n;
    let mut windows = Vec::new();
    for i in 0..n {
        let fw = rng.random_range((slot / 4).max(20)..=(slot * 3 / 5).min(80));
        let fh = (fw as f64 * rng.random_range(1.12..1.28)) as i32;
        let x = slot * i + rng.random_range(0..=(slot - fw).max(0));
        let y = rng.random_range(4..=(h as i32 - fh - 4).max(4));
        let face = Rect::new(x, y, fw, fh);
        draw_person(&mut img, face, &FaceStyle::random(rng), random_mask(rng), rng);
        windows.push(face_window(face));
    }
    add_noise(&mut img, rng.random_range(0.0..6.0), rng);
    (to_gray(&img), windows)
}

fn overlap(a: Rect, b: Rect) -> f64 {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = (a.x + a.w).min(b.x + b.w);
    let y1 = (a.y + a.h).min(b.y + b.h);
    let inter = ((x1 - x0).max(0) as f64) * ((y1 - y0).max(0) as f64);
    inter / ((a.w * a.h + b.w * b.h) as f64 - inter)
}

/// Candidate windows of a scene: random ones for an empty cascade, otherwise
/// the windows a live scan would accept.
fn scene_windows(cascade: &Cascade, scene: &GrayImage, window: u32, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    if cascade.stages.is_empty() {
        let max_side = scene.width().min(scene.height());
        return (0..40)
            .map(|_| {
                let side = rng.random_range(window..=max_side);
                let x = rng.random_range(0..=scene.width() - side);
                let y = rng.random_range(0..=scene.height() - side);
                Rect::new(x as i32, y as i32, side as i32, side as i32)
            })
            .collect();
    }
    let params = DetectParams { min_neighbors: 0, min_std: 0.0, ..Default::default() };
    let mut raw = cascade.detect_raw(scene, &params);
    // Keep a random subset so one busy scene cannot dominate the pool.
    for i in (1..raw.len()).rev() {
        raw.swap(i, rng.random_range(0..=i));
    }
    raw.truncate(40);
    raw
}

/// Windows the cascade still accepts, half from face-free scenes and half
/// from scenes with people (excluding windows on a face).
fn mine_negatives(cascade: &Cascade, wanted: usize, window: u32, rng: &mut ChaCha8Rng, max_scenes: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    let mut scenes = 0;
    while out.len() < wanted && scenes < max_scenes {
        scenes += 1;
        let (scene, faces) = if scenes % 2 == 0 { people_scene(rng) } else { (negative_scene(rng), Vec::new()) };
        for r in scene_windows(cascade, &scene, window, rng) {
            if faces.iter().any(|&f| overlap(r, f) >= 0.25) {
                continue;
            }
            let Some(g) = crop_gray(&scene, r, window) else { continue };
            let s = sample_from(&g);
            if cascade.stages.is_empty() || cascade.accepts(&s.ii, 0, 0, 0.0) {
                out.push(s);
                if out.len() == wanted {
                    break;
                }
            }
        }
    }
    log::debug!("mined {} negatives from {scenes} scenes", out.len());
    out
}

/// Train a cascade; deterministic for a given configuration.
pub fn train_cascade(cfg: &CascadeTrainConfig) -> Cascade {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = feature_pool(cfg.window, cfg.feature_pool, &mut rng);
    let mut cascade = Cascade { width: cfg.window, height: cfg.window, stages: Vec::new(), features: Vec::new() };
    // Stages reference the shared pool during training; unused features are
    // pruned at the end.
    cascade.features = pool.clone();

    let mut pos: Vec<Sample> = (0..cfg.positives).map(|_| sample_from(&positive_sample(cfg.window, &mut rng))).collect();
    let mut neg = mine_negatives(&cascade, cfg.negatives, cfg.window, &mut rng, usize::MAX);
    for stage_idx in 0..cfg.max_stages {
        if neg.len() < cfg.negatives / 10 {
            log::info!("stopping: only {} negatives still pass the cascade", neg.len());
            break;
        }
        let (stage, _) = train_stage(&pool, &pos, &neg, &cascade, cfg);
        log::info!("stage {stage_idx}: {} weak classifiers, threshold {:.4}", stage.weak.len(), stage.threshold);
        cascade.stages.push(stage);
        pos.retain(|s| cascade.accepts(&s.ii, 0, 0, 0.0));
        neg = mine_negatives(&cascade, cfg.negatives, cfg.window, &mut rng, 4000);
    }
    prune_features(cascade)
}

fn prune_features(mut c: Cascade) -> Cascade {
    let mut remap = vec![usize::MAX; c.features.len()];
    let mut kept = Vec::new();
    for stage in &mut c.stages {
        for weak in &mut stage.weak {
            for node in &mut weak.nodes {
                if remap[node.feature] == usize::MAX {
                    remap[node.feature] = kept.len();
                    kept.push(c.features[node.feature].clone());
                }
                node.feature = remap[node.feature];
            }
        }
    }
    c.features = kept;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_separates_two_clusters() {
        let values = [0.1f32, 0.2, 0.3, 0.8, 0.9];
        let y = [-1.0, -1.0, -1.0, 1.0, 1.0];
        let w = [0.2; 5];
        let mut order: Vec<u32> = (0..5).collect();
        order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
        let s = fit_stump(0, &values, &order, &y, &w);
        assert!((s.threshold - 0.55).abs() < 1e-6);
        assert!((s.left + 1.0).abs() < 1e-12);
        assert!((s.right - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_pool_fits_window_and_balances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for f in feature_pool(24, 300, &mut rng) {
            let mut weighted_area = 0.0;
            for r in &f.rects {
                assert!(r.x as u32 + r.w as u32 <= 24 && r.y as u32 + r.h as u32 <= 24);
                weighted_area += r.weight as f64 * r.w as f64 * r.h as f64;
            }
            // Edge/line/checker features respond 0 on flat input.
            assert!(weighted_area.abs() < 1e-9, "{f:?}");
        }
    }

    #[test]
    fn tiny_training_run_is_deterministic_and_separates() {
        let cfg = CascadeTrainConfig {
            positives: 120,
            negatives: 240,
            feature_pool: 300,
            max_stages: 2,
            max_weak_per_stage: 8,
            seed: 3,
            ..Default::default()
        };
        let a = train_cascade(&cfg);
        let b = train_cascade(&cfg);
        assert_eq!(a, b);
        assert!(!a.stages.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let hits = (0..40).filter(|_| a.accepts(&IntegralImage::new(&positive_sample(24, &mut rng)), 0, 0, 0.0)).count();
        assert!(hits >= 30, "{hits}");
    }
}
