//! Procedural faces, mask templates and cluttered backgrounds.
//!
//! Used as a stand-in face corpus for fixtures, the synthetic frame source
//! and cascade training. Everything is driven by a caller-supplied RNG so
//! output is reproducible from a seed.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::draw::{blend_ellipse, draw_line, fill_ellipse, fill_rect};
use crate::geometry::Rect;

const SKIN_TONES: [[u8; 3]; 6] = [
    [255, 224, 196],
    [241, 194, 160],
    [224, 172, 125],
    [198, 134, 86],
    [141, 85, 46],
    [96, 60, 36],
];

const HAIR_COLORS: [[u8; 3]; 5] = [[20, 16, 14], [60, 40, 25], [110, 75, 40], [180, 150, 90], [130, 130, 130]];

const MASK_COLORS: [[u8; 3]; 6] = [
    [150, 200, 230],
    [235, 240, 245],
    [30, 30, 35],
    [90, 120, 200],
    [230, 170, 190],
    [120, 160, 120],
];

#[derive(Debug, Clone)]
pub struct FaceStyle {
    pub skin: Rgb<u8>,
    pub hair: Rgb<u8>,
    pub iris: Rgb<u8>,
    pub lips: Rgb<u8>,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
    pub hair_line: f64,
    pub glasses: bool,
    pub beard: bool,
    /// Horizontal shading gradient applied over the face, -1..1.
    pub light: f64,
}

fn jitter(rng: &mut impl Rng, base: [u8; 3], amount: i32) -> Rgb<u8> {
    let mut out = [0u8; 3];
    let shift = rng.random_range(-amount..=amount);
    for c in 0..3 {
        let v = base[c] as i32 + shift + rng.random_range(-amount / 3..=amount / 3);
        out[c] = v.clamp(0, 255) as u8;
    }
    Rgb(out)
}

fn scale_color(c: Rgb<u8>, f: f64) -> Rgb<u8> {
    Rgb([
        (c[0] as f64 * f).clamp(0.0, 255.0) as u8,
        (c[1] as f64 * f).clamp(0.0, 255.0) as u8,
        (c[2] as f64 * f).clamp(0.0, 255.0) as u8,
    ])
}

impl FaceStyle {
    pub fn random(rng: &mut impl Rng) -> Self {
        let skin = SKIN_TONES[rng.random_range(0..SKIN_TONES.len())];
        let hair = HAIR_COLORS[rng.random_range(0..HAIR_COLORS.len())];
        let lip_base = [
            (skin[0] as i32 - 20).clamp(0, 255) as u8,
            (skin[1] as i32 / 2) as u8,
            (skin[2] as i32 / 2) as u8,
        ];
        FaceStyle {
            skin: jitter(rng, skin, 12),
            hair: jitter(rng, hair, 10),
            iris: jitter(rng, [50, 40, 30], 20),
            lips: jitter(rng, lip_base, 15),
            eye_y: rng.random_range(0.38..0.44),
            eye_dx: rng.random_range(0.13..0.17),
            mouth_y: rng.random_range(0.72..0.78),
            mouth_w: rng.random_range(0.09..0.14),
            hair_line: rng.random_range(0.12..0.24),
            glasses: rng.random_bool(0.2),
            beard: rng.random_bool(0.12),
            light: rng.random_range(-0.6..0.6),
        }
    }
}

/// Draw a frontal face whose outline fills `face_box`.
pub fn draw_face(img: &mut RgbImage, face_box: Rect, style: &FaceStyle) {
    let (bx, by) = (face_box.x as f64, face_box.y as f64);
    let (bw, bh) = (face_box.w as f64, face_box.h as f64);
    let px = |u: f64| bx + u * bw;
    let py = |v: f64| by + v * bh;

    let shade = scale_color(style.skin, 0.82);
    // Ears, hair mass, face.
    fill_ellipse(img, px(0.08), py(0.50), 0.07 * bw, 0.11 * bh, shade);
    fill_ellipse(img, px(0.92), py(0.50), 0.07 * bw, 0.11 * bh, shade);
    fill_ellipse(img, px(0.5), py(0.30), 0.47 * bw, 0.30 * bh, style.hair);
    fill_ellipse(img, px(0.5), py(0.53), 0.40 * bw, 0.47 * bh, style.skin);
    // Fringe: hair over the top of the face ellipse.
    let hair_bottom = style.hair_line;
    for y in py(0.0).floor() as i32..py(hair_bottom).ceil() as i32 {
        let v = (y as f64 + 0.5 - py(0.30)) / (0.30 * bh);
        for x in px(0.0).floor() as i32..px(1.0).ceil() as i32 {
            let u = (x as f64 + 0.5 - px(0.5)) / (0.47 * bw);
            if u * u + v * v <= 1.0 {
                super::draw::put(img, x, y, style.hair);
            }
        }
    }

    // Side lighting.
    if style.light.abs() > 0.05 {
        let cx = px(0.5) + style.light.signum() * 0.25 * bw;
        blend_ellipse(img, cx, py(0.55), 0.22 * bw, 0.40 * bh, scale_color(style.skin, 0.7), (style.light.abs() * 0.35) as f32);
    }

    // Eyes and brows.
    let t = (bw / 60.0).max(1.0).round() as i32;
    for side in [-1.0, 1.0] {
        let ex = 0.5 + side * style.eye_dx;
        fill_ellipse(img, px(ex), py(style.eye_y), 0.075 * bw, 0.035 * bh, Rgb([245, 245, 240]));
        fill_ellipse(img, px(ex), py(style.eye_y), 0.03 * bw, 0.03 * bh, style.iris);
        fill_ellipse(img, px(ex), py(style.eye_y), 0.012 * bw, 0.012 * bh, Rgb([5, 5, 5]));
        let brow_y = py(style.eye_y - 0.075);
        draw_line(
            img,
            (px(ex - 0.08) as i32, brow_y as i32 + t),
            (px(ex + 0.08) as i32, brow_y as i32),
            scale_color(style.hair, 0.8),
            t + 1,
        );
        if style.glasses {
            let r = Rect::new(
                px(ex - 0.10) as i32,
                py(style.eye_y - 0.06) as i32,
                (0.20 * bw) as i32,
                (0.12 * bh) as i32,
            );
            super::draw::draw_rect(img, r, Rgb([25, 25, 25]), t);
        }
    }

    // Nose: bridge shading plus nostrils.
    draw_line(
        img,
        (px(0.5) as i32, py(style.eye_y + 0.04) as i32),
        (px(0.47) as i32, py(0.60) as i32),
        shade,
        t + 1,
    );
    fill_ellipse(img, px(0.5), py(0.61), 0.07 * bw, 0.03 * bh, shade);
    fill_ellipse(img, px(0.47), py(0.615), 0.015 * bw, 0.01 * bh, scale_color(style.skin, 0.45));
    fill_ellipse(img, px(0.53), py(0.615), 0.015 * bw, 0.01 * bh, scale_color(style.skin, 0.45));

    if style.beard {
        fill_ellipse(img, px(0.5), py(0.86), 0.28 * bw, 0.14 * bh, scale_color(style.hair, 1.1));
    }
    // Mouth.
    fill_ellipse(img, px(0.5), py(style.mouth_y), style.mouth_w * bw, 0.035 * bh, style.lips);
    draw_line(
        img,
        (px(0.5 - style.mouth_w * 0.9) as i32, py(style.mouth_y) as i32),
        (px(0.5 + style.mouth_w * 0.9) as i32, py(style.mouth_y) as i32),
        scale_color(style.lips, 0.5),
        1,
    );
}

/// Shoulders and neck below a face, so faces in frames sit on a body.
pub fn draw_body(img: &mut RgbImage, face_box: Rect, skin: Rgb<u8>, shirt: Rgb<u8>) {
    let (bx, by, bw, bh) = (face_box.x as f64, face_box.y as f64, face_box.w as f64, face_box.h as f64);
    fill_rect(
        img,
        Rect::new((bx + 0.35 * bw) as i32, (by + 0.85 * bh) as i32, (0.3 * bw) as i32, (0.3 * bh) as i32),
        scale_color(skin, 0.85),
    );
    fill_ellipse(img, bx + 0.5 * bw, by + 1.55 * bh, 0.95 * bw, 0.45 * bh, shirt);
}

/// Smooth gradient plus random blocks and blobs; contains no faces.
pub fn draw_background(img: &mut RgbImage, rng: &mut impl Rng) {
    let (w, h) = img.dimensions();
    let a: [f64; 3] = [rng.random_range(20.0..235.0), rng.random_range(20.0..235.0), rng.random_range(20.0..235.0)];
    let b: [f64; 3] = [rng.random_range(20.0..235.0), rng.random_range(20.0..235.0), rng.random_range(20.0..235.0)];
    let vertical = rng.random_bool(0.5);
    for y in 0..h {
        for x in 0..w {
            let t = if vertical { y as f64 / h as f64 } else { x as f64 / w as f64 };
            let p = [
                (a[0] + (b[0] - a[0]) * t) as u8,
                (a[1] + (b[1] - a[1]) * t) as u8,
                (a[2] + (b[2] - a[2]) * t) as u8,
            ];
            img.put_pixel(x, y, Rgb(p));
        }
    }
    let blocks = rng.random_range(2..8);
    for _ in 0..blocks {
        let color = Rgb([rng.random(), rng.random(), rng.random()]);
        let rw = rng.random_range(4..(w / 3).max(5)) as i32;
        let rh = rng.random_range(4..(h / 3).max(5)) as i32;
        let x = rng.random_range(-(rw / 2)..w as i32);
        let y = rng.random_range(-(rh / 2)..h as i32);
        if rng.random_bool(0.5) {
            fill_rect(img, Rect::new(x, y, rw, rh), color);
        } else {
            fill_ellipse(img, x as f64, y as f64, rw as f64 / 2.0, rh as f64 / 2.0, color);
        }
    }
    let lines = rng.random_range(0..5);
    for _ in 0..lines {
        let color = Rgb([rng.random(), rng.random(), rng.random()]);
        let p0 = (rng.random_range(0..w as i32), rng.random_range(0..h as i32));
        let p1 = (rng.random_range(0..w as i32), rng.random_range(0..h as i32));
        draw_line(img, p0, p1, color, rng.random_range(1..4));
    }
}

/// Additive Gaussian sensor noise.
pub fn add_noise(img: &mut RgbImage, sigma: f64, rng: &mut impl Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    for p in img.pixels_mut() {
        for c in 0..3 {
            let v = p[c] as f64 + normal.sample(rng);
            p[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Face box of an aligned `size` x `size` crop, before jitter.
pub fn aligned_face_box(size: u32) -> Rect {
    let s = size as f64;
    Rect::new((0.16 * s) as i32, (0.08 * s) as i32, (0.68 * s) as i32, (0.82 * s) as i32)
}

/// An aligned, unmasked face crop similar to a face-dataset sample.
/// Returns the image and the face box used.
pub fn render_face_crop(size: u32, rng: &mut impl Rng) -> (RgbImage, Rect) {
    let mut img = RgbImage::new(size, size);
    draw_background(&mut img, rng);
    let base = aligned_face_box(size);
    let j = (size as f64 * 0.03) as i32;
    let face_box = Rect::new(
        base.x + rng.random_range(-j..=j),
        base.y + rng.random_range(-j..=j),
        base.w + rng.random_range(-j..=j),
        base.h + rng.random_range(-j..=j),
    );
    let style = FaceStyle::random(rng);
    let shirt = Rgb([rng.random(), rng.random(), rng.random()]);
    draw_body(&mut img, face_box, style.skin, shirt);
    draw_face(&mut img, face_box, &style);
    add_noise(&mut img, rng.random_range(2.0..8.0), rng);
    (img, face_box)
}

/// RGBA mask template: a pleated rounded rectangle, opaque inside and fully
/// transparent outside the rounded corners.
pub fn mask_template(rng: &mut impl Rng) -> RgbaImage {
    let (w, h) = (160u32, 100u32);
    let base = MASK_COLORS[rng.random_range(0..MASK_COLORS.len())];
    let color = jitter(rng, base, 10);
    let pleat = scale_color(color, 0.8);
    let radius = 22.0f64;
    let patterned = rng.random_bool(0.2);
    let mut img = RgbaImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let cx = fx.clamp(radius, w as f64 - radius);
            let cy = fy.clamp(radius, h as f64 - radius);
            let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            if d > radius {
                img.put_pixel(x, y, Rgba([0, 0, 0, 0]));
                continue;
            }
            let in_pleat = [0.3, 0.5, 0.7].iter().any(|p| (fy / h as f64 - p).abs() < 0.02);
            let mut c = if in_pleat { pleat } else { color };
            if patterned && (x / 12 + y / 12) % 2 == 0 {
                c = scale_color(c, 0.75);
            }
            // Soft one-pixel edge.
            let alpha = ((radius - d).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x, y, Rgba([c[0], c[1], c[2], alpha]));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn face_crop_is_deterministic() {
        let a = render_face_crop(96, &mut ChaCha8Rng::seed_from_u64(3));
        let b = render_face_crop(96, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.0.as_raw(), b.0.as_raw());
        assert_eq!(a.1, b.1);
        let c = render_face_crop(96, &mut ChaCha8Rng::seed_from_u64(4));
        assert_ne!(a.0.as_raw(), c.0.as_raw());
    }

    #[test]
    fn mask_template_has_transparent_corners() {
        let t = mask_template(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(t.get_pixel(0, 0)[3], 0);
        assert_eq!(t.get_pixel(80, 50)[3], 255);
    }
}
