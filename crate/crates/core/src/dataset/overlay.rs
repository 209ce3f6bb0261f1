//! Projective mask overlay for synthesizing masked faces.
//!
//! A mask template (RGBA) is warped so its corners land on a quadrilateral
//! given in face-box-normalized coordinates, then alpha-composited. The
//! placement table reproduces correctly worn masks and two incorrectly worn
//! variants (nose exposed, chin only).

use image::{Rgb, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::Rect;

/// Corners in order top-left, top-right, bottom-right, bottom-left; each
/// `(x, y)` normalized to the face box.
pub type Quad = [(f64, f64); 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Correct,
    IncorrectNoseOut,
    IncorrectChinOnly,
}

impl Placement {
    pub fn anchor_quad(self) -> Quad {
        let top = match self {
            Placement::Correct => 0.50,
            Placement::IncorrectNoseOut => 0.62,
            Placement::IncorrectChinOnly => 0.80,
        };
        [(0.08, top), (0.92, top), (0.90, 0.98), (0.10, 0.98)]
    }

    pub fn is_correct(self) -> bool {
        self == Placement::Correct
    }
}

#[derive(Debug, Clone)]
pub struct MaskOverlaySpec {
    pub mask_template: RgbaImage,
    pub anchor_quad: Quad,
    pub placement: Placement,
}

impl MaskOverlaySpec {
    /// Spec with the standard quad for `placement`.
    pub fn new(mask_template: RgbaImage, placement: Placement) -> Self {
        MaskOverlaySpec { mask_template, anchor_quad: placement.anchor_quad(), placement }
    }

    /// Spec with a custom quad. Coordinates must lie in the unit square; a
    /// correct placement must cover the lower half of the face box across
    /// the vertical midline.
    pub fn with_quad(mask_template: RgbaImage, anchor_quad: Quad, placement: Placement) -> Result<Self, DatasetError> {
        if anchor_quad.iter().any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y)) {
            return Err(DatasetError::Geometry("anchor quad coordinates must lie in [0,1]".into()));
        }
        if placement.is_correct() {
            let top = anchor_quad[0].1.max(anchor_quad[1].1);
            let bottom = anchor_quad[2].1.min(anchor_quad[3].1);
            let left = anchor_quad[0].0.max(anchor_quad[3].0);
            let right = anchor_quad[1].0.min(anchor_quad[2].0);
            if top > 0.5 || bottom < 0.95 || left >= 0.5 || right <= 0.5 {
                return Err(DatasetError::Geometry(
                    "a correct placement must cover the lower half of the face including the midline".into(),
                ));
            }
        }
        Ok(MaskOverlaySpec { mask_template, anchor_quad, placement })
    }
}

/// 3x3 projective transform, row-major.
#[derive(Debug, Clone, Copy)]
struct Homography([f64; 9]);

impl Homography {
    /// Unit square (u, v) to the quad, after Heckbert's closed form.
    fn square_to_quad(q: &[(f64, f64); 4]) -> Homography {
        let [(x0, y0), (x1, y1), (x2, y2), (x3, y3)] = *q;
        let dx3 = x0 - x1 + x2 - x3;
        let dy3 = y0 - y1 + y2 - y3;
        if dx3.abs() < 1e-12 && dy3.abs() < 1e-12 {
            return Homography([x1 - x0, x3 - x0, x0, y1 - y0, y3 - y0, y0, 0.0, 0.0, 1.0]);
        }
        let (dx1, dx2) = (x1 - x2, x3 - x2);
        let (dy1, dy2) = (y1 - y2, y3 - y2);
        let den = dx1 * dy2 - dx2 * dy1;
        let g = (dx3 * dy2 - dx2 * dy3) / den;
        let h = (dx1 * dy3 - dx3 * dy1) / den;
        Homography([x1 - x0 + g * x1, x3 - x0 + h * x3, x0, y1 - y0 + g * y1, y3 - y0 + h * y3, y0, g, h, 1.0])
    }

    fn inverse(&self) -> Option<Homography> {
        let [a, b, c, d, e, f, g, h, i] = self.0;
        let co = [e * i - f * h, -(d * i - f * g), d * h - e * g];
        let det = a * co[0] + b * co[1] + c * co[2];
        if det.abs() < 1e-12 {
            return None;
        }
        let adj = [
            co[0],
            -(b * i - c * h),
            b * f - c * e,
            co[1],
            a * i - c * g,
            -(a * f - c * d),
            co[2],
            -(a * h - b * g),
            a * e - b * d,
        ];
        Some(Homography(adj.map(|v| v / det)))
    }

    fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.0;
        let w = m[6] * x + m[7] * y + m[8];
        if w.abs() < 1e-12 {
            return None;
        }
        Some(((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w))
    }
}

fn shoelace(q: &[(f64, f64); 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let (x0, y0) = q[i];
        let (x1, y1) = q[(i + 1) % 4];
        s += x0 * y1 - x1 * y0;
    }
    s / 2.0
}

fn is_convex(q: &[(f64, f64); 4]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let (ax, ay) = q[i];
        let (bx, by) = q[(i + 1) % 4];
        let (cx, cy) = q[(i + 2) % 4];
        let cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// Premultiplied bilinear sample of the template at continuous pixel
/// coordinates. Returns straight-alpha colour and alpha in [0, 1].
fn sample_rgba(t: &RgbaImage, x: f64, y: f64) -> ([f64; 3], f64) {
    let (w, h) = t.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let taps = [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x1, y0, fx * (1.0 - fy)), (x0, y1, (1.0 - fx) * fy), (x1, y1, fx * fy)];
    let mut color = [0.0; 3];
    let mut alpha = 0.0;
    for (px, py, wt) in taps {
        let p = t.get_pixel(px, py);
        let a = p[3] as f64 / 255.0 * wt;
        alpha += a;
        for c in 0..3 {
            color[c] += p[c] as f64 * a;
        }
    }
    if alpha > 0.0 {
        for c in &mut color {
            *c /= alpha;
        }
    }
    (color, alpha)
}

/// Warp `spec.mask_template` onto `spec.anchor_quad` inside `face_box` and
/// composite it over a copy of `face_image`. Pixels whose centres fall
/// outside the warped quad are untouched.
pub fn overlay_mask(face_image: &RgbImage, face_box: Rect, spec: &MaskOverlaySpec) -> Result<RgbImage, DatasetError> {
    let (iw, ih) = face_image.dimensions();
    if !face_box.fits_in(iw, ih) {
        return Err(DatasetError::Geometry(format!("face box {face_box:?} is not inside the {iw}x{ih} image")));
    }
    let (tw, th) = spec.mask_template.dimensions();
    if tw == 0 || th == 0 {
        return Err(DatasetError::Geometry("mask template is empty".into()));
    }
    let quad: [(f64, f64); 4] = spec
        .anchor_quad
        .map(|(u, v)| (face_box.x as f64 + u * face_box.w as f64, face_box.y as f64 + v * face_box.h as f64));
    let area = shoelace(&quad).abs();
    if area < 1.0 {
        return Err(DatasetError::Geometry(format!("degenerate mask quad (area {area:.3} px)")));
    }
    if !is_convex(&quad) {
        return Err(DatasetError::Geometry("mask quad is not convex".into()));
    }
    let to_image = Homography::square_to_quad(&quad);
    let to_square = to_image
        .inverse()
        .ok_or_else(|| DatasetError::Geometry("mask quad has a singular projection".into()))?;

    let mut out = face_image.clone();
    let min_x = quad.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let max_x = quad.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(iw as f64) as u32;
    let min_y = quad.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let max_y = quad.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(ih as f64) as u32;
    const EPS: f64 = 1e-9;
    for y in min_y..max_y {
        for x in min_x..max_x {
            let Some((u, v)) = to_square.apply(x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            if !(-EPS..=1.0 + EPS).contains(&u) || !(-EPS..=1.0 + EPS).contains(&v) {
                continue;
            }
            let (color, alpha) = sample_rgba(&spec.mask_template, u * tw as f64 - 0.5, v * th as f64 - 0.5);
            if alpha <= 0.0 {
                continue;
            }
            let dst = out.get_pixel(x, y);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = (alpha * color[c] + (1.0 - alpha) * dst[c] as f64).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, Rgb(px));
        }
    }
    Ok(out)
}
