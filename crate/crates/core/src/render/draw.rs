//! Minimal raster primitives on `RgbImage`. Everything clips silently at
//! the image border.

use image::{Rgb, RgbImage};

use super::font;
use crate::geometry::Rect;

#[inline]
pub fn put(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Alpha-blend `color` over the pixel at (x, y); `alpha` in [0, 1].
#[inline]
pub fn blend(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>, alpha: f32) {
    if x < 0 || y < 0 || x as u32 >= img.width() || y as u32 >= img.height() {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for c in 0..3 {
        let v = alpha * color[c] as f32 + (1.0 - alpha) * p[c] as f32;
        p[c] = v.round().clamp(0.0, 255.0) as u8;
    }
}

pub fn fill_rect(img: &mut RgbImage, r: Rect, color: Rgb<u8>) {
    let Some(r) = r.clip(img.width(), img.height()) else {
        return;
    };
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Rectangle outline drawn inward from the rectangle's edge.
pub fn draw_rect(img: &mut RgbImage, r: Rect, color: Rgb<u8>, thickness: i32) {
    let t = thickness.max(1).min(r.w.min(r.h).max(1));
    fill_rect(img, Rect::new(r.x, r.y, r.w, t), color);
    fill_rect(img, Rect::new(r.x, r.bottom() - t, r.w, t), color);
    fill_rect(img, Rect::new(r.x, r.y, t, r.h), color);
    fill_rect(img, Rect::new(r.right() - t, r.y, t, r.h), color);
}

/// Bresenham line with a square pen of side `thickness`.
pub fn draw_line(img: &mut RgbImage, from: (i32, i32), to: (i32, i32), color: Rgb<u8>, thickness: i32) {
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let lo = -(thickness.max(1) - 1) / 2;
    let hi = lo + thickness.max(1);
    loop {
        for oy in lo..hi {
            for ox in lo..hi {
                put(img, x0 + ox, y0 + oy, color);
            }
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Filled axis-aligned ellipse, tested at pixel centres.
pub fn fill_ellipse(img: &mut RgbImage, cx: f64, cy: f64, rx: f64, ry: f64, color: Rgb<u8>) {
    blend_ellipse(img, cx, cy, rx, ry, color, 1.0);
}

pub fn blend_ellipse(img: &mut RgbImage, cx: f64, cy: f64, rx: f64, ry: f64, color: Rgb<u8>, alpha: f32) {
    if rx <= 0.0 || ry <= 0.0 {
        return;
    }
    let y0 = (cy - ry).floor().max(0.0) as i32;
    let y1 = (cy + ry).ceil().min(img.height() as f64) as i32;
    let x0 = (cx - rx).floor().max(0.0) as i32;
    let x1 = (cx + rx).ceil().min(img.width() as f64) as i32;
    for y in y0..y1 {
        let v = (y as f64 + 0.5 - cy) / ry;
        for x in x0..x1 {
            let u = (x as f64 + 0.5 - cx) / rx;
            if u * u + v * v <= 1.0 {
                if alpha >= 1.0 {
                    img.put_pixel(x as u32, y as u32, color);
                } else {
                    blend(img, x, y, color, alpha);
                }
            }
        }
    }
}

/// Draw `text` with its top-left corner at (x, y).
pub fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>, scale: u32) {
    let s = scale.max(1) as i32;
    let mut pen_x = x;
    for ch in text.chars() {
        let rows = font::glyph(ch);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..font::GLYPH_W as i32 {
                if bits & (0x10 >> gx) != 0 {
                    fill_rect(img, Rect::new(pen_x + gx * s, y + gy as i32 * s, s, s), color);
                }
            }
        }
        pen_x += (font::GLYPH_W as i32 + 1) * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_outline_leaves_interior() {
        let mut img = RgbImage::new(20, 20);
        draw_rect(&mut img, Rect::new(2, 2, 10, 10), Rgb([255, 0, 0]), 2);
        assert_eq!(img.get_pixel(2, 2), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(6, 6), &Rgb([0, 0, 0]));
        assert_eq!(img.get_pixel(11, 11), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(12, 12), &Rgb([0, 0, 0]));
    }

    #[test]
    fn line_endpoints_and_clipping() {
        let mut img = RgbImage::new(10, 10);
        draw_line(&mut img, (-5, 0), (9, 9), Rgb([1, 2, 3]), 1);
        assert_eq!(img.get_pixel(9, 9), &Rgb([1, 2, 3]));
    }

    #[test]
    fn text_marks_pixels() {
        let mut img = RgbImage::new(40, 10);
        draw_text(&mut img, 0, 0, "NO", Rgb([255, 255, 255]), 1);
        assert!(img.pixels().any(|p| p[0] == 255));
    }
}
