//! Image preprocessing shared by training and inference: reorder channels to
//! RGB, stretch to a square `target_size` with bilinear sampling, and scale
//! intensities by `scale_divisor`.
//!
//! Bilinear sampling follows the half-pixel-centre convention of OpenCV's
//! `INTER_LINEAR`, so a model trained here sees the same pixels as one fed by
//! `cv2.resize`.

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::batch::TensorBatch;
use crate::dataset::ImageSample;
use crate::error::ShapeError;

pub const DEFAULT_TARGET_SIZE: u32 = 224;
pub const DEFAULT_SCALE_DIVISOR: f32 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Bgr,
    #[default]
    Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeFilter {
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_size: u32,
    /// Order of buffers that arrive without a recorded channel order.
    pub channel_order_in: ChannelOrder,
    pub scale_divisor: f32,
    pub resize_filter: ResizeFilter,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: DEFAULT_TARGET_SIZE,
            channel_order_in: ChannelOrder::Rgb,
            scale_divisor: DEFAULT_SCALE_DIVISOR,
            resize_filter: ResizeFilter::Bilinear,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut bad = Vec::new();
        if self.target_size == 0 {
            bad.push("preprocess.target_size must be > 0".to_string());
        }
        if !(self.scale_divisor > 0.0 && self.scale_divisor.is_finite()) {
            bad.push("preprocess.scale_divisor must be a positive finite number".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    pub fn image_len(&self) -> usize {
        (self.target_size * self.target_size * 3) as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("sample {index} ({path}): {source}")]
    Sample {
        index: usize,
        path: String,
        #[source]
        source: ShapeError,
    },
    #[error("invalid preprocess config: {0}")]
    Config(String),
}

/// Reorder a 3-channel buffer to RGB. BGR input has channels 0 and 2 swapped;
/// RGB input is returned unchanged.
pub fn to_rgb(img: &RgbImage, order_in: ChannelOrder) -> RgbImage {
    match order_in {
        ChannelOrder::Rgb => img.clone(),
        ChannelOrder::Bgr => {
            let mut out = img.clone();
            for p in out.pixels_mut() {
                p.0.swap(0, 2);
            }
            out
        }
    }
}

/// Build an RGB image from an interleaved raw buffer with `channels` per pixel.
pub fn rgb_from_raw(
    data: &[u8],
    width: u32,
    height: u32,
    channels: usize,
    order_in: ChannelOrder,
) -> Result<RgbImage, ShapeError> {
    if channels != 3 {
        return Err(ShapeError::new(format!("expected 3 channels, got {channels}")));
    }
    let expected = width as usize * height as usize * 3;
    if data.len() != expected || width == 0 || height == 0 {
        return Err(ShapeError::new(format!(
            "buffer of {} bytes does not hold a {width}x{height}x3 image",
            data.len()
        )));
    }
    let img = RgbImage::from_raw(width, height, data.to_vec()).expect("length checked");
    Ok(to_rgb(&img, order_in))
}

/// Any decoded image to 3 channels. Single-channel sources are replicated
/// into all three channels; alpha is dropped.
pub fn to_three_channels(img: &DynamicImage) -> RgbImage {
    img.to_rgb8()
}

/// Stretch to `target` x `target` with bilinear interpolation. Aspect ratio
/// is not preserved.
pub fn resize(img: &RgbImage, target: u32) -> Result<RgbImage, ShapeError> {
    resize_to(img, target, target)
}

pub fn resize_to(img: &RgbImage, out_w: u32, out_h: u32) -> Result<RgbImage, ShapeError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(ShapeError::new("cannot resize an empty image"));
    }
    if out_w == 0 || out_h == 0 {
        return Err(ShapeError::new("resize target must be non-zero"));
    }
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let xs = axis_taps(w, out_w);
    let ys = axis_taps(h, out_h);
    let src = img.as_raw();
    let stride = w as usize * 3;
    let mut out = vec![0u8; out_w as usize * out_h as usize * 3];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        let row0 = &src[y0 * stride..(y0 + 1) * stride];
        let row1 = &src[y1 * stride..(y1 + 1) * stride];
        let dst = &mut out[oy * out_w as usize * 3..(oy + 1) * out_w as usize * 3];
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = row0[x0 * 3 + c] as f32 * (1.0 - fx) + row0[x1 * 3 + c] as f32 * fx;
                let bot = row1[x0 * 3 + c] as f32 * (1.0 - fx) + row1[x1 * 3 + c] as f32 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                dst[ox * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RgbImage::from_raw(out_w, out_h, out).expect("sized above"))
}

/// For each output coordinate: the two source indices and the weight of the
/// second one.
fn axis_taps(src_len: u32, dst_len: u32) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as usize - 1;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = if i0 == last { 0.0 } else { (s - i0 as f64) as f32 };
            (i0, i1, frac)
        })
        .collect()
}

/// Divide every channel value by `divisor`; HWC order is kept.
pub fn normalize(img: &RgbImage, divisor: f32) -> Vec<f32> {
    img.as_raw().iter().map(|&v| v as f32 / divisor).collect()
}

/// to_rgb -> resize -> normalize for one image.
pub fn preprocess_image(img: &RgbImage, order_in: ChannelOrder, cfg: &PreprocessConfig) -> Result<Vec<f32>, ShapeError> {
    let rgb = to_rgb(img, order_in);
    let resized = resize(&rgb, cfg.target_size)?;
    Ok(normalize(&resized, cfg.scale_divisor))
}

/// Preprocess every sample, preserving order. Per-sample failures carry the
/// sample index.
pub fn preprocess_batch(samples: &[ImageSample], cfg: &PreprocessConfig) -> Result<TensorBatch, PreprocessError> {
    cfg.validate().map_err(|e| PreprocessError::Config(e.join("; ")))?;
    let t = cfg.target_size as usize;
    let mut batch = TensorBatch::empty(t, t, 3);
    batch.data.reserve(samples.len() * cfg.image_len());
    for (index, s) in samples.iter().enumerate() {
        let values = preprocess_image(&s.pixels, s.channel_order, cfg).map_err(|source| PreprocessError::Sample {
            index,
            path: s.path.display().to_string(),
            source,
        })?;
        batch.push(&values, s.label)?;
    }
    Ok(batch)
}
