use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};

use chrono::{DateTime, Duration, TimeZone, Utc};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LiveError;
use crate::dataset::{decode_image, overlay_mask, MaskOverlaySpec, Placement, IMAGE_EXTENSIONS};
use crate::geometry::Rect;
use crate::render::face::{add_noise, draw_background, draw_body, draw_face, mask_template, FaceStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    CameraIndex,
    VideoFile,
    ImageSequence,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub timestamp: DateTime<Utc>,
    pub image: RgbImage,
}

pub trait FrameSource: Send {
    fn source_id(&self) -> &str;
    fn kind(&self) -> SourceKind;
    fn frame_size(&self) -> (u32, u32);
    fn fps_hint(&self) -> Option<f64>;
    /// Next frame in order, or `None` at end of stream.
    fn next_frame(&mut self) -> Result<Option<Frame>, LiveError>;
    /// Live sources produce frames at their own pace and may be dropped
    /// under load; file sources wait for the consumer.
    fn is_live(&self) -> bool {
        self.kind() == SourceKind::CameraIndex
    }
}

/// Fixed start of synthetic and file-source clocks, so timestamps derived
/// from frame numbers are reproducible.
pub fn stream_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

fn frame_time(index: u64, fps: f64) -> DateTime<Utc> {
    stream_epoch() + Duration::microseconds((index as f64 * 1e6 / fps).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureLabel {
    Mask,
    NoMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFace {
    #[serde(rename = "box")]
    pub face_box: Rect,
    pub label: FixtureLabel,
    /// First frame (inclusive) on which the face is visible.
    pub start: u64,
    /// Frame (exclusive) after which the face disappears.
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: u64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub seed: u64,
    #[serde(default)]
    pub faces: Vec<FixtureFace>,
}

fn default_width() -> u32 {
    640
}
fn default_height() -> u32 {
    480
}
fn default_fps() -> f64 {
    10.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), LiveError> {
        let mut bad = Vec::new();
        if self.width < 24 || self.height < 24 {
            bad.push(format!("frame size {}x{} is below 24x24", self.width, self.height));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            bad.push(format!("fps must be > 0, got {}", self.fps));
        }
        for (i, f) in self.faces.iter().enumerate() {
            if !f.face_box.fits_in(self.width, self.height) {
                bad.push(format!("faces[{i}].box {:?} is not inside the frame", f.face_box));
            }
            if f.face_box.w < 24 || f.face_box.h < 24 {
                bad.push(format!("faces[{i}].box is smaller than 24 px"));
            }
            if f.start >= f.end {
                bad.push(format!("faces[{i}]: start must be < end"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(LiveError::Config(bad.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LiveError> {
        let spec: SyntheticSpec = serde_json::from_str(text).map_err(|e| LiveError::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Faces visible on frame `index`.
    pub fn visible(&self, index: u64) -> impl Iterator<Item = &FixtureFace> {
        self.faces.iter().filter(move |f| (f.start..f.end).contains(&index))
    }

    /// `n` faces side by side, alternating mask/no-mask, each visible on
    /// every frame.
    pub fn alternating(frames: u64, seed: u64, n: usize) -> Self {
        let (width, height) = (default_width(), default_height());
        let slot = width as i32 / n.max(1) as i32;
        let fw = (slot as f64 * 0.5).min(150.0) as i32;
        let fh = (fw as f64 * 1.2) as i32;
        let faces = (0..n)
            .map(|i| FixtureFace {
                face_box: Rect::new(slot * i as i32 + (slot - fw) / 2, (height as i32 - fh) / 3, fw, fh),
                label: if i % 2 == 0 { FixtureLabel::Mask } else { FixtureLabel::NoMask },
                start: 0,
                end: frames,
            })
            .collect();
        SyntheticSpec { frames, width, height, fps: default_fps(), seed, faces }
    }
}

/// Renders fixture faces over a static seeded background; every frame gets
/// fresh, seeded sensor noise.
pub struct SyntheticSource {
    id: String,
    spec: SyntheticSpec,
    background: RgbImage,
    styles: Vec<(FaceStyle, Rgb<u8>, MaskOverlaySpec)>,
    next: u64,
}

impl SyntheticSource {
    pub fn new(id: impl Into<String>, spec: SyntheticSpec) -> Result<Self, LiveError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut background = RgbImage::new(spec.width, spec.height);
        draw_background(&mut background, &mut rng);
        let styles = spec
            .faces
            .iter()
            .map(|_| {
                let style = FaceStyle::random(&mut rng);
                let shirt = Rgb([rng.random(), rng.random(), rng.random()]);
                (style, shirt, MaskOverlaySpec::new(mask_template(&mut rng), Placement::Correct))
            })
            .collect();
        Ok(SyntheticSource { id: id.into(), spec, background, styles, next: 0 })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn render(&self, index: u64) -> RgbImage {
        let mut img = self.background.clone();
        for (face, (style, shirt, mask)) in self.spec.faces.iter().zip(&self.styles) {
            if !(face.start..face.end).contains(&index) {
                continue;
            }
            draw_body(&mut img, face.face_box, style.skin, *shirt);
            draw_face(&mut img, face.face_box, style);
            if face.label == FixtureLabel::Mask {
                img = overlay_mask(&img, face.face_box, mask).expect("validated fixture box");
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        add_noise(&mut img, 2.0, &mut rng);
        img
    }
}

impl FrameSource for SyntheticSource {
    fn source_id(&self) -> &str {
        &self.id
    }
    fn kind(&self) -> SourceKind {
        SourceKind::Synthetic
    }
    fn frame_size(&self) -> (u32, u32) {
        (self.spec.width, self.spec.height)
    }
    fn fps_hint(&self) -> Option<f64> {
        Some(self.spec.fps)
    }
    fn next_frame(&mut self) -> Result<Option<Frame>, LiveError> {
        if self.next >= self.spec.frames {
            return Ok(None);
        }
        let index = self.next;
        self.next += 1;
        Ok(Some(Frame { index, timestamp: frame_time(index, self.spec.fps), image: self.render(index) }))
    }
}

/// Directory of numbered images, read in natural (numeric-aware) order.
pub struct ImageSequenceSource {
    id: String,
    paths: Vec<PathBuf>,
    fps: f64,
    size: (u32, u32),
    next: usize,
}

fn natural_key(name: &str) -> Vec<(String, u64)> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut digits = String::new();
    for c in name.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else {
            if !digits.is_empty() {
                out.push((std::mem::take(&mut text), digits.parse().unwrap_or(u64::MAX)));
                digits.clear();
            }
            text.push(c);
        }
    }
    out.push((text, digits.parse().unwrap_or(0)));
    out
}

impl ImageSequenceSource {
    pub fn open(dir: &Path, fps: f64) -> Result<Self, LiveError> {
        let open_err = |m: String| LiveError::SourceOpen { source_id: dir.display().to_string(), message: m };
        let entries = std::fs::read_dir(dir).map_err(|e| open_err(e.to_string()))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        paths.sort_by_cached_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));
        let size = match paths.first() {
            Some(p) => decode_image(p).map_err(|e| open_err(e.to_string()))?.dimensions(),
            None => (0, 0),
        };
        Ok(ImageSequenceSource { id: dir.display().to_string(), paths, fps, size, next: 0 })
    }
}

impl FrameSource for ImageSequenceSource {
    fn source_id(&self) -> &str {
        &self.id
    }
    fn kind(&self) -> SourceKind {
        SourceKind::ImageSequence
    }
    fn frame_size(&self) -> (u32, u32) {
        self.size
    }
    fn fps_hint(&self) -> Option<f64> {
        Some(self.fps)
    }
    fn next_frame(&mut self) -> Result<Option<Frame>, LiveError> {
        let Some(path) = self.paths.get(self.next) else {
            return Ok(None);
        };
        let image = decode_image(path).map_err(|e| LiveError::Frame { index: self.next as u64, message: e.to_string() })?;
        let index = self.next as u64;
        self.next += 1;
        Ok(Some(Frame { index, timestamp: frame_time(index, self.fps), image }))
    }
}

/// Camera or video file decoded by an external `ffmpeg` process into raw
/// RGB frames scaled to a fixed size.
pub struct FfmpegSource {
    id: String,
    kind: SourceKind,
    size: (u32, u32),
    fps: Option<f64>,
    child: Child,
    stdout: ChildStdout,
    next: u64,
}

impl FfmpegSource {
    pub fn camera(index: u32, size: (u32, u32)) -> Result<Self, LiveError> {
        let device = format!("/dev/video{index}");
        Self::spawn(format!("camera:{index}"), SourceKind::CameraIndex, &["-f", "v4l2", "-i", &device], size, None)
    }

    pub fn video_file(path: &Path, size: (u32, u32), fps: Option<f64>) -> Result<Self, LiveError> {
        if !path.is_file() {
            return Err(LiveError::SourceOpen { source_id: path.display().to_string(), message: "no such file".into() });
        }
        let p = path.to_string_lossy();
        Self::spawn(path.display().to_string(), SourceKind::VideoFile, &["-i", &p], size, fps)
    }

    fn spawn(id: String, kind: SourceKind, input: &[&str], size: (u32, u32), fps: Option<f64>) -> Result<Self, LiveError> {
        let scale = format!("scale={}:{}", size.0, size.1);
        let mut child = Command::new("ffmpeg")
            .args(["-loglevel", "error", "-nostdin"])
            .args(input)
            .args(["-vf", &scale, "-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| LiveError::SourceOpen { source_id: id.clone(), message: format!("cannot start ffmpeg: {e}") })?;
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(FfmpegSource { id, kind, size, fps, child, stdout, next: 0 })
    }
}

impl Drop for FfmpegSource {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl FrameSource for FfmpegSource {
    fn source_id(&self) -> &str {
        &self.id
    }
    fn kind(&self) -> SourceKind {
        self.kind
    }
    fn frame_size(&self) -> (u32, u32) {
        self.size
    }
    fn fps_hint(&self) -> Option<f64> {
        self.fps
    }
    fn next_frame(&mut self) -> Result<Option<Frame>, LiveError> {
        let mut buf = vec![0u8; (self.size.0 * self.size.1 * 3) as usize];
        let mut filled = 0;
        while filled < buf.len() {
            match self.stdout.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(LiveError::Frame { index: self.next, message: e.to_string() }),
            }
        }
        if filled < buf.len() {
            return Ok(None);
        }
        let image = RgbImage::from_raw(self.size.0, self.size.1, buf).expect("buffer sized to frame");
        let index = self.next;
        self.next += 1;
        let timestamp = match (self.kind, self.fps) {
            (SourceKind::VideoFile, Some(fps)) => frame_time(index, fps),
            _ => Utc::now(),
        };
        Ok(Some(Frame { index, timestamp, image }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_source_is_deterministic() {
        let spec = SyntheticSpec::alternating(5, 42, 2);
        let mut a = SyntheticSource::new("s", spec.clone()).unwrap();
        let mut b = SyntheticSource::new("s", spec).unwrap();
        for i in 0..5 {
            let (fa, fb) = (a.next_frame().unwrap().unwrap(), b.next_frame().unwrap().unwrap());
            assert_eq!(fa.index, i);
            assert_eq!(fa.timestamp, fb.timestamp);
            assert_eq!(fa.image, fb.image);
        }
        assert!(a.next_frame().unwrap().is_none());
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let text = r#"{"frames":3,"seed":1,"faces":[{"box":[10,10,60,72],"label":"no_mask","start":0,"end":2}]}"#;
        let spec = SyntheticSpec::from_json(text).unwrap();
        assert_eq!((spec.width, spec.height), (640, 480));
        assert_eq!(spec.visible(1).count(), 1);
        assert_eq!(spec.visible(2).count(), 0);
        let bad = r#"{"frames":3,"seed":1,"faces":[{"box":[600,10,60,72],"label":"mask","start":0,"end":2}]}"#;
        assert!(matches!(SyntheticSpec::from_json(bad), Err(LiveError::Config(_))));
    }

    #[test]
    fn image_sequence_uses_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["frame10.png", "frame2.png", "frame1.png"].iter().enumerate() {
            RgbImage::from_pixel(8, 8, Rgb([i as u8 * 50, 0, 0])).save(dir.path().join(name)).unwrap();
        }
        let mut src = ImageSequenceSource::open(dir.path(), 5.0).unwrap();
        let reds: Vec<u8> = std::iter::from_fn(|| src.next_frame().unwrap()).map(|f| f.image.get_pixel(0, 0)[0]).collect();
        assert_eq!(reds, vec![100, 50, 0]);
    }

    #[test]
    fn missing_video_file_is_open_error() {
        let err = FfmpegSource::video_file(Path::new("/nonexistent/clip.mp4"), (64, 48), None).err().unwrap();
        assert!(matches!(err, LiveError::SourceOpen { .. }));
    }
}
