use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode_image, overlay_mask, DatasetError, MaskOverlaySpec, Origin, Placement, DEFAULT_CATEGORIES, IMAGE_EXTENSIONS};
use crate::geometry::Rect;
use crate::render::face::{aligned_face_box, mask_template, render_face_crop};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Images written per category.
    pub per_class: usize,
    pub image_size: u32,
    /// Share of masked images with an incorrectly worn mask.
    pub incorrect_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { per_class: 500, image_size: 224, incorrect_fraction: 0.2 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut bad = Vec::new();
        if self.per_class == 0 {
            bad.push("synth.per_class must be > 0".to_string());
        }
        if self.image_size < 32 {
            bad.push(format!("synth.image_size must be >= 32, got {}", self.image_size));
        }
        if !(0.0..=1.0).contains(&self.incorrect_fraction) {
            bad.push(format!("synth.incorrect_fraction must be in [0,1], got {}", self.incorrect_fraction));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthReport {
    pub natural: usize,
    pub synthetic_correct: usize,
    pub synthetic_incorrect: usize,
}

/// Unmasked source faces: aligned crops from a directory, or procedural ones.
enum Corpus {
    Procedural(u32),
    Files(Vec<PathBuf>),
}

impl Corpus {
    fn face(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(RgbImage, Rect), DatasetError> {
        match self {
            Corpus::Procedural(size) => Ok(render_face_crop(*size, rng)),
            Corpus::Files(paths) => {
                let img = decode_image(&paths[index % paths.len()])?;
                let (w, h) = img.dimensions();
                let b = aligned_face_box(1000);
                let face = Rect::new(
                    (b.x as i64 * w as i64 / 1000) as i32,
                    (b.y as i64 * h as i64 / 1000) as i32,
                    (b.w as i64 * w as i64 / 1000).max(1) as i32,
                    (b.h as i64 * h as i64 / 1000).max(1) as i32,
                );
                Ok((img, face))
            }
        }
    }
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    Ok(paths)
}

fn item_rng(seed: u64, class: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ class.wrapping_mul(0xA076_1D64_78BD_642F) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Write a two-category dataset under `root`: unmasked faces in
/// `Without_Mask/face_*.png` and mask overlays in
/// `With_Face_Mask/{cmfd,imfd}_*.png`. Faces come from `corpus` (aligned
/// crops) when given, otherwise they are rendered. Output depends only on
/// the arguments.
pub fn synthesize_dataset(root: &Path, cfg: &SynthConfig, corpus: Option<&Path>, seed: u64) -> Result<SynthReport, DatasetError> {
    cfg.validate().map_err(|e| DatasetError::Config(e.join("; ")))?;
    let corpus = match corpus {
        Some(dir) => Corpus::Files(corpus_files(dir)?),
        None => Corpus::Procedural(cfg.image_size),
    };
    let masked_dir = root.join(DEFAULT_CATEGORIES[0]);
    let bare_dir = root.join(DEFAULT_CATEGORIES[1]);
    for d in [&masked_dir, &bare_dir] {
        std::fs::create_dir_all(d).map_err(|e| DatasetError::io(d.as_path(), e))?;
    }
    let width = (cfg.per_class.max(1) as f64).log10().floor() as usize + 1;

    let bare: Result<Vec<()>, DatasetError> = (0..cfg.per_class)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(seed, 1, i);
            let (img, _) = corpus.face(i, &mut rng)?;
            let path = bare_dir.join(format!("{}{i:0width$}.png", Origin::Natural.file_prefix()));
            img.save(&path).map_err(|e| DatasetError::io(&path, std::io::Error::other(e)))
        })
        .collect();
    bare?;

    let masked: Result<Vec<Origin>, DatasetError> = (0..cfg.per_class)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(seed, 0, i);
            let (img, face) = corpus.face(i + cfg.per_class, &mut rng)?;
            let placement = if rng.random_bool(cfg.incorrect_fraction) {
                if rng.random_bool(0.5) {
                    Placement::IncorrectNoseOut
                } else {
                    Placement::IncorrectChinOnly
                }
            } else {
                Placement::Correct
            };
            let spec = MaskOverlaySpec::new(mask_template(&mut rng), placement);
            let out = overlay_mask(&img, face, &spec)?;
            let origin = if placement.is_correct() { Origin::SyntheticCorrect } else { Origin::SyntheticIncorrect };
            let path = masked_dir.join(format!("{}{i:0width$}.png", origin.file_prefix()));
            out.save(&path).map_err(|e| DatasetError::io(&path, std::io::Error::other(e)))?;
            Ok(origin)
        })
        .collect();
    let masked = masked?;
    let correct = masked.iter().filter(|&&o| o == Origin::SyntheticCorrect).count();
    Ok(SynthReport { natural: cfg.per_class, synthetic_correct: correct, synthetic_incorrect: masked.len() - correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scan_dataset;

    #[test]
    fn synthesized_dataset_scans_with_expected_labels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { per_class: 6, image_size: 64, incorrect_fraction: 0.5 };
        let report = synthesize_dataset(dir.path(), &cfg, None, 5).unwrap();
        assert_eq!(report.natural, 6);
        assert_eq!(report.synthetic_correct + report.synthetic_incorrect, 6);
        let cats: Vec<String> = DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect();
        let m = scan_dataset(dir.path(), &cats, 1).unwrap();
        assert_eq!(m.class_counts.values().copied().collect::<Vec<_>>(), vec![6, 6]);
        for s in &m.samples {
            assert_eq!(s.label == 0, s.origin != Origin::Natural);
        }
    }

    #[test]
    fn output_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SynthConfig { per_class: 3, image_size: 48, incorrect_fraction: 0.3 };
        synthesize_dataset(a.path(), &cfg, None, 9).unwrap();
        synthesize_dataset(b.path(), &cfg, None, 9).unwrap();
        for cat in DEFAULT_CATEGORIES {
            let mut names: Vec<_> = std::fs::read_dir(a.path().join(cat)).unwrap().map(|e| e.unwrap().file_name()).collect();
            names.sort();
            for n in names {
                let x = std::fs::read(a.path().join(cat).join(&n)).unwrap();
                let y = std::fs::read(b.path().join(cat).join(&n)).unwrap();
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn corpus_faces_are_reused() {
        let corpus = tempfile::tempdir().unwrap();
        for i in 0..2 {
            RgbImage::from_pixel(80, 90, image::Rgb([100 + i * 50, 90, 80])).save(corpus.path().join(format!("{i}.png"))).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { per_class: 2, image_size: 64, incorrect_fraction: 0.0 };
        let r = synthesize_dataset(out.path(), &cfg, Some(corpus.path()), 1).unwrap();
        assert_eq!(r.synthetic_correct, 2);
        let bare = decode_image(&out.path().join("Without_Mask/face_0.png")).unwrap();
        assert_eq!(bare.dimensions(), (80, 90));
    }
}
