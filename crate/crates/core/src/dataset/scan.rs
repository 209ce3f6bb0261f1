use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{DatasetManifest, SampleEntry, Skipped, Splits, MANIFEST_VERSION, SHUFFLE_ALGORITHM};
use super::{DatasetError, Origin};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Decode any supported image file to 3-channel RGB.
///
/// JPEG decoders tolerate missing trailing data by padding with grey, so a
/// JPEG without its end-of-image marker is rejected explicitly.
pub fn decode_image(path: &Path) -> Result<RgbImage, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let decode_err = |message: String| DatasetError::Decode { path: path.to_path_buf(), message };
    let format = image::guess_format(&bytes).map_err(|e| decode_err(e.to_string()))?;
    if format == ImageFormat::Jpeg && !has_jpeg_eoi(&bytes) {
        return Err(decode_err("truncated JPEG (missing end-of-image marker)".into()));
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| decode_err(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(decode_err("zero-sized image".into()));
    }
    Ok(crate::preprocess::to_three_channels(&img))
}

fn has_jpeg_eoi(bytes: &[u8]) -> bool {
    let trimmed = match bytes.iter().rposition(|&b| b != 0) {
        Some(i) => &bytes[..=i],
        None => return false,
    };
    trimmed.ends_with(&[0xFF, 0xD9])
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// In-place Fisher-Yates shuffle; see [`SHUFFLE_ALGORITHM`].
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let bound = i as u128 + 1;
        let j = ((rng.next_u64() as u128 * bound) >> 64) as usize;
        items.swap(i, j);
    }
}

/// Enumerate `<root>/<category>/*.{jpg,jpeg,png}`, label by category index,
/// count undecodable files as skipped, and shuffle with `seed`.
///
/// Every sample starts in the training split; see [`super::split_manifest`].
pub fn scan_dataset(root: &Path, categories: &[String], seed: u64) -> Result<DatasetManifest, DatasetError> {
    if categories.is_empty() {
        return Err(DatasetError::Config("no categories given".into()));
    }
    if !root.is_dir() {
        return Err(DatasetError::Config(format!("dataset root {} does not exist", root.display())));
    }
    if categories.len() > u8::MAX as usize {
        return Err(DatasetError::Config("too many categories".into()));
    }

    let mut candidates: Vec<(PathBuf, String, u8)> = Vec::new();
    for (label, cat) in categories.iter().enumerate() {
        let dir = root.join(cat);
        if !dir.is_dir() {
            return Err(DatasetError::Config(format!("category directory {} does not exist", dir.display())));
        }
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| DatasetError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
            .collect();
        names.sort();
        for name in names {
            candidates.push((dir.join(&name), format!("{cat}/{name}"), label as u8));
        }
    }

    let readable: Vec<bool> = candidates.par_iter().map(|(path, _, _)| decode_image(path).is_ok()).collect();

    let mut samples = Vec::new();
    let mut skipped = Skipped::default();
    for ((_, rel, label), ok) in candidates.into_iter().zip(readable) {
        if ok {
            let name = rel.rsplit('/').next().unwrap_or(&rel);
            samples.push(SampleEntry { origin: Origin::from_file_name(name), path: rel, label });
        } else {
            log::warn!("skipping unreadable image {rel}");
            skipped.count += 1;
            skipped.paths.push(rel);
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    seeded_shuffle(&mut samples, seed);

    let mut class_counts: BTreeMap<u8, usize> = (0..categories.len() as u8).map(|c| (c, 0)).collect();
    for s in &samples {
        *class_counts.entry(s.label).or_default() += 1;
    }
    let n = samples.len();
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        shuffle: SHUFFLE_ALGORITHM.to_string(),
        root: root.display().to_string(),
        categories: categories.to_vec(),
        samples,
        class_counts,
        splits: Splits { train: (0..n).collect(), validation: Vec::new() },
        skipped,
    })
}
