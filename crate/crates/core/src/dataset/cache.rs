//! Binary tensor cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MWTC" | u32 version=1 | u32 N | u32 H | u32 W | u32 C | u8 dtype (1 = f32)
//! N*H*W*C f32 values, row-major NHWC
//! N u8 labels
//! u32 CRC-32 (IEEE) over the value and label bytes
//! ```

use std::path::Path;

use super::DatasetError;
use crate::batch::TensorBatch;

pub const CACHE_MAGIC: [u8; 4] = *b"MWTC";
pub const CACHE_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 1;

pub fn write_tensor_cache(batch: &TensorBatch, out: &Path) -> Result<(), DatasetError> {
    let dims = [batch.n, batch.height, batch.width, batch.channels];
    let dims: Vec<u32> = dims
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| DatasetError::Format(format!("dimension {d} exceeds u32"))))
        .collect::<Result<_, _>>()?;
    crate::fsutil::write_atomic_with(out, |w| {
        w.write_all(&CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        for d in &dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[DTYPE_F32])?;
        let mut crc = crc32fast::Hasher::new();
        let mut buf = Vec::with_capacity(64 * 1024);
        for chunk in batch.data.chunks(16 * 1024) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            crc.update(&buf);
            w.write_all(&buf)?;
        }
        crc.update(&batch.labels);
        w.write_all(&batch.labels)?;
        w.write_all(&crc.finalize().to_le_bytes())
    })
    .map_err(|e| DatasetError::io(out, e))
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Read a cache written by [`write_tensor_cache`]. Any size or checksum
/// mismatch is reported as corruption; no partial batch is returned.
pub fn read_tensor_cache(path: &Path) -> Result<TensorBatch, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    if bytes.len() < 4 || bytes[..4] != CACHE_MAGIC {
        return Err(DatasetError::Format(format!("{} is not a tensor cache (bad magic)", path.display())));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::Corrupt(format!("{}: header truncated", path.display())));
    }
    let version = u32_at(&bytes, 4);
    if version != CACHE_VERSION {
        return Err(DatasetError::Format(format!("unsupported cache version {version}")));
    }
    let n = u32_at(&bytes, 8) as usize;
    let h = u32_at(&bytes, 12) as usize;
    let w = u32_at(&bytes, 16) as usize;
    let c = u32_at(&bytes, 20) as usize;
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(DatasetError::Format(format!("unsupported dtype code {dtype}")));
    }
    let values = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| DatasetError::Corrupt("dimensions overflow".into()))?;
    let data_len = values.checked_mul(4).ok_or_else(|| DatasetError::Corrupt("dimensions overflow".into()))?;
    let expected = HEADER_LEN + data_len + n + 4;
    if bytes.len() != expected {
        return Err(DatasetError::Corrupt(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + data_len + n];
    let stored = u32_at(&bytes, HEADER_LEN + data_len + n);
    if crc32fast::hash(payload) != stored {
        return Err(DatasetError::Corrupt(format!("{}: checksum mismatch", path.display())));
    }
    let data: Vec<f32> = payload[..data_len]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let labels = payload[data_len..].to_vec();
    TensorBatch::new(n, h, w, c, data, labels).map_err(|e| DatasetError::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(n: usize, h: usize, w: usize) -> TensorBatch {
        let data: Vec<f32> = (0..n * h * w * 3).map(|i| (i as f32 * 0.37).sin()).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        TensorBatch::new(n, h, w, 3, data, labels).unwrap()
    }

    #[test]
    fn five_samples_round_trip_with_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        let b = batch(5, 224, 224);
        write_tensor_cache(&b, &path).unwrap();
        let r = read_tensor_cache(&path).unwrap();
        assert_eq!(r.shape(), (5, 224, 224, 3));
        assert_eq!(r.labels.len(), 5);
        assert!(r.data.iter().zip(&b.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        let b = TensorBatch::new(1, 1, 1, 3, vec![1.0, 0.5, 0.0], vec![1]).unwrap();
        write_tensor_cache(&b, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"MWTC".to_vec();
        for v in [1u32, 1, 1, 1, 3] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(1);
        for v in [1.0f32, 0.5, 0.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(1);
        let crc = crc32fast::hash(&expected[HEADER_LEN..]);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_file_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        write_tensor_cache(&batch(3, 8, 8), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(read_tensor_cache(&path), Err(DatasetError::Corrupt(_))));
    }

    #[test]
    fn flipped_bit_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        write_tensor_cache(&batch(2, 4, 4), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor_cache(&path), Err(DatasetError::Corrupt(_))));
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        std::fs::write(&path, b"NOPE000000000000000000000000").unwrap();
        assert!(matches!(read_tensor_cache(&path), Err(DatasetError::Format(_))));
        write_tensor_cache(&batch(1, 2, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor_cache(&path), Err(DatasetError::Format(_))));
    }

    #[test]
    fn empty_batch_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mwtc");
        let b = TensorBatch::empty(224, 224, 3);
        write_tensor_cache(&b, &path).unwrap();
        assert_eq!(read_tensor_cache(&path).unwrap(), b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bitwise_identity(
            n in 0usize..4, h in 1usize..6, w in 1usize..6,
            seed in any::<u32>(),
        ) {
            let len = n * h * w * 3;
            let data: Vec<f32> = (0..len).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97))).collect();
            let labels: Vec<u8> = (0..n).map(|i| (seed as usize + i) as u8).collect();
            let b = TensorBatch::new(n, h, w, 3, data, labels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.mwtc");
            write_tensor_cache(&b, &path).unwrap();
            let r = read_tensor_cache(&path).unwrap();
            prop_assert_eq!(r.labels, b.labels);
            prop_assert!(r.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
