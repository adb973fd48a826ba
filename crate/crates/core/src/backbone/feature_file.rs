//! Binary feature files.
//!
//! Layout (little-endian): magic `EGFT`, version `u32`, dim `u32`,
//! count `u64`, `count * dim` `f32` values, then `count` `u64` frame indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{BackboneError, FeatureVector};

pub const FEATURE_MAGIC: &[u8; 4] = b"EGFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 20;

/// Writes vectors to `path`. An empty sequence is written with `dim = 0`
/// unless `dim` is given.
pub fn write_feature_file(vectors: &[FeatureVector], path: &Path) -> Result<(), BackboneError> {
    let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
    write_feature_file_with_dim(vectors, dim, path)
}

pub fn write_feature_file_with_dim(vectors: &[FeatureVector], dim: usize, path: &Path) -> Result<(), BackboneError> {
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(BackboneError::DimMismatch { expected: dim, actual: v.dim() });
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(vectors.len() as u64).to_le_bytes())?;
    for v in vectors {
        for x in v.values.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    for v in vectors {
        out.write_all(&v.frame_index.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a feature file. The video id is taken from the file stem.
pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureVector>, BackboneError> {
    let video_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_features(&bytes, &video_id)
}

/// Reads a feature file and checks its dimension.
pub fn read_feature_file_expect(path: &Path, dim: usize) -> Result<Vec<FeatureVector>, BackboneError> {
    let vectors = read_feature_file(path)?;
    if let Some(v) = vectors.first() {
        if v.dim() != dim {
            return Err(BackboneError::DimMismatch { expected: dim, actual: v.dim() });
        }
    }
    Ok(vectors)
}

pub fn decode_features(bytes: &[u8], video_id: &str) -> Result<Vec<FeatureVector>, BackboneError> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(BackboneError::BadMagic);
    }
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(BackboneError::TruncatedFile);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(BackboneError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let values_len = count.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or(BackboneError::TruncatedFile)?;
    let index_len = count.checked_mul(8).ok_or(BackboneError::TruncatedFile)?;
    let expected = FEATURE_HEADER_LEN + values_len + index_len;
    if bytes.len() < expected {
        return Err(BackboneError::TruncatedFile);
    }
    let values = &bytes[FEATURE_HEADER_LEN..FEATURE_HEADER_LEN + values_len];
    let indices = &bytes[FEATURE_HEADER_LEN + values_len..expected];
    let video: Arc<str> = Arc::from(video_id);
    Ok((0..count)
        .map(|k| {
            let row = &values[k * dim * 4..(k + 1) * dim * 4];
            let vals: Arc<[f32]> = row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let frame_index = u64::from_le_bytes(indices[k * 8..k * 8 + 8].try_into().unwrap());
            FeatureVector { video_id: video.clone(), frame_index, values: vals }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(i: u64, vals: Vec<f32>) -> FeatureVector {
        FeatureVector::new("vid", i, vals)
    }

    #[test]
    fn empty_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.egft");
        write_feature_file(&[], &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), FEATURE_HEADER_LEN as u64);
        assert!(read_feature_file(&path).unwrap().is_empty());
    }

    #[test]
    fn file_size_follows_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.egft");
        let vs: Vec<_> = (0..3).map(|i| fv(i, vec![i as f32; 4])).collect();
        write_feature_file(&vs, &path).unwrap();
        // header + 3 vectors of 4 f32 + 3 u64 frame indices
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 20 + 3 * 4 * 4 + 3 * 8);
        assert_eq!(read_feature_file(&path).unwrap(), vs);
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.egft");
        write_feature_file(&[fv(0, vec![1.0, 2.0])], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        assert!(matches!(decode_features(&bytes[..bytes.len() - 1], "v"), Err(BackboneError::TruncatedFile)));
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes, "v"), Err(BackboneError::BadMagic)));
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.egft");
        let err = write_feature_file(&[fv(0, vec![1.0]), fv(1, vec![1.0, 2.0])], &path).unwrap_err();
        assert!(matches!(err, BackboneError::DimMismatch { expected: 1, actual: 2 }));
        write_feature_file(&[fv(0, vec![1.0])], &path).unwrap();
        assert!(matches!(read_feature_file_expect(&path, 3), Err(BackboneError::DimMismatch { .. })));
    }
}
