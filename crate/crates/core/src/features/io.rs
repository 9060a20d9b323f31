//! Binary feature files.
//!
//! Layout: the 4-byte magic `FMTX`, then `rows` and `dim` as little-endian
//! `u32`, four reserved zero bytes, then `rows * dim` little-endian `f32` values in row-major order.
//! A JSON sidecar with the same stem records `{video_id, rows, dim}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::dataset::io::{read_json, write_json};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMTX";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub video_id: String,
    pub rows: usize,
    pub dim: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_features(path: &Path, id: &str, m: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + m.data().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&[0u8; 4]);
    for &x in m.data() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &FeatureSidecar {
            video_id: id.to_string(),
            rows: m.rows(),
            dim: m.dim(),
        },
    )
}

/// Reads a feature file and checks it against its sidecar.
pub fn read_features(path: &Path) -> Result<(FeatureSidecar, FeatureMatrix)> {
    let sidecar: FeatureSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mismatch = |detail: String| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(mismatch("bad magic, expected FMTX".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, dim) = (word(4), word(8));
    if rows != sidecar.rows || dim != sidecar.dim {
        return Err(mismatch(format!(
            "payload is {rows}x{dim} but sidecar says {}x{}",
            sidecar.rows, sidecar.dim
        )));
    }
    let expected = HEADER_LEN + rows * dim * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(mismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                index,
            });
        }
        data.push(f64::from(x));
    }
    let m = FeatureMatrix::new(rows, dim, data).map_err(|e| mismatch(e.to_string()))?;
    Ok((sidecar, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        FeatureMatrix::new(3, 4, data).unwrap()
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fmtx");
        let m = sample();
        write_features(&path, "v", &m).unwrap();
        let (side, back) = read_features(&path).unwrap();
        assert_eq!(side.video_id, "v");
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(f64::from(*a as f32), *b);
        }
        // A second trip is bit-exact.
        write_features(&path, "v", &back).unwrap();
        assert_eq!(read_features(&path).unwrap().1, back);
    }

    #[test]
    fn truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fmtx");
        write_features(&path, "v", &sample()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn sidecar_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fmtx");
        let m = FeatureMatrix::new(2, 32, vec![0.5; 64]).unwrap();
        write_features(&path, "v", &m).unwrap();
        write_json(
            &sidecar_path(&path),
            &FeatureSidecar {
                video_id: "v".into(),
                rows: 2,
                dim: 64,
            },
        )
        .unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }), "{err}");
    }

    #[test]
    fn non_finite_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fmtx");
        write_features(&path, "v", &sample()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_features(&path),
            Err(Error::NonFinite { index: 2, .. })
        ));
    }
}
