//! Checkpoint files: an 8-byte magic, a little-endian `u32` header length,
//! a JSON header, then every tensor as row-major little-endian `f32` in the
//! order the header lists them.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ModelParams, TENSOR_NAMES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STEPALN1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

pub(crate) trait TensorHeader {
    fn tensors(&self) -> &[TensorInfo];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    #[serde(rename = "U")]
    pub u: usize,
    pub d: usize,
    pub d_prime: usize,
    pub seed: u64,
    pub epoch: usize,
    pub val_f1: f64,
    pub tensors: Vec<TensorInfo>,
}

impl TensorHeader for CheckpointHeader {
    fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }
}

pub(crate) fn tensor_infos(names: &[&str], tensors: &[&Array2<f64>]) -> Vec<TensorInfo> {
    names
        .iter()
        .zip(tensors)
        .map(|(n, t)| TensorInfo {
            name: n.to_string(),
            rows: t.nrows(),
            cols: t.ncols(),
        })
        .collect()
}

pub(crate) fn write_tensor_file<H: Serialize>(
    path: &Path,
    header: &H,
    tensors: &[&Array2<f64>],
) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
    let payload: usize = tensors.iter().map(|t| t.len() * 4).sum();
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in tensors {
        for &x in t.iter() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_tensor_file<H: DeserializeOwned + TensorHeader>(
    path: &Path,
) -> Result<(H, Vec<Array2<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mismatch = |detail: String| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail,
    };
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    let prefix = MAGIC.len() + 4;
    if bytes.len() < prefix {
        return Err(truncated(prefix));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(mismatch("not a checkpoint file (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[MAGIC.len()..prefix].try_into().unwrap()) as usize;
    if bytes.len() < prefix + hlen {
        return Err(truncated(prefix + hlen));
    }
    let header: H = serde_json::from_slice(&bytes[prefix..prefix + hlen])
        .map_err(|e| mismatch(format!("header: {e}")))?;
    let expected = prefix
        + hlen
        + header
            .tensors()
            .iter()
            .map(|t| t.rows * t.cols * 4)
            .sum::<usize>();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(mismatch(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let mut at = prefix + hlen;
    let mut tensors = Vec::with_capacity(header.tensors().len());
    let mut index = 0;
    for info in header.tensors() {
        let mut data = Vec::with_capacity(info.rows * info.cols);
        for _ in 0..info.rows * info.cols {
            let x = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    index,
                });
            }
            data.push(f64::from(x));
            at += 4;
            index += 1;
        }
        tensors.push(
            Array2::from_shape_vec((info.rows, info.cols), data)
                .map_err(|e| mismatch(e.to_string()))?,
        );
    }
    Ok((header, tensors))
}

pub fn write_checkpoint(
    path: &Path,
    params: &ModelParams,
    seed: u64,
    epoch: usize,
    val_f1: f64,
) -> Result<()> {
    let tensors = params.tensors();
    let header = CheckpointHeader {
        u: params.num_queries(),
        d: params.d(),
        d_prime: params.d_prime(),
        seed,
        epoch,
        val_f1,
        tensors: tensor_infos(&TENSOR_NAMES, &tensors),
    };
    write_tensor_file(path, &header, &tensors)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let (header, tensors): (CheckpointHeader, _) = read_tensor_file(path)?;
    let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != TENSOR_NAMES {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            detail: format!("expected tensors {TENSOR_NAMES:?}, found {names:?}"),
        });
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("seven tensors checked above");
    let params = ModelParams {
        proj_v: next(),
        proj_t: next(),
        queries: next(),
        w_q: next(),
        w_k: next(),
        w_v: next(),
        w_o: next(),
    };
    params.check_shapes().map_err(|e| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if (params.num_queries(), params.d(), params.d_prime()) != (header.u, header.d, header.d_prime)
    {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            detail: "tensor shapes disagree with U, d, d_prime".into(),
        });
    }
    Ok((header, params))
}
