//! Frame and step feature matrices, vector helpers, and the synthetic corpus
//! generator.

mod io;
mod store;
pub mod synth;

use ndarray::{Array2, ArrayView2};

use crate::dataset::Segment;
use crate::error::{Error, Result};

pub use io::{read_features, write_features, FeatureSidecar};
pub use store::Dataset;
pub use synth::{synth_corpus, SynthConfig, SynthCorpus, VideoTrace};

/// Row-major matrix of finite values, one row per frame (or per step).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::invalid(format!(
                "feature matrix {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "feature matrix value at flat index {i} is not finite"
            )));
        }
        Ok(FeatureMatrix { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows have differing lengths"));
        }
        FeatureMatrix::new(rows.len(), dim, rows.concat())
    }

    pub fn from_array(a: Array2<f64>) -> Result<Self> {
        let (rows, dim) = a.dim();
        let data = if a.is_standard_layout() {
            a.into_raw_vec_and_offset().0
        } else {
            a.iter().copied().collect()
        };
        FeatureMatrix::new(rows, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.dim), &self.data)
            .expect("shape checked at construction")
    }

    /// Copy with every row scaled to unit length. Zero rows are an error.
    pub fn l2_normalized(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_mut(self.dim).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::invalid(format!("row {i} is a zero vector")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(FeatureMatrix { data, ..*self })
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity. Zero vectors are rejected rather than padded with an
/// epsilon.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    if n == 0.0 {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    Ok(u.iter().map(|x| x / n).collect())
}

/// Mean of the rows in `[seg.start, seg.end)`.
pub fn mean_pool(m: &FeatureMatrix, seg: Segment) -> Result<Vec<f64>> {
    if seg.start >= seg.end {
        return Err(Error::invalid(format!("cannot pool empty segment {seg}")));
    }
    if seg.end > m.rows() {
        return Err(Error::invalid(format!(
            "segment {seg} exceeds {} rows",
            m.rows()
        )));
    }
    let mut acc = vec![0.0; m.dim()];
    for r in seg.start..seg.end {
        acc.iter_mut().zip(m.row(r)).for_each(|(a, x)| *a += x);
    }
    let n = seg.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
