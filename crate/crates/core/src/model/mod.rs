//! Step-slot decoder: a frame projection, `U` learnable step queries and a
//! single cross-attention layer turn a video into `U` step slots. Drop-DTW
//! picks one slot per procedural step, and training pulls each picked slot
//! toward the frames of its ground-truth segment.
//!
//! Shapes, with `L` frames, input dimension `d` and working dimension `d'`:
//!
//! ```text
//! X  = H proj_v            L x d'
//! Qp = Q W_q               U x d'
//! K  = X W_k,  V = X W_v   L x d'
//! P  = softmax_rows(Qp K^T / sqrt(d'))
//! S  = P V W_o             U x d'
//! ```
//!
//! Step texts are projected with their own matrix, `T = H_t proj_t`.

mod checkpoint;
mod forward;
mod loss;
mod train;

use std::hash::{Hash, Hasher};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Tensors;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, TensorInfo};
pub(crate) use checkpoint::{read_tensor_file, tensor_infos, write_tensor_file, TensorHeader};
pub use forward::{
    align_slots, align_video, forward_slots, project_frames, project_text, select_slots,
    AlignmentResult, ForwardCache,
};
pub use loss::{
    backward, evaluate_batch, loss_global, loss_supervised, BatchEval, BatchItem, LossTerms,
};
pub use train::{alignment_metrics, train_alignment, AlignSample, EpochLog, TrainedAligner};

pub const TENSOR_NAMES: [&str; 7] = ["proj_v", "proj_t", "queries", "w_q", "w_k", "w_v", "w_o"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub proj_v: Array2<f64>,
    pub proj_t: Array2<f64>,
    pub queries: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
}

impl ModelParams {
    /// Random initialization. `proj_t` starts equal to `proj_v` so frames
    /// and step texts begin in a shared space; `W_v` and `W_o` start near
    /// the identity.
    pub fn init(d: usize, d_prime: usize, u: usize, seed: u64) -> Result<Self> {
        if d == 0 || d_prime == 0 || u == 0 {
            return Err(Error::invalid(format!(
                "model dimensions must be positive, got d={d} d'={d_prime} U={u}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_fn((rows, cols), |_| n.sample(&mut rng))
        };
        let proj_v = gauss(d, d_prime, 1.0 / (d as f64).sqrt());
        let queries = gauss(u, d_prime, 1.0);
        let w_q = gauss(d_prime, d_prime, 1.0 / (d_prime as f64).sqrt());
        let w_k = gauss(d_prime, d_prime, 1.0 / (d_prime as f64).sqrt());
        let eye = Array2::<f64>::eye(d_prime);
        let w_v = &eye + &gauss(d_prime, d_prime, 0.1 / (d_prime as f64).sqrt());
        let w_o = &eye + &gauss(d_prime, d_prime, 0.1 / (d_prime as f64).sqrt());
        Ok(ModelParams {
            proj_t: proj_v.clone(),
            proj_v,
            queries,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        ModelParams {
            proj_v: z(&self.proj_v),
            proj_t: z(&self.proj_t),
            queries: z(&self.queries),
            w_q: z(&self.w_q),
            w_k: z(&self.w_k),
            w_v: z(&self.w_v),
            w_o: z(&self.w_o),
        }
    }

    pub fn d(&self) -> usize {
        self.proj_v.nrows()
    }

    pub fn d_prime(&self) -> usize {
        self.proj_v.ncols()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.nrows()
    }

    /// Tensors in checkpoint order, see [`TENSOR_NAMES`].
    pub fn tensors(&self) -> [&Array2<f64>; 7] {
        [
            &self.proj_v,
            &self.proj_t,
            &self.queries,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 7] {
        [
            &mut self.proj_v,
            &mut self.proj_t,
            &mut self.queries,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
        ]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, dp, u) = (self.d(), self.d_prime(), self.num_queries());
        let expected = [
            (d, dp),
            (d, dp),
            (u, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
        ];
        for ((name, t), shape) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expected) {
            if t.dim() != shape {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("{name} has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// Rounds every entry to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|x| f64::from(x as f32));
        }
    }

    /// Hash of the exact parameter bits, used to detect stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.tensors() {
            t.dim().hash(&mut h);
            for x in t {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

impl Tensors for ModelParams {
    fn tensor_list(&self) -> Vec<&Array2<f64>> {
        self.tensors().into()
    }

    fn tensor_list_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.tensors_mut().into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Temperature of both contrastive losses.
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub w_sup: f64,
    pub w_global: f64,
    /// Number of step queries `U`.
    pub num_queries: usize,
    pub d_prime: usize,
    /// Decoder depth; only 1 is implemented.
    pub layers: usize,
    /// Percentile of the cost matrix used as drop cost.
    pub drop_pct: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.03,
            batch_size: 6,
            learning_rate: 3e-3,
            epochs: 40,
            seed: 0,
            w_sup: 1.0,
            w_global: 1.0,
            num_queries: 32,
            d_prime: 64,
            layers: 1,
            drop_pct: 80.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("train config: {m}")));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.layers != 1 {
            return bad(format!(
                "only one decoder layer is implemented, got {}",
                self.layers
            ));
        }
        if self.num_queries == 0 || self.d_prime == 0 {
            return bad("num_queries and d_prime must be positive".into());
        }
        if !(self.drop_pct > 0.0 && self.drop_pct <= 100.0) {
            return bad(format!(
                "drop_pct must be in (0, 100], got {}",
                self.drop_pct
            ));
        }
        if self.w_sup < 0.0 || self.w_global < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = ModelParams::init(10, 6, 4, 1).unwrap();
        let b = ModelParams::init(10, 6, 4, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::init(10, 6, 4, 2).unwrap());
        a.check_shapes().unwrap();
        assert_eq!(a.proj_t, a.proj_v);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.w_o[[0, 0]] += 1e-12;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig {
            gamma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            layers: 2,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
