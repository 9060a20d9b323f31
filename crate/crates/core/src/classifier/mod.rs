//! Segment-level mistake classifier. A segment is summarized by the mean of
//! its frame features, concatenated with the feature of the step it is
//! supposed to show, and passed through a two-layer ReLU perceptron with one
//! logit per [`CoarseLabel`]. Training uses class-balanced cross-entropy on
//! ground-truth segments.

mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseLabel, Segment};
use crate::error::{Error, Result};
use crate::features::{mean_pool, FeatureMatrix};
use crate::model::{read_tensor_file, tensor_infos, write_tensor_file, TensorHeader, TensorInfo};
use crate::optim::Tensors;

pub use train::{
    detect_mistakes, segment_examples, train_classifier, ClassifierConfig, Example,
    TrainedClassifier,
};

pub const CLASSIFIER_TENSORS: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Two-layer perceptron. Biases are stored as single-row matrices so every
/// parameter shares one tensor type.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl ClassifierParams {
    /// He-scaled Gaussian weights and zero biases.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "classifier dimensions must be positive, got input {input_dim}, hidden {hidden}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("positive std");
            Array2::from_shape_fn((rows, cols), |_| n.sample(&mut rng))
        };
        Ok(ClassifierParams {
            w1: gauss(input_dim, hidden),
            b1: Array2::zeros((1, hidden)),
            w2: gauss(hidden, CoarseLabel::COUNT),
            b2: Array2::zeros((1, CoarseLabel::COUNT)),
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        ClassifierParams {
            w1: Array2::zeros((input_dim, hidden)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((hidden, CoarseLabel::COUNT)),
            b2: Array2::zeros((1, CoarseLabel::COUNT)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn tensors(&self) -> [&Array2<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h, n) = (self.input_dim(), self.hidden(), CoarseLabel::COUNT);
        let expected = [(d, h), (1, h), (h, n), (1, n)];
        for ((name, t), shape) in CLASSIFIER_TENSORS.iter().zip(self.tensors()).zip(expected) {
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

    pub fn round_to_f32(&mut self) {
        for t in self.tensor_list_mut() {
            t.mapv_inplace(|x| f64::from(x as f32));
        }
    }

    /// Logits for a batch of inputs, one row each.
    pub fn logits(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "classifier expects inputs of width {}, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        let hidden = (inputs.dot(&self.w1) + &self.b1).mapv(|a| a.max(0.0));
        Ok(hidden.dot(&self.w2) + &self.b2)
    }
}

impl Tensors for ClassifierParams {
    fn tensor_list(&self) -> Vec<&Array2<f64>> {
        self.tensors().into()
    }

    fn tensor_list_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// `concat(mean(frames[seg]), step_feature)`.
pub fn segment_input(
    video: &FeatureMatrix,
    seg: Segment,
    step_feature: &[f64],
) -> Result<Vec<f64>> {
    if seg.end > video.rows() {
        return Err(Error::invalid(format!(
            "segment [{}, {}) lies outside a video of {} frames",
            seg.start,
            seg.end,
            video.rows()
        )));
    }
    let mut x = mean_pool(video, seg)?;
    x.extend_from_slice(step_feature);
    Ok(x)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(z: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub fn classify(
    params: &ClassifierParams,
    video: &FeatureMatrix,
    seg: Segment,
    step_feature: &[f64],
) -> Result<(Array1<f64>, CoarseLabel)> {
    let x = segment_input(video, seg, step_feature)?;
    let n = x.len();
    let z = params
        .logits(&Array2::from_shape_vec((1, n), x).expect("one row"))?
        .index_axis_move(Axis(0), 0);
    let label = CoarseLabel::from_index(argmax(z.view())).expect("three logits");
    Ok((z, label))
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Per-class training counts and the class-balance `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub beta: f64,
    /// Indexed by [`CoarseLabel::index`].
    pub counts: [usize; CoarseLabel::COUNT],
}

impl ClassBalance {
    pub fn new(beta: f64, counts: [usize; CoarseLabel::COUNT]) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::invalid(format!(
                "beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(ClassBalance { beta, counts })
    }

    pub fn from_labels(beta: f64, labels: impl IntoIterator<Item = CoarseLabel>) -> Result<Self> {
        let mut counts = [0; CoarseLabel::COUNT];
        for l in labels {
            counts[l.index()] += 1;
        }
        ClassBalance::new(beta, counts)
    }

    /// `(1 - beta) / (1 - beta^r)` with `r` the label's count.
    pub fn weight(&self, label: CoarseLabel) -> Result<f64> {
        let r = self.counts[label.index()];
        if r == 0 {
            return Err(Error::invalid(format!(
                "class '{label}' has no training samples, so its weight is undefined; \
                 merge folds or generate a corpus with more {label} segments"
            )));
        }
        let r = i32::try_from(r).map_err(|_| Error::invalid("class count overflows i32"))?;
        Ok((1.0 - self.beta) / (1.0 - self.beta.powi(r)))
    }
}

pub fn cb_weight(balance: &ClassBalance, label: CoarseLabel) -> Result<f64> {
    balance.weight(label)
}

/// Weighted cross-entropy of one logit vector and its gradient with respect
/// to the logits.
pub fn loss_cb_grad(
    z: ArrayView1<'_, f64>,
    label: CoarseLabel,
    balance: &ClassBalance,
) -> Result<(f64, Array1<f64>)> {
    if z.len() != CoarseLabel::COUNT {
        return Err(Error::invalid(format!(
            "expected {} logits, got {}",
            CoarseLabel::COUNT,
            z.len()
        )));
    }
    let w = balance.weight(label)?;
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let y = label.index();
    let mut grad = softmax(z);
    grad[y] -= 1.0;
    Ok((w * (lse - z[y]), grad * w))
}

pub fn loss_cb(z: ArrayView1<'_, f64>, label: CoarseLabel, balance: &ClassBalance) -> Result<f64> {
    loss_cb_grad(z, label, balance).map(|(l, _)| l)
}

/// Mean class-balanced loss over a batch and, if asked, its gradient.
pub fn batch_loss(
    params: &ClassifierParams,
    inputs: &Array2<f64>,
    labels: &[CoarseLabel],
    balance: &ClassBalance,
    want_grad: bool,
) -> Result<(f64, Option<ClassifierParams>)> {
    let n = labels.len();
    if n == 0 || inputs.nrows() != n {
        return Err(Error::invalid(format!(
            "batch has {} inputs and {n} labels",
            inputs.nrows()
        )));
    }
    if inputs.ncols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "classifier expects inputs of width {}, got {}",
            params.input_dim(),
            inputs.ncols()
        )));
    }
    let pre = inputs.dot(&params.w1) + &params.b1;
    let hidden = pre.mapv(|a| a.max(0.0));
    let z = hidden.dot(&params.w2) + &params.b2;
    let mut loss = 0.0;
    let mut dz = Array2::zeros(z.raw_dim());
    for (i, &label) in labels.iter().enumerate() {
        let (l, g) = loss_cb_grad(z.row(i), label, balance)?;
        loss += l / n as f64;
        dz.row_mut(i).assign(&(g / n as f64));
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("classifier loss is {loss}")));
    }
    if !want_grad {
        return Ok((loss, None));
    }
    let dw2 = hidden.t().dot(&dz);
    let db2 = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dpre = dz.dot(&params.w2.t());
    ndarray::Zip::from(&mut dpre).and(&pre).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    let dw1 = inputs.t().dot(&dpre);
    let db1 = dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
    Ok((
        loss,
        Some(ClassifierParams {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        }),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierHeader {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: Vec<CoarseLabel>,
    pub seed: u64,
    pub epoch: usize,
    pub val_score: Option<f64>,
    pub balance: ClassBalance,
    pub tensors: Vec<TensorInfo>,
}

impl TensorHeader for ClassifierHeader {
    fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }
}

pub fn write_classifier(path: &Path, trained: &TrainedClassifier, seed: u64) -> Result<()> {
    let tensors = trained.params.tensors();
    let header = ClassifierHeader {
        input_dim: trained.params.input_dim(),
        hidden: trained.params.hidden(),
        classes: CoarseLabel::ALL.to_vec(),
        seed,
        epoch: trained.epoch,
        val_score: trained.val_score,
        balance: trained.balance.clone(),
        tensors: tensor_infos(&CLASSIFIER_TENSORS, &tensors),
    };
    write_tensor_file(path, &header, &tensors)
}

pub fn read_classifier(path: &Path) -> Result<(ClassifierHeader, ClassifierParams)> {
    let mismatch = |detail: String| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail,
    };
    let (header, tensors): (ClassifierHeader, _) = read_tensor_file(path)?;
    let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != CLASSIFIER_TENSORS {
        return Err(mismatch(format!(
            "expected tensors {CLASSIFIER_TENSORS:?}, found {names:?}"
        )));
    }
    if header.classes != CoarseLabel::ALL {
        return Err(mismatch(format!(
            "unexpected class list {:?}",
            header.classes
        )));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("four tensors checked above");
    let params = ClassifierParams {
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
    };
    params.check_shapes().map_err(|e| mismatch(e.to_string()))?;
    if (params.input_dim(), params.hidden()) != (header.input_dim, header.hidden) {
        return Err(mismatch(
            "tensor shapes disagree with input_dim, hidden".into(),
        ));
    }
    Ok((header, params))
}
