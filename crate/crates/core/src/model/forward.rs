use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::align::{decode_segments, drop_dtw, percentile_drop_cost, AlignmentPath, CostMatrix};
use crate::dataset::Segment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) fingerprint: u64,
    pub(crate) h: Array2<f64>,
    pub(crate) x: Array2<f64>,
    pub(crate) qp: Array2<f64>,
    pub(crate) k: Array2<f64>,
    pub(crate) v: Array2<f64>,
    pub(crate) p: Array2<f64>,
    pub(crate) o: Array2<f64>,
    pub(crate) s: Array2<f64>,
}

impl ForwardCache {
    /// Step slots, `U x d'`.
    pub fn slots(&self) -> ArrayView2<'_, f64> {
        self.s.view()
    }

    /// Projected frames, `L x d'`.
    pub fn frames(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    /// Attention weights, `U x L`; every row sums to one.
    pub fn attention(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }
}

fn check_dim(params: &ModelParams, m: &FeatureMatrix, what: &str) -> Result<()> {
    if m.dim() != params.d() {
        return Err(Error::invalid(format!(
            "{what} have dimension {} but the model expects {}",
            m.dim(),
            params.d()
        )));
    }
    Ok(())
}

pub fn project_frames(params: &ModelParams, video: &FeatureMatrix) -> Result<Array2<f64>> {
    check_dim(params, video, "frame features")?;
    Ok(video.view().dot(&params.proj_v))
}

pub fn project_text(params: &ModelParams, text: &FeatureMatrix) -> Result<Array2<f64>> {
    check_dim(params, text, "step features")?;
    Ok(text.view().dot(&params.proj_t))
}

pub(crate) fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

pub fn forward_slots(params: &ModelParams, video: &FeatureMatrix) -> Result<ForwardCache> {
    let h = video.view().to_owned();
    let x = project_frames(params, video)?;
    let scale = 1.0 / (params.d_prime() as f64).sqrt();
    let qp = params.queries.dot(&params.w_q);
    let k = x.dot(&params.w_k);
    let v = x.dot(&params.w_v);
    let mut p = qp.dot(&k.t()) * scale;
    softmax_rows(&mut p);
    let o = p.dot(&v);
    let s = o.dot(&params.w_o);
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("step slots are not finite".into()));
    }
    Ok(ForwardCache {
        fingerprint: params.fingerprint(),
        h,
        x,
        qp,
        k,
        v,
        p,
        o,
        s,
    })
}

/// Rows scaled to unit length; zero rows are an error.
pub(crate) fn normalize_rows(a: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let norms: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::invalid(format!("cosine of a zero vector (row {i})")));
    }
    let mut out = a.to_owned();
    for (mut row, n) in out.rows_mut().into_iter().zip(&norms) {
        row.mapv_inplace(|x| x / n);
    }
    Ok((out, norms))
}

/// `cos[i][j]` between rows of `a` and rows of `b`.
pub(crate) fn cosine_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (an, _) = normalize_rows(a)?;
    let (bn, _) = normalize_rows(b)?;
    Ok(an.dot(&bn.t()).mapv(|c| c.clamp(-1.0, 1.0)))
}

fn negative_cosine_cost(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    let c = cosine_matrix(a, b)?;
    let (n, m) = c.dim();
    CostMatrix::new(n, m, c.iter().map(|x| -x).collect())
}

/// Picks one slot per step. Steps are the rows of a one-sided Drop-DTW
/// against the slots (steps must match, slots may drop); each step takes the
/// cheapest slot of its matched run, lowest index on ties. Returns the slot
/// index of every step in step order.
pub fn select_slots(
    slots: ArrayView2<'_, f64>,
    text: ArrayView2<'_, f64>,
    drop_pct: f64,
) -> Result<Vec<usize>> {
    let (k, u) = (text.nrows(), slots.nrows());
    if k > u {
        return Err(Error::Infeasible(format!(
            "{k} steps cannot be matched to only {u} slots"
        )));
    }
    let cost = negative_cosine_cost(text, slots)?;
    let delta = percentile_drop_cost(&cost, drop_pct)?;
    let path = drop_dtw(&cost, delta, None)?;
    let mut best: Vec<Option<usize>> = vec![None; k];
    for &(step, slot) in &path.matches {
        let better = match best[step] {
            None => true,
            Some(b) => cost.get(step, slot) < cost.get(step, b),
        };
        if better {
            best[step] = Some(slot);
        }
    }
    Ok(best
        .into_iter()
        .map(|b| b.expect("one-sided path matches every step"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `(step, segment)` in step order, at most one per step.
    pub segments: Vec<(usize, Segment)>,
    /// Path over (steps x frames).
    pub path: AlignmentPath,
    /// Decoder slot chosen for each step; empty when slots were given.
    pub slot_of_step: Vec<usize>,
}

/// Aligns step representations (in step order) to projected frames with a
/// one-sided Drop-DTW and decodes one segment per matched step.
pub fn align_slots(
    steps: ArrayView2<'_, f64>,
    frames: ArrayView2<'_, f64>,
    drop_pct: f64,
) -> Result<AlignmentResult> {
    let cost = negative_cosine_cost(steps, frames)?;
    let delta = percentile_drop_cost(&cost, drop_pct)?;
    let path = drop_dtw(&cost, delta, None)?;
    let step_of_row: Vec<usize> = (1..=steps.nrows()).collect();
    let segments = decode_segments(&path, &step_of_row, frames.nrows())?;
    Ok(AlignmentResult {
        segments,
        path,
        slot_of_step: Vec::new(),
    })
}

/// Full inference: slots, slot selection against the step texts, then
/// alignment of the selected slots to the frames.
pub fn align_video(
    params: &ModelParams,
    video: &FeatureMatrix,
    text: &FeatureMatrix,
    drop_pct: f64,
) -> Result<AlignmentResult> {
    let cache = forward_slots(params, video)?;
    let t = project_text(params, text)?;
    let chosen = select_slots(cache.slots(), t.view(), drop_pct)?;
    let selected = cache.s.select(Axis(0), &chosen);
    let mut result = align_slots(selected.view(), cache.frames(), drop_pct)?;
    result.slot_of_step = chosen;
    Ok(result)
}
