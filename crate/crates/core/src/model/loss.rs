//! Losses and their analytic gradients.
//!
//! The supervised loss of step `k` is a temperature-scaled softmax over the
//! frames of the video, asking the selected slot to put its mass on the
//! frames of the step's ground-truth segments:
//!
//! ```text
//! L_k = -log( sum_{j in seg_k} exp(cos(s_k, x_j) / gamma)
//!             / sum_{l} exp(cos(s_k, x_l) / gamma) )
//! ```
//!
//! The temperature divides the cosine inside the exponential; dividing the
//! exponential instead would cancel between numerator and denominator.
//!
//! The global loss is a symmetric InfoNCE over the batch between each
//! video's mean selected slot and its mean projected step text.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::forward::{forward_slots, normalize_rows, project_text, select_slots, ForwardCache};
use super::{ModelParams, TrainConfig};
use crate::dataset::Segment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// One training video: frames, step texts and the ground-truth segments of
/// each step (`step_segments[k]` belongs to step `k + 1`; empty when the
/// step is missing from the video).
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub frames: &'a FeatureMatrix,
    pub text: &'a FeatureMatrix,
    pub step_segments: Vec<Vec<Segment>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub supervised: f64,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct BatchEval {
    /// `w_sup * supervised + w_global * global`.
    pub loss: f64,
    pub terms: LossTerms,
    pub selections: Vec<Vec<usize>>,
    pub grads: Option<ModelParams>,
}

/// Cosines between `a` and each row of `b`, plus what is needed to push a
/// gradient back through them.
struct Cosines {
    a_hat: Array1<f64>,
    a_norm: f64,
    b_hat: Array2<f64>,
    b_norms: Vec<f64>,
    c: Array1<f64>,
}

impl Cosines {
    fn new(a: ArrayView1<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        let a_norm = a.dot(&a).sqrt();
        if a_norm == 0.0 {
            return Err(Error::invalid("cosine of a zero slot vector"));
        }
        let a_hat = &a / a_norm;
        let (b_hat, b_norms) = normalize_rows(b)?;
        let c = b_hat.dot(&a_hat);
        Ok(Cosines {
            a_hat,
            a_norm,
            b_hat,
            b_norms,
            c,
        })
    }

    /// Given `g = dL/dc`, returns `(dL/da, dL/db)` using
    /// `dc/da = (b_hat - c a_hat) / |a|` and `dc/db = (a_hat - c b_hat) / |b|`.
    fn backward(&self, g: &Array1<f64>) -> (Array1<f64>, Array2<f64>) {
        let da = (self.b_hat.t().dot(g) - &self.a_hat * g.dot(&self.c)) / self.a_norm;
        let mut db = Array2::zeros(self.b_hat.raw_dim());
        for (j, mut row) in db.rows_mut().into_iter().enumerate() {
            if g[j] == 0.0 {
                continue;
            }
            let scale = g[j] / self.b_norms[j];
            row.assign(&((&self.a_hat - &(&self.b_hat.row(j) * self.c[j])) * scale));
        }
        (da, db)
    }
}

fn frame_mask(segments: &[Segment], frames: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; frames];
    for seg in segments {
        if seg.start >= seg.end || seg.end > frames {
            return Err(Error::invalid(format!(
                "segment {seg} is empty or beyond {frames} frames"
            )));
        }
        mask[seg.start..seg.end].iter_mut().for_each(|m| *m = true);
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("supervised loss needs a non-empty segment"));
    }
    Ok(mask)
}

/// Value and gradients of one step's supervised loss. Both sums share one
/// max shift, so a mask covering every frame gives exactly zero.
fn supervised_terms(
    slot: ArrayView1<'_, f64>,
    mask: &[bool],
    frames: ArrayView2<'_, f64>,
    gamma: f64,
    want_grad: bool,
) -> Result<(f64, Option<(Array1<f64>, Array2<f64>)>)> {
    let cos = Cosines::new(slot, frames)?;
    let logits = cos.c.mapv(|c| c / gamma);
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = logits.mapv(|z| (z - max).exp());
    let mut all = 0.0;
    let mut inside = 0.0;
    for (j, &x) in e.iter().enumerate() {
        all += x;
        if mask[j] {
            inside += x;
        }
    }
    let loss = all.ln() - inside.ln();
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("supervised loss is {loss}")));
    }
    if !want_grad {
        return Ok((loss, None));
    }
    // dL/dz_j = softmax_all_j - softmax_inside_j.
    let g = Array1::from_shape_fn(e.len(), |j| {
        let w = e[j] / all;
        let w_in = if mask[j] { e[j] / inside } else { 0.0 };
        (w - w_in) / gamma
    });
    Ok((loss, Some(cos.backward(&g))))
}

/// Supervised loss of one slot against the frames of `segments`.
pub fn loss_supervised(
    slot: &[f64],
    segments: &[Segment],
    frames: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if slot.len() != frames.ncols() {
        return Err(Error::invalid(format!(
            "slot has length {} but frames have dimension {}",
            slot.len(),
            frames.ncols()
        )));
    }
    let mask = frame_mask(segments, frames.nrows())?;
    Ok(supervised_terms(ArrayView1::from(slot), &mask, frames, gamma, false)?.0)
}

/// Value of the symmetric InfoNCE plus its gradients with respect to the
/// pooled slot vectors `p` and pooled text vectors `q` (one row per video).
fn global_terms(
    p: ArrayView2<'_, f64>,
    q: ArrayView2<'_, f64>,
    gamma: f64,
    want_grad: bool,
) -> Result<(f64, Option<(Array2<f64>, Array2<f64>)>)> {
    let b = p.nrows();
    if b < 2 {
        return Err(Error::invalid(
            "the global loss needs a batch of at least 2",
        ));
    }
    let (p_hat, p_norms) = normalize_rows(p)?;
    let (q_hat, q_norms) = normalize_rows(q)?;
    let c = p_hat.dot(&q_hat.t());
    let z = c.mapv(|x| x / gamma);

    let softmax = |v: ArrayView1<'_, f64>| -> (f64, Array1<f64>) {
        let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let e = v.mapv(|x| (x - max).exp());
        let s = e.sum();
        (max + s.ln(), e / s)
    };
    let mut loss = 0.0;
    let mut dz = Array2::<f64>::zeros((b, b));
    let scale = 1.0 / (2.0 * b as f64);
    for i in 0..b {
        let (lse_r, sm_r) = softmax(z.row(i));
        let (lse_c, sm_c) = softmax(z.column(i));
        loss += (lse_r - z[[i, i]]) + (lse_c - z[[i, i]]);
        if want_grad {
            for j in 0..b {
                dz[[i, j]] += scale * sm_r[j];
                dz[[j, i]] += scale * sm_c[j];
            }
            dz[[i, i]] -= 2.0 * scale;
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("global loss is {loss}")));
    }
    if !want_grad {
        return Ok((loss, None));
    }
    let dc = dz / gamma;
    // d cos(p_i, q_j) / d p_i = (q_hat_j - c_ij p_hat_i) / |p_i|, and
    // symmetrically for q_j.
    let mut dp = dc.dot(&q_hat);
    let mut dq = dc.t().dot(&p_hat);
    for i in 0..b {
        let rp = (&dc.row(i) * &c.row(i)).sum();
        let rq = (&dc.column(i) * &c.column(i)).sum();
        let mut row = dp.row_mut(i);
        row.scaled_add(-rp, &p_hat.row(i));
        row.mapv_inplace(|x| x / p_norms[i]);
        let mut row = dq.row_mut(i);
        row.scaled_add(-rq, &q_hat.row(i));
        row.mapv_inplace(|x| x / q_norms[i]);
    }
    Ok((loss, Some((dp, dq))))
}

/// Symmetric InfoNCE over a batch of `(selected slots, projected step
/// texts)` pairs, each pooled by its row mean.
pub fn loss_global(
    pairs: &[(ArrayView2<'_, f64>, ArrayView2<'_, f64>)],
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if pairs.len() < 2 {
        return Err(Error::invalid(
            "the global loss needs a batch of at least 2",
        ));
    }
    let dim = pairs[0].0.ncols();
    let mut p = Array2::zeros((pairs.len(), dim));
    let mut q = Array2::zeros((pairs.len(), pairs[0].1.ncols()));
    for (i, (s, t)) in pairs.iter().enumerate() {
        p.row_mut(i)
            .assign(&s.mean_axis(Axis(0)).expect("non-empty slots"));
        q.row_mut(i)
            .assign(&t.mean_axis(Axis(0)).expect("non-empty text"));
    }
    Ok(global_terms(p.view(), q.view(), gamma, false)?.0)
}

/// Accumulates into `grads` the parameter gradients of one video, given the
/// loss gradients with respect to its slots (`U x d'`) and its projected
/// frames (`L x d'`, the direct part through the supervised cosines).
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_slots: &Array2<f64>,
    d_frames: &Array2<f64>,
    grads: &mut ModelParams,
) -> Result<()> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    let scale = 1.0 / (params.d_prime() as f64).sqrt();
    // S = O W_o
    grads.w_o += &cache.o.t().dot(d_slots);
    let d_o = d_slots.dot(&params.w_o.t());
    // O = P V
    let d_p = d_o.dot(&cache.v.t());
    let d_v = cache.p.t().dot(&d_o);
    // Row softmax: dA = P * (dP - rowsum(P * dP)).
    let row_dot = (&cache.p * &d_p).sum_axis(Axis(1));
    let d_a = &cache.p * &(&d_p - &row_dot.insert_axis(Axis(1)));
    // A = Qp K^T * scale
    let d_qp = d_a.dot(&cache.k) * scale;
    let d_k = d_a.t().dot(&cache.qp) * scale;
    // Qp = Q W_q
    grads.queries += &d_qp.dot(&params.w_q.t());
    grads.w_q += &params.queries.t().dot(&d_qp);
    // K = X W_k, V = X W_v
    grads.w_k += &cache.x.t().dot(&d_k);
    grads.w_v += &cache.x.t().dot(&d_v);
    let d_x = d_frames + &d_k.dot(&params.w_k.t()) + &d_v.dot(&params.w_v.t());
    // X = H proj_v
    grads.proj_v += &cache.h.t().dot(&d_x);
    Ok(())
}

/// Forward pass, slot selection (unless `fixed` is given), losses and, when
/// `want_grad`, gradients of `w_sup * L_sup + w_global * L_global` for a
/// batch. The supervised term is averaged over present steps, then over
/// videos; the global term is skipped for a batch of one.
pub fn evaluate_batch(
    params: &ModelParams,
    items: &[BatchItem<'_>],
    cfg: &TrainConfig,
    fixed: Option<&[Vec<usize>]>,
    want_grad: bool,
) -> Result<BatchEval> {
    if items.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = items.len();
    let mut caches = Vec::with_capacity(b);
    let mut texts = Vec::with_capacity(b);
    let mut selections = Vec::with_capacity(b);
    for (i, item) in items.iter().enumerate() {
        let cache = forward_slots(params, item.frames)?;
        let text = project_text(params, item.text)?;
        let sel = match fixed {
            Some(f) => f[i].clone(),
            None => select_slots(cache.slots(), text.view(), cfg.drop_pct)?,
        };
        if sel.len() != item.text.rows() || sel.iter().any(|&u| u >= params.num_queries()) {
            return Err(Error::invalid(format!(
                "selection {sel:?} does not fit {} steps and {} slots",
                item.text.rows(),
                params.num_queries()
            )));
        }
        caches.push(cache);
        texts.push(text);
        selections.push(sel);
    }

    let mut d_slots: Vec<Array2<f64>> = caches
        .iter()
        .map(|c| Array2::zeros(c.s.raw_dim()))
        .collect();
    let mut d_frames: Vec<Array2<f64>> = caches
        .iter()
        .map(|c| Array2::zeros(c.x.raw_dim()))
        .collect();
    let mut d_texts: Vec<Array2<f64>> = texts.iter().map(|t| Array2::zeros(t.raw_dim())).collect();

    let mut supervised = 0.0;
    for (i, item) in items.iter().enumerate() {
        let present: Vec<usize> = (0..item.step_segments.len().min(selections[i].len()))
            .filter(|&k| !item.step_segments[k].is_empty())
            .collect();
        if present.is_empty() {
            continue;
        }
        let weight = 1.0 / present.len() as f64;
        let grad_scale = cfg.w_sup * weight / b as f64;
        let mut video_loss = 0.0;
        for &k in &present {
            let mask = frame_mask(&item.step_segments[k], caches[i].x.nrows())?;
            let u = selections[i][k];
            let (l, g) = supervised_terms(
                caches[i].s.row(u),
                &mask,
                caches[i].x.view(),
                cfg.gamma,
                want_grad,
            )?;
            video_loss += weight * l;
            if let Some((ds, dx)) = g {
                d_slots[i].row_mut(u).scaled_add(grad_scale, &ds);
                d_frames[i].scaled_add(grad_scale, &dx);
            }
        }
        supervised += video_loss;
    }
    supervised /= b as f64;

    let mut global = 0.0;
    if b >= 2 {
        let dim = params.d_prime();
        let mut p = Array2::zeros((b, dim));
        let mut q = Array2::zeros((b, dim));
        for i in 0..b {
            let sel = caches[i].s.select(Axis(0), &selections[i]);
            p.row_mut(i)
                .assign(&sel.mean_axis(Axis(0)).expect("non-empty selection"));
            q.row_mut(i)
                .assign(&texts[i].mean_axis(Axis(0)).expect("non-empty text"));
        }
        let (l, g) = global_terms(p.view(), q.view(), cfg.gamma, want_grad)?;
        global = l;
        if let Some((dp, dq)) = g {
            for i in 0..b {
                let ks = selections[i].len() as f64;
                for &u in &selections[i] {
                    d_slots[i]
                        .row_mut(u)
                        .scaled_add(cfg.w_global / ks, &dp.row(i));
                }
                let kt = texts[i].nrows() as f64;
                for mut row in d_texts[i].rows_mut() {
                    row.scaled_add(cfg.w_global / kt, &dq.row(i));
                }
            }
        }
    }

    let loss = cfg.w_sup * supervised + cfg.w_global * global;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("batch loss is {loss}")));
    }
    let grads = if want_grad {
        let mut grads = params.zeros_like();
        for i in 0..b {
            backward(params, &caches[i], &d_slots[i], &d_frames[i], &mut grads)?;
            grads.proj_t += &items[i].text.view().t().dot(&d_texts[i]);
        }
        Some(grads)
    } else {
        None
    };
    Ok(BatchEval {
        loss,
        terms: LossTerms { supervised, global },
        selections,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(a: usize, b: usize) -> Segment {
        Segment { start: a, end: b }
    }

    #[test]
    fn full_segment_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let slot = [0.3, -0.2, 0.5, 0.1];
        assert_eq!(
            loss_supervised(&slot, &[seg(0, 7)], frames.view(), 0.03).unwrap(),
            0.0
        );
        assert_eq!(
            loss_supervised(&slot, &[seg(0, 3), seg(3, 7)], frames.view(), 0.03).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_frames_equal_cosine_is_ln2() {
        let frames = array![[1.0, 0.0], [2.0, 0.0]];
        let l = loss_supervised(&[1.0, 1.0], &[seg(0, 1)], frames.view(), 0.03).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn separated_frames_vanish() {
        let frames = array![[1.0, 0.0], [-1.0, 0.0]];
        let l = loss_supervised(&[1.0, 0.0], &[seg(0, 1)], frames.view(), 0.03).unwrap();
        let bound = (1.0 + (-2.0f64 / 0.03).exp()).ln();
        assert!(l <= bound + 1e-15 && l < 1e-12);
        assert!(loss_supervised(&[1.0, 0.0], &[seg(1, 1)], frames.view(), 0.03).is_err());
    }

    #[test]
    fn global_closed_forms() {
        let same = array![[1.0, 2.0]];
        let pairs = [(same.view(), same.view()), (same.view(), same.view())];
        let l = loss_global(&pairs, 0.03).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let a = array![[1.0, 0.0]];
        let b = array![[-1.0, 0.0]];
        let l = loss_global(&[(a.view(), a.view()), (b.view(), b.view())], 0.03).unwrap();
        assert!(l < 1e-12);
        assert!(loss_global(&[(a.view(), a.view())], 0.03).is_err());
    }

    #[test]
    fn global_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mats: Vec<(Array2<f64>, Array2<f64>)> = (0..4)
            .map(|_| {
                (
                    Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0)),
                    Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let views: Vec<_> = mats.iter().map(|(a, b)| (a.view(), b.view())).collect();
        let mut rev = views.clone();
        rev.reverse();
        let x = loss_global(&views, 0.1).unwrap();
        let y = loss_global(&rev, 0.1).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    fn random_features(rows: usize, dim: usize, rng: &mut impl Rng) -> FeatureMatrix {
        let data = (0..rows * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        FeatureMatrix::new(rows, dim, data).unwrap()
    }

    /// Per-tensor relative error `|a - n| / max(|a|, |n|)` between analytic
    /// and central-difference gradients, selection held fixed.
    fn gradient_errors(seed: u64, cfg: &TrainConfig) -> Vec<(String, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dp, u) = (5, 4, 6);
        let params = ModelParams::init(d, dp, u, seed).unwrap();
        let mut owned = Vec::new();
        for _ in 0..3 {
            let l = rng.random_range(6..10);
            let k = rng.random_range(2..4);
            owned.push((
                random_features(l, d, &mut rng),
                random_features(k, d, &mut rng),
                l,
                k,
            ));
        }
        let items: Vec<BatchItem<'_>> = owned
            .iter()
            .map(|(f, t, l, k)| BatchItem {
                frames: f,
                text: t,
                step_segments: (0..*k)
                    .map(|i| {
                        let a = i * l / k;
                        vec![seg(a, a + 2)]
                    })
                    .collect(),
            })
            .collect();
        let base = evaluate_batch(&params, &items, cfg, None, true).unwrap();
        let analytic = base.grads.unwrap();
        let fixed = base.selections;
        let h = 1e-5;
        let mut errors = Vec::new();
        for (t, name) in super::super::TENSOR_NAMES.iter().enumerate() {
            let shape = params.tensors()[t].raw_dim();
            let mut numeric = Array2::<f64>::zeros(shape);
            for idx in ndarray::indices(numeric.raw_dim()) {
                let mut plus = params.clone();
                plus.tensors_mut()[t][idx] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t][idx] -= h;
                let lp = evaluate_batch(&plus, &items, cfg, Some(&fixed), false)
                    .unwrap()
                    .loss;
                let lm = evaluate_batch(&minus, &items, cfg, Some(&fixed), false)
                    .unwrap()
                    .loss;
                numeric[idx] = (lp - lm) / (2.0 * h);
            }
            let a = analytic.tensors()[t];
            let diff = (a - &numeric).mapv(|x| x * x).sum().sqrt();
            let scale = a
                .mapv(|x| x * x)
                .sum()
                .sqrt()
                .max(numeric.mapv(|x| x * x).sum().sqrt());
            errors.push((
                name.to_string(),
                if scale == 0.0 { 0.0 } else { diff / scale },
            ));
        }
        errors
    }

    #[test]
    fn gradients_match_finite_differences() {
        // A mild temperature keeps the central differences well conditioned.
        for seed in 0..4 {
            let cfg = TrainConfig {
                gamma: 0.5,
                w_sup: 1.0,
                w_global: 0.7,
                ..TrainConfig::default()
            };
            for (name, err) in gradient_errors(seed, &cfg) {
                assert!(err < 1e-4, "seed {seed}, {name}: relative error {err:e}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(4, 3, 4, 0).unwrap();
        let f = random_features(5, 4, &mut rng);
        let t = random_features(2, 4, &mut rng);
        let item = BatchItem {
            frames: &f,
            text: &t,
            step_segments: vec![vec![seg(0, 2)], vec![seg(2, 5)]],
        };
        let cfg = TrainConfig {
            w_sup: 0.0,
            w_global: 0.0,
            ..TrainConfig::default()
        };
        let eval = evaluate_batch(&params, &[item.clone(), item], &cfg, None, true).unwrap();
        for g in eval.grads.unwrap().tensors() {
            assert!(g.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(4, 3, 4, 0).unwrap();
        let f = random_features(5, 4, &mut rng);
        let cache = forward_slots(&params, &f).unwrap();
        let mut changed = params.clone();
        changed.w_o[[0, 0]] += 0.1;
        let mut grads = params.zeros_like();
        let ds = Array2::zeros(cache.s.raw_dim());
        let dx = Array2::zeros(cache.x.raw_dim());
        assert!(matches!(
            backward(&changed, &cache, &ds, &dx, &mut grads),
            Err(Error::StaleCache)
        ));
        backward(&params, &cache, &ds, &dx, &mut grads).unwrap();
    }

    #[test]
    fn far_frame_gradient_vanishes() {
        // Frame 2 points away from the slot; its gradient shrinks as its
        // cosine approaches -1.
        let slot = array![1.0, 0.0];
        let mut last = f64::INFINITY;
        for angle in [2.0f64, 2.5, 3.0, 3.14] {
            let frames = array![[1.0, 0.1], [0.9, -0.2], [angle.cos(), angle.sin()]];
            let (_, g) = supervised_terms(
                slot.view(),
                &[true, false, false],
                frames.view(),
                0.03,
                true,
            )
            .unwrap();
            let (_, dx) = g.unwrap();
            let n = dx.row(2).dot(&dx.row(2)).sqrt();
            assert!(n < last);
            last = n;
        }
        assert!(last < 1e-20);
    }
}
