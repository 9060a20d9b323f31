use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::align_video;
use super::loss::{evaluate_batch, BatchItem};
use super::{ModelParams, TrainConfig};
use crate::dataset::{AnnotatedVideo, Segment};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::{frame_metrics, rasterize, rasterize_annotation, FrameMetrics, Overlap};
use crate::optim::Adam;

/// A video with its features and its task's step features.
#[derive(Debug, Clone, Copy)]
pub struct AlignSample<'a> {
    pub video: &'a AnnotatedVideo,
    pub frames: &'a FeatureMatrix,
    pub text: &'a FeatureMatrix,
}

impl<'a> AlignSample<'a> {
    pub fn batch_item(&self) -> BatchItem<'a> {
        let step_segments: Vec<Vec<Segment>> = (1..=self.text.rows())
            .map(|k| self.video.step_segments(k).map(|s| s.segment).collect())
            .collect();
        BatchItem {
            frames: self.frames,
            text: self.text,
            step_segments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub supervised: f64,
    pub global: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAligner {
    /// Best-validation parameters, rounded to `f32`.
    pub params: ModelParams,
    /// Epoch of the selected parameters; 0 is the initialization.
    pub epoch: usize,
    pub val_f1: f64,
    pub log: Vec<EpochLog>,
}

/// Mean over videos of the frame metrics of `align_video` against the
/// ground truth.
pub fn alignment_metrics(
    params: &ModelParams,
    samples: &[AlignSample<'_>],
    drop_pct: f64,
) -> Result<FrameMetrics> {
    let mut all = Vec::with_capacity(samples.len());
    for s in samples {
        let result = align_video(params, s.frames, s.text, drop_pct)?;
        let pred = rasterize(&result.segments, s.video.num_frames, Overlap::Overwrite)?;
        let gt = rasterize_annotation(s.video)?;
        all.push(frame_metrics(&pred, &gt)?);
    }
    Ok(FrameMetrics::mean(&all))
}

/// Mini-batch Adam on `w_sup * L_sup + w_global * L_global`. After every
/// epoch the validation frame-F1 is measured; the best epoch wins, earlier
/// epochs on ties. Deterministic given `cfg.seed`.
pub fn train_alignment(
    train: &[AlignSample<'_>],
    val: &[AlignSample<'_>],
    cfg: &TrainConfig,
) -> Result<TrainedAligner> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("no training videos"))?;
    let max_steps = train
        .iter()
        .chain(val)
        .map(|s| s.text.rows())
        .max()
        .unwrap_or(0);
    if max_steps > cfg.num_queries {
        return Err(Error::invalid(format!(
            "{} step queries cannot cover a text with {max_steps} steps",
            cfg.num_queries
        )));
    }
    let mut params = ModelParams::init(first.frames.dim(), cfg.d_prime, cfg.num_queries, cfg.seed)?;
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let items: Vec<BatchItem<'_>> = train.iter().map(AlignSample::batch_item).collect();

    let mut best = (
        params.clone(),
        0,
        alignment_metrics(&params, val, cfg.drop_pct)?.f1,
    );
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut sup, mut glob) = (0.0, 0.0, 0.0);
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len() as f64;
        for (bi, chunk) in batches.enumerate() {
            let batch: Vec<BatchItem<'_>> = chunk.iter().map(|&i| items[i].clone()).collect();
            let eval = evaluate_batch(&params, &batch, cfg, None, true).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            let grads = eval.grads.expect("gradients requested");
            if let Some(name) = super::TENSOR_NAMES
                .iter()
                .zip(grads.tensors())
                .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
                .map(|(n, _)| n)
            {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {bi}: non-finite gradient in {name} (loss {})",
                    eval.loss
                )));
            }
            adam.step(&mut params, &grads);
            loss += eval.loss / n_batches;
            sup += eval.terms.supervised / n_batches;
            glob += eval.terms.global / n_batches;
        }
        let val_f1 = alignment_metrics(&params, val, cfg.drop_pct)?.f1;
        log.push(EpochLog {
            epoch,
            train_loss: loss,
            supervised: sup,
            global: glob,
            val_f1,
        });
        if val_f1 > best.2 {
            best = (params.clone(), epoch, val_f1);
        }
    }
    let (mut params, epoch, _) = best;
    params.round_to_f32();
    let val_f1 = alignment_metrics(&params, val, cfg.drop_pct)?.f1;
    Ok(TrainedAligner {
        params,
        epoch,
        val_f1,
        log,
    })
}
