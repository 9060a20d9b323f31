//! Frame-wise alignment metrics and step-matched mAP for mistake detection.

mod map;
mod report;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedVideo, Segment, StepRef};
use crate::error::{Error, Result};

pub use map::{map_at_tiou, Detection, GtInstance, MapReport, CLASSES, THRESHOLDS};
pub use report::{FoldMetrics, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameLabel {
    Background,
    Step(usize),
}

/// How [`rasterize`] treats frames claimed by two segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// Ground truth: overlap is an error.
    Reject,
    /// Predictions: segments are painted in step order, later steps win.
    Overwrite,
}

pub fn rasterize(
    segments: &[(usize, Segment)],
    num_frames: usize,
    overlap: Overlap,
) -> Result<Vec<FrameLabel>> {
    let mut labels = vec![FrameLabel::Background; num_frames];
    let mut order: Vec<&(usize, Segment)> = segments.iter().collect();
    if overlap == Overlap::Overwrite {
        order.sort_by_key(|(step, seg)| (*step, seg.start));
    }
    for &&(step, seg) in &order {
        if seg.end > num_frames || seg.start >= seg.end {
            return Err(Error::invalid(format!(
                "segment {seg} of step {step} is empty or beyond {num_frames} frames"
            )));
        }
        for (f, label) in labels[seg.start..seg.end].iter_mut().enumerate() {
            if overlap == Overlap::Reject && *label != FrameLabel::Background {
                return Err(Error::invalid(format!(
                    "ground-truth segments overlap at frame {}",
                    seg.start + f
                )));
            }
            *label = FrameLabel::Step(step);
        }
    }
    Ok(labels)
}

/// Ground-truth labeling of an annotated video. Undefined segments count as
/// background; any two segments sharing a frame are rejected.
pub fn rasterize_annotation(video: &AnnotatedVideo) -> Result<Vec<FrameLabel>> {
    let mut covered = vec![false; video.num_frames];
    for seg in &video.segments {
        for f in seg.segment.start..seg.segment.end.min(video.num_frames) {
            if covered[f] {
                return Err(Error::validation(
                    &video.video_id,
                    format!("ground-truth segments overlap at frame {f}"),
                ));
            }
            covered[f] = true;
        }
    }
    let defined: Vec<(usize, Segment)> = video
        .segments
        .iter()
        .filter_map(|s| match s.step {
            StepRef::Defined(k) => Some((k, s.segment)),
            StepRef::Undefined => None,
        })
        .collect();
    rasterize(&defined, video.num_frames, Overlap::Reject)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mof: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall count step frames only; MoF counts every frame,
/// background included.
pub fn frame_metrics(pred: &[FrameLabel], gt: &[FrameLabel]) -> Result<FrameMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "frame labelings differ in length: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let is_step = |l: &FrameLabel| matches!(l, FrameLabel::Step(_));
    let pred_steps = pred.iter().filter(|l| is_step(l)).count();
    let gt_steps = gt.iter().filter(|l| is_step(l)).count();
    let mut hits = 0;
    let mut same = 0;
    for (p, g) in pred.iter().zip(gt) {
        if p == g {
            same += 1;
            if is_step(p) {
                hits += 1;
            }
        }
    }
    let precision = ratio(hits, pred_steps);
    let recall = ratio(hits, gt_steps);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(FrameMetrics {
        precision,
        recall,
        f1,
        mof: ratio(same, pred.len()),
    })
}

impl FrameMetrics {
    /// Field-wise mean; used to average per-video metrics.
    pub fn mean(all: &[FrameMetrics]) -> FrameMetrics {
        if all.is_empty() {
            return FrameMetrics::default();
        }
        let n = all.len() as f64;
        let sum = |f: fn(&FrameMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        FrameMetrics {
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f1: sum(|m| m.f1),
            mof: sum(|m| m.mof),
        }
    }
}
