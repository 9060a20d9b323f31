use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseLabel, Segment, StepRef};
use crate::error::{Error, Result};

pub const THRESHOLDS: [f64; 3] = [0.1, 0.2, 0.3];
/// Scored classes; `Correct` is not a mistake action and is left out.
pub const CLASSES: [CoarseLabel; 2] = [CoarseLabel::Mistake, CoarseLabel::Correction];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub step: StepRef,
    pub segment: Segment,
    pub label: CoarseLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub video_id: String,
    pub step: StepRef,
    pub segment: Segment,
    pub label: CoarseLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    /// mAP at each threshold.
    pub per_threshold: Vec<f64>,
    /// `per_class[c][t]`: AP of `CLASSES[c]` at threshold `t`; `None` when
    /// the class has no ground truth.
    pub per_class: Vec<Vec<Option<f64>>>,
    pub average: f64,
}

fn ranking(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then_with(|| a.step.cmp(&b.step))
        .then_with(|| a.segment.start.cmp(&b.segment.start))
        .then_with(|| a.segment.end.cmp(&b.segment.end))
}

/// True-positive flags of ranked detections: same video and step, tIoU at
/// least `threshold`, each ground-truth instance matched at most once (the
/// unmatched one with the highest tIoU is taken).
fn match_ranked(dets: &[&Detection], gts: &[&GtInstance], threshold: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.video_id != d.video_id || gt.step != d.step {
                    continue;
                }
                let iou = gt.segment.tiou(&d.segment);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// All-point interpolated AP: area under the precision envelope.
fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut hits = 0;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        // `sum` of floats starts at -0.0, which would leak into reports.
        .fold(0.0, |a, b| a + b)
}

/// Step-matched mAP over the mistake and correction classes, averaged over
/// `thresholds`. A detection is a true positive only if it names the same
/// step as an unmatched ground-truth instance of its class with enough tIoU.
pub fn map_at_tiou(
    detections: &[Detection],
    ground_truth: &[GtInstance],
    thresholds: &[f64],
) -> Result<MapReport> {
    if thresholds.is_empty() {
        return Err(Error::invalid("no tIoU thresholds"));
    }
    let mut per_class = Vec::with_capacity(CLASSES.len());
    for class in CLASSES {
        let gts: Vec<&GtInstance> = ground_truth.iter().filter(|g| g.label == class).collect();
        if gts.is_empty() {
            per_class.push(vec![None; thresholds.len()]);
            continue;
        }
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.label == class).collect();
        dets.sort_by(|a, b| ranking(a, b));
        per_class.push(
            thresholds
                .iter()
                .map(|&t| Some(average_precision(&match_ranked(&dets, &gts, t), gts.len())))
                .collect(),
        );
    }
    let per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            let scored: Vec<f64> = per_class.iter().filter_map(|c| c[t]).collect();
            scored.iter().sum::<f64>() / scored.len() as f64
        })
        .collect();
    if per_class.iter().all(|c| c[0].is_none()) {
        return Err(Error::UndefinedMetric);
    }
    let average = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(MapReport {
        thresholds: thresholds.to_vec(),
        per_threshold,
        per_class,
        average,
    })
}
