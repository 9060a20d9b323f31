//! Inter-annotator agreement: temporal IoU of step alignments and Cohen's
//! kappa on coarse mistake labels.

use std::collections::BTreeSet;

use super::{AnnotatedSegment, AnnotatedVideo, CoarseLabel, StepRef};
use crate::error::{Error, Result};

fn check_same_video(a: &AnnotatedVideo, b: &AnnotatedVideo) -> Result<()> {
    if a.video_id != b.video_id {
        return Err(Error::invalid(format!(
            "annotations describe different videos: {} vs {}",
            a.video_id, b.video_id
        )));
    }
    if a.num_frames != b.num_frames {
        return Err(Error::invalid(format!(
            "annotations of {} disagree on num_frames: {} vs {}",
            a.video_id, a.num_frames, b.num_frames
        )));
    }
    Ok(())
}

/// Frame coverage of step `k`: the union of all its segments.
fn step_mask(video: &AnnotatedVideo, k: usize) -> Vec<bool> {
    let mut mask = vec![false; video.num_frames];
    for seg in video.step_segments(k) {
        mask[seg.segment.start..seg.segment.end]
            .iter_mut()
            .for_each(|m| *m = true);
    }
    mask
}

/// Per-video alignment agreement.
///
/// Each defined step's extent is the union of its segments (split steps
/// become multi-interval). The tIoU of the two extents is averaged over
/// every defined step that appears in either annotation; a step annotated by
/// only one side scores 0. Undefined segments are ignored. Two annotations
/// with no defined steps at all agree perfectly.
pub fn agreement_tiou(a: &AnnotatedVideo, b: &AnnotatedVideo) -> Result<f64> {
    check_same_video(a, b)?;
    let steps: BTreeSet<usize> = a
        .defined_steps()
        .into_iter()
        .chain(b.defined_steps())
        .collect();
    if steps.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = steps
        .iter()
        .map(|&k| {
            let (ma, mb) = (step_mask(a, k), step_mask(b, k));
            let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
            let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
            inter as f64 / union as f64
        })
        .sum();
    Ok(total / steps.len() as f64)
}

/// Corpus-level agreement: the mean of per-video scores.
pub fn mean_agreement(pairs: &[(AnnotatedVideo, AnnotatedVideo)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no annotation pairs"));
    }
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += agreement_tiou(a, b)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Pairs the segments of two annotations for label agreement.
///
/// Each segment of `a`, in order, is paired with the unused segment of `b`
/// that has the same step reference and the largest tIoU (earliest on ties).
/// Undefined segments additionally need a positive overlap. Unpaired
/// segments are left out.
pub fn pair_labels(
    a: &AnnotatedVideo,
    b: &AnnotatedVideo,
) -> Result<Vec<(CoarseLabel, CoarseLabel)>> {
    check_same_video(a, b)?;
    let mut used = vec![false; b.segments.len()];
    let mut pairs = Vec::new();
    for sa in &a.segments {
        let best = b
            .segments
            .iter()
            .enumerate()
            .filter(|(j, sb)| !used[*j] && sb.step == sa.step)
            .map(|(j, sb)| (j, sa.segment.tiou(&sb.segment)))
            .filter(|(_, t)| sa.step != StepRef::Undefined || *t > 0.0)
            .fold(None::<(usize, f64)>, |best, (j, t)| match best {
                Some((_, bt)) if bt >= t => best,
                _ => Some((j, t)),
            });
        if let Some((j, _)) = best {
            used[j] = true;
            pairs.push((coarse(sa), coarse(&b.segments[j])));
        }
    }
    Ok(pairs)
}

fn coarse(s: &AnnotatedSegment) -> CoarseLabel {
    s.mistake.coarse()
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)` over paired labels.
///
/// Evaluated on integer counts so that rational results are exact up to the
/// final division. Returns 1 when chance agreement is already perfect.
pub fn cohens_kappa(labels_a: &[CoarseLabel], labels_b: &[CoarseLabel]) -> Result<f64> {
    if labels_a.is_empty() {
        return Err(Error::invalid("kappa needs at least one label pair"));
    }
    if labels_a.len() != labels_b.len() {
        return Err(Error::invalid(format!(
            "label lists differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as u128;
    let mut ca = [0u128; CoarseLabel::COUNT];
    let mut cb = [0u128; CoarseLabel::COUNT];
    let mut agree = 0u128;
    for (&x, &y) in labels_a.iter().zip(labels_b) {
        ca[x.index()] += 1;
        cb[y.index()] += 1;
        agree += u128::from(x == y);
    }
    let chance: u128 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    // kappa = (agree/n - chance/n^2) / (1 - chance/n^2)
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    let numer = (agree * n) as f64 - chance as f64;
    Ok(numer / denom as f64)
}
