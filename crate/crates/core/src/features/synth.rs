//! Synthetic procedural videos with planted ground truth.
//!
//! Each task gets `K` step prototypes on the unit sphere (pairwise cosine
//! below 0.5); the step text features are the prototypes themselves. A video
//! is a sequence of background gaps and executed steps. Frames of an executed
//! step are its prototype plus Gaussian noise. Background frames jitter
//! around a per-task direction facing away from the prototypes and stay
//! below cosine 0.2 against every prototype.
//!
//! Mistake-intent videos get order mistakes (skip, swap, split) and execution
//! mistakes:
//!
//! * object: the frames show a different, non-adjacent step's prototype;
//! * accident, how-to: the prototype is pushed along a fixed signature
//!   direction for that kind;
//! * mispick, correction, others: the step is executed correctly and followed
//!   by a short extra segment, annotated as undefined, showing that kind's
//!   signature.
//!
//! Any of these may be followed by a correction segment, drawn the same way.
//! Correct-intent videos are executed cleanly. Annotations describe exactly
//! what was emitted and the generator is deterministic given the seed.

use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{cosine, l2_normalize, Dataset, FeatureMatrix};
use crate::dataset::{
    AnnotatedSegment, AnnotatedVideo, Corpus, ExecKind, Intent, MistakeLabel, ProceduralText,
    Segment, StepRef, TaskDomain,
};
use crate::error::{Error, Result};

const MAX_PROTOTYPE_COS: f64 = 0.5;
const MAX_BACKGROUND_COS: f64 = 0.2;
const BACKGROUND_JITTER: f64 = 0.3;
const BACKGROUND_SPREAD: f64 = 1.0;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of tasks, taken in the canonical task order (1..=5).
    pub tasks: usize,
    pub videos_per_task: usize,
    pub workers: usize,
    pub dim: usize,
    /// Inclusive ranges.
    pub steps_per_task: [usize; 2],
    pub frames_per_step: [usize; 2],
    pub background_gap: [usize; 2],
    pub extra_frames: [usize; 2],
    pub noise_sigma: f64,
    pub p_skip: f64,
    pub p_swap: f64,
    pub p_split: f64,
    pub p_exec_mistake: f64,
    /// Relative frequencies of execution-mistake kinds 1..=6.
    pub exec_kind_weights: [f64; 6],
    /// Chance that an execution mistake is followed by a correction segment.
    pub p_correction: f64,
    /// Length of the signature offset for accident / how-to frames.
    pub mistake_strength: f64,
    /// Scale every noisy frame to unit length.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tasks: 5,
            videos_per_task: 10,
            workers: 4,
            dim: 64,
            steps_per_task: [5, 8],
            frames_per_step: [8, 14],
            background_gap: [1, 2],
            extra_frames: [2, 4],
            noise_sigma: 0.05,
            p_skip: 0.02,
            p_swap: 0.02,
            p_split: 0.1,
            p_exec_mistake: 0.3,
            // Label counts of the real annotations, except that corrections
            // come from `p_correction`, after a mistake.
            exec_kind_weights: [18.0, 24.0, 0.0, 11.0, 21.0, 11.0],
            p_correction: 0.35,
            mistake_strength: 0.8,
            normalize: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("synth config: {msg}")));
        if !(1..=5).contains(&self.tasks) {
            return bad(format!("tasks must be in 1..=5, got {}", self.tasks));
        }
        if self.videos_per_task == 0 || self.workers == 0 || self.dim < 2 {
            return bad("videos_per_task and workers must be positive and dim at least 2".into());
        }
        for (name, r) in [
            ("steps_per_task", self.steps_per_task),
            ("frames_per_step", self.frames_per_step),
            ("background_gap", self.background_gap),
            ("extra_frames", self.extra_frames),
        ] {
            if r[0] > r[1] {
                return bad(format!("{name} range [{}, {}] is empty", r[0], r[1]));
            }
        }
        if self.steps_per_task[0] == 0 || self.frames_per_step[0] == 0 || self.extra_frames[0] == 0
        {
            return bad("steps_per_task, frames_per_step and extra_frames must start at 1".into());
        }
        for (name, p) in [
            ("p_skip", self.p_skip),
            ("p_swap", self.p_swap),
            ("p_split", self.p_split),
            ("p_exec_mistake", self.p_exec_mistake),
            ("p_correction", self.p_correction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {} must be >= 0", self.noise_sigma));
        }
        if self
            .exec_kind_weights
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.exec_kind_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("exec_kind_weights must be non-negative with a positive sum".into());
        }
        if !(self.mistake_strength >= 0.0 && self.mistake_strength.is_finite()) {
            return bad("mistake_strength must be >= 0".into());
        }
        Ok(())
    }
}

/// What the generator injected into one video.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub video_id: String,
    pub skipped: Vec<usize>,
    pub swapped: Vec<(usize, usize)>,
    pub split: Vec<usize>,
    /// `(step, kind)`; for extra-segment kinds the step is the one it follows.
    pub exec: Vec<(usize, ExecKind)>,
    /// Steps whose mistake was followed by a correction segment.
    pub corrections: Vec<usize>,
    pub skip_trials: usize,
    pub swap_trials: usize,
    pub split_trials: usize,
    pub exec_trials: usize,
    pub correction_trials: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    /// One per video, in corpus order.
    pub traces: Vec<VideoTrace>,
}

struct TaskModel {
    prototypes: Vec<Vec<f64>>,
    background: Vec<f64>,
}

struct Signatures {
    accident: Vec<f64>,
    howto: Vec<f64>,
    mispick: Vec<f64>,
    correction: Vec<f64>,
    others: Vec<f64>,
}

impl Signatures {
    fn of(&self, kind: ExecKind) -> &[f64] {
        match kind {
            ExecKind::Accident => &self.accident,
            ExecKind::HowTo => &self.howto,
            ExecKind::Mispick => &self.mispick,
            ExecKind::Correction => &self.correction,
            ExecKind::Others | ExecKind::Object => &self.others,
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        if let Ok(u) = l2_normalize(&gaussian(rng, dim)) {
            return u;
        }
    }
}

fn max_cos(v: &[f64], against: &[Vec<f64>]) -> f64 {
    against
        .iter()
        .map(|p| cosine(v, p).unwrap_or(0.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn in_range(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn task_model(rng: &mut impl Rng, k: usize, dim: usize, task: TaskDomain) -> Result<TaskModel> {
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(k);
    for step in 1..=k {
        let p = (0..MAX_TRIES)
            .map(|_| unit(rng, dim))
            .find(|p| prototypes.is_empty() || max_cos(p, &prototypes) < MAX_PROTOTYPE_COS)
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "could not place prototype {step} of {task} below cosine \
                     {MAX_PROTOTYPE_COS} in {dim} dimensions"
                ))
            })?;
        prototypes.push(p);
    }
    // Pointing away from the prototypes' sum keeps the background dissimilar
    // to every step, not merely below the threshold.
    let away: Vec<f64> = (0..dim)
        .map(|i| -prototypes.iter().map(|p| p[i]).sum::<f64>())
        .collect();
    let away = l2_normalize(&away).unwrap_or_else(|_| unit(rng, dim));
    let background = (0..MAX_TRIES)
        .filter_map(|_| {
            let g = unit(rng, dim);
            let b: Vec<f64> = away
                .iter()
                .zip(&g)
                .map(|(a, g)| a + BACKGROUND_SPREAD * g)
                .collect();
            l2_normalize(&b).ok()
        })
        .find(|b| max_cos(b, &prototypes) < MAX_BACKGROUND_COS)
        .ok_or_else(|| {
            Error::Infeasible(format!("could not place a background direction for {task}"))
        })?;
    Ok(TaskModel {
        prototypes,
        background,
    })
}

struct VideoBuilder<'a> {
    cfg: &'a SynthConfig,
    model: &'a TaskModel,
    frames: Vec<Vec<f64>>,
    segments: Vec<AnnotatedSegment>,
}

impl VideoBuilder<'_> {
    fn noisy(&self, rng: &mut impl Rng, base: &[f64]) -> Vec<f64> {
        if self.cfg.noise_sigma == 0.0 {
            return base.to_vec();
        }
        let v: Vec<f64> = base
            .iter()
            .map(|x| x + self.cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if self.cfg.normalize {
            l2_normalize(&v).unwrap_or(v)
        } else {
            v
        }
    }

    fn background(&mut self, rng: &mut impl Rng, n: usize) -> Result<()> {
        let dim = self.cfg.dim;
        let scale = BACKGROUND_JITTER / (dim as f64).sqrt();
        for _ in 0..n {
            let frame = (0..MAX_TRIES)
                .find_map(|_| {
                    let v: Vec<f64> = self
                        .model
                        .background
                        .iter()
                        .map(|b| b + scale * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let v = l2_normalize(&v).ok()?;
                    (max_cos(&v, &self.model.prototypes) < MAX_BACKGROUND_COS).then_some(v)
                })
                .ok_or_else(|| Error::Infeasible("could not sample a background frame".into()))?;
            self.frames.push(frame);
        }
        Ok(())
    }

    /// A short undefined segment showing a mistake kind's signature, after
    /// step `k`.
    fn extra(&mut self, rng: &mut impl Rng, signature: &[f64], kind: ExecKind, k: usize) {
        let n = in_range(rng, self.cfg.extra_frames);
        self.emit(
            rng,
            signature,
            n,
            StepRef::Undefined,
            MistakeLabel::Exec(kind),
            Some(describe(kind, k)),
        );
    }

    fn emit(
        &mut self,
        rng: &mut impl Rng,
        base: &[f64],
        n: usize,
        step: StepRef,
        mistake: MistakeLabel,
        description: Option<String>,
    ) {
        let start = self.frames.len();
        for _ in 0..n {
            let f = self.noisy(rng, base);
            self.frames.push(f);
        }
        self.segments.push(AnnotatedSegment {
            segment: Segment {
                start,
                end: self.frames.len(),
            },
            step,
            mistake,
            description,
        });
    }
}

/// Index of a step to show instead of `k` (1-based) in an object mistake:
/// non-adjacent when possible.
fn substitute_step(rng: &mut impl Rng, k: usize, num_steps: usize) -> Option<usize> {
    let far: Vec<usize> = (1..=num_steps).filter(|&j| j.abs_diff(k) >= 2).collect();
    let any: Vec<usize> = (1..=num_steps).filter(|&j| j != k).collect();
    let pool = if far.is_empty() { any } else { far };
    (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
}

fn describe(kind: ExecKind, k: usize) -> String {
    match kind {
        ExecKind::Object => format!("used the wrong object in step {k}"),
        ExecKind::Mispick => format!("picked up an unneeded object after step {k}"),
        ExecKind::Correction => format!("corrected an earlier mistake after step {k}"),
        ExecKind::Accident => format!("unintended event during step {k}"),
        ExecKind::HowTo => format!("performed step {k} the wrong way"),
        ExecKind::Others => format!("unrelated action after step {k}"),
    }
}

fn make_video(
    cfg: &SynthConfig,
    model: &TaskModel,
    signatures: &Signatures,
    rng: &mut ChaCha8Rng,
    header: AnnotatedVideo,
) -> Result<(AnnotatedVideo, FeatureMatrix, VideoTrace)> {
    let num_steps = model.prototypes.len();
    let kinds = WeightedIndex::new(cfg.exec_kind_weights)
        .map_err(|e| Error::invalid(format!("exec_kind_weights: {e}")))?;
    let mut trace = VideoTrace {
        video_id: header.video_id.clone(),
        ..Default::default()
    };
    let perturb = header.intent == Intent::MistakeRun;

    let mut order: Vec<usize> = Vec::with_capacity(num_steps);
    for k in 1..=num_steps {
        if perturb {
            trace.skip_trials += 1;
            if rng.random_bool(cfg.p_skip) {
                trace.skipped.push(k);
                continue;
            }
        }
        order.push(k);
    }
    if perturb {
        let mut i = 0;
        while i + 1 < order.len() {
            trace.swap_trials += 1;
            if rng.random_bool(cfg.p_swap) {
                trace.swapped.push((order[i], order[i + 1]));
                order.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
    }

    let mut b = VideoBuilder {
        cfg,
        model,
        frames: Vec::new(),
        segments: Vec::new(),
    };
    let gap = in_range(rng, cfg.background_gap);
    b.background(rng, gap)?;
    for &k in &order {
        let len = in_range(rng, cfg.frames_per_step);
        let mut split = false;
        let mut exec = None;
        if perturb {
            if len >= 2 {
                trace.split_trials += 1;
                split = rng.random_bool(cfg.p_split);
            }
            trace.exec_trials += 1;
            if rng.random_bool(cfg.p_exec_mistake) {
                exec = Some(ExecKind::ALL[kinds.sample(rng)]);
            }
        }
        let proto = &model.prototypes[k - 1];
        let mut label = MistakeLabel::Correct;
        let mut base = proto.clone();
        let mut extra = None;
        match exec {
            Some(ExecKind::Object) => match substitute_step(rng, k, num_steps) {
                Some(j) => {
                    base = model.prototypes[j - 1].clone();
                    label = MistakeLabel::Exec(ExecKind::Object);
                }
                None => {
                    // A one-step task has nothing to confuse the step with.
                    exec = Some(ExecKind::HowTo);
                }
            },
            _ => {}
        }
        match exec {
            Some(kind @ (ExecKind::Accident | ExecKind::HowTo)) => {
                let shifted: Vec<f64> = proto
                    .iter()
                    .zip(signatures.of(kind))
                    .map(|(p, s)| p + cfg.mistake_strength * s)
                    .collect();
                base = l2_normalize(&shifted)?;
                label = MistakeLabel::Exec(kind);
            }
            Some(kind @ (ExecKind::Mispick | ExecKind::Correction | ExecKind::Others)) => {
                extra = Some(kind);
            }
            _ => {}
        }
        if let Some(kind) = exec {
            trace.exec.push((k, kind));
        }
        let description = label
            .is_mistake()
            .then(|| describe(exec.unwrap_or(ExecKind::Others), k));
        if split {
            trace.split.push(k);
            let first = len / 2;
            b.emit(
                rng,
                &base,
                first,
                StepRef::Defined(k),
                label,
                description.clone(),
            );
            let gap = in_range(rng, cfg.background_gap).max(1);
            b.background(rng, gap)?;
            b.emit(
                rng,
                &base,
                len - first,
                StepRef::Defined(k),
                label,
                description,
            );
        } else {
            b.emit(rng, &base, len, StepRef::Defined(k), label, description);
        }
        if let Some(kind) = extra {
            b.extra(rng, signatures.of(kind), kind, k);
        }
        if exec.is_some_and(|kind| kind != ExecKind::Correction) {
            trace.correction_trials += 1;
            if rng.random_bool(cfg.p_correction) {
                trace.corrections.push(k);
                b.extra(
                    rng,
                    signatures.of(ExecKind::Correction),
                    ExecKind::Correction,
                    k,
                );
            }
        }
        let gap = in_range(rng, cfg.background_gap);
        b.background(rng, gap)?;
    }
    if b.frames.is_empty() {
        b.background(rng, 1)?;
    }

    let video = AnnotatedVideo {
        num_frames: b.frames.len(),
        segments: b.segments,
        ..header
    };
    let features = FeatureMatrix::from_rows(&b.frames)?;
    Ok((video, features, trace))
}

/// Generates a corpus, its features and the injected-mistake traces.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut sig_rng = rng_for(cfg.seed, 0);
    let signatures = Signatures {
        accident: unit(&mut sig_rng, cfg.dim),
        howto: unit(&mut sig_rng, cfg.dim),
        mispick: unit(&mut sig_rng, cfg.dim),
        correction: unit(&mut sig_rng, cfg.dim),
        others: unit(&mut sig_rng, cfg.dim),
    };

    let mut texts = Vec::new();
    let mut videos = Vec::new();
    let mut video_features = BTreeMap::new();
    let mut step_features = BTreeMap::new();
    let mut traces = Vec::new();

    for (ti, &task) in TaskDomain::ALL[..cfg.tasks].iter().enumerate() {
        let mut rng = rng_for(cfg.seed, 1 + ti as u64);
        let k = in_range(&mut rng, cfg.steps_per_task);
        let model = task_model(&mut rng, k, cfg.dim, task)?;
        texts.push(ProceduralText::new(
            task,
            (1..=k).map(|i| format!("{task} step {i}")).collect(),
        )?);
        step_features.insert(task, FeatureMatrix::from_rows(&model.prototypes)?);

        for vi in 0..cfg.videos_per_task {
            let pair = vi / 2;
            let header = AnnotatedVideo {
                video_id: format!("{task}_{vi:02}"),
                worker_id: format!("worker{}", pair.min(cfg.workers - 1)),
                task,
                intent: if vi % 2 == 0 {
                    Intent::CorrectRun
                } else {
                    Intent::MistakeRun
                },
                num_frames: 0,
                segments: Vec::new(),
            };
            let stream = 1_000 + (ti * cfg.videos_per_task + vi) as u64;
            let mut vrng = rng_for(cfg.seed, stream);
            let (video, features, trace) = make_video(cfg, &model, &signatures, &mut vrng, header)?;
            video_features.insert(video.video_id.clone(), features);
            videos.push(video);
            traces.push(trace);
        }
    }

    // Same order as the corpus, which sorts by video id.
    traces.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let corpus = Corpus::new(texts, videos)?;
    let dataset = Dataset::new(corpus, video_features, step_features)?;
    Ok(SynthCorpus { dataset, traces })
}
