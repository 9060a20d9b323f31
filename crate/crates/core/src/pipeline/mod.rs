//! Cross-validated experiments. Each fold trains the aligner, aligns its
//! validation and test videos, trains one classifier per evaluation arm and
//! scores the arm's detections on the test videos:
//!
//! * `full`: segments come from the aligner, the classifier sees the
//!   predicted step's text feature;
//! * `oracle`: ground-truth segments and steps replace the aligner;
//! * `video_only`: aligner segments, with the text half of the classifier
//!   input zeroed at training and test time.
//!
//! Every read of a fold's videos goes through [`FoldView`], which records
//! which stage touched which split.

mod view;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    detect_mistakes, segment_examples, train_classifier, ClassifierConfig, ClassifierParams,
    TrainedClassifier,
};
use crate::dataset::{make_group_kfold, AnnotatedVideo, CoarseLabel, FoldSpec, Segment, StepRef};
use crate::error::{Error, Result};
use crate::features::{synth_corpus, Dataset, SynthConfig};
use crate::metrics::{
    frame_metrics, map_at_tiou, rasterize, rasterize_annotation, Detection, FoldMetrics,
    FrameMetrics, GtInstance, MetricReport, Overlap, CLASSES, THRESHOLDS,
};
use crate::model::{
    align_video, train_alignment, AlignSample, ModelParams, TrainConfig, TrainedAligner,
};

pub use view::{Access, FoldView, Split, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Full,
    Oracle,
    VideoOnly,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::Oracle, Arm::VideoOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::Oracle => "oracle",
            Arm::VideoOnly => "video_only",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Arm::VideoOnly
    }

    pub fn uses_aligner(self) -> bool {
        self != Arm::Oracle
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Arm::Full),
            "oracle" | "oracle_segments" => Ok(Arm::Oracle),
            "video_only" | "video-only" => Ok(Arm::VideoOnly),
            _ => Err(Error::invalid(format!(
                "unknown arm \"{s}\" (expected full, oracle or video-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus directory; when absent the corpus is generated from `synth`.
    pub corpus: Option<PathBuf>,
    pub synth: SynthConfig,
    pub folds: usize,
    pub split_seed: u64,
    pub model: TrainConfig,
    pub classifier: ClassifierConfig,
    pub arms: Vec<Arm>,
    /// Worker threads for folds; 0 uses every core. Results do not depend on
    /// it, so it is left out of reports.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            synth: SynthConfig::default(),
            folds: 5,
            split_seed: 0,
            model: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            arms: Arm::ALL.to_vec(),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::invalid("experiment config: enable at least one arm"));
        }
        let mut arms = self.arms.clone();
        arms.sort();
        arms.dedup();
        if arms.len() != self.arms.len() {
            return Err(Error::invalid("experiment config: arms are listed twice"));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!(
                "experiment config: folds must be >= 2, got {}",
                self.folds
            )));
        }
        if self.corpus.is_none() {
            self.synth.validate()?;
        }
        self.model.validate()?;
        self.classifier.validate()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.corpus {
            Some(dir) => Dataset::load(dir),
            None => Ok(synth_corpus(&self.synth)?.dataset),
        }
    }
}

/// A segment on a timeline, with the class assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub step: StepRef,
    #[serde(flatten)]
    pub segment: Segment,
    pub label: CoarseLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Ground truth and predictions for one test video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub video_id: String,
    pub num_frames: usize,
    pub ground_truth: Vec<TimelineSegment>,
    pub predicted: Vec<TimelineSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFold {
    pub metrics: FoldMetrics,
    pub classifier_epoch: usize,
    pub classifier_val_map: Option<f64>,
    pub videos: Vec<VideoOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub per_fold: Vec<ArmFold>,
    pub mean: MetricReport,
}

impl ArmReport {
    pub fn new(per_fold: Vec<ArmFold>) -> Self {
        let mean = MetricReport::new(per_fold.iter().map(|f| f.metrics.clone()).collect());
        ArmReport { per_fold, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_id: usize,
    /// `None` when no arm needed the aligner.
    pub align_epoch: Option<usize>,
    pub align_val_f1: Option<f64>,
    pub access: Vec<Access>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: Option<u64>,
    /// `None` when the folds were read from a file.
    pub split: Option<u64>,
    pub model: u64,
    pub classifier: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub folds: Vec<FoldSummary>,
    pub arms: BTreeMap<Arm, ArmReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("report: {e}")))
    }
}

/// Step-tagged segments of one video.
pub type SegmentList = Vec<(StepRef, Segment)>;

pub fn gt_segments(video: &AnnotatedVideo) -> SegmentList {
    video.segments.iter().map(|s| (s.step, s.segment)).collect()
}

/// Scored ground truth of a video: its mistake and correction segments.
pub fn gt_instances(video: &AnnotatedVideo) -> Vec<GtInstance> {
    video
        .segments
        .iter()
        .filter(|s| CLASSES.contains(&s.mistake.coarse()))
        .map(|s| GtInstance {
            video_id: video.video_id.clone(),
            step: s.step,
            segment: s.segment,
            label: s.mistake.coarse(),
        })
        .collect()
}

/// The aligner's segments for each sample.
pub fn predict_segments(
    params: &ModelParams,
    samples: &[AlignSample<'_>],
    drop_pct: f64,
) -> Result<Vec<SegmentList>> {
    samples
        .iter()
        .map(|s| {
            let r = align_video(params, s.frames, s.text, drop_pct)?;
            Ok(r.segments
                .into_iter()
                .map(|(k, seg)| (StepRef::Defined(k), seg))
                .collect())
        })
        .collect()
}

fn segment_frame_metrics(
    samples: &[AlignSample<'_>],
    segments: &[SegmentList],
) -> Result<FrameMetrics> {
    let mut all = Vec::with_capacity(samples.len());
    for (s, segs) in samples.iter().zip(segments) {
        let defined: Vec<(usize, Segment)> = segs
            .iter()
            .filter_map(|(step, seg)| step.index().map(|k| (k, *seg)))
            .collect();
        let pred = rasterize(&defined, s.video.num_frames, Overlap::Overwrite)?;
        all.push(frame_metrics(&pred, &rasterize_annotation(s.video)?)?);
    }
    Ok(FrameMetrics::mean(&all))
}

fn detections(
    params: &ClassifierParams,
    samples: &[AlignSample<'_>],
    segments: &[SegmentList],
    use_text: bool,
) -> Result<Vec<Vec<Detection>>> {
    samples
        .iter()
        .zip(segments)
        .map(|(s, segs)| {
            detect_mistakes(params, &s.video.video_id, segs, s.frames, s.text, use_text)
        })
        .collect()
}

/// Average mAP of `params` on `samples`; 0 when the samples hold no scored
/// ground truth.
fn map_score(
    params: &ClassifierParams,
    samples: &[AlignSample<'_>],
    segments: &[SegmentList],
    use_text: bool,
) -> Result<f64> {
    let dets: Vec<Detection> = detections(params, samples, segments, use_text)?
        .into_iter()
        .flatten()
        .collect();
    let gts: Vec<GtInstance> = samples.iter().flat_map(|s| gt_instances(s.video)).collect();
    match map_at_tiou(&dets, &gts, &THRESHOLDS) {
        Ok(m) => Ok(m.average),
        Err(Error::UndefinedMetric) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Segments an arm feeds to the classifier for `split`.
fn arm_segments<'a>(
    view: &FoldView<'a>,
    arm: Arm,
    split: Split,
    stage: Stage,
    aligner: Option<&ModelParams>,
    drop_pct: f64,
) -> Result<(Vec<AlignSample<'a>>, Vec<SegmentList>)> {
    let samples = view.samples(split, stage)?;
    let segments = if arm.uses_aligner() {
        let params = aligner
            .ok_or_else(|| Error::invalid(format!("the {arm} arm needs a trained aligner")))?;
        predict_segments(params, &samples, drop_pct)?
    } else {
        samples.iter().map(|s| gt_segments(s.video)).collect()
    };
    Ok((samples, segments))
}

pub fn train_fold_aligner(view: &FoldView<'_>, cfg: &TrainConfig) -> Result<TrainedAligner> {
    let train = view.samples(Split::Train, Stage::TrainAlign)?;
    let val = view.samples(Split::Val, Stage::SelectAlign)?;
    train_alignment(&train, &val, cfg)
}

/// Teacher-forced training on the training videos, selecting the epoch with
/// the best validation mAP on the arm's own validation segments.
pub fn train_fold_classifier(
    view: &FoldView<'_>,
    arm: Arm,
    aligner: Option<&ModelParams>,
    drop_pct: f64,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    let mut examples = Vec::new();
    for s in view.samples(Split::Train, Stage::TrainClassifier)? {
        examples.extend(segment_examples(
            s.video,
            s.frames,
            s.text,
            arm.uses_text(),
        )?);
    }
    let (val, val_segments) = arm_segments(
        view,
        arm,
        Split::Val,
        Stage::SelectClassifier,
        aligner,
        drop_pct,
    )?;
    let mut score = |p: &ClassifierParams| map_score(p, &val, &val_segments, arm.uses_text());
    train_classifier(&examples, cfg, Some(&mut score))
}

/// Test-set metrics and timelines of one arm.
pub fn evaluate_fold(
    view: &FoldView<'_>,
    arm: Arm,
    aligner: Option<&ModelParams>,
    drop_pct: f64,
    classifier: &TrainedClassifier,
) -> Result<ArmFold> {
    let (test, segments) =
        arm_segments(view, arm, Split::Test, Stage::Evaluate, aligner, drop_pct)?;
    let frame = segment_frame_metrics(&test, &segments)?;
    let dets = detections(&classifier.params, &test, &segments, arm.uses_text())?;
    let gts: Vec<GtInstance> = test.iter().flat_map(|s| gt_instances(s.video)).collect();
    let flat: Vec<Detection> = dets.iter().flatten().cloned().collect();
    let map = match map_at_tiou(&flat, &gts, &THRESHOLDS) {
        Ok(m) => Some(m),
        Err(Error::UndefinedMetric) => None,
        Err(e) => return Err(e),
    };
    let videos = test
        .iter()
        .zip(&dets)
        .map(|(s, dets)| VideoOutcome {
            video_id: s.video.video_id.clone(),
            num_frames: s.video.num_frames,
            ground_truth: s
                .video
                .segments
                .iter()
                .map(|a| TimelineSegment {
                    step: a.step,
                    segment: a.segment,
                    label: a.mistake.coarse(),
                    confidence: None,
                })
                .collect(),
            predicted: dets
                .iter()
                .map(|d| TimelineSegment {
                    step: d.step,
                    segment: d.segment,
                    label: d.label,
                    confidence: Some(d.confidence),
                })
                .collect(),
        })
        .collect();
    Ok(ArmFold {
        metrics: FoldMetrics {
            fold_id: view.fold().fold_id,
            frame,
            map,
        },
        classifier_epoch: classifier.epoch,
        classifier_val_map: classifier.val_score,
        videos,
    })
}

struct FoldRun {
    summary: FoldSummary,
    arms: Vec<(Arm, ArmFold)>,
}

fn run_fold(dataset: &Dataset, fold: &FoldSpec, cfg: &ExperimentConfig) -> Result<FoldRun> {
    let view = FoldView::new(dataset, fold)?;
    let drop_pct = cfg.model.drop_pct;
    let aligner = if cfg.arms.iter().any(|a| a.uses_aligner()) {
        Some(train_fold_aligner(&view, &cfg.model)?)
    } else {
        None
    };
    let params = aligner.as_ref().map(|a| &a.params);
    let mut arms = Vec::with_capacity(cfg.arms.len());
    for &arm in &cfg.arms {
        let clf = train_fold_classifier(&view, arm, params, drop_pct, &cfg.classifier)?;
        arms.push((arm, evaluate_fold(&view, arm, params, drop_pct, &clf)?));
    }
    Ok(FoldRun {
        summary: FoldSummary {
            fold_id: fold.fold_id,
            align_epoch: aligner.as_ref().map(|a| a.epoch),
            align_val_f1: aligner.as_ref().map(|a| a.val_f1),
            access: view.accesses(),
        },
        arms,
    })
}

/// Runs every fold, in parallel on `cfg.jobs` threads, and collects the
/// results in fold order. The folds are taken as given, so the report
/// records no split seed.
pub fn run_on(
    dataset: &Dataset,
    folds: &[FoldSpec],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let runs: Vec<FoldRun> = pool.install(|| {
        folds
            .par_iter()
            .map(|f| run_fold(dataset, f, cfg).map_err(|e| e.in_fold(f.fold_id)))
            .collect::<Result<_>>()
    })?;
    let mut arms: BTreeMap<Arm, Vec<ArmFold>> = BTreeMap::new();
    let mut summaries = Vec::with_capacity(runs.len());
    for run in runs {
        summaries.push(run.summary);
        for (arm, fold) in run.arms {
            arms.entry(arm).or_default().push(fold);
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        seeds: Seeds {
            synth: cfg.corpus.is_none().then_some(cfg.synth.seed),
            split: None,
            model: cfg.model.seed,
            classifier: cfg.classifier.seed,
        },
        folds: summaries,
        arms: arms
            .into_iter()
            .map(|(a, f)| (a, ArmReport::new(f)))
            .collect(),
    })
}

/// Loads or generates the corpus, splits it and runs every fold.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let folds = make_group_kfold(&dataset.corpus.videos, cfg.folds, cfg.split_seed)?;
    let mut report = run_on(&dataset, &folds, cfg)?;
    report.seeds.split = Some(cfg.split_seed);
    Ok(report)
}
