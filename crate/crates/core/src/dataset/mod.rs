//! Annotation data model for procedural-activity videos.
//!
//! A video is annotated with an ordered list of segments. Each segment is
//! aligned to a step of the task's procedural text (or marked undefined) and
//! carries an execution-mistake label. Order mistakes (missing, swapped,
//! split, extra steps) are not labels; they show up in the alignment itself.

mod agreement;
pub(crate) mod io;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use agreement::{agreement_tiou, cohens_kappa, mean_agreement, pair_labels};
pub use io::{
    load_corpus, read_annotation, read_folds, read_text, save_corpus, write_annotation,
    write_folds, write_text,
};
pub use split::make_group_kfold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDomain {
    ElectricalCircuit,
    ColorMixture,
    IonicReaction,
    BuildingBlock,
    Cardboard,
}

impl TaskDomain {
    pub const ALL: [TaskDomain; 5] = [
        TaskDomain::ElectricalCircuit,
        TaskDomain::ColorMixture,
        TaskDomain::IonicReaction,
        TaskDomain::BuildingBlock,
        TaskDomain::Cardboard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskDomain::ElectricalCircuit => "electrical_circuit",
            TaskDomain::ColorMixture => "color_mixture",
            TaskDomain::IonicReaction => "ionic_reaction",
            TaskDomain::BuildingBlock => "building_block",
            TaskDomain::Cardboard => "cardboard",
        }
    }
}

impl fmt::Display for TaskDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskDomain::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }
}

/// The instructions for one task. Step indices are implicit and 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProceduralText {
    pub task: TaskDomain,
    pub steps: Vec<String>,
}

impl ProceduralText {
    pub fn new(task: TaskDomain, steps: Vec<String>) -> Result<Self> {
        let text = ProceduralText { task, steps };
        text.validate()?;
        Ok(text)
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Text of step `index` (1-based).
    pub fn step(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.steps.get(i))
            .map(String::as_str)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::invalid(format!(
                "procedural text for {} has no steps",
                self.task
            )));
        }
        if let Some(i) = self.steps.iter().position(|s| s.trim().is_empty()) {
            return Err(Error::invalid(format!(
                "procedural text for {}: step {} is empty",
                self.task,
                i + 1
            )));
        }
        Ok(())
    }
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("segment empty: [{start}, {end})")));
        }
        Ok(Segment { start, end })
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }

    pub fn intersection(&self, other: &Segment) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.start.max(other.start))
    }

    /// Temporal intersection over union of two intervals.
    pub fn tiou(&self, other: &Segment) -> f64 {
        let inter = self.intersection(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            return 0.0;
        }
        inter as f64 / union as f64
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Step a segment is aligned to. Serialized as the 1-based index or `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepRef {
    Defined(usize),
    Undefined,
}

impl StepRef {
    pub fn index(self) -> Option<usize> {
        match self {
            StepRef::Defined(k) => Some(k),
            StepRef::Undefined => None,
        }
    }
}

impl fmt::Display for StepRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepRef::Defined(k) => write!(f, "{k}"),
            StepRef::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for StepRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepRef::Defined(k) => serializer.serialize_u64(*k as u64),
            StepRef::Undefined => serializer.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for StepRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u64),
            Name(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Index(k) => Ok(StepRef::Defined(k as usize)),
            Raw::Name(s) if s == "undefined" => Ok(StepRef::Undefined),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "step must be an integer or \"undefined\", got \"{s}\""
            ))),
        }
    }
}

/// The six execution-mistake kinds, numbered as in the annotation guideline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecKind {
    /// Wrong object used.
    Object = 1,
    /// Object grasped by mistake and released without use.
    Mispick = 2,
    /// Fixing an earlier mistake.
    Correction = 3,
    /// Unintended event such as a spill.
    Accident = 4,
    /// Right object, wrong manner.
    HowTo = 5,
    Others = 6,
}

impl ExecKind {
    pub const ALL: [ExecKind; 6] = [
        ExecKind::Object,
        ExecKind::Mispick,
        ExecKind::Correction,
        ExecKind::Accident,
        ExecKind::HowTo,
        ExecKind::Others,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        ExecKind::ALL.into_iter().find(|k| k.number() == n)
    }

    pub fn code(self) -> &'static str {
        match self {
            ExecKind::Object => "object",
            ExecKind::Mispick => "mispick",
            ExecKind::Correction => "correction",
            ExecKind::Accident => "accident",
            ExecKind::HowTo => "howto",
            ExecKind::Others => "others",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MistakeLabel {
    Correct,
    Exec(ExecKind),
}

impl MistakeLabel {
    pub fn code(self) -> &'static str {
        match self {
            MistakeLabel::Correct => "correct",
            MistakeLabel::Exec(kind) => kind.code(),
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        if code == "correct" {
            return Some(MistakeLabel::Correct);
        }
        ExecKind::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .map(MistakeLabel::Exec)
    }

    pub fn is_mistake(self) -> bool {
        self != MistakeLabel::Correct
    }

    /// Collapses the fine taxonomy into the three classifier targets:
    /// corrections stay separate, every other execution mistake becomes
    /// `Mistake`.
    pub fn coarse(self) -> CoarseLabel {
        match self {
            MistakeLabel::Correct => CoarseLabel::Correct,
            MistakeLabel::Exec(ExecKind::Correction) => CoarseLabel::Correction,
            MistakeLabel::Exec(_) => CoarseLabel::Mistake,
        }
    }
}

impl Serialize for MistakeLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for MistakeLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        MistakeLabel::from_code(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown mistake code \"{code}\"")))
    }
}

pub fn coarse_label(label: MistakeLabel) -> CoarseLabel {
    label.coarse()
}

/// Three-way classification target. The discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseLabel {
    Correct = 0,
    Mistake = 1,
    Correction = 2,
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 3] = [
        CoarseLabel::Correct,
        CoarseLabel::Mistake,
        CoarseLabel::Correction,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        CoarseLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseLabel::Correct => "correct",
            CoarseLabel::Mistake => "mistake",
            CoarseLabel::Correction => "correction",
        }
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSegment {
    #[serde(flatten)]
    pub segment: Segment,
    pub step: StepRef,
    pub mistake: MistakeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intent {
    #[serde(rename = "correct")]
    CorrectRun,
    #[serde(rename = "mistake")]
    MistakeRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedVideo {
    pub video_id: String,
    pub worker_id: String,
    pub task: TaskDomain,
    pub intent: Intent,
    pub num_frames: usize,
    pub segments: Vec<AnnotatedSegment>,
}

impl AnnotatedVideo {
    /// Checks the rules that do not need the procedural text.
    pub fn validate_structure(&self) -> Result<()> {
        let id = self.video_id.as_str();
        if id.is_empty() {
            return Err(Error::validation("<unnamed>", "video_id is empty"));
        }
        if self.num_frames == 0 {
            return Err(Error::validation(id, "num_frames must be at least 1"));
        }
        let mut prev_start = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let s = seg.segment;
            if s.start >= s.end {
                return Err(Error::validation(
                    id,
                    format!("segment empty: segment {i} is {s}"),
                ));
            }
            if s.end > self.num_frames {
                return Err(Error::validation(
                    id,
                    format!(
                        "segment out of bounds: segment {i} is {s} but the video has {} frames",
                        self.num_frames
                    ),
                ));
            }
            if s.start < prev_start {
                return Err(Error::validation(
                    id,
                    format!("segments not sorted by start at segment {i}"),
                ));
            }
            prev_start = s.start;
            if seg.step == StepRef::Defined(0) {
                return Err(Error::validation(
                    id,
                    format!("unknown step 0 at segment {i}"),
                ));
            }
            match (&seg.description, seg.mistake.is_mistake()) {
                (None, true) => {
                    return Err(Error::validation(
                        id,
                        format!("description missing on mistake segment {i}"),
                    ))
                }
                (Some(_), false) => {
                    return Err(Error::validation(
                        id,
                        format!("description present on correct segment {i}"),
                    ))
                }
                (Some(d), true) if d.trim().is_empty() => {
                    return Err(Error::validation(
                        id,
                        format!("description empty on mistake segment {i}"),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self, text: &ProceduralText) -> Result<()> {
        self.validate_structure()?;
        if text.task != self.task {
            return Err(Error::validation(
                &self.video_id,
                format!(
                    "task mismatch: video is {} but text is {}",
                    self.task, text.task
                ),
            ));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if let StepRef::Defined(k) = seg.step {
                if k > text.num_steps() {
                    return Err(Error::validation(
                        &self.video_id,
                        format!(
                            "unknown step {k} at segment {i}: text has {} steps",
                            text.num_steps()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Segments aligned to step `k`, in temporal order.
    pub fn step_segments(&self, k: usize) -> impl Iterator<Item = &AnnotatedSegment> {
        self.segments
            .iter()
            .filter(move |s| s.step == StepRef::Defined(k))
    }

    /// Distinct defined step indices, ascending.
    pub fn defined_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .segments
            .iter()
            .filter_map(|s| s.step.index())
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// One cross-validation fold, as lists of video ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Validated procedural texts plus annotated videos.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub texts: Vec<ProceduralText>,
    pub videos: Vec<AnnotatedVideo>,
}

impl Corpus {
    /// Builds a corpus and validates every video against its task's text.
    pub fn new(mut texts: Vec<ProceduralText>, mut videos: Vec<AnnotatedVideo>) -> Result<Self> {
        texts.sort_by_key(|t| t.task);
        for pair in texts.windows(2) {
            if pair[0].task == pair[1].task {
                return Err(Error::invalid(format!(
                    "duplicate procedural text for {}",
                    pair[0].task
                )));
            }
        }
        for text in &texts {
            text.validate()?;
        }
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        for pair in videos.windows(2) {
            if pair[0].video_id == pair[1].video_id {
                return Err(Error::validation(&pair[0].video_id, "duplicate video_id"));
            }
        }
        let corpus = Corpus { texts, videos };
        for video in &corpus.videos {
            let text = corpus.text(video.task).ok_or_else(|| {
                Error::validation(
                    &video.video_id,
                    format!("no procedural text for task {}", video.task),
                )
            })?;
            video.validate(text)?;
        }
        Ok(corpus)
    }

    pub fn text(&self, task: TaskDomain) -> Option<&ProceduralText> {
        self.texts.iter().find(|t| t.task == task)
    }

    pub fn video(&self, video_id: &str) -> Option<&AnnotatedVideo> {
        self.videos
            .binary_search_by(|v| v.video_id.as_str().cmp(video_id))
            .ok()
            .map(|i| &self.videos[i])
    }
}
