use std::collections::BTreeMap;
use std::path::Path;

use super::{read_features, write_features, FeatureMatrix};
use crate::dataset::{
    load_corpus, save_corpus, AnnotatedVideo, Corpus, ProceduralText, TaskDomain,
};
use crate::error::{Error, Result};

const FEATURES_DIR: &str = "features";

/// A corpus together with per-video frame features and per-task step features.
///
/// On disk, features live next to the corpus as
/// `DIR/features/<video_id>.fmtx` and `DIR/features/steps_<task>.fmtx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Corpus,
    pub video_features: BTreeMap<String, FeatureMatrix>,
    pub step_features: BTreeMap<TaskDomain, FeatureMatrix>,
}

impl Dataset {
    pub fn new(
        corpus: Corpus,
        video_features: BTreeMap<String, FeatureMatrix>,
        step_features: BTreeMap<TaskDomain, FeatureMatrix>,
    ) -> Result<Self> {
        let ds = Dataset {
            corpus,
            video_features,
            step_features,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut dim = None;
        let mut check_dim = |d: usize, what: &str| -> Result<()> {
            match dim {
                None => {
                    dim = Some(d);
                    Ok(())
                }
                Some(x) if x == d => Ok(()),
                Some(x) => Err(Error::invalid(format!(
                    "{what} has dimension {d}, expected {x}"
                ))),
            }
        };
        for text in &self.corpus.texts {
            let m = self.step_features.get(&text.task).ok_or_else(|| {
                Error::invalid(format!("missing step features for {}", text.task))
            })?;
            if m.rows() != text.num_steps() {
                return Err(Error::invalid(format!(
                    "step features for {} have {} rows but the text has {} steps",
                    text.task,
                    m.rows(),
                    text.num_steps()
                )));
            }
            check_dim(m.dim(), &format!("step features for {}", text.task))?;
        }
        for video in &self.corpus.videos {
            let m = self
                .video_features
                .get(&video.video_id)
                .ok_or_else(|| Error::validation(&video.video_id, "missing frame features"))?;
            if m.rows() != video.num_frames {
                return Err(Error::validation(
                    &video.video_id,
                    format!(
                        "feature rows ({}) differ from num_frames ({})",
                        m.rows(),
                        video.num_frames
                    ),
                ));
            }
            check_dim(m.dim(), &format!("features of {}", video.video_id))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.step_features
            .values()
            .next()
            .map_or(0, FeatureMatrix::dim)
    }

    pub fn video(&self, id: &str) -> Result<(&AnnotatedVideo, &FeatureMatrix)> {
        let video = self
            .corpus
            .video(id)
            .ok_or_else(|| Error::invalid(format!("unknown video {id}")))?;
        Ok((video, &self.video_features[id]))
    }

    pub fn text(&self, task: TaskDomain) -> Result<(&ProceduralText, &FeatureMatrix)> {
        let text = self
            .corpus
            .text(task)
            .ok_or_else(|| Error::invalid(format!("no procedural text for {task}")))?;
        Ok((text, &self.step_features[&task]))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_corpus(dir, &self.corpus)?;
        let fdir = dir.join(FEATURES_DIR);
        for (id, m) in &self.video_features {
            write_features(&fdir.join(format!("{id}.fmtx")), id, m)?;
        }
        for (task, m) in &self.step_features {
            let id = format!("steps_{task}");
            write_features(&fdir.join(format!("{id}.fmtx")), &id, m)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let corpus = load_corpus(dir)?;
        let fdir = dir.join(FEATURES_DIR);
        let mut video_features = BTreeMap::new();
        for video in &corpus.videos {
            let path = fdir.join(format!("{}.fmtx", video.video_id));
            let (side, m) = read_features(&path)?;
            if side.video_id != video.video_id {
                return Err(Error::HeaderMismatch {
                    path,
                    detail: format!("sidecar names {}", side.video_id),
                });
            }
            video_features.insert(video.video_id.clone(), m);
        }
        let mut step_features = BTreeMap::new();
        for text in &corpus.texts {
            let path = fdir.join(format!("steps_{}.fmtx", text.task));
            step_features.insert(text.task, read_features(&path)?.1);
        }
        Dataset::new(corpus, video_features, step_features)
    }
}
