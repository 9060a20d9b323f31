use std::cell::RefCell;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::FoldSpec;
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::model::AlignSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainAlign,
    SelectAlign,
    TrainClassifier,
    SelectClassifier,
    Evaluate,
}

impl Stage {
    /// Stages whose outcome decides which parameters are kept.
    pub fn is_fitting(self) -> bool {
        self != Stage::Evaluate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub stage: Stage,
    pub split: Split,
}

/// A fold's videos, handed out per split and logged per stage.
#[derive(Debug)]
pub struct FoldView<'a> {
    dataset: &'a Dataset,
    fold: &'a FoldSpec,
    log: RefCell<Vec<Access>>,
}

impl<'a> FoldView<'a> {
    pub fn new(dataset: &'a Dataset, fold: &'a FoldSpec) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for id in fold.train.iter().chain(&fold.val).chain(&fold.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!(
                    "fold {}: video {id} appears in more than one split",
                    fold.fold_id
                )));
            }
            dataset.video(id)?;
        }
        if fold.train.is_empty() || fold.val.is_empty() || fold.test.is_empty() {
            return Err(Error::invalid(format!(
                "fold {} has an empty split",
                fold.fold_id
            )));
        }
        Ok(FoldView {
            dataset,
            fold,
            log: RefCell::new(Vec::new()),
        })
    }

    pub fn fold(&self) -> &FoldSpec {
        self.fold
    }

    pub fn samples(&self, split: Split, stage: Stage) -> Result<Vec<AlignSample<'a>>> {
        let access = Access { stage, split };
        {
            let mut log = self.log.borrow_mut();
            if !log.contains(&access) {
                log.push(access);
            }
        }
        let ids = match split {
            Split::Train => &self.fold.train,
            Split::Val => &self.fold.val,
            Split::Test => &self.fold.test,
        };
        ids.iter()
            .map(|id| {
                let (video, frames) = self.dataset.video(id)?;
                let (_, text) = self.dataset.text(video.task)?;
                Ok(AlignSample {
                    video,
                    frames,
                    text,
                })
            })
            .collect()
    }

    /// Distinct (stage, split) pairs in the order they were first requested.
    pub fn accesses(&self) -> Vec<Access> {
        self.log.borrow().clone()
    }
}
