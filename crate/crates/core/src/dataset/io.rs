//! On-disk corpus layout.
//!
//! ```text
//! DIR/texts/<task>.json             {"task": ..., "steps": ["...", ...]}
//! DIR/annotations/<video_id>.json   one annotated video
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AnnotatedVideo, Corpus, FoldSpec, ProceduralText};
use crate::error::{Error, Result};

pub(crate) const TEXTS_DIR: &str = "texts";
pub(crate) const ANNOTATIONS_DIR: &str = "annotations";

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_text(path: &Path) -> Result<ProceduralText> {
    let text: ProceduralText = read_json(path)?;
    text.validate()?;
    Ok(text)
}

pub fn write_text(path: &Path, text: &ProceduralText) -> Result<()> {
    write_json(path, text)
}

/// Reads one annotation file, checking only the text-independent rules.
pub fn read_annotation(path: &Path) -> Result<AnnotatedVideo> {
    let video: AnnotatedVideo = read_json(path)?;
    video.validate_structure()?;
    Ok(video)
}

pub fn write_annotation(path: &Path, video: &AnnotatedVideo) -> Result<()> {
    write_json(path, video)
}

pub fn read_folds(path: &Path) -> Result<Vec<FoldSpec>> {
    read_json(path)
}

pub fn write_folds(path: &Path, folds: &[FoldSpec]) -> Result<()> {
    write_json(path, folds)
}

/// Loads and validates every text and annotation under `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let texts = json_files(&dir.join(TEXTS_DIR))?
        .iter()
        .map(|p| read_text(p))
        .collect::<Result<Vec<_>>>()?;
    let videos = json_files(&dir.join(ANNOTATIONS_DIR))?
        .iter()
        .map(|p| read_json::<AnnotatedVideo>(p))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(texts, videos)
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for text in &corpus.texts {
        let path = dir.join(TEXTS_DIR).join(format!("{}.json", text.task));
        write_text(&path, text)?;
    }
    for video in &corpus.videos {
        let path = dir
            .join(ANNOTATIONS_DIR)
            .join(format!("{}.json", video.video_id));
        write_annotation(&path, video)?;
    }
    Ok(())
}
