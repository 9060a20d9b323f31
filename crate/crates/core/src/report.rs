//! Tables and timelines written from an experiment report.
//!
//! `write_report` lays out a directory as
//!
//! ```text
//! summary.csv                 one row per arm (fold means)
//! <arm>/metrics.csv           one row per fold plus the mean
//! <arm>/timelines/<video>.svg ground truth above predictions
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{CoarseLabel, StepRef};
use crate::error::{Error, Result};
use crate::pipeline::{ExperimentReport, TimelineSegment, VideoOutcome};

// Qualitative palette, cycled by step index.
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];
const UNDEFINED_FILL: &str = "#d9d9d9";

const WIDTH: f64 = 960.0;
const LEFT: f64 = 110.0;
const RIGHT: f64 = 20.0;
const ROW_H: f64 = 30.0;
const ROW_GAP: f64 = 14.0;
const TOP: f64 = 34.0;

pub fn step_color(step: StepRef) -> &'static str {
    match step {
        StepRef::Defined(k) => PALETTE[(k.max(1) - 1) % PALETTE.len()],
        StepRef::Undefined => UNDEFINED_FILL,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn label_name(label: CoarseLabel) -> &'static str {
    match label {
        CoarseLabel::Correct => "correct",
        CoarseLabel::Mistake => "mistake",
        CoarseLabel::Correction => "correction",
    }
}

fn row(out: &mut String, name: &str, y: f64, scale: f64, segs: &[TimelineSegment]) {
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" dominant-baseline="middle">{name}</text>"#,
        LEFT - 8.0,
        y + ROW_H / 2.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT:.1}" y="{y:.1}" width="{:.1}" height="{ROW_H:.1}" fill="none" stroke="#999"/>"##,
        WIDTH - LEFT - RIGHT
    );
    for s in segs {
        let x = LEFT + s.segment.start as f64 * scale;
        let w = (s.segment.end - s.segment.start) as f64 * scale;
        let mut tip = format!(
            "step {}, frames {}..{}, {}",
            s.step,
            s.segment.start,
            s.segment.end,
            label_name(s.label)
        );
        if let Some(c) = s.confidence {
            let _ = write!(tip, " ({c:.3})");
        }
        let _ = writeln!(out, "<g><title>{}</title>", escape(&tip));
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{ROW_H:.1}" fill="{}"/>"#,
            step_color(s.step)
        );
        let pattern = match s.label {
            CoarseLabel::Correct => None,
            CoarseLabel::Mistake => Some("hatch"),
            CoarseLabel::Correction => Some("cross"),
        };
        if let Some(p) = pattern {
            let _ = writeln!(
                out,
                r##"<rect x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{ROW_H:.1}" fill="url(#{p})" stroke="#000" stroke-width="1"/>"##
            );
        }
        if w >= 14.0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.1}" text-anchor="middle" dominant-baseline="middle" font-size="11">{}</text>"#,
                x + w / 2.0,
                y + ROW_H / 2.0,
                s.step
            );
        }
        out.push_str("</g>\n");
    }
}

/// Two-row timeline of one video: annotated segments above the segments
/// handed to the classifier, colored by step. Mistakes are hatched and
/// corrections cross-hatched; hovering a segment shows its frames and score.
pub fn timeline_svg(video: &VideoOutcome, title: &str) -> String {
    let height = TOP + 2.0 * ROW_H + ROW_GAP + 40.0;
    let scale = (WIDTH - LEFT - RIGHT) / video.num_frames.max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    out.push_str(concat!(
        "<defs>\n",
        r##"<pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#000" stroke-width="2"/></pattern>"##,
        "\n",
        r##"<pattern id="cross" width="6" height="6" patternUnits="userSpaceOnUse"><path d="M0 0L6 6M6 0L0 6" stroke="#000" stroke-width="1"/></pattern>"##,
        "\n</defs>\n"
    ));
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{LEFT:.1}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    row(&mut out, "ground truth", TOP, scale, &video.ground_truth);
    row(
        &mut out,
        "predicted",
        TOP + ROW_H + ROW_GAP,
        scale,
        &video.predicted,
    );

    let axis = TOP + 2.0 * ROW_H + ROW_GAP + 16.0;
    let _ = writeln!(out, r#"<text x="{LEFT:.1}" y="{axis:.1}">0</text>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{axis:.1}" text-anchor="end">{} frames</text>"#,
        WIDTH - RIGHT,
        video.num_frames
    );
    let legend = axis + 18.0;
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT:.1}" y="{:.1}" width="14" height="12" fill="url(#hatch)" stroke="#000"/><text x="{:.1}" y="{legend:.1}">mistake</text>"##,
        legend - 10.0,
        LEFT + 20.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="14" height="12" fill="url(#cross)" stroke="#000"/><text x="{:.1}" y="{legend:.1}">correction</text>"##,
        LEFT + 90.0,
        legend - 10.0,
        LEFT + 110.0
    );
    out.push_str("</svg>\n");
    out
}

/// One row per arm with the fold means.
pub fn summary_csv(report: &ExperimentReport) -> Result<String> {
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "arm",
        "folds",
        "precision",
        "recall",
        "f1",
        "mof",
        "map_avg",
    ])
    .map_err(csv_err)?;
    for (arm, rep) in &report.arms {
        let m = &rep.mean;
        w.write_record([
            arm.to_string(),
            rep.per_fold.len().to_string(),
            m.mean_frame.precision.to_string(),
            m.mean_frame.recall.to_string(),
            m.mean_frame.f1.to_string(),
            m.mean_frame.mof.to_string(),
            m.mean_map.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv: {e}")))
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the tables and timelines under `dir`, returning the files in the
/// order they were written.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    write(dir.join("summary.csv"), &summary_csv(report)?, &mut written)?;
    for (arm, rep) in &report.arms {
        let arm_dir = dir.join(arm.as_str());
        write(
            arm_dir.join("metrics.csv"),
            &rep.mean.to_csv()?,
            &mut written,
        )?;
        for fold in &rep.per_fold {
            for video in &fold.videos {
                let title = format!("{} | {arm} | fold {}", video.video_id, fold.metrics.fold_id);
                let name = format!("{}.svg", video.video_id.replace(['/', '\\'], "_"));
                write(
                    arm_dir.join("timelines").join(name),
                    &timeline_svg(video, &title),
                    &mut written,
                )?;
            }
        }
    }
    Ok(written)
}
