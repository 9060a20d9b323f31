//! Browser demo. The functions here return SVG markup; `www/index.html`
//! wires them to a few inputs. Everything is also callable natively, which
//! is how the tests exercise it.

use std::fmt::Write as _;

use stepalign::align::{
    decode_segments, drop_dtw, percentile_drop_cost, AlignmentPath, CostMatrix,
};
use stepalign::classifier::ClassBalance;
use stepalign::dataset::{CoarseLabel, Intent, StepRef};
use stepalign::features::{synth_corpus, SynthConfig};
use stepalign::metrics::{frame_metrics, rasterize, rasterize_annotation, Overlap};
use stepalign::pipeline::{TimelineSegment, VideoOutcome};
use stepalign::report::timeline_svg;
use wasm_bindgen::prelude::*;

const MAX_CELLS: usize = 400;

/// Rows of numbers separated by spaces or commas, one slot per line.
pub fn parse_matrix(text: &str) -> Result<CostMatrix, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| format!("line {}: \"{t}\" is not a number", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n_items = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || n_items == 0 {
        return Err("enter at least one row of costs".into());
    }
    if let Some(r) = rows.iter().position(|r| r.len() != n_items) {
        return Err(format!(
            "row {} has {} entries, expected {n_items}",
            r + 1,
            rows[r].len()
        ));
    }
    if rows.len() * n_items > MAX_CELLS {
        return Err(format!("at most {MAX_CELLS} cells"));
    }
    CostMatrix::new(rows.len(), n_items, rows.concat()).map_err(|e| e.to_string())
}

fn cell_fill(v: f64, lo: f64, hi: f64) -> String {
    // Low cost dark, high cost light.
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let g = (90.0 + 150.0 * t).round() as u8;
    format!("rgb({g},{g},{g})")
}

fn path_svg(
    cost: &CostMatrix,
    path: &AlignmentPath,
    drop_item: f64,
    drop_slot: Option<f64>,
    pct: f64,
) -> String {
    const CELL: f64 = 44.0;
    const LEFT: f64 = 70.0;
    const TOP: f64 = 56.0;
    let (n, m) = (cost.n_slots(), cost.n_items());
    let width = LEFT + m as f64 * CELL + 20.0;
    let height = TOP + n as f64 * CELL + 30.0;
    let lo = cost.entries().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cost
        .entries()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let mut caption = format!(
        "total cost {:.4}, item drop {drop_item:.4}",
        path.total_cost
    );
    if let Some(d) = drop_slot {
        let _ = write!(caption, ", slot drop {d:.4}");
    }
    let _ = write!(caption, " ({pct}th percentile)");
    let _ = writeln!(s, r#"<text x="{LEFT}" y="18">{caption}</text>"#);
    for j in 0..m {
        let x = LEFT + (j as f64 + 0.5) * CELL;
        let dropped = path.dropped_items.contains(&j);
        let _ = writeln!(
            s,
            r##"<text x="{x}" y="{}" text-anchor="middle" fill="{}">{}</text>"##,
            TOP - 10.0,
            if dropped { "#c0392b" } else { "#000" },
            if dropped {
                format!("{j} ✕")
            } else {
                j.to_string()
            }
        );
    }
    for i in 0..n {
        let y = TOP + i as f64 * CELL;
        let dropped = path.dropped_slots.contains(&i);
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="end" fill="{}">slot {i}{}</text>"##,
            LEFT - 8.0,
            y + CELL / 2.0 + 4.0,
            if dropped { "#c0392b" } else { "#000" },
            if dropped { " ✕" } else { "" }
        );
        for j in 0..m {
            let x = LEFT + j as f64 * CELL;
            let v = cost.get(i, j);
            let matched = path.matches.contains(&(i, j));
            let text = if (v - lo) / (hi - lo).max(1e-12) > 0.55 {
                "#000"
            } else {
                "#fff"
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="{}" stroke-width="{}"/><text x="{}" y="{}" text-anchor="middle" fill="{text}">{v:.2}</text>"##,
                cell_fill(v, lo, hi),
                if matched { "#2e86de" } else { "#fff" },
                if matched { 4 } else { 1 },
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{LEFT}" y="{}">blue: matched (slot, item); ✕: dropped</text>"##,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}

/// Drop-DTW on a typed cost matrix with the drop cost at the `pct`-th
/// percentile of its entries. Slots may drop too when `drop_slots` is set.
pub fn drop_dtw_svg(text: &str, pct: f64, drop_slots: bool) -> Result<String, String> {
    let cost = parse_matrix(text)?;
    let drop = percentile_drop_cost(&cost, pct).map_err(|e| e.to_string())?;
    let slot_drop = drop_slots.then_some(drop);
    let path = drop_dtw(&cost, drop, slot_drop).map_err(|e| e.to_string())?;
    Ok(path_svg(&cost, &path, drop, slot_drop, pct))
}

/// Generates one mistake video and aligns it to its step features directly
/// (negative cosine, percentile drop cost, every step kept). No training is
/// involved, so this shows what the alignment does on clean prototypes.
pub fn synth_alignment_svg(seed: u64, noise: f64, p_exec: f64, pct: f64) -> Result<String, String> {
    let cfg = SynthConfig {
        tasks: 1,
        videos_per_task: 2,
        workers: 1,
        dim: 32,
        noise_sigma: noise,
        p_exec_mistake: p_exec,
        seed,
        ..SynthConfig::default()
    };
    let synth = synth_corpus(&cfg).map_err(|e| e.to_string())?;
    let ds = &synth.dataset;
    let video = ds
        .corpus
        .videos
        .iter()
        .find(|v| v.intent == Intent::MistakeRun)
        .ok_or("the corpus has no mistake video")?;
    let (_, frames) = ds.video(&video.video_id).map_err(|e| e.to_string())?;
    let (_, steps) = ds.text(video.task).map_err(|e| e.to_string())?;
    let cost = CostMatrix::negative_cosine(steps, frames).map_err(|e| e.to_string())?;
    let drop = percentile_drop_cost(&cost, pct).map_err(|e| e.to_string())?;
    let path = drop_dtw(&cost, drop, None).map_err(|e| e.to_string())?;
    let slot_to_step: Vec<usize> = (1..=steps.rows()).collect();
    let segments =
        decode_segments(&path, &slot_to_step, video.num_frames).map_err(|e| e.to_string())?;

    let pred =
        rasterize(&segments, video.num_frames, Overlap::Overwrite).map_err(|e| e.to_string())?;
    let gt = rasterize_annotation(video).map_err(|e| e.to_string())?;
    let m = frame_metrics(&pred, &gt).map_err(|e| e.to_string())?;
    let mistakes = video
        .segments
        .iter()
        .filter(|s| s.mistake.is_mistake())
        .count();
    let outcome = VideoOutcome {
        video_id: video.video_id.clone(),
        num_frames: video.num_frames,
        ground_truth: video
            .segments
            .iter()
            .map(|s| TimelineSegment {
                step: s.step,
                segment: s.segment,
                label: s.mistake.coarse(),
                confidence: None,
            })
            .collect(),
        predicted: segments
            .iter()
            .map(|&(k, segment)| TimelineSegment {
                step: StepRef::Defined(k),
                segment,
                label: CoarseLabel::Correct,
                confidence: None,
            })
            .collect(),
    };
    let title = format!(
        "{}: {} steps, {} annotated mistakes, frame F1 {:.3}",
        video.video_id,
        steps.rows(),
        mistakes,
        m.f1
    );
    Ok(timeline_svg(&outcome, &title))
}

/// Class-balanced weight (1 - beta) / (1 - beta^r) against the class count
/// r on a log axis, with 1/r dashed for reference.
pub fn cb_weight_svg(beta: f64, max_count: usize) -> Result<String, String> {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    if !(2..=1_000_000).contains(&max_count) {
        return Err("the largest count must be between 2 and 1000000".into());
    }
    let weight = |r: usize| -> Result<f64, String> {
        ClassBalance::new(beta, [r, 1, 1])
            .and_then(|b| b.weight(CoarseLabel::Correct))
            .map_err(|e| e.to_string())
    };
    let span = (max_count as f64).ln();
    let x = |r: f64| L + (W - L - R) * r.ln() / span;
    let y = |w: f64| T + (H - T - B) * (1.0 - w);
    let mut counts: Vec<usize> = (0..=200)
        .map(|i| (span * i as f64 / 200.0).exp().round() as usize)
        .collect();
    counts.dedup();
    let mut line = String::new();
    let mut inverse = String::new();
    for &r in &counts {
        let _ = write!(line, "{:.2},{:.2} ", x(r as f64), y(weight(r)?));
        let _ = write!(inverse, "{:.2},{:.2} ", x(r as f64), y(1.0 / r as f64));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="#000"/><line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="#000"/>"##,
        H - B,
        W - R,
        H - B,
        H - B
    );
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{:.1}" text-anchor="end">{w}</text><line x1="{L}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#eee"/>"##,
            L - 6.0,
            y(w) + 4.0,
            y(w),
            W - R,
            y(w)
        );
    }
    let mut tick = 1usize;
    while tick <= max_count {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{tick}</text>"#,
            x(tick as f64),
            H - B + 18.0
        );
        tick *= 10;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">training samples of the class (r)</text>"#,
        L + (W - L - R) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r##"<polyline points="{inverse}" fill="none" stroke="#999" stroke-dasharray="5,4"/>"##
    );
    let _ = writeln!(
        s,
        r##"<polyline points="{line}" fill="none" stroke="#2e86de" stroke-width="2.5"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{L}" y="18">beta = {beta}: weight at r = {max_count} is {:.6}</text>"#,
        weight(max_count)?
    );
    s.push_str("</svg>\n");
    Ok(s)
}

#[wasm_bindgen(js_name = dropDtwSvg)]
pub fn drop_dtw_js(text: &str, pct: f64, drop_slots: bool) -> Result<String, JsError> {
    drop_dtw_svg(text, pct, drop_slots).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = synthAlignmentSvg)]
pub fn synth_alignment_js(seed: u32, noise: f64, p_exec: f64, pct: f64) -> Result<String, JsError> {
    synth_alignment_svg(seed.into(), noise, p_exec, pct).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cbWeightSvg)]
pub fn cb_weight_js(beta: f64, max_count: u32) -> Result<String, JsError> {
    cb_weight_svg(beta, max_count as usize).map_err(|e| JsError::new(&e))
}
