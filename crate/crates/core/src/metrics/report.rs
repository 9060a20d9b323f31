use serde::{Deserialize, Serialize};

use super::{FrameMetrics, MapReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_id: usize,
    pub frame: FrameMetrics,
    /// `None` when the fold's test set has no scored ground truth.
    pub map: Option<MapReport>,
}

/// Per-fold metrics with their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_frame: FrameMetrics,
    /// Mean mAP per threshold over folds where it is defined.
    pub mean_map_per_threshold: Option<Vec<f64>>,
    pub mean_map: Option<f64>,
}

impl MetricReport {
    pub fn new(folds: Vec<FoldMetrics>) -> Self {
        let frames: Vec<FrameMetrics> = folds.iter().map(|f| f.frame).collect();
        let maps: Vec<&MapReport> = folds.iter().filter_map(|f| f.map.as_ref()).collect();
        let (mean_map_per_threshold, mean_map) = if maps.is_empty() {
            (None, None)
        } else {
            let n = maps.len() as f64;
            let per_t = (0..maps[0].per_threshold.len())
                .map(|t| maps.iter().map(|m| m.per_threshold[t]).sum::<f64>() / n)
                .collect();
            (
                Some(per_t),
                Some(maps.iter().map(|m| m.average).sum::<f64>() / n),
            )
        };
        MetricReport {
            mean_frame: FrameMetrics::mean(&frames),
            folds,
            mean_map_per_threshold,
            mean_map,
        }
    }

    /// One row per fold plus a final `mean` row. Undefined mAP cells are
    /// left empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let thresholds: Vec<f64> = self
            .folds
            .iter()
            .find_map(|f| f.map.as_ref().map(|m| m.thresholds.clone()))
            .unwrap_or_default();
        let mut header = vec![
            "fold".to_string(),
            "precision".into(),
            "recall".into(),
            "f1".into(),
            "mof".into(),
        ];
        header.extend(thresholds.iter().map(|t| format!("map@{t}")));
        header.push("map_avg".into());
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;

        let row = |name: String, frame: &FrameMetrics, per_t: Option<&[f64]>, avg: Option<f64>| {
            let mut r = vec![
                name,
                frame.precision.to_string(),
                frame.recall.to_string(),
                frame.f1.to_string(),
                frame.mof.to_string(),
            ];
            for t in 0..thresholds.len() {
                r.push(per_t.map(|p| p[t].to_string()).unwrap_or_default());
            }
            r.push(avg.map(|a| a.to_string()).unwrap_or_default());
            r
        };
        for f in &self.folds {
            let m = f.map.as_ref();
            w.write_record(row(
                f.fold_id.to_string(),
                &f.frame,
                m.map(|m| m.per_threshold.as_slice()),
                m.map(|m| m.average),
            ))
            .map_err(csv_err)?;
        }
        w.write_record(row(
            "mean".into(),
            &self.mean_frame,
            self.mean_map_per_threshold.as_deref(),
            self.mean_map,
        ))
        .map_err(csv_err)?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv: {e}")))
    }
}
