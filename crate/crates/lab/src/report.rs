//! Per-label MI statistics, the scatter table and the training metrics CSV.

use std::path::Path;

use bdpo_core::dataset::{median, AnnotatedRecord};
use bdpo_core::{MetricsRow, SafetyLabel};
use serde::Serialize;

use crate::error::{LabError, Result};

/// Summary of one safety label. Means and medians are `None` for an empty label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub count: usize,
    pub mean_mi_preferred: Option<f64>,
    pub median_mi_preferred: Option<f64>,
    pub mean_mi_dispreferred: Option<f64>,
    pub median_mi_dispreferred: Option<f64>,
    pub mean_gap: Option<f64>,
    /// Fraction of pairs whose preferred response has the larger MI.
    pub frac_preferred_higher: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn label_summary(records: &[AnnotatedRecord], label: SafetyLabel) -> LabelSummary {
    let recs: Vec<_> = records
        .iter()
        .filter(|r| r.pair.safety_label == label)
        .collect();
    if recs.is_empty() {
        return LabelSummary {
            count: 0,
            mean_mi_preferred: None,
            median_mi_preferred: None,
            mean_mi_dispreferred: None,
            median_mi_dispreferred: None,
            mean_gap: None,
            frac_preferred_higher: None,
        };
    }
    let w: Vec<f64> = recs.iter().map(|r| r.mi.mi_preferred).collect();
    let l: Vec<f64> = recs.iter().map(|r| r.mi.mi_dispreferred).collect();
    let g: Vec<f64> = recs.iter().map(|r| r.mi.gap).collect();
    let higher = recs
        .iter()
        .filter(|r| r.mi.mi_preferred > r.mi.mi_dispreferred)
        .count();
    LabelSummary {
        count: recs.len(),
        mean_mi_preferred: Some(mean(&w)),
        median_mi_preferred: Some(median(&w)),
        mean_mi_dispreferred: Some(mean(&l)),
        median_mi_dispreferred: Some(median(&l)),
        mean_gap: Some(mean(&g)),
        frac_preferred_higher: Some(higher as f64 / recs.len() as f64),
    }
}

/// Flat JSON summary: `<label>_<statistic>` keys plus run-level fields.
pub fn summary_json(records: &[AnnotatedRecord], alpha: f64) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    map.insert("total_count".into(), records.len().into());
    map.insert("alpha".into(), alpha.into());
    for label in [SafetyLabel::Safe, SafetyLabel::Unsafe] {
        let s = serde_json::to_value(label_summary(records, label)).expect("plain struct");
        for (k, v) in s.as_object().expect("struct serializes to object") {
            map.insert(format!("{label}_{k}"), v.clone());
        }
    }
    serde_json::Value::Object(map)
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    mi_dispreferred: f64,
    mi_preferred: f64,
    safety_label: &'a str,
}

/// One row per pair with MI of the dispreferred (x axis) and preferred (y axis) response.
pub fn write_scatter(path: &Path, records: &[AnnotatedRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Data(e.to_string()))?;
    if records.is_empty() {
        w.write_record(["mi_dispreferred", "mi_preferred", "safety_label"])
            .map_err(|e| LabError::Data(e.to_string()))?;
    }
    for r in records {
        w.serialize(ScatterRow {
            mi_dispreferred: r.mi.mi_dispreferred,
            mi_preferred: r.mi.mi_preferred,
            safety_label: r.pair.safety_label.as_str(),
        })
        .map_err(|e| LabError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub const METRICS_HEADER: [&str; 6] = [
    "step",
    "mean_loss",
    "mean_reward_margin",
    "mean_lambda_w",
    "mean_lambda_l",
    "mean_scaling_factor",
];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Data(e.to_string()))?;
    let err = |e: csv::Error| LabError::Data(e.to_string());
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mean_loss.to_string(),
            r.mean_reward_margin.to_string(),
            r.mean_lambda_w.to_string(),
            r.mean_lambda_l.to_string(),
            r.mean_scaling_factor.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Data(e.to_string()))?;
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| LabError::Data(format!("{}: bad number {s:?}", path.display())))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| LabError::Data(e.to_string()))?;
        out.push(MetricsRow {
            step: rec[0]
                .parse()
                .map_err(|_| LabError::Data(format!("{}: bad step", path.display())))?,
            mean_loss: parse(&rec[1])?,
            mean_reward_margin: parse(&rec[2])?,
            mean_lambda_w: parse(&rec[3])?,
            mean_lambda_l: parse(&rec[4])?,
            mean_scaling_factor: parse(&rec[5])?,
        });
    }
    Ok(out)
}
