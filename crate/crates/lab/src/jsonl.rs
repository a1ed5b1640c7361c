//! JSONL preference records.
//!
//! One object per line:
//! `{"id"?, "query", "chosen", "rejected", "is_safe_query", "mi_chosen"?,
//! "mi_rejected"?, "lambda_w"?, "lambda_l"?}`. Token strings are whitespace
//! separated symbols of the model vocabulary. Unknown keys are ignored.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use bdpo_core::dataset::AnnotatedRecord;
use bdpo_core::{MiAnnotation, PreferencePair, SafetyLabel, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query: String,
    pub chosen: String,
    pub rejected: String,
    pub is_safe_query: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_chosen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_rejected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_l: Option<f64>,
}

impl JsonRecord {
    pub fn from_pair(pair: &PreferencePair, vocab: &Vocabulary) -> Self {
        Self {
            id: Some(pair.pair_id.clone()),
            query: vocab.decode(&pair.query),
            chosen: vocab.decode(&pair.preferred),
            rejected: vocab.decode(&pair.dispreferred),
            is_safe_query: pair.safety_label.is_safe(),
            mi_chosen: None,
            mi_rejected: None,
            lambda_w: None,
            lambda_l: None,
        }
    }

    pub fn from_annotated(rec: &AnnotatedRecord, vocab: &Vocabulary) -> Self {
        Self {
            mi_chosen: Some(rec.mi.mi_preferred),
            mi_rejected: Some(rec.mi.mi_dispreferred),
            lambda_w: Some(rec.weights.lambda_w),
            lambda_l: Some(rec.weights.lambda_l),
            ..Self::from_pair(&rec.pair, vocab)
        }
    }

    pub fn annotation(&self) -> Option<MiAnnotation> {
        Some(MiAnnotation::new(self.mi_chosen?, self.mi_rejected?))
    }
}

/// A parsed record together with its source line (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRecord {
    pub line: usize,
    pub raw: JsonRecord,
    pub pair: PreferencePair,
}

/// Reads raw records, keeping line numbers. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<(usize, JsonRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| {
            LabError::Data(format!(
                "{}:{}: malformed record: {e}",
                path.display(),
                i + 1
            ))
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn to_pair(
    path: &Path,
    line: usize,
    rec: &JsonRecord,
    vocab: &Vocabulary,
) -> Result<PreferencePair> {
    let at = |e: bdpo_core::Error| LabError::Data(format!("{}:{line}: {e}", path.display()));
    let id = rec.id.clone().unwrap_or_else(|| line.to_string());
    let pair = PreferencePair::new(
        id,
        vocab.encode(&rec.query).map_err(at)?,
        vocab.encode(&rec.chosen).map_err(at)?,
        vocab.encode(&rec.rejected).map_err(at)?,
        SafetyLabel::from_is_safe(rec.is_safe_query),
    )
    .map_err(at)?;
    Ok(pair)
}

/// Loads and validates a dataset. `id` defaults to the line number.
pub fn load_records(path: &Path, vocab: &Vocabulary) -> Result<Vec<LoadedRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in read_records(path)? {
        let pair = to_pair(path, line, &raw, vocab)?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(LabError::Data(format!(
                "{}:{line}: duplicate pair id {:?}",
                path.display(),
                pair.pair_id
            )));
        }
        out.push(LoadedRecord { line, raw, pair });
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path, vocab: &Vocabulary) -> Result<Vec<PreferencePair>> {
    Ok(load_records(path, vocab)?
        .into_iter()
        .map(|r| r.pair)
        .collect())
}

/// Loads a dataset whose records must carry both MI fields.
pub fn load_annotated(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<(PreferencePair, MiAnnotation, JsonRecord)>> {
    load_records(path, vocab)?
        .into_iter()
        .map(|r| {
            let mi = r.raw.annotation().ok_or_else(|| {
                LabError::Data(format!(
                    "{}:{}: record lacks mi_chosen/mi_rejected; run `bdpo analyze` first",
                    path.display(),
                    r.line
                ))
            })?;
            Ok((r.pair, mi, r.raw))
        })
        .collect()
}

pub fn write_records<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a JsonRecord>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| LabError::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| LabError::io(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn save_jsonl(path: &Path, pairs: &[PreferencePair], vocab: &Vocabulary) -> Result<()> {
    let recs: Vec<JsonRecord> = pairs
        .iter()
        .map(|p| JsonRecord::from_pair(p, vocab))
        .collect();
    write_records(path, &recs)
}
