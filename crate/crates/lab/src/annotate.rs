use std::time::Instant;

use bdpo_core::info::annotate_pair;
use bdpo_core::{Error, MiAnnotation, Model, PreferencePair, ReferenceSnapshot};
use rayon::prelude::*;
use serde::Serialize;

/// Wall-clock cost of an annotation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnotationTiming {
    pub pairs: usize,
    pub total_seconds: f64,
    pub seconds_per_pair: f64,
}

/// Annotates pairs in parallel against the reference. Output order and values
/// do not depend on the thread count; the lowest failing index is reported.
pub fn annotate_timed(
    model: &Model,
    reference: &ReferenceSnapshot,
    pairs: &[PreferencePair],
) -> Result<(Vec<MiAnnotation>, AnnotationTiming), Error> {
    let start = Instant::now();
    let results: Vec<Result<MiAnnotation, Error>> = pairs
        .par_iter()
        .map(|p| annotate_pair(model, reference, p))
        .collect();
    let mut out = Vec::with_capacity(pairs.len());
    for (i, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| Error::Pair {
            index: i,
            source: Box::new(e),
        })?);
    }
    let total = start.elapsed().as_secs_f64();
    let timing = AnnotationTiming {
        pairs: pairs.len(),
        total_seconds: total,
        seconds_per_pair: if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        },
    };
    Ok((out, timing))
}
