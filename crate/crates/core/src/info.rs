//! Comprehension metric: how much knowing the query reduces the model's
//! per-token uncertainty about a response.
//!
//! Both entropies are teacher-forced on the response's own prefix and averaged
//! over its tokens, in nats:
//!
//! ```text
//! H(y)   = 1/L Σ_t H(P(· | bos, y_<t))
//! H(y|x) = 1/L Σ_t H(P(· | bos, x, y_<t))
//! I(x,y) = H(y) - H(y|x)
//! ```
//!
//! The estimate can be negative; nothing here clamps it.

use alloc::vec::Vec;

use crate::dataset::PreferencePair;
use crate::error::{Error, Result};
use crate::model::{Model, ReferenceSnapshot};
use crate::vocab::TokenSequence;

/// Mutual information of both responses of one pair under the reference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiAnnotation {
    pub mi_preferred: f64,
    pub mi_dispreferred: f64,
    pub gap: f64,
}

impl MiAnnotation {
    pub fn new(mi_preferred: f64, mi_dispreferred: f64) -> Self {
        Self {
            mi_preferred,
            mi_dispreferred,
            gap: (mi_preferred - mi_dispreferred).abs(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average next-token entropy along `y` with only the begin-of-sequence token as
/// prior context.
pub fn prior_entropy(model: &Model, params: &[f64], y: &TokenSequence) -> Result<f64> {
    conditional_entropy(model, params, &TokenSequence::default(), y)
}

/// Average next-token entropy along `y` after the query `x`.
pub fn conditional_entropy(
    model: &Model,
    params: &[f64],
    x: &TokenSequence,
    y: &TokenSequence,
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(mean(&model.step_entropies(params, &x.with_bos(), y)?))
}

pub fn mutual_information(
    model: &Model,
    params: &[f64],
    x: &TokenSequence,
    y: &TokenSequence,
) -> Result<f64> {
    let conditional = conditional_entropy(model, params, x, y)?;
    let prior = prior_entropy(model, params, y)?;
    Ok(prior - conditional)
}

pub fn annotate_pair(
    model: &Model,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
) -> Result<MiAnnotation> {
    let w = mutual_information(model, reference, &pair.query, &pair.preferred)?;
    let l = mutual_information(model, reference, &pair.query, &pair.dispreferred)?;
    Ok(MiAnnotation::new(w, l))
}

/// Annotates every pair against the frozen reference. Output order follows the
/// input; the first failing pair aborts the batch and is reported by index.
pub fn annotate_dataset(
    model: &Model,
    reference: &ReferenceSnapshot,
    pairs: &[PreferencePair],
) -> Result<Vec<MiAnnotation>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| annotate_pair(model, reference, p).map_err(|e| e.at_pair(i)))
        .collect()
}
