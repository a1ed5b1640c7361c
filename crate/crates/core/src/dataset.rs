//! Preference pairs, the synthetic corpus, MI-annotated datasets and the
//! median-gap split.

use core::fmt;
use core::str::FromStr;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::info::{annotate_dataset, MiAnnotation};
use crate::losses::{balanced_weights, BalancedWeights};
use crate::model::{Model, ReferenceSnapshot};
use crate::vocab::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

impl SafetyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Safe => "safe",
            Self::Unsafe => "unsafe",
        }
    }

    pub fn from_is_safe(is_safe: bool) -> Self {
        if is_safe {
            Self::Safe
        } else {
            Self::Unsafe
        }
    }

    pub fn is_safe(self) -> bool {
        self == Self::Safe
    }
}

impl fmt::Display for SafetyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SafetyLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(Self::Safe),
            "unsafe" => Ok(Self::Unsafe),
            _ => Err(Error::InvalidArgument(format!(
                "unknown safety label {s:?}"
            ))),
        }
    }
}

/// A query with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub query: TokenSequence,
    pub preferred: TokenSequence,
    pub dispreferred: TokenSequence,
    pub safety_label: SafetyLabel,
    pub pair_id: String,
}

impl PreferencePair {
    pub fn new(
        pair_id: impl Into<String>,
        query: TokenSequence,
        preferred: TokenSequence,
        dispreferred: TokenSequence,
        safety_label: SafetyLabel,
    ) -> Result<Self> {
        let pair = Self {
            query,
            preferred,
            dispreferred,
            safety_label,
            pair_id: pair_id.into(),
        };
        pair.check_shape()?;
        Ok(pair)
    }

    fn check_shape(&self) -> Result<()> {
        if self.query.is_empty() || self.preferred.is_empty() || self.dispreferred.is_empty() {
            return Err(Error::InvalidPair(format!(
                "{}: query and both responses must be nonempty",
                self.pair_id
            )));
        }
        if self.preferred == self.dispreferred {
            return Err(Error::InvalidPair(format!(
                "{}: preferred and dispreferred responses are identical",
                self.pair_id
            )));
        }
        Ok(())
    }

    /// Checks the shape invariants and token ranges for a model.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        self.check_shape()?;
        self.query.validate_body(vocab_size)?;
        self.preferred.validate_body(vocab_size)?;
        self.dispreferred.validate_body(vocab_size)
    }

    /// Length of the longest context the pair needs, including the BOS token.
    pub fn required_window(&self) -> usize {
        1 + self.query.len() + self.preferred.len().max(self.dispreferred.len())
    }
}

/// Rejects duplicate pair ids.
pub fn check_unique_ids(pairs: &[PreferencePair]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, p) in pairs.iter().enumerate() {
        if !seen.insert(p.pair_id.as_str()) {
            return Err(
                Error::InvalidPair(format!("duplicate pair id {:?}", p.pair_id)).at_pair(i),
            );
        }
    }
    Ok(())
}

/// Query and response lengths of the synthetic grammar.
pub const SYNTHETIC_QUERY_LEN: usize = 3;
pub const SYNTHETIC_RESPONSE_LEN: usize = 3;
/// Probability that a response token is replaced by a random response symbol.
const SYNTHETIC_NOISE: f64 = 0.15;

/// Symbol families carved out of a vocabulary for the synthetic grammar.
struct Grammar {
    safe_queries: Vec<u32>,
    unsafe_queries: Vec<u32>,
    safe_filler: u32,
    unsafe_filler: u32,
    echo: Vec<u32>,
}

impl Grammar {
    fn new(vocab: &Vocabulary) -> Result<Self> {
        let v = vocab.size();
        if v < 8 {
            return Err(Error::InvalidVocabulary(format!(
                "synthetic grammar needs at least 8 symbols, got {v}"
            )));
        }
        let n = (v - 1) as u32;
        let q = (n / 4).max(2);
        let safe_queries = (1..1 + q).collect();
        let unsafe_queries = (1 + q..1 + 2 * q).collect();
        let safe_filler = 1 + 2 * q;
        let unsafe_filler = 2 + 2 * q;
        let echo: Vec<u32> = (3 + 2 * q..=n).collect();
        debug_assert!(!echo.is_empty());
        Ok(Self {
            safe_queries,
            unsafe_queries,
            safe_filler,
            unsafe_filler,
            echo,
        })
    }

    fn echo_of(&self, q: u32) -> u32 {
        self.echo[q as usize % self.echo.len()]
    }

    /// `k` echoed query tokens followed by filler, each token noised independently.
    fn response(&self, rng: &mut ChaCha8Rng, query: &[u32], k: usize, filler: u32) -> Vec<u32> {
        (0..SYNTHETIC_RESPONSE_LEN)
            .map(|t| {
                if rng.gen_bool(SYNTHETIC_NOISE) {
                    *self.echo.choose(rng).expect("nonempty")
                } else if t < k {
                    self.echo_of(query[t])
                } else {
                    filler
                }
            })
            .collect()
    }
}

/// Deterministic desk-scale preference corpus.
///
/// Safe and unsafe queries draw from disjoint symbol families. Every response
/// echoes a prefix of its query (through a fixed symbol map) and pads with a
/// label-specific filler symbol. The two responses of a pair echo different
/// numbers of tokens, so how much the query tells the model about each
/// response differs within the pair by a varying amount. For safe queries the
/// preferred response echoes less; for unsafe queries it echoes more.
pub fn generate_synthetic(
    seed: u64,
    n_safe: usize,
    n_unsafe: usize,
    vocab: &Vocabulary,
) -> Result<Vec<PreferencePair>> {
    let g = Grammar::new(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_safe + n_unsafe);
    let labels = core::iter::repeat_n(SafetyLabel::Safe, n_safe)
        .chain(core::iter::repeat_n(SafetyLabel::Unsafe, n_unsafe));
    let mut counts = [0usize; 2];
    for label in labels {
        let (family, filler) = match label {
            SafetyLabel::Safe => (&g.safe_queries, g.safe_filler),
            SafetyLabel::Unsafe => (&g.unsafe_queries, g.unsafe_filler),
        };
        let query: Vec<u32> = (0..SYNTHETIC_QUERY_LEN)
            .map(|_| *family.choose(&mut rng).expect("nonempty"))
            .collect();
        let (a, b) = loop {
            let ka = rng.gen_range(0..=SYNTHETIC_RESPONSE_LEN);
            let kb = rng.gen_range(0..=SYNTHETIC_RESPONSE_LEN);
            if ka == kb {
                continue;
            }
            let ra = g.response(&mut rng, &query, ka, filler);
            let rb = g.response(&mut rng, &query, kb, filler);
            if ra != rb {
                break ((ka, ra), (kb, rb));
            }
        };
        // (less echo, more echo)
        let (low, high) = if a.0 < b.0 { (a.1, b.1) } else { (b.1, a.1) };
        let (preferred, dispreferred) = match label {
            SafetyLabel::Safe => (low, high),
            SafetyLabel::Unsafe => (high, low),
        };
        let idx = &mut counts[label as usize];
        let id = format!("{}-{:05}", label.as_str(), *idx);
        *idx += 1;
        out.push(PreferencePair::new(
            id,
            TokenSequence::new(query),
            TokenSequence::new(preferred),
            TokenSequence::new(dispreferred),
            label,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecord {
    pub pair: PreferencePair,
    pub mi: MiAnnotation,
    pub weights: BalancedWeights,
}

/// Pairs with their reference-model MI and the balanced weights derived at `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    records: Vec<AnnotatedRecord>,
    reference_fingerprint: String,
    alpha: f64,
}

impl AnnotatedDataset {
    /// Builds a dataset from stored MI values, deriving every weight pair at `alpha`.
    pub fn from_annotations(
        items: Vec<(PreferencePair, MiAnnotation)>,
        reference_fingerprint: impl Into<String>,
        alpha: f64,
    ) -> Result<Self> {
        let reference_fingerprint = reference_fingerprint.into();
        if reference_fingerprint.is_empty() {
            return Err(Error::InvalidArgument(
                "reference fingerprint must be nonempty".to_string(),
            ));
        }
        let records = items
            .into_iter()
            .enumerate()
            .map(|(i, (pair, mi))| {
                let weights = balanced_weights(mi.mi_preferred, mi.mi_dispreferred, alpha)
                    .map_err(|e| e.at_pair(i))?;
                Ok(AnnotatedRecord { pair, mi, weights })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            records,
            reference_fingerprint,
            alpha,
        })
    }

    pub fn records(&self) -> &[AnnotatedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reference_fingerprint(&self) -> &str {
        &self.reference_fingerprint
    }

    /// Same records and MI values with weights rederived at another `alpha`.
    pub fn reweighted(&self, alpha: f64) -> Result<Self> {
        Self::from_annotations(
            self.records
                .iter()
                .map(|r| (r.pair.clone(), r.mi))
                .collect(),
            self.reference_fingerprint.clone(),
            alpha,
        )
    }

    /// Records whose pair ids appear in `ids`, in dataset order.
    pub fn subset(&self, ids: &[String]) -> Self {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        Self {
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(r.pair.pair_id.as_str()))
                .cloned()
                .collect(),
            reference_fingerprint: self.reference_fingerprint.clone(),
            alpha: self.alpha,
        }
    }
}

/// Annotates every pair against the reference and attaches balanced weights.
pub fn build_annotated(
    model: &Model,
    pairs: &[PreferencePair],
    reference: &ReferenceSnapshot,
    alpha: f64,
) -> Result<AnnotatedDataset> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    let mis = annotate_dataset(model, reference, pairs)?;
    AnnotatedDataset::from_annotations(
        pairs.iter().cloned().zip(mis).collect(),
        reference.fingerprint(),
        alpha,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub balanced: Vec<String>,
    pub imbalanced: Vec<String>,
    pub per_label_medians: BTreeMap<SafetyLabel, f64>,
}

/// Median of a nonempty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Splits each safety label at its own median MI gap. Gaps at or below the
/// median go to the balanced half, so ties never land in the imbalanced half.
pub fn median_gap_split(dataset: &AnnotatedDataset) -> Result<DatasetSplit> {
    let mut gaps: BTreeMap<SafetyLabel, Vec<f64>> = BTreeMap::new();
    for r in dataset.records() {
        gaps.entry(r.pair.safety_label).or_default().push(r.mi.gap);
    }
    let mut per_label_medians = BTreeMap::new();
    for (label, g) in &gaps {
        if g.len() < 2 {
            return Err(Error::TooFewRecords {
                label: label.as_str(),
                count: g.len(),
            });
        }
        per_label_medians.insert(*label, median(g));
    }
    let (mut balanced, mut imbalanced) = (Vec::new(), Vec::new());
    for r in dataset.records() {
        let m = per_label_medians[&r.pair.safety_label];
        if r.mi.gap <= m {
            balanced.push(r.pair.pair_id.clone());
        } else {
            imbalanced.push(r.pair.pair_id.clone());
        }
    }
    Ok(DatasetSplit {
        balanced,
        imbalanced,
        per_label_medians,
    })
}
