mod common;

use bdpo_core::dataset::{median_gap_split, AnnotatedDataset};
use bdpo_core::{MiAnnotation, PreferencePair, SafetyLabel, TokenSequence};
use common::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn pair(id: &str, label: SafetyLabel) -> PreferencePair {
    PreferencePair::new(
        id,
        TokenSequence::new(vec![1]),
        TokenSequence::new(vec![2]),
        TokenSequence::new(vec![3]),
        label,
    )
    .unwrap()
}

fn dataset(gaps: &[(SafetyLabel, f64)]) -> AnnotatedDataset {
    let items = gaps
        .iter()
        .enumerate()
        .map(|(i, &(label, g))| {
            (
                pair(&format!("p{i}"), label),
                MiAnnotation::new(0.5 + g, 0.5),
            )
        })
        .collect();
    AnnotatedDataset::from_annotations(items, "ref", 1.5).unwrap()
}

/// Rank-based oracle: within each label, the lower ceil(n/2) gaps by rank are
/// balanced. Valid when gaps within a label are distinct.
fn oracle(gaps: &[(SafetyLabel, f64)]) -> (Vec<String>, Vec<String>) {
    let mut balanced = vec![false; gaps.len()];
    for label in [SafetyLabel::Safe, SafetyLabel::Unsafe] {
        let mut idx: Vec<usize> = (0..gaps.len()).filter(|&i| gaps[i].0 == label).collect();
        idx.sort_by(|&a, &b| gaps[a].1.partial_cmp(&gaps[b].1).unwrap());
        let keep = idx.len().div_ceil(2);
        for &i in &idx[..keep] {
            balanced[i] = true;
        }
    }
    let (mut b, mut im) = (Vec::new(), Vec::new());
    for (i, &is_b) in balanced.iter().enumerate() {
        if is_b { &mut b } else { &mut im }.push(format!("p{i}"));
    }
    (b, im)
}

#[test]
fn matches_sort_and_threshold_oracle() {
    let mut r = rng(99);
    for _ in 0..80 {
        let n_safe = r.gen_range(2..40);
        let n_unsafe = r.gen_range(2..40);
        let mut gaps = Vec::new();
        for (label, n) in [(SafetyLabel::Safe, n_safe), (SafetyLabel::Unsafe, n_unsafe)] {
            for _ in 0..n {
                gaps.push((label, r.gen_range(0.0..3.0)));
            }
        }
        gaps.shuffle(&mut r);
        let ds = dataset(&gaps);
        let split = median_gap_split(&ds).unwrap();
        let (b, im) = oracle(&gaps);
        assert_eq!(split.balanced, b);
        assert_eq!(split.imbalanced, im);

        // Partition and per-label ratio.
        assert_eq!(split.balanced.len() + split.imbalanced.len(), gaps.len());
        for (label, n) in [(SafetyLabel::Safe, n_safe), (SafetyLabel::Unsafe, n_unsafe)] {
            let in_b = ds
                .subset(&split.balanced)
                .records()
                .iter()
                .filter(|r| r.pair.safety_label == label)
                .count();
            let in_i = n - in_b;
            assert!((in_b as i64 - in_i as i64).abs() <= 1);
            let m = split.per_label_medians[&label];
            for rec in ds.subset(&split.balanced).records() {
                if rec.pair.safety_label == label {
                    assert!(rec.mi.gap <= m);
                }
            }
            for rec in ds.subset(&split.imbalanced).records() {
                if rec.pair.safety_label == label {
                    assert!(rec.mi.gap > m);
                }
            }
        }
    }
}

#[test]
fn even_split_and_ties() {
    use SafetyLabel::*;
    let gaps = [
        (Safe, 1.0),
        (Safe, 2.0),
        (Safe, 3.0),
        (Safe, 4.0),
        (Unsafe, 4.0),
        (Unsafe, 3.0),
        (Unsafe, 2.0),
        (Unsafe, 1.0),
    ];
    let split = median_gap_split(&dataset(&gaps)).unwrap();
    assert_eq!(split.balanced, ["p0", "p1", "p6", "p7"]);
    assert_eq!(split.imbalanced, ["p2", "p3", "p4", "p5"]);
    assert_eq!(split.per_label_medians[&Safe], 2.5);

    let ties = [(Safe, 0.7); 5];
    let split = median_gap_split(&dataset(&ties)).unwrap();
    assert_eq!(split.balanced.len(), 5);
    assert!(split.imbalanced.is_empty());

    assert!(median_gap_split(&dataset(&[(Safe, 1.0), (Safe, 2.0), (Unsafe, 1.0)])).is_err());
    let empty = median_gap_split(&dataset(&[])).unwrap();
    assert!(empty.balanced.is_empty() && empty.imbalanced.is_empty());
}
