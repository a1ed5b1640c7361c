//! One PASS/FAIL line per acceptance criterion. Tolerances are pinned below.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::fs;
use std::time::{Duration, Instant};

use bdpo_core::dataset::{build_annotated, generate_synthetic, median_gap_split, AnnotatedDataset};
use bdpo_core::gradcheck::random_instance;
use bdpo_core::info::{conditional_entropy, mutual_information, prior_entropy};
use bdpo_core::losses::{balanced_weights, bdpo_loss, dpo_loss, variant_loss};
use bdpo_core::train::{evaluate, pretrain, train, PretrainConfig};
use bdpo_core::{
    LossVariant, MiAnnotation, Model, ModelConfig, Optimizer, PreferencePair, SafetyLabel,
    TokenSequence, TrainConfig, Vocabulary, BOS_ID,
};
use bdpo_lab::cli::{cmd_gradcheck, GradcheckArgs};
use rand::Rng;
use tempfile::tempdir;

const WEIGHT_TOL: f64 = 1e-12;
const REDUCTION_TOL: f64 = 1e-12;
const ENTROPY_TOL: f64 = 1e-10;
const ENTROPY_BOUND_SLACK: f64 = 1e-9;
const DISTINCT_MIN: f64 = 1e-9;

const WEIGHT_TRIPLES: usize = 1000;
const REDUCTION_INSTANCES: usize = 100;
const GRADCHECK_TRIALS: usize = 100;
const ENTROPY_CASES: usize = 500;
const SPLIT_DATASETS: usize = 50;
const REPLICATION_SEEDS: u64 = 5;
const REPLICATION_WINS_NEEDED: usize = 4;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn weight_identities() -> Outcome {
    let start = Instant::now();
    let mut r = oracle::rng(1);
    let mut worst_sum: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let mut in_range = true;
    let mut unit = true;
    for _ in 0..WEIGHT_TRIPLES {
        let (mw, ml, a) = (
            r.gen_range(0.01..5.0),
            r.gen_range(0.01..5.0),
            r.gen_range(0.0..2.5),
        );
        let c = r.gen_range(0.05..20.0);
        let w = balanced_weights(mw, ml, a).unwrap();
        let s = balanced_weights(c * mw, c * ml, a).unwrap();
        worst_sum = worst_sum.max((w.lambda_w + w.lambda_l - 2.0).abs());
        worst_scale = worst_scale
            .max((w.lambda_w - s.lambda_w).abs())
            .max((w.lambda_l - s.lambda_l).abs());
        in_range &= [w.lambda_w, w.lambda_l].iter().all(|&l| l > 0.0 && l < 2.0);
        let z = balanced_weights(mw, ml, 0.0).unwrap();
        unit &= z.lambda_w == 1.0 && z.lambda_l == 1.0;
    }
    let hand = balanced_weights(2.0, 1.0, 1.0).unwrap();
    let hand_ok = (hand.lambda_w - 2.0 / 3.0).abs() <= WEIGHT_TOL
        && (hand.lambda_l - 4.0 / 3.0).abs() <= WEIGHT_TOL;
    let elapsed = start.elapsed();
    outcome(
        worst_sum <= WEIGHT_TOL && worst_scale <= WEIGHT_TOL && in_range && unit && hand_ok && elapsed < Duration::from_secs(1),
        format!(
            "{WEIGHT_TRIPLES} triples, max |sum-2| {worst_sum:.1e}, max scale drift {worst_scale:.1e}, hand value ok {hand_ok}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn small_training_setup(seed: u64) -> (Model, bdpo_core::PolicyParameters, AnnotatedDataset) {
    let vocab = Vocabulary::synthetic(12).unwrap();
    let pairs = generate_synthetic(seed, 20, 20, &vocab).unwrap();
    let model = Model::new(ModelConfig {
        vocab_size: 12,
        embed_dim: 4,
        context_window: 8,
        hidden_dim: 8,
        seed,
    })
    .unwrap();
    let init = model.init_params();
    let data = build_annotated(&model, &pairs, &init.snapshot(), 1.5).unwrap();
    (model, init, data)
}

fn reduction() -> Outcome {
    let start = Instant::now();
    let mut r = oracle::rng(2);
    let mut worst: f64 = 0.0;
    for i in 0..REDUCTION_INSTANCES {
        let (model, policy) = oracle::random_model(&mut r, 8, 8);
        let reference: Vec<f64> = policy.iter().map(|p| p + r.gen_range(-0.3..0.3)).collect();
        let pair = oracle::random_pair(&mut r, model.vocab_size(), 3, &i.to_string());
        let beta = r.gen_range(0.05..2.0);
        let w = balanced_weights(r.gen_range(0.01..3.0), r.gen_range(0.01..3.0), 0.0).unwrap();
        let a = dpo_loss(&model, &policy, &reference, &pair, beta).unwrap();
        let b = bdpo_loss(&model, &policy, &reference, &pair, beta, &w).unwrap();
        worst = worst.max((a - b).abs());
    }
    let (model, init, data) = small_training_setup(3);
    let base = TrainConfig::new(LossVariant::Dpo, 0.1, 0.01, 8, 3, Optimizer::ADAM);
    let dpo = train(&model, &base, &data, &init).unwrap();
    let bdpo = train(
        &model,
        &TrainConfig {
            variant: LossVariant::Bdpo,
            alpha: 0.0,
            ..base
        },
        &data,
        &init,
    )
    .unwrap();
    let bitwise = dpo.metrics == bdpo.metrics && dpo.params.values() == bdpo.params.values();
    let elapsed = start.elapsed();
    outcome(
        worst <= REDUCTION_TOL && bitwise && elapsed < Duration::from_secs(60),
        format!(
            "{REDUCTION_INSTANCES} instances, max |bdpo(alpha=0) - dpo| {worst:.1e}, training series bitwise equal {bitwise}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let dir = tempdir().unwrap();
    let report = cmd_gradcheck(&GradcheckArgs {
        out_dir: dir.path().to_path_buf(),
        seed: 0,
        trials: GRADCHECK_TRIALS,
        corrupt_gradient: false,
    })
    .unwrap();
    let elapsed = start.elapsed();
    let fd = report
        .max_fd_error
        .iter()
        .cloned()
        .fold(report.max_unfrozen_fd_error, f64::max);
    outcome(
        report.passed() && elapsed < Duration::from_secs(120),
        format!(
            "{GRADCHECK_TRIALS} trials, max fd rel err {fd:.1e}, closed form {:.1e}, stop-gradient {:.1e}, unfrozen differs >= {:.1e}, {:.2}s",
            report.max_inner_analytic_error.max(report.max_bdpo_analytic_error),
            report.max_stop_gradient_error,
            report.min_unfrozen_difference,
            elapsed.as_secs_f64()
        ),
    )
}

fn entropy_oracles() -> Outcome {
    let mut r = oracle::rng(4);
    let (mut worst, mut bounds, mut empty_zero) = (0.0f64, true, true);
    for _ in 0..ENTROPY_CASES {
        let (model, params) = oracle::random_model(&mut r, 8, 6);
        let v = model.vocab_size();
        let y = oracle::random_tokens(&mut r, v, 1, 5);
        let x = oracle::random_tokens(&mut r, v, 0, 5 - y.len());
        let cfg = model.config();
        let hp = prior_entropy(&model, &params, &y).unwrap();
        let hc = conditional_entropy(&model, &params, &x, &y).unwrap();
        worst = worst
            .max((hp - oracle::naive_entropy(cfg, &params, &[BOS_ID], y.ids())).abs())
            .max((hc - oracle::naive_entropy(cfg, &params, x.with_bos().ids(), y.ids())).abs());
        let log_v = (v as f64).ln();
        bounds &= [hp, hc]
            .iter()
            .all(|&h| h >= -ENTROPY_BOUND_SLACK && h <= log_v + ENTROPY_BOUND_SLACK);
        empty_zero &=
            mutual_information(&model, &params, &TokenSequence::default(), &y).unwrap() == 0.0;
    }
    outcome(
        worst <= ENTROPY_TOL && bounds && empty_zero,
        format!("{ENTROPY_CASES} cases (V<=8, L<=5), max |H - naive| {worst:.1e}, bounds ok {bounds}, I(empty,y)=0 {empty_zero}"),
    )
}

fn split_correctness() -> Outcome {
    let mut r = oracle::rng(5);
    let (mut matches, mut ratio_ok) = (0, true);
    let stub = |i: usize, label| {
        PreferencePair::new(
            format!("p{i}"),
            TokenSequence::new(vec![1]),
            TokenSequence::new(vec![2]),
            TokenSequence::new(vec![3]),
            label,
        )
        .unwrap()
    };
    for _ in 0..SPLIT_DATASETS {
        let counts = [
            (SafetyLabel::Safe, r.gen_range(2..60)),
            (SafetyLabel::Unsafe, r.gen_range(2..60)),
        ];
        let mut items = Vec::new();
        for (label, n) in counts {
            for _ in 0..n {
                let g: f64 = r.gen_range(0.0..2.0);
                items.push((stub(items.len(), label), MiAnnotation::new(0.1 + g, 0.1)));
            }
        }
        let ds = AnnotatedDataset::from_annotations(items, "ref", 1.5).unwrap();
        let split = median_gap_split(&ds).unwrap();
        let mut oracle_balanced = Vec::new();
        for (label, n) in counts {
            let mut recs: Vec<_> = ds
                .records()
                .iter()
                .filter(|x| x.pair.safety_label == label)
                .collect();
            recs.sort_by(|a, b| a.mi.gap.total_cmp(&b.mi.gap));
            let threshold = recs[(n - 1) / 2].mi.gap;
            oracle_balanced.extend(
                recs.iter()
                    .filter(|x| x.mi.gap <= threshold)
                    .map(|x| x.pair.pair_id.clone()),
            );
            let in_bal = split
                .balanced
                .iter()
                .filter(|id| {
                    ds.records()
                        .iter()
                        .any(|x| &x.pair.pair_id == *id && x.pair.safety_label == label)
                })
                .count();
            ratio_ok &= (2 * in_bal as i64 - n as i64).abs() <= 1;
        }
        let mut got = split.balanced.clone();
        got.sort();
        oracle_balanced.sort();
        let covering = split.balanced.len() + split.imbalanced.len() == ds.len();
        if got == oracle_balanced && covering {
            matches += 1;
        }
    }
    outcome(
        matches == SPLIT_DATASETS && ratio_ok,
        format!("{matches}/{SPLIT_DATASETS} datasets match the sort-and-threshold oracle, per-label halves within 1 record {ratio_ok}"),
    )
}

/// Final mean training reward margin: mean margin over the training half under
/// the final parameters.
fn directional_replication() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..REPLICATION_SEEDS {
        let vocab = Vocabulary::synthetic(20).unwrap();
        let pairs = generate_synthetic(seed, 200, 200, &vocab).unwrap();
        let model = Model::new(ModelConfig {
            vocab_size: 20,
            embed_dim: 8,
            context_window: 8,
            hidden_dim: 16,
            seed,
        })
        .unwrap();
        let (reference, _) = pretrain(
            &model,
            &PretrainConfig {
                seed,
                ..PretrainConfig::default()
            },
            &pairs,
            &model.init_params(),
        )
        .unwrap();
        let data = build_annotated(
            &model,
            &pairs,
            &reference.snapshot(),
            TrainConfig::DEFAULT_ALPHA,
        )
        .unwrap();
        let split = median_gap_split(&data).unwrap();
        let config = TrainConfig::new(LossVariant::Dpo, 0.1, 0.01, 8, seed, Optimizer::ADAM);
        let margin = |ids: &[String]| {
            let half = data.subset(ids);
            let out = train(&model, &config, &half, &reference).unwrap();
            let half_pairs: Vec<_> = half.records().iter().map(|r| r.pair.clone()).collect();
            let ev = evaluate(&model, &out.params, &reference, &half_pairs, config.beta).unwrap();
            (
                ev.mean_margin,
                out.metrics.last().unwrap().mean_reward_margin,
            )
        };
        let (bal, bal_last) = margin(&split.balanced);
        let (imb, imb_last) = margin(&split.imbalanced);
        if imb >= bal {
            wins += 1;
        }
        lines.push(format!("seed {seed}: imbalanced {imb:.4} vs balanced {bal:.4} (last batch {imb_last:.4} vs {bal_last:.4})"));
    }
    let elapsed = start.elapsed();
    for l in &lines {
        println!("    {l}");
    }
    outcome(
        wins >= REPLICATION_WINS_NEEDED && elapsed < Duration::from_secs(600),
        format!(
            "imbalanced margin >= balanced in {wins}/{REPLICATION_SEEDS} seeds, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation_distinctness() -> Outcome {
    let mut r = oracle::rng(6);
    let inst = loop {
        let i = random_instance(&mut r);
        if (i.weights.lambda_w - 1.0).abs() > 0.1 {
            break i;
        }
    };
    let losses: Vec<f64> = LossVariant::ALL
        .iter()
        .map(|&v| {
            variant_loss(
                v,
                &inst.model,
                &inst.policy,
                &inst.reference,
                &inst.pair,
                inst.beta,
                &inst.weights,
            )
            .unwrap()
        })
        .collect();
    let mut min_gap = f64::INFINITY;
    for i in 0..4 {
        for j in i + 1..4 {
            min_gap = min_gap.min((losses[i] - losses[j]).abs());
        }
    }
    let (model, init, data) = small_training_setup(6);
    let mut unit_factor = true;
    for v in [LossVariant::Dpo, LossVariant::DpoBw] {
        let out = train(
            &model,
            &TrainConfig::new(v, 0.1, 0.01, 8, 6, Optimizer::ADAM),
            &data,
            &init,
        )
        .unwrap();
        unit_factor &= out.metrics.iter().all(|m| m.mean_scaling_factor == 1.0);
    }
    outcome(
        min_gap > DISTINCT_MIN && unit_factor,
        format!(
            "lambda_w {:.3}, min pairwise loss gap {min_gap:.2e}, dpo/dpo-bw factor identically 1 {unit_factor}",
            inst.weights.lambda_w
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempdir().unwrap();
    let d = common::pipeline(dir.path(), 11, 20);
    let mut same = true;
    for out in ["a", "b"] {
        same &= common::run_owned(&common::train_args(&d, out, "bdpo"))
            .status
            .success();
    }
    for f in ["final.params", "metrics.csv"] {
        same &= fs::read(d.join("a").join(f)).unwrap() == fs::read(d.join("b").join(f)).unwrap();
    }
    outcome(
        same,
        "two `bdpo train` runs with identical inputs: params and metrics CSV byte-identical",
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("weight identities", weight_identities),
        ("reduction to dpo at alpha = 0", reduction),
        ("gradient correctness", gradient_correctness),
        ("entropy / MI oracles", entropy_oracles),
        ("median-gap split", split_correctness),
        ("directional replication", directional_replication),
        ("ablation distinctness", ablation_distinctness),
        ("training determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!(
            "{} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance failed: {failed:?}");
        std::process::exit(1);
    }
}
