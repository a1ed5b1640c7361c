//! The `bdpo` command-line tool.
//!
//! Pipeline: `gen-data → pretrain → analyze → split → train (per half) → eval`,
//! plus `gradcheck`. Every subcommand writes a JSON manifest into `--out-dir`
//! naming its inputs (with SHA-256 digests), its seed and the tool version.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bdpo_core::dataset::{
    check_unique_ids, generate_synthetic, median_gap_split, AnnotatedDataset,
};
use bdpo_core::gradcheck::{self, GradcheckConfig, GradcheckReport};
use bdpo_core::train::{evaluate, pretrain, train, PretrainConfig};
use bdpo_core::{LossVariant, Model, ModelConfig, Optimizer, SafetyLabel, TrainConfig, Vocabulary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::annotate::annotate_timed;
use crate::error::{LabError, Result};
use crate::jsonl::{
    load_annotated, load_jsonl, read_records, save_jsonl, write_records, JsonRecord,
};
use crate::params_io::{load_model, save_model, LoadedModel, ModelFile};
use crate::report::{summary_json, write_metrics, write_scatter};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Model dimensions used by `gen-data`.
pub const DEFAULT_VOCAB_SIZE: usize = 20;
pub const DEFAULT_EMBED_DIM: usize = 8;
pub const DEFAULT_HIDDEN_DIM: usize = 16;
pub const DEFAULT_CONTEXT_WINDOW: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "bdpo", version, about = "Balanced DPO desk lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic preference corpus and an initial model
    GenData(GenDataArgs),
    /// Fit a reference model to a corpus by maximum likelihood
    Pretrain(PretrainArgs),
    /// Annotate a corpus with reference-model mutual information
    Analyze(AnalyzeArgs),
    /// Split an annotated corpus at the per-label median MI gap
    Split(SplitArgs),
    /// Train a policy with one of the preference losses
    Train(TrainArgs),
    /// Preference accuracy and mean reward margin of a policy
    Eval(EvalArgs),
    /// Randomized gradient verification
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_safe: usize,
    #[arg(long, default_value_t = 200)]
    pub n_unsafe: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub init_params: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub ref_params: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Annotated JSONL (output of `analyze`)
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Dpo,
    DpoBw,
    DpoSf,
    Bdpo,
}

impl From<LossArg> for LossVariant {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::Dpo => LossVariant::Dpo,
            LossArg::DpoBw => LossVariant::DpoBw,
            LossArg::DpoSf => LossVariant::DpoSf,
            LossArg::Bdpo => LossVariant::Bdpo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    AdaptiveMoment,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Annotated JSONL (output of `analyze` or `split`)
    #[arg(long)]
    pub dataset: PathBuf,
    /// Starting parameters; also frozen as the reference model
    #[arg(long)]
    pub init_params: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub loss: LossArg,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::AdaptiveMoment)]
    pub optimizer: OptimizerArg,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Policy parameters to evaluate
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub ref_params: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Negative control: perturb the implemented gradients
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Analyze(a) => cmd_analyze(a).map(|_| ()),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => {
            let report = cmd_gradcheck(a)?;
            if report.passed() {
                Ok(())
            } else {
                Err(LabError::Numerical(
                    "gradient check exceeded tolerance".into(),
                ))
            }
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn run_id() -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("{nanos:x}-{}", std::process::id())
}

/// Builds a manifest: subcommand, version, run id, seed, inputs with digests,
/// then any command-specific fields.
fn manifest(
    subcommand: &str,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    extra: Value,
) -> Result<Value> {
    let mut m = Map::new();
    m.insert("tool".into(), "bdpo".into());
    m.insert("tool_version".into(), TOOL_VERSION.into());
    m.insert("subcommand".into(), subcommand.into());
    m.insert("run_id".into(), run_id().into());
    m.insert("seed".into(), seed.map(Value::from).unwrap_or(Value::Null));
    let mut ins = Map::new();
    for (name, path) in inputs {
        ins.insert(
            (*name).into(),
            json!({ "path": path.display().to_string(), "sha256": file_sha256(path)? }),
        );
    }
    m.insert("inputs".into(), Value::Object(ins));
    if let Value::Object(extra) = extra {
        m.extend(extra);
    }
    Ok(Value::Object(m))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| LabError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
}

fn usage_if(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Err(LabError::Usage(msg.into()))
    } else {
        Ok(())
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    let vocab = Vocabulary::synthetic(DEFAULT_VOCAB_SIZE)?;
    let pairs = generate_synthetic(a.seed, a.n_safe, a.n_unsafe, &vocab)?;
    let dataset = a.out_dir.join("dataset.jsonl");
    save_jsonl(&dataset, &pairs, &vocab)?;
    let config = ModelConfig {
        vocab_size: vocab.size(),
        embed_dim: DEFAULT_EMBED_DIM,
        context_window: DEFAULT_CONTEXT_WINDOW,
        hidden_dim: DEFAULT_HIDDEN_DIM,
        seed: a.seed,
    };
    let model = Model::new(config)?;
    let init = a.out_dir.join("init.params");
    save_model(
        &init,
        &ModelFile::new(&config, &vocab),
        &model.init_params(),
    )?;
    let m = manifest(
        "gen-data",
        Some(a.seed),
        &[],
        json!({
            "n_safe": a.n_safe,
            "n_unsafe": a.n_unsafe,
            "model": { "vocab_size": config.vocab_size, "embed_dim": config.embed_dim,
                       "context_window": config.context_window, "hidden_dim": config.hidden_dim },
            "outputs": { "dataset": dataset.display().to_string(), "init_params": init.display().to_string(),
                         "dataset_sha256": file_sha256(&dataset)?, "init_params_sha256": file_sha256(&init)? },
        }),
    )?;
    write_json(&a.out_dir.join("gen-data.manifest.json"), &m)?;
    println!("wrote {} pairs to {}", pairs.len(), dataset.display());
    Ok(())
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    usage_if(a.epochs == 0, "--epochs must be at least 1")?;
    usage_if(a.batch_size == 0, "--batch-size must be at least 1")?;
    usage_if(!(a.lr >= 0.0 && a.lr.is_finite()), "--lr must be >= 0")?;
    ensure_dir(&a.out_dir)?;
    let init = load_model(&a.init_params)?;
    let pairs = load_jsonl(&a.dataset, &init.vocab)?;
    let config = PretrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let start = Instant::now();
    let (params, history) = pretrain(&init.model, &config, &pairs, &init.params)?;
    let seconds = start.elapsed().as_secs_f64();
    let out = a.out_dir.join("ref.params");
    save_model(&out, &init.file, &params)?;
    let m = manifest(
        "pretrain",
        Some(a.seed),
        &[("dataset", &a.dataset), ("init_params", &a.init_params)],
        json!({
            "lr": a.lr, "epochs": a.epochs, "batch_size": a.batch_size,
            "nll_per_epoch": history, "pretrain_seconds": seconds,
            "outputs": { "ref_params": out.display().to_string(), "ref_params_sha256": file_sha256(&out)? },
        }),
    )?;
    write_json(&a.out_dir.join("pretrain.manifest.json"), &m)?;
    println!(
        "token NLL {:.4} -> {:.4}; wrote {}",
        history.first().copied().unwrap_or(0.0),
        history.last().copied().unwrap_or(0.0),
        out.display()
    );
    Ok(())
}

/// Annotated dataset plus the wall-clock annotation cost.
pub struct AnalyzeOutput {
    pub dataset: AnnotatedDataset,
    pub annotation_seconds: f64,
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<AnalyzeOutput> {
    usage_if(
        !(a.alpha >= 0.0 && a.alpha.is_finite()),
        "--alpha must be >= 0",
    )?;
    ensure_dir(&a.out_dir)?;
    let reference = load_model(&a.ref_params)?;
    let pairs = load_jsonl(&a.dataset, &reference.vocab)?;
    let snapshot = reference.params.snapshot();
    let (mis, timing) = annotate_timed(&reference.model, &snapshot, &pairs)?;
    let dataset = AnnotatedDataset::from_annotations(
        pairs.into_iter().zip(mis).collect(),
        snapshot.fingerprint(),
        a.alpha,
    )?;

    let annotated = a.out_dir.join("annotated.jsonl");
    let recs: Vec<JsonRecord> = dataset
        .records()
        .iter()
        .map(|r| JsonRecord::from_annotated(r, &reference.vocab))
        .collect();
    write_records(&annotated, &recs)?;
    let summary = summary_json(dataset.records(), a.alpha);
    write_json(&a.out_dir.join("mi_summary.json"), &summary)?;
    write_scatter(&a.out_dir.join("mi_scatter.csv"), dataset.records())?;

    let m = manifest(
        "analyze",
        None,
        &[("dataset", &a.dataset), ("ref_params", &a.ref_params)],
        json!({
            "alpha": a.alpha,
            "reference_fingerprint": dataset.reference_fingerprint(),
            "annotation_seconds": timing.total_seconds,
            "seconds_per_pair": timing.seconds_per_pair,
            "pairs": timing.pairs,
            "outputs": { "annotated": annotated.display().to_string(), "annotated_sha256": file_sha256(&annotated)? },
        }),
    )?;
    write_json(&a.out_dir.join("analyze.manifest.json"), &m)?;

    for label in [SafetyLabel::Safe, SafetyLabel::Unsafe] {
        let count = summary[format!("{label}_count")].as_u64().unwrap_or(0);
        match summary[format!("{label}_frac_preferred_higher")].as_f64() {
            Some(f) => println!(
                "{label}: {count} pairs, preferred MI higher in {:.1}%",
                100.0 * f
            ),
            None => println!("{label}: 0 pairs"),
        }
    }
    Ok(AnalyzeOutput {
        dataset,
        annotation_seconds: timing.total_seconds,
    })
}

/// `annotation_seconds` recorded by an earlier step next to `dataset`, if any.
fn upstream_annotation_seconds(dataset: &Path) -> Option<f64> {
    let dir = dataset.parent()?;
    ["analyze.manifest.json", "split.manifest.json"]
        .iter()
        .find_map(|name| {
            let text = fs::read_to_string(dir.join(name)).ok()?;
            let v: Value = serde_json::from_str(&text).ok()?;
            v.get("annotation_seconds")?.as_f64()
        })
}

/// Vocabulary made of every symbol used in `records`, for commands that only
/// need token strings to be well formed.
fn vocabulary_of(records: &[(usize, JsonRecord)]) -> Result<Vocabulary> {
    let mut symbols: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (_, r) in records {
        for s in [&r.query, &r.chosen, &r.rejected]
            .into_iter()
            .flat_map(|t| t.split_whitespace())
        {
            if seen.insert(s) {
                symbols.push(s.to_string());
            }
        }
    }
    let mut bos = String::from("<s>");
    while seen.contains(bos.as_str()) {
        bos.push('_');
    }
    symbols.insert(0, bos);
    if symbols.len() < 2 {
        symbols.push("<pad>".into());
    }
    Ok(Vocabulary::new(symbols)?)
}

pub fn cmd_split(a: &SplitArgs) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    let vocab = vocabulary_of(&read_records(&a.dataset)?)?;
    let loaded = load_annotated(&a.dataset, &vocab)?;
    let (items, raws): (Vec<_>, Vec<_>) = loaded
        .into_iter()
        .map(|(p, mi, raw)| ((p, mi), raw))
        .unzip();
    // Only the stored MI values matter here; raw records are written through unchanged.
    let dataset = AnnotatedDataset::from_annotations(
        items,
        file_sha256(&a.dataset)?,
        TrainConfig::DEFAULT_ALPHA,
    )?;
    let split = median_gap_split(&dataset)?;
    let in_balanced: std::collections::HashSet<&str> =
        split.balanced.iter().map(String::as_str).collect();
    let (mut bal, mut imb) = (Vec::new(), Vec::new());
    let mut counts = Map::new();
    for label in [SafetyLabel::Safe, SafetyLabel::Unsafe] {
        counts.insert(format!("balanced_{label}"), 0.into());
        counts.insert(format!("imbalanced_{label}"), 0.into());
    }
    for (rec, raw) in dataset.records().iter().zip(&raws) {
        let half = if in_balanced.contains(rec.pair.pair_id.as_str()) {
            bal.push(raw);
            "balanced"
        } else {
            imb.push(raw);
            "imbalanced"
        };
        let key = format!("{half}_{}", rec.pair.safety_label);
        let c = counts[&key].as_u64().unwrap() + 1;
        counts.insert(key, c.into());
    }
    let bal_path = a.out_dir.join("balanced.jsonl");
    let imb_path = a.out_dir.join("imbalanced.jsonl");
    write_records(&bal_path, bal)?;
    write_records(&imb_path, imb)?;
    let medians: Map<String, Value> = split
        .per_label_medians
        .iter()
        .map(|(l, m)| (l.to_string(), (*m).into()))
        .collect();
    let m = manifest(
        "split",
        None,
        &[("dataset", &a.dataset)],
        json!({
            "per_label_medians": medians,
            "counts": counts,
            "annotation_seconds": upstream_annotation_seconds(&a.dataset),
            "outputs": { "balanced": bal_path.display().to_string(), "imbalanced": imb_path.display().to_string() },
        }),
    )?;
    write_json(&a.out_dir.join("split.manifest.json"), &m)?;
    println!(
        "balanced {} / imbalanced {} pairs",
        split.balanced.len(),
        split.imbalanced.len()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let optimizer = match a.optimizer {
        OptimizerArg::Sgd => Optimizer::Sgd,
        OptimizerArg::AdaptiveMoment => Optimizer::ADAM,
    };
    let config = TrainConfig {
        alpha: a.alpha,
        epochs: a.epochs,
        ..TrainConfig::new(a.loss.into(), a.beta, a.lr, a.batch_size, a.seed, optimizer)
    };
    config
        .validate()
        .map_err(|e| LabError::Usage(e.to_string()))?;
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    ensure_dir(&a.out_dir)?;
    let LoadedModel {
        file,
        model,
        vocab,
        params: init,
    } = load_model(&a.init_params)?;
    let items: Vec<_> = load_annotated(&a.dataset, &vocab)?
        .into_iter()
        .map(|(p, mi, _)| (p, mi))
        .collect();
    let data =
        AnnotatedDataset::from_annotations(items, init.snapshot().fingerprint(), config.alpha)?;

    let start = Instant::now();
    let outcome = train(&model, &config, &data, &init)?;
    let seconds = start.elapsed().as_secs_f64();

    let params_out = a.out_dir.join("final.params");
    save_model(&params_out, &file, &outcome.params)?;
    let metrics_out = a.out_dir.join("metrics.csv");
    write_metrics(&metrics_out, &outcome.metrics)?;
    let last = outcome.metrics.last();
    let m = manifest(
        "train",
        Some(a.seed),
        &[("dataset", &a.dataset), ("init_params", &a.init_params)],
        json!({
            "config": {
                "loss": config.variant.as_str(), "alpha": config.alpha, "beta": config.beta,
                "lr": config.learning_rate, "epochs": config.epochs, "batch_size": config.batch_size,
                "optimizer": config.optimizer.name(),
            },
            "dataset_fingerprint": file_sha256(&a.dataset)?,
            "reference_fingerprint": data.reference_fingerprint(),
            "pairs": data.len(),
            "steps": outcome.metrics.len(),
            "final_mean_reward_margin": last.map(|r| r.mean_reward_margin),
            "training_seconds": seconds,
            "annotation_seconds": upstream_annotation_seconds(&a.dataset),
            "outputs": {
                "params": params_out.display().to_string(), "params_sha256": file_sha256(&params_out)?,
                "metrics": metrics_out.display().to_string(), "metrics_sha256": file_sha256(&metrics_out)?,
            },
        }),
    )?;
    write_json(&a.out_dir.join("train.manifest.json"), &m)?;
    if let Some(r) = last {
        println!(
            "{} steps; final mean loss {:.6}, mean reward margin {:.6}",
            r.step, r.mean_loss, r.mean_reward_margin
        );
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    usage_if(!(a.beta > 0.0 && a.beta.is_finite()), "--beta must be > 0")?;
    ensure_dir(&a.out_dir)?;
    let policy = load_model(&a.params)?;
    let reference = load_model(&a.ref_params)?;
    if policy.file != reference.file {
        return Err(LabError::Data(
            "policy and reference model configs differ".into(),
        ));
    }
    let pairs = load_jsonl(&a.dataset, &policy.vocab)?;
    check_unique_ids(&pairs)?;
    let ev = evaluate(
        &policy.model,
        &policy.params,
        &reference.params,
        &pairs,
        a.beta,
    )?;
    let result =
        json!({ "preference_accuracy": ev.preference_accuracy, "mean_margin": ev.mean_margin });
    write_json(&a.out_dir.join("eval.json"), &result)?;
    let m = manifest(
        "eval",
        None,
        &[
            ("dataset", &a.dataset),
            ("params", &a.params),
            ("ref_params", &a.ref_params),
        ],
        json!({ "beta": a.beta, "result": result }),
    )?;
    write_json(&a.out_dir.join("eval.manifest.json"), &m)?;
    println!("{result}");
    Ok(())
}

fn gradcheck_json(r: &GradcheckReport) -> Value {
    let fd: Map<String, Value> = LossVariant::ALL
        .iter()
        .zip(r.max_fd_error)
        .map(|(v, e)| (v.as_str().to_string(), e.into()))
        .collect();
    json!({
        "trials": r.trials,
        "max_fd_rel_error": fd,
        "max_unfrozen_fd_rel_error": r.max_unfrozen_fd_error,
        "max_inner_analytic_rel_error": r.max_inner_analytic_error,
        "max_bdpo_analytic_rel_error": r.max_bdpo_analytic_error,
        "max_stop_gradient_rel_error": r.max_stop_gradient_error,
        "unfrozen_rel_difference": { "min": r.min_unfrozen_difference, "max": r.max_unfrozen_difference },
        "tolerances": {
            "finite_difference": gradcheck::FD_TOLERANCE,
            "analytic": gradcheck::ANALYTIC_TOLERANCE,
            "stop_gradient": gradcheck::STOP_GRADIENT_TOLERANCE,
            "unfrozen_min_difference": gradcheck::UNFROZEN_MIN_DIFFERENCE,
        },
        "passed": r.passed(),
    })
}

/// Runs the gradient check, writes its report and prints one line per check.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<GradcheckReport> {
    usage_if(a.trials == 0, "--trials must be at least 1")?;
    ensure_dir(&a.out_dir)?;
    let report = gradcheck::run(&GradcheckConfig {
        seed: a.seed,
        trials: a.trials,
        corrupt: a.corrupt_gradient,
    })?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    for (v, e) in LossVariant::ALL.iter().zip(report.max_fd_error) {
        println!(
            "finite-difference {:<8} max rel err {e:.3e} (tol {:.0e}) {}",
            v.as_str(),
            gradcheck::FD_TOLERANCE,
            verdict(e < gradcheck::FD_TOLERANCE)
        );
    }
    println!(
        "finite-difference unfrozen max rel err {:.3e} (tol {:.0e}) {}",
        report.max_unfrozen_fd_error,
        gradcheck::FD_TOLERANCE,
        verdict(report.max_unfrozen_fd_error < gradcheck::FD_TOLERANCE)
    );
    println!(
        "closed-form inner vs reverse mode max rel err {:.3e} (tol {:.0e}) {}",
        report.max_inner_analytic_error,
        gradcheck::ANALYTIC_TOLERANCE,
        verdict(report.max_inner_analytic_error < gradcheck::ANALYTIC_TOLERANCE)
    );
    println!(
        "closed-form bdpo vs reverse mode max rel err {:.3e} (tol {:.0e}) {}",
        report.max_bdpo_analytic_error,
        gradcheck::ANALYTIC_TOLERANCE,
        verdict(report.max_bdpo_analytic_error < gradcheck::ANALYTIC_TOLERANCE)
    );
    println!(
        "stop-gradient: bdpo = factor x inner max rel err {:.3e} (tol {:.0e}); \
         unfrozen differs by up to {:.3e} {}",
        report.max_stop_gradient_error,
        gradcheck::STOP_GRADIENT_TOLERANCE,
        report.max_unfrozen_difference,
        verdict(report.stop_gradient_passed())
    );
    println!("gradcheck {}", verdict(report.passed()));
    let result = gradcheck_json(&report);
    write_json(&a.out_dir.join("gradcheck.json"), &result)?;
    let m = manifest(
        "gradcheck",
        Some(a.seed),
        &[],
        json!({ "trials": a.trials, "corrupt_gradient": a.corrupt_gradient, "passed": report.passed() }),
    )?;
    write_json(&a.out_dir.join("gradcheck.manifest.json"), &m)?;
    Ok(report)
}
