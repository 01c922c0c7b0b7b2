//! Command-line entry point wiring all modules into reproducible runs.
//!
//! Every command resolves its settings as defaults <- config file <- flags,
//! writes the resolved configuration into a fresh run directory (named by
//! timestamp and seed), and drops all artifacts there. The run-directory root
//! comes from `--run-root`, the `CFKIT_RUN_ROOT` environment variable, or
//! `./runs`.

use crate::baseline::{
    fit_tfidf, predict_label, save_classifier, train_classifier, BaselineHyper, ClassifierKind,
};
use crate::corpus::{
    generate_synthetic, length_stats, load_subtask1, load_subtask2, load_texts, make_split,
    save_subtask1, save_subtask2, ColumnMap1, ColumnMap2, SplitSpec, SynthConfig,
};
use crate::decode::{
    decode_spans_with, load_predictions, save_predictions, DecodeConstraints, DecodeStrategy,
    PredictionRecord,
};
use crate::ensemble::{
    load_class_probs, load_span_probs, save_class_probs, save_span_probs, ClassificationPool,
    SpanPool,
};
use crate::error::{Error, Result};
use crate::eval::{binary_prf, subtask2_report};
use crate::neural::{
    grad_check_detailed, load_checkpoint, save_checkpoint, Model, ModelConfig,
};
use crate::optim::{train_loop, ClassifyTask, EvalMetric, LookaheadConfig, SpanTask, TrainConfig};
use crate::tokenizer::{Tokenizer, Vocab};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const RUN_ROOT_ENV: &str = "CFKIT_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "cfkit",
    version,
    about = "Counterfactual statement toolkit: detection, span extraction, ensembles, evaluation"
)]
pub struct Cli {
    /// TOML config file with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    pub run_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deterministic synthetic corpus for both tasks.
    GenData(GenDataArgs),
    /// Token-length histogram of a data file.
    Stats(StatsArgs),
    /// Train a TF-IDF baseline classifier (svm, nb, or mlp).
    TrainBaseline(TrainBaselineArgs),
    /// Train the mini transformer on task 1 (detection) or task 2 (spans).
    TrainNeural(TrainNeuralArgs),
    /// Predict with a trained checkpoint.
    Predict(PredictArgs),
    /// Select an ensemble from per-member probability files.
    EnsembleSearch(EnsembleSearchArgs),
    /// Score predictions against gold data.
    Evaluate(EvaluateArgs),
    /// Validate the backward pass against finite differences.
    GradCheck(GradCheckArgs),
}

fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        "comma" | "," => Ok(b','),
        other if other.chars().count() == 1 && other.is_ascii() => Ok(other.as_bytes()[0]),
        other => Err(Error::config(format!(
            "delimiter '{other}' must be a single ASCII char, 'tab', or 'comma'"
        ))),
    }
}

/// Sections of the structured config file. Unknown sections or keys are
/// rejected by name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, rename = "gen-data")]
    gen_data: GenDataFile,
    #[serde(default)]
    stats: StatsFile,
    #[serde(default, rename = "train-baseline")]
    train_baseline: TrainBaselineFile,
    #[serde(default, rename = "train-neural")]
    train_neural: TrainNeuralFile,
    #[serde(default)]
    predict: PredictFile,
    #[serde(default, rename = "ensemble-search")]
    ensemble_search: EnsembleSearchFile,
    #[serde(default)]
    evaluate: EvaluateFile,
    #[serde(default, rename = "grad-check")]
    grad_check: GradCheckFile,
}

/// Parse the config file; defaults when absent.
pub fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&content).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = format!("{command}-{secs}-seed{seed}");
    let mut dir = root.join(&base);
    let mut suffix = 0;
    while dir.exists() {
        suffix += 1;
        dir = root.join(format!("{base}-{suffix}"));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    let toml = toml::to_string_pretty(resolved)
        .map_err(|e| Error::config(format!("cannot serialize resolved config: {e}")))?;
    std::fs::write(dir.join("config.toml"), toml)?;
    Ok(())
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Dispatch a parsed command line. Returns the run directory (when the
/// command creates one).
pub fn run(cli: Cli) -> Result<Option<PathBuf>> {
    let file = load_config(cli.config.as_deref())?;
    let root = cli
        .run_root
        .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, file.gen_data, &root).map(Some),
        Command::Stats(args) => cmd_stats(args, file.stats, &root).map(Some),
        Command::TrainBaseline(args) => cmd_train_baseline(args, file.train_baseline, &root).map(Some),
        Command::TrainNeural(args) => cmd_train_neural(args, file.train_neural, &root).map(Some),
        Command::Predict(args) => cmd_predict(args, file.predict, &root).map(Some),
        Command::EnsembleSearch(args) => cmd_ensemble_search(args, file.ensemble_search, &root).map(Some),
        Command::Evaluate(args) => cmd_evaluate(args, file.evaluate, &root).map(Some),
        Command::GradCheck(args) => cmd_grad_check(args, file.grad_check).map(|_| None),
    }
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    cf_ratio: Option<f64>,
    #[arg(long)]
    noc_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Also split subtask 1 into train/validation: first N rows become validation.
    #[arg(long)]
    val_n1: Option<usize>,
    /// Also split subtask 2 into train/validation: N random rows become validation.
    #[arg(long)]
    val_n2: Option<usize>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    n: Option<usize>,
    cf_ratio: Option<f64>,
    noc_ratio: Option<f64>,
    seed: Option<u64>,
    vocab_size: Option<usize>,
    val_n1: Option<usize>,
    val_n2: Option<usize>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct GenDataResolved {
    n: usize,
    cf_ratio: f64,
    noc_ratio: f64,
    seed: u64,
    vocab_size: usize,
    val_n1: usize,
    val_n2: usize,
    delimiter: String,
}

fn cmd_gen_data(args: GenDataArgs, file: GenDataFile, root: &Path) -> Result<PathBuf> {
    let defaults = SynthConfig::default();
    let resolved = GenDataResolved {
        n: pick(args.n, file.n, defaults.n_examples),
        cf_ratio: pick(args.cf_ratio, file.cf_ratio, defaults.counterfactual_ratio),
        noc_ratio: pick(args.noc_ratio, file.noc_ratio, defaults.no_consequent_ratio),
        seed: pick(args.seed, file.seed, defaults.seed),
        vocab_size: pick(args.vocab_size, file.vocab_size, defaults.vocab_size),
        val_n1: pick(args.val_n1, file.val_n1, 0),
        val_n2: pick(args.val_n2, file.val_n2, 0),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let config = SynthConfig {
        n_examples: resolved.n,
        counterfactual_ratio: resolved.cf_ratio,
        no_consequent_ratio: resolved.noc_ratio,
        seed: resolved.seed,
        vocab_size: resolved.vocab_size,
    };
    let corpus = generate_synthetic(&config)?;
    let dir = run_dir(root, "gen-data", resolved.seed)?;
    echo_config(&dir, &resolved)?;
    save_subtask1(&dir.join("subtask1.tsv"), &corpus.labeled, &ColumnMap1::default(), delimiter)?;
    save_subtask2(&dir.join("subtask2.tsv"), &corpus.spans, &ColumnMap2::default(), delimiter)?;
    if resolved.val_n1 > 0 {
        // validation = first N rows, as the detection data was split
        let (val, train) = make_split(&corpus.labeled, &SplitSpec::HeadN { n: resolved.val_n1 })?;
        save_subtask1(&dir.join("subtask1.train.tsv"), &train, &ColumnMap1::default(), delimiter)?;
        save_subtask1(&dir.join("subtask1.val.tsv"), &val, &ColumnMap1::default(), delimiter)?;
    }
    if resolved.val_n2 > 0 {
        // validation = N random rows, as the span data was split
        let spec = SplitSpec::RandomN { n: resolved.val_n2, seed: resolved.seed };
        let (val, train) = make_split(&corpus.spans, &spec)?;
        save_subtask2(&dir.join("subtask2.train.tsv"), &train, &ColumnMap2::default(), delimiter)?;
        save_subtask2(&dir.join("subtask2.val.tsv"), &val, &ColumnMap2::default(), delimiter)?;
    }
    println!(
        "wrote {} labeled sentences and {} span annotations to {}",
        corpus.labeled.len(),
        corpus.spans.len(),
        dir.display()
    );
    Ok(dir)
}

// ---------------------------------------------------------------------------
// stats

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long)]
    text_col: Option<String>,
    #[arg(long)]
    bucket_width: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    data: Option<PathBuf>,
    id_col: Option<String>,
    text_col: Option<String>,
    bucket_width: Option<usize>,
    limit: Option<usize>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct StatsResolved {
    data: PathBuf,
    id_col: String,
    text_col: String,
    bucket_width: usize,
    limit: usize,
    delimiter: String,
}

fn cmd_stats(args: StatsArgs, file: StatsFile, root: &Path) -> Result<PathBuf> {
    let data = args
        .data
        .or(file.data)
        .ok_or_else(|| Error::config("stats needs --data"))?;
    let resolved = StatsResolved {
        data,
        id_col: pick(args.id_col, file.id_col, "sentenceID".into()),
        text_col: pick(args.text_col, file.text_col, "sentence".into()),
        bucket_width: pick(args.bucket_width, file.bucket_width, 10),
        limit: pick(args.limit, file.limit, 100),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let rows = load_texts(&resolved.data, &resolved.id_col, &resolved.text_col, delimiter)?;
    let tokenizer = Tokenizer::whitespace();
    let histogram = length_stats(
        rows.iter().map(|(_, text)| text.as_str()),
        &tokenizer,
        resolved.bucket_width,
        Some(resolved.limit),
    )?;
    let dir = run_dir(root, "stats", 0)?;
    echo_config(&dir, &resolved)?;
    std::fs::write(dir.join("histogram.txt"), histogram.to_table())?;
    histogram.save_tsv(&dir.join("histogram.tsv"))?;
    print!("{}", histogram.to_table());
    println!("artifacts in {}", dir.display());
    Ok(dir)
}

// ---------------------------------------------------------------------------
// train-baseline

#[derive(Args, Debug)]
pub struct TrainBaselineArgs {
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainBaselineFile {
    kind: Option<String>,
    train: Option<PathBuf>,
    val: Option<PathBuf>,
    min_df: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    l2: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct TrainBaselineResolved {
    kind: String,
    train: PathBuf,
    val: PathBuf,
    min_df: usize,
    epochs: usize,
    lr: f64,
    l2: f64,
    batch_size: usize,
    seed: u64,
    delimiter: String,
}

fn cmd_train_baseline(
    args: TrainBaselineArgs,
    file: TrainBaselineFile,
    root: &Path,
) -> Result<PathBuf> {
    let hp_default = BaselineHyper::default();
    let train = args
        .train
        .or(file.train)
        .ok_or_else(|| Error::config("train-baseline needs --train"))?;
    let val = args
        .val
        .or(file.val)
        .ok_or_else(|| Error::config("train-baseline needs --val"))?;
    let resolved = TrainBaselineResolved {
        kind: pick(args.kind, file.kind, "svm".into()),
        train,
        val,
        min_df: pick(args.min_df, file.min_df, 1),
        epochs: pick(args.epochs, file.epochs, hp_default.epochs),
        lr: pick(args.lr, file.lr, hp_default.lr),
        l2: pick(args.l2, file.l2, hp_default.l2),
        batch_size: pick(args.batch_size, file.batch_size, hp_default.batch_size),
        seed: pick(args.seed, file.seed, hp_default.seed),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let kind = ClassifierKind::parse(&resolved.kind)?;
    let colmap = ColumnMap1::default();
    let train_data = load_subtask1(&resolved.train, &colmap, delimiter)?;
    let val_data = load_subtask1(&resolved.val, &colmap, delimiter)?;

    let train_texts: Vec<&str> = train_data.iter().map(|r| r.text.as_str()).collect();
    let tfidf = fit_tfidf(&train_texts, resolved.min_df)?;
    let features = tfidf.transform_all(&train_texts);
    let labels: Vec<u8> = train_data.iter().map(|r| r.label).collect();
    let hp = BaselineHyper {
        epochs: resolved.epochs,
        lr: resolved.lr,
        l2: resolved.l2,
        batch_size: resolved.batch_size,
        seed: resolved.seed,
    };
    let classifier = train_classifier(kind, &features, &labels, &hp)?;

    let val_preds: Vec<u8> = val_data
        .iter()
        .map(|r| predict_label(&classifier, &tfidf.transform(&r.text)))
        .collect::<Result<_>>()?;
    let val_golds: Vec<u8> = val_data.iter().map(|r| r.label).collect();
    let metrics = binary_prf(&val_preds, &val_golds)?;

    let dir = run_dir(root, "train-baseline", resolved.seed)?;
    echo_config(&dir, &resolved)?;
    tfidf.save(&dir.join("tfidf.json"))?;
    save_classifier(&classifier, resolved.seed, &dir.join("classifier.ckpt"))?;
    std::fs::write(dir.join("metrics.txt"), metrics.to_table())?;
    // misclassification report for error analysis
    let mut wrong = String::new();
    for (r, &p) in val_data.iter().zip(&val_preds) {
        if p != r.label {
            writeln!(wrong, "{}\tpredicted={p}\tgold={}\t{}", r.id, r.label, r.text)
                .expect("write to string");
        }
    }
    std::fs::write(dir.join("misclassified.tsv"), wrong)?;
    print!("{}", metrics.to_table());
    println!("artifacts in {}", dir.display());
    Ok(dir)
}

// ---------------------------------------------------------------------------
// train-neural

#[derive(Args, Debug)]
pub struct TrainNeuralArgs {
    /// 1 = detection, 2 = span extraction.
    #[arg(long)]
    task: Option<u8>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_output: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_updates: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    lookahead_k: Option<usize>,
    #[arg(long)]
    lookahead_alpha: Option<f64>,
    /// Disable the Lookahead wrapper.
    #[arg(long)]
    no_lookahead: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainNeuralFile {
    task: Option<u8>,
    train: Option<PathBuf>,
    val: Option<PathBuf>,
    layers: Option<usize>,
    heads: Option<usize>,
    d_model: Option<usize>,
    d_output: Option<usize>,
    ffn_dim: Option<usize>,
    max_len: Option<usize>,
    dropout: Option<f64>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    max_updates: Option<usize>,
    patience: Option<usize>,
    weight_decay: Option<f64>,
    max_grad_norm: Option<f64>,
    lookahead_k: Option<usize>,
    lookahead_alpha: Option<f64>,
    no_lookahead: Option<bool>,
    seed: Option<u64>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct TrainNeuralResolved {
    task: u8,
    train: PathBuf,
    val: PathBuf,
    layers: usize,
    heads: usize,
    d_model: usize,
    d_output: usize,
    ffn_dim: usize,
    max_len: usize,
    dropout: f64,
    batch_size: usize,
    lr: f64,
    epochs: usize,
    max_updates: Option<usize>,
    patience: usize,
    weight_decay: f64,
    max_grad_norm: f64,
    lookahead: bool,
    lookahead_k: usize,
    lookahead_alpha: f64,
    seed: u64,
    delimiter: String,
}

fn cmd_train_neural(args: TrainNeuralArgs, file: TrainNeuralFile, root: &Path) -> Result<PathBuf> {
    let task = pick(args.task, file.task, 2);
    if task != 1 && task != 2 {
        return Err(Error::config(format!("task must be 1 or 2, got {task}")));
    }
    let train_defaults = if task == 2 {
        TrainConfig::span_defaults()
    } else {
        TrainConfig::classification_defaults()
    };
    let la_default = LookaheadConfig::default();
    let train = args
        .train
        .or(file.train)
        .ok_or_else(|| Error::config("train-neural needs --train"))?;
    let val = args
        .val
        .or(file.val)
        .ok_or_else(|| Error::config("train-neural needs --val"))?;
    // dropout defaults: 0.1 for detection, 0.0415 (last layer) for spans
    let dropout_default = if task == 2 { 0.0415 } else { 0.1 };
    // detection truncates to 100 tokens; spans use the desk-scale L = 64
    let max_len_default = if task == 2 { 64 } else { 100 };
    let resolved = TrainNeuralResolved {
        task,
        train,
        val,
        layers: pick(args.layers, file.layers, 2),
        heads: pick(args.heads, file.heads, 4),
        d_model: pick(args.d_model, file.d_model, 64),
        d_output: pick(args.d_output, file.d_output, 64),
        ffn_dim: pick(args.ffn_dim, file.ffn_dim, 128),
        max_len: pick(args.max_len, file.max_len, max_len_default),
        dropout: pick(args.dropout, file.dropout, dropout_default),
        batch_size: pick(args.batch_size, file.batch_size, train_defaults.batch_size),
        lr: pick(args.lr, file.lr, train_defaults.lr),
        epochs: pick(args.epochs, file.epochs, train_defaults.epochs),
        max_updates: args.max_updates.or(file.max_updates),
        patience: pick(args.patience, file.patience, train_defaults.patience),
        weight_decay: pick(args.weight_decay, file.weight_decay, train_defaults.weight_decay),
        max_grad_norm: pick(
            args.max_grad_norm,
            file.max_grad_norm,
            train_defaults.max_grad_norm.unwrap_or(1.0),
        ),
        lookahead: !(args.no_lookahead || file.no_lookahead.unwrap_or(false)) && task == 2,
        lookahead_k: pick(args.lookahead_k, file.lookahead_k, la_default.k),
        lookahead_alpha: pick(args.lookahead_alpha, file.lookahead_alpha, la_default.alpha),
        seed: pick(args.seed, file.seed, 0),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let dir = run_dir(root, "train-neural", resolved.seed)?;
    echo_config(&dir, &resolved)?;

    let tokenizer = Tokenizer::whitespace();
    let train_config = TrainConfig {
        batch_size: resolved.batch_size,
        lr: resolved.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: resolved.weight_decay,
        epochs: resolved.epochs,
        max_updates: resolved.max_updates,
        max_grad_norm: Some(resolved.max_grad_norm),
        patience: resolved.patience,
        lookahead: resolved.lookahead.then_some(LookaheadConfig {
            k: resolved.lookahead_k,
            alpha: resolved.lookahead_alpha,
        }),
        metric: if task == 2 {
            EvalMetric::ExactMatch
        } else {
            EvalMetric::F1
        },
        seed: resolved.seed,
    };

    let (vocab, outcome) = if task == 2 {
        let colmap = ColumnMap2::default();
        let train_data = load_subtask2(&resolved.train, &colmap, delimiter)?;
        let val_data = load_subtask2(&resolved.val, &colmap, delimiter)?;
        let texts: Vec<&str> = train_data.iter().map(|r| r.text.as_str()).collect();
        let vocab = Vocab::from_corpus(&texts, &tokenizer);
        let (span_task, prep) = SpanTask::new(
            &train_data,
            &val_data,
            &tokenizer,
            &vocab,
            resolved.max_len,
            DecodeConstraints::default(),
            EvalMetric::ExactMatch,
        )?;
        println!("prepared span task: {}", prep.summary());
        let model_config = ModelConfig {
            vocab_size: vocab.len(),
            max_len: resolved.max_len,
            d_input: resolved.d_model,
            d_output: resolved.d_output,
            layers: resolved.layers,
            heads: resolved.heads,
            ffn_dim: resolved.ffn_dim,
            dropout: resolved.dropout,
            seed: resolved.seed,
        };
        let mut model = Model::new(model_config)?;
        let outcome = train_loop(&mut model, &span_task, &train_config)?;
        model.set_params(&outcome.best_params)?;
        save_checkpoint(&model, outcome.best_updates as u64, &dir.join("best.ckpt"))?;
        model.set_params(&outcome.final_params)?;
        save_checkpoint(&model, outcome.total_updates as u64, &dir.join("final.ckpt"))?;
        (vocab, outcome)
    } else {
        let colmap = ColumnMap1::default();
        let train_data = load_subtask1(&resolved.train, &colmap, delimiter)?;
        let val_data = load_subtask1(&resolved.val, &colmap, delimiter)?;
        let texts: Vec<&str> = train_data.iter().map(|r| r.text.as_str()).collect();
        let vocab = Vocab::from_corpus(&texts, &tokenizer);
        let cls_task = ClassifyTask::new(
            &train_data,
            &val_data,
            &tokenizer,
            &vocab,
            resolved.max_len,
            EvalMetric::F1,
        )?;
        let model_config = ModelConfig {
            vocab_size: vocab.len(),
            max_len: resolved.max_len,
            d_input: resolved.d_model,
            d_output: resolved.d_output,
            layers: resolved.layers,
            heads: resolved.heads,
            ffn_dim: resolved.ffn_dim,
            dropout: resolved.dropout,
            seed: resolved.seed,
        };
        let mut model = Model::new(model_config)?;
        let outcome = train_loop(&mut model, &cls_task, &train_config)?;
        model.set_params(&outcome.best_params)?;
        save_checkpoint(&model, outcome.best_updates as u64, &dir.join("best.ckpt"))?;
        model.set_params(&outcome.final_params)?;
        save_checkpoint(&model, outcome.total_updates as u64, &dir.join("final.ckpt"))?;
        (vocab, outcome)
    };

    vocab.save(&dir.join("vocab.tsv"))?;
    std::fs::write(dir.join("train_log.jsonl"), outcome.log_lines())?;
    for record in &outcome.log {
        println!(
            "epoch {:>3}  updates {:>5}  train loss {:>9.4}  val {} {:>6.2}",
            record.epoch,
            record.updates,
            record.train_loss,
            train_config.metric.name(),
            record.val_metric
        );
    }
    println!(
        "best {} {:.2} at epoch {} ({} updates); artifacts in {}",
        train_config.metric.name(),
        outcome.best_metric,
        outcome.best_epoch,
        outcome.best_updates,
        dir.display()
    );
    Ok(dir)
}

// ---------------------------------------------------------------------------
// predict

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    task: Option<u8>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long)]
    text_col: Option<String>,
    #[arg(long)]
    max_antecedent_len: Option<usize>,
    #[arg(long)]
    max_consequent_len: Option<usize>,
    /// joint or independent
    #[arg(long)]
    strategy: Option<String>,
    /// Also write a per-member probability file for ensemble pooling.
    #[arg(long)]
    emit_probs: bool,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictFile {
    task: Option<u8>,
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
    input: Option<PathBuf>,
    id_col: Option<String>,
    text_col: Option<String>,
    max_antecedent_len: Option<usize>,
    max_consequent_len: Option<usize>,
    strategy: Option<String>,
    emit_probs: Option<bool>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct PredictResolved {
    task: u8,
    checkpoint: PathBuf,
    vocab: PathBuf,
    input: PathBuf,
    id_col: String,
    text_col: String,
    max_antecedent_len: usize,
    max_consequent_len: usize,
    strategy: String,
    emit_probs: bool,
    delimiter: String,
}

fn cmd_predict(args: PredictArgs, file: PredictFile, root: &Path) -> Result<PathBuf> {
    let constraints_default = DecodeConstraints::default();
    let resolved = PredictResolved {
        task: pick(args.task, file.task, 2),
        checkpoint: args
            .checkpoint
            .or(file.checkpoint)
            .ok_or_else(|| Error::config("predict needs --checkpoint"))?,
        vocab: args
            .vocab
            .or(file.vocab)
            .ok_or_else(|| Error::config("predict needs --vocab"))?,
        input: args
            .input
            .or(file.input)
            .ok_or_else(|| Error::config("predict needs --input"))?,
        id_col: pick(args.id_col, file.id_col, "sentenceID".into()),
        text_col: pick(args.text_col, file.text_col, "sentence".into()),
        max_antecedent_len: pick(
            args.max_antecedent_len,
            file.max_antecedent_len,
            constraints_default.max_antecedent_len,
        ),
        max_consequent_len: pick(
            args.max_consequent_len,
            file.max_consequent_len,
            constraints_default.max_consequent_len,
        ),
        strategy: pick(args.strategy, file.strategy, "joint".into()),
        emit_probs: args.emit_probs || file.emit_probs.unwrap_or(false),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let strategy = match resolved.strategy.as_str() {
        "joint" => DecodeStrategy::Joint,
        "independent" => DecodeStrategy::Independent,
        other => return Err(Error::config(format!("unknown strategy '{other}'"))),
    };
    let (model, updates) = load_checkpoint(&resolved.checkpoint)?;
    let vocab = Vocab::load(&resolved.vocab)?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::config(format!(
            "vocab has {} entries but the checkpoint was trained with {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let rows = load_texts(&resolved.input, &resolved.id_col, &resolved.text_col, delimiter)?;
    let tokenizer = Tokenizer::whitespace();
    let dir = run_dir(root, "predict", model.config().seed)?;
    echo_config(&dir, &resolved)?;

    if resolved.task == 2 {
        let constraints = DecodeConstraints {
            max_antecedent_len: resolved.max_antecedent_len,
            max_consequent_len: resolved.max_consequent_len,
        };
        let mut records = Vec::with_capacity(rows.len());
        let mut prob_rows = Vec::new();
        for (id, text) in &rows {
            let seq = tokenizer
                .encode(text, &vocab, true)
                .truncate(model.config().max_len)?;
            let enc = model.encode_eval(&seq.ids, &vec![0; seq.len()])?;
            let logits = model.span_scores(&enc);
            let pred = decode_spans_with(&logits, &seq, &constraints, strategy)?;
            records.push(PredictionRecord::from_prediction(id.clone(), &pred));
            if resolved.emit_probs {
                prob_rows.push((id.clone(), logits.probs()));
            }
        }
        save_predictions(&dir.join("predictions.tsv"), &records, delimiter)?;
        if resolved.emit_probs {
            save_span_probs(&dir.join("member.span.probs"), &prob_rows)?;
        }
    } else {
        let mut lines = String::from("sentenceID\tp0\tp1\tlabel\n");
        let mut prob_rows = Vec::new();
        for (id, text) in &rows {
            let seq = tokenizer
                .encode(text, &vocab, true)
                .truncate(model.config().max_len)?;
            let enc = model.encode_eval(&seq.ids, &vec![0; seq.len()])?;
            let probs = model.classify(&enc);
            writeln!(lines, "{id}\t{}\t{}\t{}", probs[0], probs[1], (probs[1] >= 0.5) as u8)
                .expect("write to string");
            if resolved.emit_probs {
                prob_rows.push((id.clone(), probs));
            }
        }
        std::fs::write(dir.join("predictions.tsv"), lines)?;
        if resolved.emit_probs {
            save_class_probs(&dir.join("member.class.probs"), &prob_rows)?;
        }
    }
    println!(
        "predicted {} examples with a checkpoint at {updates} updates; artifacts in {}",
        rows.len(),
        dir.display()
    );
    Ok(dir)
}

// ---------------------------------------------------------------------------
// ensemble-search

#[derive(Args, Debug)]
pub struct EnsembleSearchArgs {
    #[arg(long)]
    task: Option<u8>,
    /// Directory of per-member probability files (*.class.probs or *.span.probs).
    #[arg(long)]
    pool_dir: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// greedy (spans) or combinations (detection).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_antecedent_len: Option<usize>,
    #[arg(long)]
    max_consequent_len: Option<usize>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleSearchFile {
    task: Option<u8>,
    pool_dir: Option<PathBuf>,
    gold: Option<PathBuf>,
    mode: Option<String>,
    top_k: Option<usize>,
    max_len: Option<usize>,
    max_antecedent_len: Option<usize>,
    max_consequent_len: Option<usize>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct EnsembleSearchResolved {
    task: u8,
    pool_dir: PathBuf,
    gold: PathBuf,
    mode: String,
    top_k: usize,
    max_len: usize,
    max_antecedent_len: usize,
    max_consequent_len: usize,
    delimiter: String,
}

fn member_files(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(suffix) {
            files.push((stem.to_string(), entry.path()));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::argument(format!(
            "no *{suffix} files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn cmd_ensemble_search(
    args: EnsembleSearchArgs,
    file: EnsembleSearchFile,
    root: &Path,
) -> Result<PathBuf> {
    let task = pick(args.task, file.task, 2);
    let constraints_default = DecodeConstraints::default();
    let resolved = EnsembleSearchResolved {
        task,
        pool_dir: args
            .pool_dir
            .or(file.pool_dir)
            .ok_or_else(|| Error::config("ensemble-search needs --pool-dir"))?,
        gold: args
            .gold
            .or(file.gold)
            .ok_or_else(|| Error::config("ensemble-search needs --gold"))?,
        mode: pick(
            args.mode,
            file.mode,
            if task == 2 { "greedy" } else { "combinations" }.into(),
        ),
        top_k: pick(args.top_k, file.top_k, 10),
        max_len: pick(args.max_len, file.max_len, 64),
        max_antecedent_len: pick(
            args.max_antecedent_len,
            file.max_antecedent_len,
            constraints_default.max_antecedent_len,
        ),
        max_consequent_len: pick(
            args.max_consequent_len,
            file.max_consequent_len,
            constraints_default.max_consequent_len,
        ),
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let dir = run_dir(root, "ensemble-search", 0)?;
    echo_config(&dir, &resolved)?;

    let result = if resolved.task == 2 {
        let golds = load_subtask2(&resolved.gold, &ColumnMap2::default(), delimiter)?;
        let tokenizer = Tokenizer::whitespace();
        let empty = Vocab::build([]);
        let seqs = golds
            .iter()
            .map(|g| tokenizer.encode(&g.text, &empty, true).truncate(resolved.max_len))
            .collect::<Result<Vec<_>>>()?;
        let constraints = DecodeConstraints {
            max_antecedent_len: resolved.max_antecedent_len,
            max_consequent_len: resolved.max_consequent_len,
        };
        let mut pool = SpanPool::new(golds, seqs, constraints)?;
        for (name, path) in member_files(&resolved.pool_dir, ".span.probs")? {
            pool.add_member(&name, &load_span_probs(&path)?)?;
        }
        match resolved.mode.as_str() {
            "greedy" => pool.greedy_smallest_subset()?,
            "exhaustive" => pool.exhaustive_best()?,
            other => {
                return Err(Error::config(format!(
                    "mode '{other}' not available for task 2 (use greedy or exhaustive)"
                )))
            }
        }
    } else {
        let golds = load_subtask1(&resolved.gold, &ColumnMap1::default(), delimiter)?;
        let ids: Vec<String> = golds.iter().map(|g| g.id.clone()).collect();
        let labels: Vec<u8> = golds.iter().map(|g| g.label).collect();
        let mut pool = ClassificationPool::new(ids, labels)?;
        for (name, path) in member_files(&resolved.pool_dir, ".class.probs")? {
            pool.add_member(&name, &load_class_probs(&path)?)?;
        }
        match resolved.mode.as_str() {
            "combinations" => pool.best_combination(resolved.top_k.min(pool.len()))?,
            other => {
                return Err(Error::config(format!(
                    "mode '{other}' not available for task 1 (use combinations)"
                )))
            }
        }
    };
    result.spec.save(&dir.join("ensemble.json"))?;
    println!(
        "selected {} member(s) {:?} with metric {:.2} after scoring {} fused subset(s)",
        result.spec.members.len(),
        result.spec.members,
        result.spec.metric,
        result.subsets_evaluated
    );
    println!("artifacts in {}", dir.display());
    Ok(dir)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    task: Option<u8>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    task: Option<u8>,
    pred: Option<PathBuf>,
    gold: Option<PathBuf>,
    delimiter: Option<String>,
}

#[derive(Debug, Serialize)]
struct EvaluateResolved {
    task: u8,
    pred: PathBuf,
    gold: PathBuf,
    delimiter: String,
}

fn cmd_evaluate(args: EvaluateArgs, file: EvaluateFile, root: &Path) -> Result<PathBuf> {
    let resolved = EvaluateResolved {
        task: pick(args.task, file.task, 2),
        pred: args
            .pred
            .or(file.pred)
            .ok_or_else(|| Error::config("evaluate needs --pred"))?,
        gold: args
            .gold
            .or(file.gold)
            .ok_or_else(|| Error::config("evaluate needs --gold"))?,
        delimiter: pick(args.delimiter, file.delimiter, "tab".into()),
    };
    let delimiter = parse_delimiter(&resolved.delimiter)?;
    let dir = run_dir(root, "evaluate", 0)?;
    echo_config(&dir, &resolved)?;
    if resolved.task == 2 {
        let preds = load_predictions(&resolved.pred, delimiter)?;
        let golds = load_subtask2(&resolved.gold, &ColumnMap2::default(), delimiter)?;
        let report = subtask2_report(&preds, &golds)?;
        std::fs::write(dir.join("report.txt"), report.to_table())?;
        std::fs::write(dir.join("report.kv"), report.to_key_values())?;
        print!("{}", report.to_table());
    } else {
        let golds = load_subtask1(&resolved.gold, &ColumnMap1::default(), delimiter)?;
        let pred_rows = load_texts(&resolved.pred, "sentenceID", "label", b'\t')?;
        let by_id: std::collections::HashMap<&str, &str> = pred_rows
            .iter()
            .map(|(id, label)| (id.as_str(), label.as_str()))
            .collect();
        let mut preds = Vec::with_capacity(golds.len());
        for g in &golds {
            let label = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::argument(format!("no prediction for id '{}'", g.id)))?;
            preds.push(label.trim().parse::<u8>().map_err(|_| {
                Error::argument(format!("bad predicted label '{label}' for id '{}'", g.id))
            })?);
        }
        let gold_labels: Vec<u8> = golds.iter().map(|g| g.label).collect();
        let metrics = binary_prf(&preds, &gold_labels)?;
        std::fs::write(dir.join("report.txt"), metrics.to_table())?;
        print!("{}", metrics.to_table());
    }
    println!("artifacts in {}", dir.display());
    Ok(dir)
}

// ---------------------------------------------------------------------------
// grad-check

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradCheckFile {
    trials: Option<usize>,
    seed: Option<u64>,
}

/// Random tiny configs from one layer at d = 8 up to two layers at d = 32.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let d = [8usize, 16, 32][rng.random_range(0..3)];
    let heads = [1usize, 2, 4][rng.random_range(0..3)];
    ModelConfig {
        vocab_size: 12,
        max_len: 8,
        d_input: d,
        d_output: if rng.random::<bool>() { d } else { d / 2 },
        layers: 1 + rng.random_range(0..2usize),
        heads: heads.min(d),
        ffn_dim: 2 * d,
        dropout: 0.0,
        seed: rng.random(),
    }
}

fn cmd_grad_check(args: GradCheckArgs, file: GradCheckFile) -> Result<()> {
    let trials = pick(args.trials, file.trials, 10);
    let seed = pick(args.seed, file.seed, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overall: f64 = 0.0;
    for trial in 0..trials {
        let config = random_tiny_config(&mut rng);
        let detailed = grad_check_detailed(&config, 1)?;
        let max = detailed.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        let worst = detailed
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite errors"))
            .map(|(n, _)| n.as_str())
            .unwrap_or("-");
        println!(
            "trial {:>2}: layers={} d={} heads={} d_out={} -> max rel err {:.3e} (worst group: {worst})",
            trial + 1,
            config.layers,
            config.d_input,
            config.heads,
            config.d_output,
            max
        );
        overall = overall.max(max);
    }
    println!("max relative error over {trials} trials: {overall:.3e}");
    if overall >= 1e-4 {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {overall:.3e} >= 1e-4"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn empty_config_gives_pure_defaults() {
        let config = load_config(None).unwrap();
        assert!(config.gen_data.n.is_none());
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"").unwrap();
        let config = load_config(Some(f.path())).unwrap();
        assert!(config.train_neural.lr.is_none());
    }

    #[test]
    fn flag_overrides_file_value() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[gen-data]\nn = 50\nseed = 9\n").unwrap();
        let config = load_config(Some(f.path())).unwrap();
        assert_eq!(config.gen_data.n, Some(50));
        // flag wins over file, file wins over default
        assert_eq!(pick(Some(7usize), config.gen_data.n, 2000), 7);
        assert_eq!(pick(None, config.gen_data.n, 2000), 50);
        assert_eq!(pick(None, config.gen_data.cf_ratio, 0.5), 0.5);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[gen-data]\nbogus_key = 1\n").unwrap();
        let err = load_config(Some(f.path())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn malformed_file_reports_position() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[gen-data\nn = 1\n").unwrap();
        let err = load_config(Some(f.path())).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn delimiters_parse() {
        assert_eq!(parse_delimiter("tab").unwrap(), b'\t');
        assert_eq!(parse_delimiter(",").unwrap(), b',');
        assert_eq!(parse_delimiter(";").unwrap(), b';');
        assert!(parse_delimiter("ab").is_err());
    }

    #[test]
    fn run_dirs_do_not_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_dir(tmp.path(), "gen-data", 7).unwrap();
        let b = run_dir(tmp.path(), "gen-data", 7).unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }
}
