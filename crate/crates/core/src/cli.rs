//! The `lean` command line.
//!
//! Every command prints one JSON summary to stdout and logs to stderr.
//! Options can also come from a flat `key=value` file given with `--config`;
//! command-line flags win over the file. Exit codes: 0 success, 1 invalid
//! input or configuration, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::data_io::{self, Corpus, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::extractor::ExtractorWeights;
use crate::fusion::FusionMode;
use crate::inference;
use crate::metrics;
use crate::model::{LeanModel, ModelConfig, ModelInput};
use crate::quantizer;
use crate::tensor::gradcheck::{grad_check, GradCheckOptions};
use crate::tensor::Tape;
use crate::trainer::{self, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "lean", version, about = "Dual-channel audio tagging")]
pub struct Cli {
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads. Training is always single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic multi-label corpus.
    SynthData(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Score one WAV file.
    Infer(InferArgs),
    /// Quantize a checkpoint's weights to int8.
    Quantize(QuantizeArgs),
    /// Measure per-stage latency.
    Bench(BenchArgs),
    /// Finite-difference check of every trainable parameter.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_clips: Option<usize>,
    #[arg(long)]
    pub val_clips: Option<usize>,
    #[arg(long)]
    pub eval_clips: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub max_duration: Option<f64>,
    #[arg(long)]
    pub max_labels: Option<usize>,
    #[arg(long)]
    pub noise_level: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub eval_overlap: Option<f64>,
    /// `desk` (small, default) or `full` (full width).
    #[arg(long)]
    pub scale: Option<String>,
    /// Pretrained extractor weights; without them the extractor is
    /// pretrained on the training split first.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write per-class APs as CSV here.
    #[arg(long)]
    pub class_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Vocabulary CSV for column names.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Append-free CSV output (header + one row).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus to measure the mAP change on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Quantized container to time side by side.
    #[arg(long)]
    pub quantized: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Coordinates sampled per parameter tensor.
    #[arg(long)]
    pub max_coords: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Also check the conv stack (frozen in every fusion mode). ReLU kinks
    /// inside the finite-difference step can then cause spurious failures.
    #[arg(long)]
    pub train_extractor: Option<bool>,
}

/// Merged options for one command: config file entries overlaid by flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub values: BTreeMap<String, String>,
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_opt(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Infer(_) => "infer",
            Command::Quantize(_) => "quantize",
            Command::Bench(_) => "bench",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    /// `(key, flag value)` for every option the command accepts.
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        match self {
            Command::SynthData(a) => vec![
                ("out", path_opt(&a.out)),
                ("classes", opt(&a.classes)),
                ("train_clips", opt(&a.train_clips)),
                ("val_clips", opt(&a.val_clips)),
                ("eval_clips", opt(&a.eval_clips)),
                ("min_duration", opt(&a.min_duration)),
                ("max_duration", opt(&a.max_duration)),
                ("max_labels", opt(&a.max_labels)),
                ("noise_level", opt(&a.noise_level)),
            ],
            Command::Train(a) => vec![
                ("data", path_opt(&a.data)),
                ("out", path_opt(&a.out)),
                ("mode", opt(&a.mode)),
                ("epochs", opt(&a.epochs)),
                ("batch_size", opt(&a.batch_size)),
                ("learning_rate", opt(&a.learning_rate)),
                ("eval_overlap", opt(&a.eval_overlap)),
                ("scale", opt(&a.scale)),
                ("extractor", path_opt(&a.extractor)),
                ("pretrain_epochs", opt(&a.pretrain_epochs)),
            ],
            Command::Eval(a) => vec![
                ("ckpt", path_opt(&a.ckpt)),
                ("data", path_opt(&a.data)),
                ("split", opt(&a.split)),
                ("overlap", opt(&a.overlap)),
                ("report", path_opt(&a.report)),
                ("class_csv", path_opt(&a.class_csv)),
            ],
            Command::Infer(a) => vec![
                ("ckpt", path_opt(&a.ckpt)),
                ("wav", path_opt(&a.wav)),
                ("overlap", opt(&a.overlap)),
                ("vocab", path_opt(&a.vocab)),
                ("out", path_opt(&a.out)),
            ],
            Command::Quantize(a) => vec![
                ("ckpt", path_opt(&a.ckpt)),
                ("out", path_opt(&a.out)),
                ("data", path_opt(&a.data)),
                ("split", opt(&a.split)),
                ("overlap", opt(&a.overlap)),
            ],
            Command::Bench(a) => vec![
                ("ckpt", path_opt(&a.ckpt)),
                ("runs", opt(&a.runs)),
                ("quantized", path_opt(&a.quantized)),
            ],
            Command::Gradcheck(a) => vec![
                ("tol", opt(&a.tol)),
                ("mode", opt(&a.mode)),
                ("max_coords", opt(&a.max_coords)),
                ("classes", opt(&a.classes)),
                ("train_extractor", opt(&a.train_extractor)),
            ],
        }
    }
}

const GLOBAL_KEYS: [&str; 2] = ["seed", "threads"];

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim().replace('-', "_");
        if k.is_empty() {
            return Err(Error::Config(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("config line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn build(cli: &Cli, file: Option<BTreeMap<String, String>>) -> Result<Self> {
        let flags = cli.command.flags();
        let mut values = file.unwrap_or_default();
        if let Some(k) = values
            .keys()
            .find(|k| !GLOBAL_KEYS.contains(&k.as_str()) && !flags.iter().any(|(f, _)| f == k))
        {
            return Err(Error::Config(format!(
                "unknown key {k:?} for command {}",
                cli.command.name()
            )));
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        if let Some(s) = cli.seed {
            values.insert("seed".into(), s.to_string());
        }
        if let Some(t) = cli.threads {
            values.insert("threads".into(), t.to_string());
        }
        Ok(RunConfig { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.values
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required option --{}", key.replace('_', "-"))))
    }

    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self.require_path(key)?;
        if !p.exists() {
            return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Manifest(_) => 1,
        _ => 2,
    }
}

/// Runs the CLI and writes the JSON summary to `out`. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_else(|_| "{}".into());
            if writeln!(out, "{text}").is_err() {
                return 2;
            }
            match summary.get("pass") {
                Some(Value::Bool(false)) => 2,
                _ => 0,
            }
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout())
}

fn execute(cli: &Cli) -> Result<Value> {
    let file = match &cli.config {
        Some(p) => {
            Some(parse_config_file(&std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", p.display()))
            })?)?)
        }
        None => None,
    };
    let rc = RunConfig::build(cli, file)?;
    let threads: usize = rc.get_or("threads", 1)?;
    if threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    let seed = rc.seed()?;
    let mut body = match &cli.command {
        Command::SynthData(_) => cmd_synth(&rc, seed)?,
        Command::Train(_) => cmd_train(&rc, seed)?,
        Command::Eval(_) => cmd_eval(&rc)?,
        Command::Infer(_) => cmd_infer(&rc)?,
        Command::Quantize(_) => cmd_quantize(&rc)?,
        Command::Bench(_) => cmd_bench(&rc, seed)?,
        Command::Gradcheck(_) => cmd_gradcheck(&rc, seed)?,
    };
    let obj = body.as_object_mut().expect("summaries are objects");
    obj.insert(
        "schema".into(),
        json!(format!("lean.{}/v{SCHEMA_VERSION}", cli.command.name())),
    );
    obj.insert("command".into(), json!(cli.command.name()));
    obj.insert("seed".into(), json!(seed));
    obj.insert("threads".into(), json!(threads));
    obj.insert("config".into(), json!(rc.values));
    Ok(body)
}

fn cmd_synth(rc: &RunConfig, seed: u64) -> Result<Value> {
    let out = rc.require_path("out")?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        classes: rc.get_or("classes", d.classes)?,
        train_clips: rc.get_or("train_clips", d.train_clips)?,
        val_clips: rc.get_or("val_clips", d.val_clips)?,
        eval_clips: rc.get_or("eval_clips", d.eval_clips)?,
        min_duration: rc.get_or("min_duration", d.min_duration)?,
        max_duration: rc.get_or("max_duration", d.max_duration)?,
        max_labels: rc.get_or("max_labels", d.max_labels)?,
        noise_level: rc.get_or("noise_level", d.noise_level)?,
        seed,
    };
    spec.validate()?;
    log::info!(
        "writing {} clips to {}",
        spec.train_clips + spec.val_clips + spec.eval_clips,
        out.display()
    );
    let summary = data_io::synth_generate(&spec, &out)?;
    Ok(json!({ "out": out, "spec": spec, "summary": summary }))
}

fn model_config(scale: &str, mode: FusionMode, classes: usize) -> Result<ModelConfig> {
    let mut cfg = match scale {
        "desk" => ModelConfig::desk(mode, classes),
        "full" => ModelConfig::full(mode),
        other => return Err(Error::Config(format!("unknown scale {other:?} (desk or full)"))),
    };
    cfg.classes = classes;
    Ok(cfg)
}

fn cmd_train(rc: &RunConfig, seed: u64) -> Result<Value> {
    let data = rc.existing_path("data")?;
    let out = rc.require_path("out")?;
    let mode: FusionMode = rc.get_or("mode", "bahdanau".to_string())?.parse()?;
    let scale: String = rc.get_or("scale", "desk".to_string())?;
    let extractor_path = match rc.values.get("extractor") {
        Some(_) => Some(rc.existing_path("extractor")?),
        None => None,
    };
    let corpus = Corpus::open(&data)?;
    let mut cfg = TrainConfig::new(model_config(&scale, mode, corpus.vocab.len())?, seed);
    cfg.epochs = rc.get_or("epochs", cfg.epochs)?;
    cfg.batch_size = rc.get_or("batch_size", cfg.batch_size)?;
    cfg.learning_rate = rc.get_or("learning_rate", cfg.learning_rate)?;
    cfg.eval_overlap = rc.get_or("eval_overlap", cfg.eval_overlap)?;
    let pretrain_epochs: usize = rc.get_or("pretrain_epochs", 10)?;
    cfg.validate()?;
    std::fs::create_dir_all(&out)?;

    let train_set = corpus.load_split(Split::Train)?;
    let val_set = corpus.load_split(Split::Val)?;
    log::info!("{} training clips, {} validation clips", train_set.len(), val_set.len());

    let mut model = LeanModel::new(cfg.model.clone(), seed)?;
    let mut pretrain = Value::Null;
    if let Some(p) = &extractor_path {
        model.load_extractor(&ExtractorWeights::load(p)?)?;
    } else if pretrain_epochs > 0 {
        let mut pcfg = cfg.clone();
        pcfg.epochs = pretrain_epochs;
        log::info!("pretraining the extractor for {pretrain_epochs} epochs");
        let pre = trainer::pretrain_extractor(&pcfg, &train_set, &val_set)?;
        model.copy_modules_from(&pre.model, &["extractor.", "projection."])?;
        pre.model.extractor_weights()?.save(&out.join("extractor.bin"))?;
        pretrain =
            json!({ "epochs": pretrain_epochs, "best_epoch": pre.checkpoint.best_epoch, "reports": pre.reports });
    }
    let log_path = out.join("epochs.jsonl");
    let outcome = trainer::train_from(&cfg, model, &train_set, &val_set, Some(&log_path))?;
    let ckpt_path = out.join("checkpoint.bin");
    trainer::save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    Ok(json!({
        "checkpoint": ckpt_path,
        "epoch_log": log_path,
        "train_config": cfg,
        "best_epoch": outcome.checkpoint.best_epoch,
        "best_val_auc_pr": outcome.checkpoint.metric_value,
        "best_report": outcome.checkpoint.best_report,
        "pretrain": pretrain,
        "params": outcome.model.param_breakdown(),
    }))
}

fn split_arg(rc: &RunConfig) -> Result<Split> {
    rc.get_or("split", "eval".to_string())?.parse()
}

fn cmd_eval(rc: &RunConfig) -> Result<Value> {
    let ckpt_path = rc.existing_path("ckpt")?;
    let data = rc.existing_path("data")?;
    let split = split_arg(rc)?;
    let ckpt = trainer::load_checkpoint(&ckpt_path)?;
    let overlap: f64 = rc.get_or("overlap", ckpt.config.eval_overlap)?;
    let model = ckpt.load_model()?;
    let corpus = Corpus::open(&data)?;
    if corpus.vocab.len() != model.config.classes {
        return Err(Error::Config(format!(
            "corpus has {} classes, checkpoint has {}",
            corpus.vocab.len(),
            model.config.classes
        )));
    }
    let clips = corpus.load_split(split)?;
    let report = trainer::validate(&model, &clips, overlap)?;
    if let Some(p) = rc.values.get("report") {
        metrics::write_report(&report, Path::new(p))?;
    }
    if let Some(p) = rc.values.get("class_csv") {
        report.write_class_csv(Path::new(p), corpus.vocab.names())?;
    }
    Ok(json!({ "checkpoint": ckpt_path, "split": split, "overlap": overlap, "clips": clips.len(), "report": report }))
}

fn cmd_infer(rc: &RunConfig) -> Result<Value> {
    let ckpt_path = rc.existing_path("ckpt")?;
    let wav = rc.existing_path("wav")?;
    let vocab = match rc.values.get("vocab") {
        Some(_) => Some(data_io::Vocabulary::read(&rc.existing_path("vocab")?)?),
        None => None,
    };
    let ckpt = trainer::load_checkpoint(&ckpt_path)?;
    let overlap: f64 = rc.get_or("overlap", 0.5)?;
    let model = ckpt.load_model()?;
    let names: Vec<String> = match &vocab {
        Some(v) if v.len() == model.config.classes => v.names().to_vec(),
        Some(v) => {
            return Err(Error::Config(format!(
                "vocabulary has {} classes, checkpoint has {}",
                v.len(),
                model.config.classes
            )))
        }
        None => (0..model.config.classes).map(|k| format!("class_{k}")).collect(),
    };
    let clip = data_io::read_wav(&wav)?;
    let id = wav
        .file_name()
        .map_or_else(|| "clip".into(), |n| n.to_string_lossy().into_owned());
    let pred = inference::predict_clip(&id, &clip, &model, overlap, false)?;
    if let Some(p) = rc.values.get("out") {
        inference::write_scores_csv(Path::new(p), &names, std::slice::from_ref(&pred))?;
    }
    let csv_line = std::iter::once(id.clone())
        .chain(pred.scores.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()
        .join(",");
    Ok(json!({ "clip_id": id, "chunks": pred.chunks, "classes": names, "scores": pred.scores, "csv_line": csv_line }))
}

fn cmd_quantize(rc: &RunConfig) -> Result<Value> {
    let ckpt_path = rc.existing_path("ckpt")?;
    let out = rc.require_path("out")?;
    let data = match rc.values.get("data") {
        Some(_) => Some(rc.existing_path("data")?),
        None => None,
    };
    let split = split_arg(rc)?;
    let ckpt = trainer::load_checkpoint(&ckpt_path)?;
    let overlap: f64 = rc.get_or("overlap", ckpt.config.eval_overlap)?;
    let q = quantizer::quantize_container(&ckpt.model)?;
    q.write_file(&out)?;
    let size = quantizer::size_report(&ckpt.model, &q)?;
    let degradation = match data {
        Some(d) => {
            let corpus = Corpus::open(&d)?;
            let clips = corpus.load_split(split)?;
            let labels = data_io::label_matrix_of(&clips, corpus.vocab.len())?;
            let float = ckpt.load_model()?;
            let quant = quantizer::dequantized_model(&q)?;
            serde_json::to_value(quantizer::eval_quantized(&float, &quant, &clips, &labels, overlap)?)?
        }
        None => Value::Null,
    };
    Ok(json!({ "checkpoint": ckpt_path, "out": out, "size": size, "degradation": degradation }))
}

fn cmd_bench(rc: &RunConfig, seed: u64) -> Result<Value> {
    let ckpt_path = rc.existing_path("ckpt")?;
    let quant_path = match rc.values.get("quantized") {
        Some(_) => Some(rc.existing_path("quantized")?),
        None => None,
    };
    let runs: usize = rc.get_or("runs", 100)?;
    let model = trainer::load_checkpoint(&ckpt_path)?.load_model()?;
    let float = inference::bench_latency(&model, runs, seed)?;
    let quantized = match quant_path {
        Some(p) => {
            let qm = quantizer::dequantized_model(&crate::container::Container::read_file(&p)?)?;
            serde_json::to_value(inference::bench_latency(&qm, runs, seed)?)?
        }
        None => Value::Null,
    };
    Ok(json!({ "checkpoint": ckpt_path, "float": float, "quantized": quantized }))
}

fn cmd_gradcheck(rc: &RunConfig, seed: u64) -> Result<Value> {
    let tol: f64 = rc.get_or("tol", 1e-4)?;
    let mode: FusionMode = rc.get_or("mode", "bahdanau".to_string())?.parse()?;
    let max_coords: usize = rc.get_or("max_coords", 6)?;
    let classes: usize = rc.get_or("classes", 4)?;
    let train_extractor: bool = rc.get_or("train_extractor", false)?;
    let report = check_model_gradients(mode, classes, seed, tol, max_coords, train_extractor)?;
    let pass = report.pass();
    for p in report.failures() {
        log::error!("{}: rel err {:.3e} > {tol:.0e}", p.name, p.max_rel_err);
    }
    Ok(json!({ "pass": pass, "tol": tol, "mode": mode, "worst_rel_err": report.worst(), "params": report.params }))
}

/// Finite-difference check of a desk-scale model in `f64` on a seeded
/// pseudo-random patch. Rank-1 parameters are jittered so the check point is
/// generic rather than the all-zero-bias initialisation.
pub fn check_model_gradients(
    mode: FusionMode,
    classes: usize,
    seed: u64,
    tol: f64,
    max_coords: usize,
    train_extractor: bool,
) -> Result<crate::tensor::gradcheck::GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let mut model = LeanModel::<f64>::new(ModelConfig::desk(mode, classes), seed)?;
    model.set_extractor_trainable(train_extractor);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    for id in model.store.ids().collect::<Vec<_>>() {
        let p = model.store.get_mut(id);
        if p.value.shape().len() == 1 {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
    let samples: Vec<f32> = (0..crate::dsp::PATCH_SAMPLES)
        .map(|n| 0.3 * ((n as f32) * 0.07).sin() + rng.gen_range(-0.2..0.2))
        .collect();
    let input: ModelInput<f64> = ModelInput::from_patch(&crate::dsp::Patch1s::new(samples, 0.0)?).cast();
    let labels = crate::tensor::Tensor::row((0..classes).map(|k| (k % 2) as f64).collect());
    let opts = GradCheckOptions {
        tol,
        max_coords: Some(max_coords),
        seed,
    };
    grad_check(
        &model.store,
        |store| {
            let mut tape = Tape::new();
            let f = model.forward_with(store, &mut tape, &input, &mut |_| {})?;
            let loss = tape.bce(f.scores, &labels)?;
            Ok((tape, loss))
        },
        opts,
    )
}
