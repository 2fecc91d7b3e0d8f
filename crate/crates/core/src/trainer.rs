//! Mini-batch BCE training with Adam, per-epoch validation through the
//! chunked inference pipeline, best-epoch selection by validation AUC-PR,
//! and checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{put_str, put_u32, Container, Reader};
use crate::data_io::{label_matrix_of, LabeledClip};
use crate::dsp::{self, Patch1s, WaveClip, PATCH_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::inference;
use crate::metrics::{self, MetricsReport};
use crate::model::{LeanModel, ModelConfig, ModelInput};
use crate::tensor::{AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub eval_overlap: f64,
    pub model: ModelConfig,
    /// Also update the conv stack (used for extractor pretraining).
    pub train_extractor: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 40,
            seed,
            eval_overlap: 0.5,
            model,
            train_extractor: false,
        }
    }

    pub fn mode(&self) -> FusionMode {
        self.model.mode
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval_overlap) {
            return Err(Error::Config(format!(
                "eval_overlap {} is outside [0, 1)",
                self.eval_overlap
            )));
        }
        self.model.validate()
    }
}

/// Binary clip labels `Y_i`, shared by every patch of the clip.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector(Tensor<f32>);

impl LabelVector {
    pub fn new(labels: &[u8]) -> Result<Self> {
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Domain("labels must be 0 or 1".into()));
        }
        if !labels.contains(&1) {
            return Err(Error::Domain(
                "a training clip needs at least one positive label".into(),
            ));
        }
        Ok(LabelVector(Tensor::row(labels.iter().map(|&v| v as f32).collect())))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: Option<f64>,
    pub val_auc_pr: Option<f64>,
    pub val_auc_roc: Option<f64>,
    pub val_d_prime: Option<f64>,
    pub seconds: f64,
}

impl EpochReport {
    fn from_metrics(epoch: usize, train_loss: f64, m: &MetricsReport, seconds: f64) -> Self {
        EpochReport {
            epoch,
            train_loss,
            val_map: m.map,
            val_auc_pr: m.mean_auc_pr,
            val_auc_roc: m.mean_auc_roc,
            val_d_prime: m.d_prime,
            seconds,
        }
    }
}

/// Index of the highest validation AUC-PR; the earliest epoch wins ties.
/// Undefined values rank below every defined one.
pub fn select_best(reports: &[EpochReport]) -> Option<usize> {
    let key = |r: &EpochReport| r.val_auc_pr.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        if best.is_none_or(|b| key(r) > key(&reports[b])) {
            best = Some(i);
        }
    }
    best
}

pub const SELECTION_METRIC: &str = "val_auc_pr";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Container,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub metric: String,
    pub metric_value: Option<f64>,
    pub best_report: EpochReport,
}

impl Checkpoint {
    pub fn load_model(&self) -> Result<LeanModel<f32>> {
        LeanModel::from_container(&self.model)
    }
}

/// The trainer's result: best checkpoint and one report per epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub reports: Vec<EpochReport>,
    pub model: LeanModel<f32>,
}

/// One training patch: a seeded offset inside the clip, or the tiled clip
/// when it is shorter than a second.
pub fn training_patch<R: Rng + ?Sized>(clip: &WaveClip, rng: &mut R) -> Result<Patch1s> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!("training clips must be {SAMPLE_RATE} Hz")));
    }
    let n = clip.samples.len();
    if n <= PATCH_SAMPLES {
        return Ok(dsp::patchify(clip, 1.0)?.remove(0));
    }
    let start = rng.gen_range(0..=n - PATCH_SAMPLES);
    Patch1s::new(
        clip.samples[start..start + PATCH_SAMPLES].to_vec(),
        start as f64 / SAMPLE_RATE as f64,
    )
}

/// Validation metrics through the chunked inference pipeline.
pub fn validate(model: &LeanModel<f32>, set: &[LabeledClip], overlap: f64) -> Result<MetricsReport> {
    let preds = inference::predict_all(set.iter().map(|c| (c.id.as_str(), &c.clip)), model, overlap)?;
    metrics::evaluate(
        &inference::score_matrix(&preds)?,
        &label_matrix_of(set, model.config.classes)?,
    )
}

fn check_sets(cfg: &TrainConfig, train_set: &[LabeledClip], val_set: &[LabeledClip]) -> Result<Vec<LabelVector>> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".into()));
    }
    for c in train_set.iter().chain(val_set) {
        if c.labels.len() != cfg.model.classes {
            return Err(Error::Dimension(format!(
                "clip {} has {} labels, model has {} classes",
                c.id,
                c.labels.len(),
                cfg.model.classes
            )));
        }
    }
    train_set
        .iter()
        .map(|c| LabelVector::new(&c.labels).map_err(|e| Error::Domain(format!("clip {}: {e}", c.id))))
        .collect()
}

/// Trains a freshly initialised model.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[LabeledClip],
    val_set: &[LabeledClip],
    log: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = LeanModel::new(cfg.model.clone(), cfg.seed)?;
    train_from(cfg, model, train_set, val_set, log)
}

/// Trains `model` in place of a fresh one, e.g. after loading a pretrained
/// extractor. Epoch reports are appended to `log` as JSON lines.
pub fn train_from(
    cfg: &TrainConfig,
    mut model: LeanModel<f32>,
    train_set: &[LabeledClip],
    val_set: &[LabeledClip],
    log: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config != cfg.model {
        return Err(Error::Config("model does not match the training config".into()));
    }
    let labels = check_sets(cfg, train_set, val_set)?;
    model.set_extractor_trainable(cfg.train_extractor);
    let mut log_file = match log {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, LeanModel<f32>, MetricsReport)> = None;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.is_empty() {
                log::warn!("epoch {epoch}: batch {b} is empty, skipped");
                continue;
            }
            model.store.zero_grads();
            for &i in batch {
                let patch = training_patch(&train_set[i].clip, &mut rng)?;
                let input = ModelInput::from_patch(&patch);
                let (loss, grads) = model
                    .loss_and_grads(&input, labels[i].tensor())
                    .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}, clip {}: {e}", train_set[i].id)))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: loss is {loss}")));
                }
                loss_sum += loss as f64;
                seen += 1;
                model.store.accumulate(&grads)?;
            }
            model.store.scale_grads(1.0 / batch.len() as f32);
            adam.step(&mut model.store)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let val = validate(&model, val_set, cfg.eval_overlap)?;
        let report = EpochReport::from_metrics(epoch, loss_sum / seen.max(1) as f64, &val, t0.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: loss {:.5} val mAP {:?} AUC-PR {:?}",
            report.train_loss,
            report.val_map,
            report.val_auc_pr
        );
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&report)?)?;
        }
        reports.push(report);
        if select_best(&reports) == Some(reports.len() - 1) {
            best = Some((epoch, model.clone(), val));
        }
    }

    let (best_epoch, best_model, _) = best.ok_or_else(|| Error::Contract("no epoch completed".into()))?;
    let best_report = reports[best_epoch - 1].clone();
    let checkpoint = Checkpoint {
        model: best_model.to_container()?,
        config: cfg.clone(),
        best_epoch,
        metric: SELECTION_METRIC.to_string(),
        metric_value: best_report.val_auc_pr,
        best_report,
    };
    Ok(TrainOutcome {
        checkpoint,
        reports,
        model: best_model,
    })
}

/// Trains the conv stack end to end in extractor-only mode, standing in for
/// large-scale pretraining. Only the config's extractor, class count and
/// projection width are used.
pub fn pretrain_extractor(
    cfg: &TrainConfig,
    train_set: &[LabeledClip],
    val_set: &[LabeledClip],
) -> Result<TrainOutcome> {
    let mut pre = cfg.clone();
    pre.model.mode = FusionMode::ExtractorOnly;
    pre.train_extractor = true;
    train(&pre, train_set, val_set, None)
}

/// A model for `cfg` whose extractor and projection come from `pretrained`.
pub fn model_from_pretrained(cfg: &ModelConfig, pretrained: &LeanModel<f32>, seed: u64) -> Result<LeanModel<f32>> {
    let mut model = LeanModel::new(cfg.clone(), seed)?;
    model.copy_modules_from(pretrained, &["extractor.", "projection."])?;
    Ok(model)
}

// ---------------------------------------------------------------- checkpoint file

pub const CKPT_MAGIC: &[u8; 8] = b"LEANCKPT";
pub const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    /// Model container bytes followed by a footer of key/value pairs.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.model.to_bytes();
        out.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut out, CKPT_VERSION as usize);
        let kv = [
            ("train_config", serde_json::to_string(&self.config)?),
            ("best_epoch", self.best_epoch.to_string()),
            ("metric", self.metric.clone()),
            ("metric_value", serde_json::to_string(&self.metric_value)?),
            ("best_report", serde_json::to_string(&self.best_report)?),
        ];
        put_u32(&mut out, kv.len());
        for (k, v) in kv {
            put_str(&mut out, k);
            put_str(&mut out, &v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, used) = Container::parse(bytes)?;
        let mut r = Reader::new(&bytes[used..]);
        if r.array::<8>()? != *CKPT_MAGIC {
            return Err(Error::Load("checkpoint footer missing".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Load(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()?;
        let mut kv = std::collections::BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            kv.insert(k, r.string()?);
        }
        if !r.is_done() {
            return Err(Error::Load("trailing bytes after checkpoint footer".into()));
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Load(format!("checkpoint footer lacks {k}")))
        };
        let json = |e: serde_json::Error| Error::Load(format!("checkpoint footer: {e}"));
        Ok(Checkpoint {
            model,
            config: serde_json::from_str(get("train_config")?).map_err(json)?,
            best_epoch: get("best_epoch")?
                .parse()
                .map_err(|_| Error::Load("bad best_epoch".into()))?,
            metric: get("metric")?.clone(),
            metric_value: serde_json::from_str(get("metric_value")?).map_err(json)?,
            best_report: serde_json::from_str(get("best_report")?).map_err(json)?,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
