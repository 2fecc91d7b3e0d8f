//! The assembled dual-channel model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::dsp::{self, Patch1s, WAVE_FRAME};
use crate::error::{Error, Result};
use crate::extractor::{Dense, Extractor, ExtractorConfig, ExtractorWeights};
use crate::fusion::{self, BahdanauAttention, FusionMode};
use crate::tensor::{Elem, ParamId, ParamStore, Tape, Tensor, Var};
use crate::wave_encoder::{self, WaveEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: FusionMode,
    pub classes: usize,
    pub extractor: ExtractorConfig,
    /// `m`, the width of `E_yam`.
    pub projection_units: usize,
    /// Units per LSTM direction; the wave channel is `2 * lstm_hidden` wide.
    pub lstm_hidden: usize,
    /// `d`, the additive-attention width.
    pub attention_units: usize,
    pub wave_frame: usize,
}

impl ModelConfig {
    /// Full-size configuration: 200 classes, full-width extractor, m = 256,
    /// 128-unit LSTMs, d = 128.
    pub fn full(mode: FusionMode) -> Self {
        ModelConfig {
            mode,
            classes: 200,
            extractor: ExtractorConfig::yamnet(1.0),
            projection_units: 256,
            lstm_hidden: 128,
            attention_units: 128,
            wave_frame: WAVE_FRAME,
        }
    }

    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk(mode: FusionMode, classes: usize) -> Self {
        ModelConfig {
            mode,
            classes,
            extractor: ExtractorConfig::desk(0.25),
            projection_units: 64,
            lstm_hidden: 32,
            attention_units: 32,
            wave_frame: WAVE_FRAME,
        }
    }

    pub fn head_inputs(&self) -> usize {
        match self.mode {
            FusionMode::ExtractorOnly => self.projection_units,
            _ => 2 * self.projection_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.classes == 0 || self.projection_units == 0 || self.wave_frame == 0 {
            return Err(Error::Config(
                "classes, projection units and frame size must be positive".into(),
            ));
        }
        if self.mode.uses_wave() {
            if self.lstm_hidden == 0 {
                return Err(Error::Config("lstm_hidden must be positive".into()));
            }
            if 2 * self.lstm_hidden != self.projection_units {
                return Err(Error::Config(format!(
                    "mode {} needs 2 * lstm_hidden ({}) == projection_units ({})",
                    self.mode,
                    2 * self.lstm_hidden,
                    self.projection_units
                )));
            }
        }
        if self.mode == FusionMode::Bahdanau && self.attention_units == 0 {
            return Err(Error::Config("attention_units must be positive".into()));
        }
        Ok(())
    }

    /// Exact parameter count per module, without building anything.
    pub fn param_breakdown(&self) -> ParamBreakdown {
        let m = self.projection_units;
        ParamBreakdown {
            extractor: self.extractor.param_count(),
            projection: Dense::param_count(self.extractor.embedding_dim(), m),
            wave_encoder: if self.mode.uses_wave() {
                wave_encoder::param_count(self.wave_frame, self.lstm_hidden)
            } else {
                0
            },
            attention: if self.mode == FusionMode::Bahdanau {
                BahdanauAttention::param_count(m, self.attention_units)
            } else {
                0
            },
            head: Dense::param_count(self.head_inputs(), self.classes),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub extractor: usize,
    pub projection: usize,
    pub wave_encoder: usize,
    pub attention: usize,
    pub head: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.extractor + self.projection + self.wave_encoder + self.attention + self.head
    }
}

/// Both model inputs for one patch.
#[derive(Clone, Debug)]
pub struct ModelInput<F = f32> {
    /// `(96, 64)`
    pub log_mel: Tensor<F>,
    /// `(40, 400)`
    pub wave: Tensor<F>,
}

impl ModelInput<f32> {
    pub fn from_patch(patch: &Patch1s) -> Self {
        ModelInput {
            log_mel: dsp::log_mel(patch).0,
            wave: dsp::reshape_wave(patch).0,
        }
    }
}

impl<F: Elem> ModelInput<F> {
    pub fn cast<G: Elem>(&self) -> ModelInput<G> {
        ModelInput {
            log_mel: self.log_mel.cast(),
            wave: self.wave.cast(),
        }
    }
}

/// Forward-pass stages, in execution order. The extractor stage includes the
/// projection layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Extractor,
    WaveEncoder,
    Fusion,
    Head,
}

/// Handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub embedding: Var,
    pub e_yam: Var,
    pub context: Option<Var>,
    pub attention: Option<Var>,
    pub fused: Var,
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct LeanModel<F: Elem = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    extractor: Extractor,
    projection: Dense,
    wave: Option<WaveEncoder>,
    attention: Option<BahdanauAttention>,
    head: Dense,
}

impl<F: Elem> LeanModel<F> {
    /// Builds and initializes every parameter from `seed`. The conv stack
    /// starts frozen.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let extractor = Extractor::register(&config.extractor, &mut store, &mut rng, false)?;
        let projection = Dense::register(
            &mut store,
            &mut rng,
            "projection",
            config.extractor.embedding_dim(),
            config.projection_units,
        )?;
        let wave = if config.mode.uses_wave() {
            Some(WaveEncoder::register(
                &mut store,
                &mut rng,
                config.wave_frame,
                config.lstm_hidden,
            )?)
        } else {
            None
        };
        let attention = if config.mode == FusionMode::Bahdanau {
            Some(BahdanauAttention::register(
                &mut store,
                &mut rng,
                config.projection_units,
                config.attention_units,
            )?)
        } else {
            None
        };
        let head = Dense::register(&mut store, &mut rng, "head", config.head_inputs(), config.classes)?;
        Ok(LeanModel {
            config,
            store,
            extractor,
            projection,
            wave,
            attention,
            head,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.config.mode
    }

    pub fn extractor_ids(&self) -> Vec<ParamId> {
        self.extractor.param_ids()
    }

    pub fn projection(&self) -> &Dense {
        &self.projection
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn wave_encoder(&self) -> Option<&WaveEncoder> {
        self.wave.as_ref()
    }

    pub fn attention_params(&self) -> Option<&BahdanauAttention> {
        self.attention.as_ref()
    }

    pub fn set_extractor_trainable(&mut self, trainable: bool) {
        for id in self.extractor.param_ids() {
            self.store.set_trainable(id, trainable);
        }
    }

    pub fn extractor_frozen(&self) -> bool {
        self.extractor
            .param_ids()
            .iter()
            .all(|&id| !self.store.get(id).trainable)
    }

    /// Counts the registered tensors per module.
    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut b = ParamBreakdown::default();
        for (_, p) in self.store.iter() {
            let n = p.value.len();
            match p.name.split('.').next() {
                Some("extractor") => b.extractor += n,
                Some("projection") => b.projection += n,
                Some("wave") => b.wave_encoder += n,
                Some("attention") => b.attention += n,
                Some("head") => b.head += n,
                _ => {}
            }
        }
        b
    }

    /// Records the whole model for one patch.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, F>, input: &ModelInput<F>) -> Result<Forward> {
        self.forward_marked(tape, input, &mut |_| {})
    }

    /// [`forward`](Self::forward), calling `mark` as each stage finishes.
    pub fn forward_marked<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        input: &ModelInput<F>,
        mark: &mut dyn FnMut(Stage),
    ) -> Result<Forward> {
        self.forward_with(&self.store, tape, input, mark)
    }

    /// Runs the model's graph with parameter values taken from `store`, which
    /// must share this model's layout (e.g. a perturbed clone of it).
    pub fn forward_with<'p>(
        &self,
        store: &'p ParamStore<F>,
        tape: &mut Tape<'p, F>,
        input: &ModelInput<F>,
        mark: &mut dyn FnMut(Stage),
    ) -> Result<Forward> {
        if store.len() != self.store.len() {
            return Err(Error::Contract(
                "parameter store does not match the model layout".into(),
            ));
        }
        let embedding = if self.extractor.param_ids().iter().all(|&id| !store.get(id).trainable) {
            let mut scratch = Tape::new();
            let x = scratch.constant(input.log_mel.clone());
            let e = self.extractor.embed_on(&mut scratch, store, x)?;
            tape.constant(scratch.value(e).clone())
        } else {
            let x = tape.constant(input.log_mel.clone());
            self.extractor.embed_on(tape, store, x)?
        };
        let e_yam = self.projection.apply(tape, store, embedding)?;
        mark(Stage::Extractor);
        let (context, attention, fused) = match (self.config.mode, &self.wave) {
            (FusionMode::ExtractorOnly, _) => (None, None, e_yam),
            (mode, Some(wave)) => {
                let seq = tape.constant(input.wave.clone());
                let enc = wave.encode(tape, store, seq)?;
                mark(Stage::WaveEncoder);
                match mode {
                    FusionMode::Concat => (Some(enc.context), None, fusion::fuse_concat(tape, e_yam, enc.context)?),
                    FusionMode::Affinity => {
                        let a = fusion::attend_affinity(tape, e_yam, enc.hidden_states)?;
                        (Some(a.context), Some(a.weights), a.fused)
                    }
                    FusionMode::Bahdanau => {
                        let p = self
                            .attention
                            .as_ref()
                            .ok_or_else(|| Error::Config("bahdanau mode without attention params".into()))?;
                        let a = fusion::attend_bahdanau(tape, store, p, e_yam, enc.hidden_states)?;
                        (Some(a.context), Some(a.weights), a.fused)
                    }
                    FusionMode::ExtractorOnly => unreachable!(),
                }
            }
            (mode, None) => return Err(Error::Config(format!("mode {mode} needs a wave encoder"))),
        };
        mark(Stage::Fusion);
        let scores = fusion::classify(tape, store, &self.head, fused)?;
        mark(Stage::Head);
        Ok(Forward {
            embedding,
            e_yam,
            context,
            attention,
            fused,
            scores,
        })
    }

    /// Scores for one patch.
    pub fn predict(&self, input: &ModelInput<F>) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        Ok(tape.value(out.scores).data().to_vec())
    }

    /// Mean BCE for one patch; gradients of trainable params.
    pub fn loss_and_grads(
        &self,
        input: &ModelInput<F>,
        labels: &Tensor<F>,
    ) -> Result<(F, crate::tensor::Gradients<F>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        let loss = tape.bce(out.scores, labels)?;
        let l = tape.value(loss).data()[0];
        Ok((l, tape.backward(loss)?))
    }

    pub fn cast<G: Elem>(&self) -> LeanModel<G> {
        LeanModel {
            config: self.config.clone(),
            store: self.store.cast(),
            extractor: self.extractor.clone(),
            projection: self.projection,
            wave: self.wave.clone(),
            attention: self.attention,
            head: self.head,
        }
    }

    pub fn load_extractor(&mut self, weights: &ExtractorWeights) -> Result<()> {
        if weights.config() != &self.config.extractor {
            return Err(Error::Load(
                "extractor weights were built for a different config".into(),
            ));
        }
        let src: ParamStore<F> = weights.store.cast();
        self.store.copy_values_from(&src)?;
        Ok(())
    }

    /// Copies every parameter whose name starts with one of `prefixes` from
    /// `other`. Shapes must agree.
    pub fn copy_modules_from(&mut self, other: &LeanModel<F>, prefixes: &[&str]) -> Result<usize> {
        let mut copied = 0;
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.get(id).name.clone();
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let src = other
                .store
                .find(&name)
                .ok_or_else(|| Error::Load(format!("source model lacks {name}")))?;
            let v = other.store.value(src);
            if v.shape() != self.store.value(id).shape() {
                return Err(Error::Load(format!(
                    "{name}: shape {:?} vs {:?}",
                    v.shape(),
                    self.store.value(id).shape()
                )));
            }
            self.store.get_mut(id).value = v.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::from_store(&self.store);
        c.set_meta("kind", "model");
        c.set_meta("mode", self.config.mode.as_str());
        c.set_meta("model_config", &serde_json::to_string(&self.config)?);
        Ok(c)
    }

    /// Rebuilds a model from its container; int8 tensors are dequantized.
    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg = c
            .meta("model_config")
            .ok_or_else(|| Error::Load("container has no model_config".into()))?;
        let config: ModelConfig = serde_json::from_str(cfg).map_err(|e| Error::Load(format!("model_config: {e}")))?;
        let mut m = Self::new(config, 0)?;
        c.fill_store(&mut m.store)?;
        Ok(m)
    }
}

impl LeanModel<f32> {
    pub fn extractor_weights(&self) -> Result<ExtractorWeights> {
        ExtractorWeights::from_store(&self.config.extractor, &self.store)
    }
}
