//! Spatial channel: a MobileNet-style stack of depthwise-separable
//! convolutions over the log-mel patch, global-average-pooled into one
//! embedding, then a linear projection down to `m` units.
//!
//! Batch norm only exists in folded form, as a per-channel scale and shift
//! after every convolution.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Container, NamedTensor};
use crate::dsp::{LogMelPatch, MEL_BANDS, PATCH_FRAMES};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Elem, Init, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Full 3×3 convolution over the single-channel input.
    Stem,
    /// Depthwise 3×3 followed by pointwise 1×1.
    Separable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub stride: usize,
    /// Output channels at width multiplier 1.
    pub base_channels: usize,
}

const fn sep(stride: usize, base_channels: usize) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Separable,
        stride,
        base_channels,
    }
}

const STEM: LayerSpec = LayerSpec {
    kind: LayerKind::Stem,
    stride: 2,
    base_channels: 32,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub width_multiplier: f64,
    pub layers: Vec<LayerSpec>,
}

impl ExtractorConfig {
    /// The 14-layer MobileNet-v1 stack YAMNet uses.
    pub fn yamnet(width_multiplier: f64) -> Self {
        let mut layers = vec![
            STEM,
            sep(1, 64),
            sep(2, 128),
            sep(1, 128),
            sep(2, 256),
            sep(1, 256),
            sep(2, 512),
        ];
        layers.extend(std::iter::repeat_n(sep(1, 512), 5));
        layers.extend([sep(2, 1024), sep(1, 1024)]);
        ExtractorConfig {
            width_multiplier,
            layers,
        }
    }

    /// Six-layer stack used for desk-scale runs.
    pub fn desk(width_multiplier: f64) -> Self {
        ExtractorConfig {
            width_multiplier,
            layers: vec![STEM, sep(2, 64), sep(2, 128), sep(2, 256), sep(2, 512), sep(1, 1024)],
        }
    }

    pub fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| self.channels(l.base_channels))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "width multiplier {} outside (0, 1]",
                self.width_multiplier
            )));
        }
        match self.layers.first() {
            Some(l) if l.kind == LayerKind::Stem => {}
            _ => return Err(Error::Config("extractor must start with a stem layer".into())),
        }
        if self.layers[1..].iter().any(|l| l.kind == LayerKind::Stem) {
            return Err(Error::Config("only the first layer may be a stem".into()));
        }
        if self.layers.iter().any(|l| l.stride == 0 || l.base_channels == 0) {
            return Err(Error::Config("layer strides and channels must be positive".into()));
        }
        let last = self.layers.last().map(|l| l.base_channels);
        if last != Some(1024) {
            return Err(Error::Config("the last layer must have 1024 base channels".into()));
        }
        if self.embedding_dim() < 8 {
            return Err(Error::Config(format!(
                "embedding dim {} is below 8",
                self.embedding_dim()
            )));
        }
        Ok(())
    }

    /// Exact conv-stack parameter count, folded batch norm included.
    pub fn param_count(&self) -> usize {
        let mut cin = 1;
        let mut total = 0;
        for l in &self.layers {
            let cout = self.channels(l.base_channels);
            total += match l.kind {
                LayerKind::Stem => 9 * cin * cout + 2 * cout,
                LayerKind::Separable => 9 * cin + 2 * cin + cin * cout + 2 * cout,
            };
            cin = cout;
        }
        total
    }
}

#[derive(Clone, Debug)]
struct ConvIds {
    kind: LayerKind,
    stride: usize,
    /// stem kernel or depthwise kernel
    k3: ParamId,
    k3_scale: ParamId,
    k3_shift: ParamId,
    /// pointwise, separable layers only
    pw: Option<(ParamId, ParamId, ParamId)>,
}

/// Handles to the conv-stack parameters inside some [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Extractor {
    config: ExtractorConfig,
    layers: Vec<ConvIds>,
}

impl Extractor {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        config: &ExtractorConfig,
        store: &mut ParamStore<F>,
        rng: &mut R,
        trainable: bool,
    ) -> Result<Self> {
        config.validate()?;
        let mut cin = 1;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, l) in config.layers.iter().enumerate() {
            let cout = config.channels(l.base_channels);
            let p = format!("extractor.l{i:02}");
            let mut add = |name: &str, shape: &[usize], init: Init| -> Result<ParamId> {
                Ok(store.push(format!("{p}.{name}"), init.build(shape, rng)?, trainable))
            };
            let ids = match l.kind {
                LayerKind::Stem => ConvIds {
                    kind: l.kind,
                    stride: l.stride,
                    k3: add("conv", &[3, 3, cin, cout], Init::GlorotUniform)?,
                    k3_scale: add("conv_scale", &[cout], Init::Constant(1.0))?,
                    k3_shift: add("conv_shift", &[cout], Init::Zeros)?,
                    pw: None,
                },
                LayerKind::Separable => ConvIds {
                    kind: l.kind,
                    stride: l.stride,
                    k3: add("dw", &[3, 3, cin], Init::GlorotUniform)?,
                    k3_scale: add("dw_scale", &[cin], Init::Constant(1.0))?,
                    k3_shift: add("dw_shift", &[cin], Init::Zeros)?,
                    pw: Some((
                        add("pw", &[cin, cout], Init::GlorotUniform)?,
                        add("pw_scale", &[cout], Init::Constant(1.0))?,
                        add("pw_shift", &[cout], Init::Zeros)?,
                    )),
                },
            };
            layers.push(ids);
            cin = cout;
        }
        Ok(Extractor {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut v = vec![l.k3, l.k3_scale, l.k3_shift];
                if let Some((a, b, c)) = l.pw {
                    v.extend([a, b, c]);
                }
                v
            })
            .collect()
    }

    /// Records the conv stack on `tape`; returns the `[1, embedding_dim]` embedding.
    pub fn embed_on<'p, F: Elem>(&self, tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, log_mel: Var) -> Result<Var> {
        match *tape.shape(log_mel) {
            [PATCH_FRAMES, MEL_BANDS] | [PATCH_FRAMES, MEL_BANDS, 1] => {}
            ref s => return dim_err(format!("extractor expects a (96, 64) patch, got {s:?}")),
        }
        let mut x = tape.reshape(log_mel, &[PATCH_FRAMES, MEL_BANDS, 1])?;
        for l in &self.layers {
            let k = tape.param(store, l.k3);
            x = match l.kind {
                LayerKind::Stem => tape.conv2d(x, k, l.stride)?,
                LayerKind::Separable => tape.depthwise(x, k, l.stride)?,
            };
            x = affine_relu(tape, store, x, l.k3_scale, l.k3_shift)?;
            if let Some((pw, scale, shift)) = l.pw {
                let (h, w, c) = hwc(tape.shape(x));
                let flat = tape.reshape(x, &[h * w, c])?;
                let wv = tape.param(store, pw);
                let y = tape.matmul(flat, wv)?;
                let cout = tape.shape(y)[1];
                let y = tape.reshape(y, &[h, w, cout])?;
                x = affine_relu(tape, store, y, scale, shift)?;
            }
        }
        tape.global_avg_pool(x)
    }
}

fn hwc(s: &[usize]) -> (usize, usize, usize) {
    (s[0], s[1], s[2])
}

fn affine_relu<'p, F: Elem>(
    tape: &mut Tape<'p, F>,
    store: &'p ParamStore<F>,
    x: Var,
    scale: ParamId,
    shift: ParamId,
) -> Result<Var> {
    let (h, w, c) = hwc(tape.shape(x));
    let flat = tape.reshape(x, &[h * w, c])?;
    let s = tape.param(store, scale);
    let b = tape.param(store, shift);
    let y = tape.mul_row(flat, s)?;
    let y = tape.add_row(y, b)?;
    let y = tape.relu(y)?;
    tape.reshape(y, &[h, w, c])
}

/// Standalone frozen conv-stack weights, loadable from a model container.
#[derive(Clone, Debug)]
pub struct ExtractorWeights {
    pub store: ParamStore<f32>,
    pub net: Extractor,
}

impl ExtractorWeights {
    pub fn random(config: &ExtractorConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Extractor::register(config, &mut store, &mut rng, false)?;
        Ok(ExtractorWeights { store, net })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.net.config
    }

    /// Copies the extractor parameters out of a larger store.
    pub fn from_store(config: &ExtractorConfig, src: &ParamStore<f32>) -> Result<Self> {
        let mut w = Self::random(config, 0)?;
        let copied = w.store.copy_values_from(src)?;
        if copied != w.store.len() {
            return Err(Error::Load(format!(
                "source store holds {copied} of {} extractor tensors",
                w.store.len()
            )));
        }
        Ok(w)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.set_meta("kind", "extractor");
        c.set_meta("extractor_config", &serde_json::to_string(self.config())?);
        for (_, p) in self.store.iter() {
            c.tensors.push(NamedTensor::f32(&p.name, &p.value));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg = c
            .meta("extractor_config")
            .ok_or_else(|| Error::Load("container has no extractor_config".into()))?;
        let config: ExtractorConfig =
            serde_json::from_str(cfg).map_err(|e| Error::Load(format!("extractor_config: {e}")))?;
        let mut w = Self::random(&config, 0)?;
        c.fill_store(&mut w.store)?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_file(path)?)
    }
}

/// `[1, embedding_dim]` global-average-pooled feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialEmbedding(pub Tensor<f32>);

/// Frozen forward pass; nothing is kept for backprop.
pub fn forward_embed(patch: &LogMelPatch, weights: &ExtractorWeights) -> Result<SpatialEmbedding> {
    let mut tape = Tape::new();
    let x = tape.constant(patch.0.clone());
    let e = weights.net.embed_on(&mut tape, &weights.store, x)?;
    Ok(SpatialEmbedding(tape.value(e).clone()))
}

/// Linear projection of the embedding: `e·W + b`, no activation.
pub fn project<'p, F: Elem>(tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, proj: &Dense, e: Var) -> Result<Var> {
    proj.apply(tape, store, e)
}

/// A dense layer `x·W + b` with `W` of shape `(inputs, units)`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        prefix: &str,
        inputs: usize,
        units: usize,
    ) -> Result<Self> {
        let w = store.push(
            format!("{prefix}.w"),
            Init::GlorotUniform.build(&[inputs, units], rng)?,
            true,
        );
        let b = store.push(format!("{prefix}.b"), Init::Zeros.build(&[units], rng)?, true);
        Ok(Dense { w, b })
    }

    pub fn apply<'p, F: Elem>(&self, tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, x: Var) -> Result<Var> {
        let (rows, inputs) = tape.value(x).dims2()?;
        let wshape = store.value(self.w).shape();
        if wshape[0] != inputs {
            return dim_err(format!(
                "dense {}: input width {inputs} vs weight {:?} ({rows} rows)",
                store.get(self.w).name,
                wshape
            ));
        }
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn param_count(inputs: usize, units: usize) -> usize {
        inputs * units + units
    }
}
