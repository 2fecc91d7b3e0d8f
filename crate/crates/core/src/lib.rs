//! Lightweight dual-channel audio tagging.
//!
//! A frozen depthwise-separable CNN embeds a log-mel patch, a two-layer
//! Bi-LSTM encodes the raw waveform of the same patch, and the two views are
//! fused by concatenation or by cross attention before a multi-label sigmoid
//! head. The crate covers the whole pipeline: DSP front end, model, training,
//! chunked inference, evaluation metrics and int8 weight quantization.
//!
//! See the guide in `book/` for a walk through the math.

pub mod cli;
pub mod container;
pub mod data_io;
pub mod dsp;
pub mod error;
pub mod extractor;
pub mod fusion;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod quantizer;
pub mod tensor;
pub mod trainer;
pub mod wave_encoder;

pub use error::{Error, Result};
pub use fusion::FusionMode;
pub use model::{LeanModel, ModelConfig, ModelInput};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/front_end.md")]
    mod front_end {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
