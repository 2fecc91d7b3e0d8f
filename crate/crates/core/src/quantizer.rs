//! Post-training int8 weight quantization.
//!
//! Weight tensors (rank ≥ 2) are stored as symmetric per-tensor int8 with
//! `scale = max|x| / 127`. Rank-1 tensors (biases and folded batch-norm
//! scale/shift vectors) stay `f32`. Loading a quantized container dequantizes
//! into an ordinary float model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::container::{Container, NamedTensor, TensorData};
use crate::data_io::LabeledClip;
use crate::error::{Error, Result};
use crate::inference;
use crate::metrics::{self, LabelMatrix, MetricsReport};
use crate::model::LeanModel;
use crate::tensor::Tensor;

pub const QMAX: i32 = 127;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub data: Vec<i8>,
    pub scale: f32,
    pub zero_point: i32,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Result<Tensor<f32>> {
        let data = self
            .data
            .iter()
            .map(|&q| (q as i32 - self.zero_point) as f32 * self.scale)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

/// `max|x| / 127`, nudged by at most a few ulps so that re-deriving the
/// scale from the dequantized extreme `127 · scale` gives the same bits.
fn stable_scale(max_abs: f32) -> f32 {
    let s = max_abs / QMAX as f32;
    let fixed = |c: f32| c > 0.0 && (QMAX as f32 * c) / QMAX as f32 == c;
    let mut down = s;
    let mut up = s;
    for _ in 0..8 {
        if fixed(down) {
            return down;
        }
        if fixed(up) {
            return up;
        }
        down = down.next_down();
        up = up.next_up();
    }
    s
}

pub fn quantize_tensor(x: &Tensor<f32>) -> Result<QuantizedTensor> {
    x.check_finite("quantize")?;
    let max_abs = x.data().iter().fold(0f32, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 { 1.0 } else { stable_scale(max_abs) };
    let data = x
        .data()
        .iter()
        .map(|&v| (v / scale).round().clamp(-(QMAX as f32), QMAX as f32) as i8)
        .collect();
    Ok(QuantizedTensor {
        data,
        scale,
        zero_point: 0,
        shape: x.shape().to_vec(),
    })
}

fn is_weight(t: &NamedTensor) -> bool {
    t.shape.len() >= 2
}

/// Converts every float weight tensor of `c` to int8; other entries and the
/// metadata are kept.
pub fn quantize_container(c: &Container) -> Result<Container> {
    let mut out = Container {
        meta: c.meta.clone(),
        tensors: Vec::with_capacity(c.tensors.len()),
    };
    for t in &c.tensors {
        let q = match (&t.data, is_weight(t)) {
            (TensorData::F32(_), true) => {
                let qt = quantize_tensor(&t.to_tensor::<f32>()?)?;
                NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: TensorData::I8 {
                        data: qt.data,
                        scale: qt.scale,
                        zero_point: qt.zero_point,
                    },
                }
            }
            _ => t.clone(),
        };
        out.tensors.push(q);
    }
    out.set_meta("weights", "int8");
    Ok(out)
}

pub fn quantize_model(model: &LeanModel<f32>) -> Result<Container> {
    quantize_container(&model.to_container()?)
}

/// Float model whose weights are the dequantized int8 values.
pub fn dequantized_model(q: &Container) -> Result<LeanModel<f32>> {
    LeanModel::from_container(q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSize {
    pub float_bytes: usize,
    pub quantized_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub float_bytes: usize,
    pub quantized_bytes: usize,
    pub ratio: f64,
    pub params: usize,
    /// Tensor entry bytes per top-level module; container headers excluded.
    pub modules: BTreeMap<String, ModuleSize>,
    pub float_header_bytes: usize,
    pub quantized_header_bytes: usize,
}

pub fn size_report(float: &Container, quantized: &Container) -> Result<SizeReport> {
    if float.tensors.len() != quantized.tensors.len() {
        return Err(Error::Contract("containers hold different tensor sets".into()));
    }
    let mut modules: BTreeMap<String, ModuleSize> = BTreeMap::new();
    for (f, q) in float.tensors.iter().zip(&quantized.tensors) {
        if f.name != q.name {
            return Err(Error::Contract(format!(
                "tensor order differs at {} / {}",
                f.name, q.name
            )));
        }
        let key = f.name.split('.').next().unwrap_or("").to_string();
        let e = modules.entry(key).or_insert(ModuleSize {
            float_bytes: 0,
            quantized_bytes: 0,
        });
        e.float_bytes += f.encoded_len();
        e.quantized_bytes += q.encoded_len();
    }
    let float_bytes = float.encoded_len();
    let quantized_bytes = quantized.encoded_len();
    Ok(SizeReport {
        float_bytes,
        quantized_bytes,
        ratio: float_bytes as f64 / quantized_bytes as f64,
        params: float.tensors.iter().map(|t| t.data.len()).sum(),
        modules,
        float_header_bytes: float.header_len(),
        quantized_header_bytes: quantized.header_len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub float: MetricsReport,
    pub quantized: MetricsReport,
    /// `float mAP − quantized mAP`.
    pub map_drop: Option<f64>,
    /// Quantized minus float AP, per class.
    pub per_class_ap_delta: Vec<Option<f64>>,
}

/// Scores `clips` with both models through the chunked pipeline.
pub fn eval_quantized(
    float_model: &LeanModel<f32>,
    quant_model: &LeanModel<f32>,
    clips: &[LabeledClip],
    labels: &LabelMatrix,
    overlap: f64,
) -> Result<DegradationReport> {
    if float_model.config.classes != quant_model.config.classes {
        return Err(Error::Contract("models disagree on the class count".into()));
    }
    let eval = |m: &LeanModel<f32>| -> Result<MetricsReport> {
        let preds = inference::predict_all(clips.iter().map(|c| (c.id.as_str(), &c.clip)), m, overlap)?;
        metrics::evaluate(&inference::score_matrix(&preds)?, labels)
    };
    let float = eval(float_model)?;
    let quantized = eval(quant_model)?;
    let per_class_ap_delta = float
        .per_class_ap
        .iter()
        .zip(&quantized.per_class_ap)
        .map(|(f, q)| Some((*q)? - (*f)?))
        .collect();
    Ok(DegradationReport {
        map_drop: float.map.zip(quantized.map).map(|(f, q)| f - q),
        float,
        quantized,
        per_class_ap_delta,
    })
}
