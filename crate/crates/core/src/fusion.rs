//! Joining the spatial embedding `E_yam` with the wave channel, and the
//! multi-label sigmoid head.
//!
//! Three fusion schemes are available:
//!
//! * concat: `[E_yam ‖ C_t]`
//! * affinity attention: `A = softmax_t(tanh(⟨E_yam, h_t⟩))`,
//!   `C_att = Σ_t A_t h_t`, output `[E_yam ‖ C_att]`. No parameters.
//! * additive (Bahdanau) attention: `Q = E_yam W_q + b_q`,
//!   `K = H W_k + b_k`, `A = softmax_t(tanh(Q + K) W_v + b_v)`, then as above.
//!
//! `W_v` is `(d, 1)`: it right-multiplies the `(T, d)` matrix `tanh(Q + K)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::extractor::Dense;
use crate::tensor::{Elem, Init, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    Affinity,
    Bahdanau,
    ExtractorOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Concat,
        FusionMode::Affinity,
        FusionMode::Bahdanau,
        FusionMode::ExtractorOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Affinity => "affinity",
            FusionMode::Bahdanau => "bahdanau",
            FusionMode::ExtractorOnly => "extractor_only",
        }
    }

    pub fn uses_wave(self) -> bool {
        self != FusionMode::ExtractorOnly
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

/// Attention weights, attentive context and the fused embedding.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[T, 1]`
    pub weights: Var,
    /// `[1, m]`
    pub context: Var,
    /// `[1, 2m]`
    pub fused: Var,
}

fn check_vec(tape: &Tape<'_, impl Elem>, v: Var, what: &str) -> Result<usize> {
    match *tape.shape(v) {
        [1, n] => Ok(n),
        ref s => dim_err(format!("{what} must be a [1, n] vector, got {s:?}")),
    }
}

pub fn fuse_concat<F: Elem>(tape: &mut Tape<'_, F>, e_yam: Var, c_t: Var) -> Result<Var> {
    let m = check_vec(tape, e_yam, "E_yam")?;
    let k = check_vec(tape, c_t, "C_t")?;
    if m != k {
        return dim_err(format!("E_yam has {m} values, C_t has {k}"));
    }
    tape.concat(&[e_yam, c_t])
}

/// Softmax over time of the given `[T, 1]` scores and the weighted sum of rows.
fn pool<F: Elem>(tape: &mut Tape<'_, F>, e_yam: Var, h: Var, scores: Var) -> Result<Attended> {
    let steps = tape.shape(h)[0];
    let weights = tape.softmax(scores)?;
    let a_row = tape.reshape(weights, &[1, steps])?;
    let context = tape.matmul(a_row, h)?;
    let fused = tape.concat(&[e_yam, context])?;
    Ok(Attended {
        weights,
        context,
        fused,
    })
}

fn check_keys<F: Elem>(tape: &Tape<'_, F>, e_yam: Var, h: Var) -> Result<(usize, usize)> {
    let m = check_vec(tape, e_yam, "E_yam")?;
    let (steps, width) = tape.value(h).dims2()?;
    if width != m || steps == 0 {
        return dim_err(format!("E_yam has {m} values but hidden states are [{steps}, {width}]"));
    }
    Ok((steps, m))
}

pub fn attend_affinity<F: Elem>(tape: &mut Tape<'_, F>, e_yam: Var, h: Var) -> Result<Attended> {
    let (_, m) = check_keys(tape, e_yam, h)?;
    let e_col = tape.reshape(e_yam, &[m, 1])?;
    let dots = tape.matmul(h, e_col)?;
    let scores = tape.tanh(dots)?;
    pool(tape, e_yam, h, scores)
}

#[derive(Clone, Copy, Debug)]
pub struct BahdanauAttention {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
}

impl BahdanauAttention {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        m: usize,
        d: usize,
    ) -> Result<Self> {
        let mut add = |name: &str, shape: &[usize], init: Init| -> Result<ParamId> {
            Ok(store.push(format!("attention.{name}"), init.build(shape, rng)?, true))
        };
        Ok(BahdanauAttention {
            wq: add("wq", &[m, d], Init::GlorotUniform)?,
            bq: add("bq", &[d], Init::Zeros)?,
            wk: add("wk", &[m, d], Init::GlorotUniform)?,
            bk: add("bk", &[d], Init::Zeros)?,
            wv: add("wv", &[d, 1], Init::GlorotUniform)?,
            bv: add("bv", &[1], Init::Zeros)?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv]
    }

    pub fn param_count(m: usize, d: usize) -> usize {
        2 * (m * d + d) + d + 1
    }
}

pub fn attend_bahdanau<'p, F: Elem>(
    tape: &mut Tape<'p, F>,
    store: &'p ParamStore<F>,
    p: &BahdanauAttention,
    e_yam: Var,
    h: Var,
) -> Result<Attended> {
    check_keys(tape, e_yam, h)?;
    let wq = tape.param(store, p.wq);
    let bq = tape.param(store, p.bq);
    let wk = tape.param(store, p.wk);
    let bk = tape.param(store, p.bk);
    let wv = tape.param(store, p.wv);
    let bv = tape.param(store, p.bv);
    let q = tape.matmul(e_yam, wq)?;
    let q = tape.add_row(q, bq)?;
    let k = tape.matmul(h, wk)?;
    let k = tape.add_row(k, bk)?;
    let qk = tape.add_row(k, q)?;
    let act = tape.tanh(qk)?;
    let s = tape.matmul(act, wv)?;
    let scores = tape.add_row(s, bv)?;
    pool(tape, e_yam, h, scores)
}

/// `sigmoid(E·P + b)`, one independent score per class.
pub fn classify<'p, F: Elem>(tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, head: &Dense, e: Var) -> Result<Var> {
    let logits = head.apply(tape, store, e)?;
    tape.sigmoid(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn concat_toy() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::row(vec![3.0, 4.0]));
        let out = fuse_concat(&mut tape, e, c).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
        let bad = tape.constant(Tensor::row(vec![3.0]));
        assert!(fuse_concat(&mut tape, e, bad).is_err());
    }

    #[test]
    fn orthogonal_query_gives_uniform_weights_and_row_mean() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::row(vec![0.0, 0.0, 1.0]));
        let h = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 0.0, 3.0, -4.0, 0.0]).unwrap());
        let a = attend_affinity(&mut tape, e, h).unwrap();
        assert_eq!(tape.value(a.weights).data(), &[0.5, 0.5]);
        assert_eq!(tape.value(a.context).data(), &[2.0, -1.0, 0.0]);
    }

    #[test]
    fn affinity_single_step() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::row(vec![0.3, 0.7]));
        let h = tape.constant(Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let a = attend_affinity(&mut tape, e, h).unwrap();
        assert_eq!(tape.value(a.weights).data(), &[1.0]);
        assert_eq!(tape.value(a.context).data(), &[0.5, -0.5]);
    }

    #[test]
    fn affinity_toy_by_hand() {
        // scores tanh(10), tanh(0); A by explicit exponentials.
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::row(vec![10.0, 0.0]));
        let h = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = attend_affinity(&mut tape, e, h).unwrap();
        let s0 = 10f64.tanh();
        let a0 = s0.exp() / (s0.exp() + 1.0);
        let a1 = 1.0 / (s0.exp() + 1.0);
        let w = tape.value(a.weights).data();
        assert!((w[0] - a0).abs() < 1e-15 && (w[1] - a1).abs() < 1e-15);
        let c = tape.value(a.context).data();
        assert!((c[0] - a0).abs() < 1e-15 && (c[1] - a1).abs() < 1e-15);
        assert_eq!(tape.value(a.fused).len(), 4);
    }

    #[test]
    fn zero_value_projection_is_uniform() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rand::rngs::mock::StepRng::new(1, 7);
        let p = BahdanauAttention::register(&mut store, &mut rng, 2, 3).unwrap();
        store.get_mut(p.wv).value = Tensor::zeros(&[3, 1]);
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::row(vec![5.0, -3.0]));
        let h = tape.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 9.0]).unwrap());
        let a = attend_bahdanau(&mut tape, &store, &p, e, h).unwrap();
        for &w in tape.value(a.weights).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn full_size_counts() {
        assert_eq!(BahdanauAttention::param_count(256, 128), 65_921);
        assert_eq!(Dense::param_count(512, 200), 102_600);
        assert_eq!(Dense::param_count(256, 200), 51_400);
        assert_eq!(Dense::param_count(1024, 256), 262_400);
    }

    #[test]
    fn zero_head_gives_half() {
        let mut store = ParamStore::<f64>::new();
        let head = Dense {
            w: store.push("head.w", Tensor::zeros(&[4, 3]), true),
            b: store.push("head.b", Tensor::zeros(&[3]), true),
        };
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::row(vec![1.0, -2.0, 3.0, 4.0]));
        let y = classify(&mut tape, &store, &head, e).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert!("nope".parse::<FusionMode>().is_err());
    }
}
