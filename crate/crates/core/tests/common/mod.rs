//! Helpers and independent reference implementations shared by the
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use lean::tensor::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use lean::tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1]`, optionally kept at least `gap` away from zero.
pub fn random_tensor(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = r.gen_range(-1.0..1.0);
            if v.abs() >= gap {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Gradient check of `f` with every input trainable. The scalar loss is
/// `sum(f(inputs) ⊙ W)` for a fixed random `W`, so each output coordinate
/// carries a different weight.
pub fn op_check<Op>(inputs: Vec<Tensor<f64>>, f: Op, tol: f64) -> GradCheckReport
where
    Op: for<'a, 'p> Fn(&'a mut Tape<'p, f64>, &[Var]) -> lean::Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.push(format!("x{i}"), t, true))
        .collect();
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&store, id)).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.shape(out).to_vec()
    };
    let w = random_tensor(&out_shape, 0xfeed, 0.1);
    grad_check(
        &store,
        |s| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            let out = f(&mut tape, &vars)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(out, wv)?;
            let loss = tape.sum(p)?;
            Ok((tape, loss))
        },
        GradCheckOptions::new(tol),
    )
    .unwrap()
}

/// Mean over positives of the precision among items scoring at least as
/// high as that positive.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&t| {
            let above = scores.iter().filter(|&&s| s >= t).count() as f64;
            let hits = pos.iter().filter(|&&s| s >= t).count() as f64;
            hits / above
        })
        .sum();
    Some(total / pos.len() as f64)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn roc_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn phi_oracle(x: f64) -> f64 {
    let n = 4000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Inverse of [`phi_oracle`] by bisection.
pub fn phi_inv_oracle(p: f64) -> f64 {
    let (mut lo, mut hi) = (-9.0, 9.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if phi_oracle(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn d_prime_oracle(auc: f64) -> f64 {
    std::f64::consts::SQRT_2 * phi_inv_oracle(auc)
}

/// A `len`-sample clip of a few sinusoids plus noise at 16 kHz.
pub fn random_clip(len: usize, seed: u64) -> lean::dsp::WaveClip {
    let mut r = rng(seed);
    let f1: f64 = r.gen_range(200.0..3000.0);
    let f2: f64 = r.gen_range(200.0..3000.0);
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let v = 0.3 * (2.0 * std::f64::consts::PI * f1 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * f2 * t).sin()
                + r.gen_range(-0.05..0.05);
            v as f32
        })
        .collect();
    lean::dsp::WaveClip::new(samples, 16_000)
}

/// Pins a forward closure to the higher-ranked signature the checker wants.
pub fn forward_fn<Fwd>(f: Fwd) -> Fwd
where
    Fwd: for<'p> Fn(&'p ParamStore<f64>) -> lean::Result<(Tape<'p, f64>, Var)>,
{
    f
}

/// Chunk windows for a 16 kHz clip, written out directly from the protocol:
/// windows every `hop` samples while a full second fits, the tiled remainder
/// after the last full window if anything is left, and the tiled clip when it
/// is no longer than one second.
pub fn enumerate_chunks(x: &[f32], hop: usize) -> Vec<Vec<f32>> {
    let tiled = |s: &[f32]| {
        s.iter()
            .copied()
            .cycle()
            .take(lean::dsp::PATCH_SAMPLES)
            .collect::<Vec<_>>()
    };
    if x.len() <= lean::dsp::PATCH_SAMPLES {
        return vec![tiled(x)];
    }
    let mut out = Vec::new();
    let mut k = 0;
    while k * hop + lean::dsp::PATCH_SAMPLES <= x.len() {
        out.push(x[k * hop..k * hop + lean::dsp::PATCH_SAMPLES].to_vec());
        k += 1;
    }
    if (k - 1) * hop + lean::dsp::PATCH_SAMPLES < x.len() {
        out.push(tiled(&x[k * hop..]));
    }
    out
}

pub fn brute_force_scores(model: &lean::LeanModel<f32>, clip: &lean::dsp::WaveClip, hop: usize) -> (Vec<f32>, usize) {
    let chunks = enumerate_chunks(&clip.samples, hop);
    let per_chunk: Vec<Vec<f32>> = chunks
        .iter()
        .map(|c| {
            let p = lean::dsp::Patch1s::new(c.clone(), 0.0).unwrap();
            model.predict(&lean::ModelInput::from_patch(&p)).unwrap()
        })
        .collect();
    let mut acc = vec![0f64; per_chunk[0].len()];
    for c in &per_chunk {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v as f64;
        }
    }
    let n = per_chunk.len() as f64;
    (acc.iter().map(|a| (a / n) as f32).collect(), per_chunk.len())
}
