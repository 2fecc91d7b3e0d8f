use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Elem, Tensor};
use crate::error::{dim_err, Result};

/// How a parameter tensor is filled at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    /// (Semi-)orthogonal matrix from the QR factorization of a Gaussian draw.
    Orthogonal,
    Zeros,
    Constant(f64),
    /// LSTM bias: zeros except the forget-gate block, which is one.
    /// The payload is the hidden size.
    LstmBias(usize),
}

/// Fan-in / fan-out in the Keras convention.
fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [n] => (n, n),
        [i, o] => (i, o),
        // depthwise [k, k, c]: each channel sees a k×k window
        [k1, k2, _] => (k1 * k2, k1 * k2),
        [k1, k2, i, o] => (k1 * k2 * i, k1 * k2 * o),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fi, fo) = fans(shape);
    (6.0 / (fi + fo) as f64).sqrt()
}

impl Init {
    pub fn build<F: Elem, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Result<Tensor<F>> {
        if shape.is_empty() || shape.contains(&0) {
            return dim_err(format!("cannot initialize a tensor of shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match self {
            Init::GlorotUniform => {
                let b = glorot_bound(shape);
                let u = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| u.sample(rng)).collect()
            }
            Init::Orthogonal => {
                let (rows, cols) = match *shape {
                    [r, c] => (r, c),
                    _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
                };
                orthogonal(rows, cols, rng)
            }
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::LstmBias(h) => {
                if n != 4 * h {
                    return dim_err(format!("LSTM bias of {n} values for hidden size {h}"));
                }
                (0..n)
                    .map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 })
                    .collect()
            }
        };
        Tensor::from_f64(shape, &data)
    }
}

/// Row-major `rows×cols` matrix with orthonormal columns (rows ≥ cols) or rows.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // `short` column vectors of length `tall`, orthonormalized by modified Gram-Schmidt.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..short {
        for i in 0..j {
            let d: f64 = q[j].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            let qi = q[i].clone();
            q[j].iter_mut().zip(&qi).for_each(|(a, b)| *a -= d * b);
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|a| *a /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for (j, v) in q.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            if rows >= cols {
                out[i * cols + j] = x;
            } else {
                out[j * cols + i] = x;
            }
        }
    }
    out
}
