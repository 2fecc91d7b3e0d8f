//! Central finite-difference verification of tape gradients.
//!
//! The relative error for one coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
//! The floor keeps round-off in near-zero gradients from dominating.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.params.iter().all(|p| p.pass)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.pass)
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub tol: f64,
    /// Check at most this many coordinates per parameter (chosen at random).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(tol: f64) -> Self {
        GradCheckOptions {
            tol,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Compares tape gradients of every trainable parameter against central
/// differences. `forward` builds a fresh tape and returns its scalar loss.
pub fn grad_check<Fwd>(store: &ParamStore<f64>, forward: Fwd, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    Fwd: for<'p> Fn(&'p ParamStore<f64>) -> Result<(Tape<'p, f64>, Var)>,
{
    let analytic = {
        let (tape, loss) = forward(store)?;
        tape.backward(loss)?
    };
    check_against(store, &forward, opts, |id, i| {
        analytic.get(id).map_or(0.0, |g| g.data()[i])
    })
}

/// Same as [`grad_check`] but with caller-supplied analytic gradients,
/// which is how a corrupted gradient is fed in as a negative control.
pub fn check_against<Fwd, G>(
    store: &ParamStore<f64>,
    forward: &Fwd,
    opts: GradCheckOptions,
    analytic: G,
) -> Result<GradCheckReport>
where
    Fwd: for<'p> Fn(&'p ParamStore<f64>) -> Result<(Tape<'p, f64>, Var)>,
    G: Fn(super::ParamId, usize) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut params = Vec::new();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = store.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work, forward)?;
            work.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work, forward)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic(id, i), numeric));
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_err: worst,
            pass: worst <= opts.tol,
        });
    }
    Ok(GradCheckReport { tol: opts.tol, params })
}

fn eval<Fwd>(store: &ParamStore<f64>, forward: &Fwd) -> Result<f64>
where
    Fwd: for<'p> Fn(&'p ParamStore<f64>) -> Result<(Tape<'p, f64>, Var)>,
{
    let (tape, loss) = forward(store)?;
    Ok(tape.value(loss).data()[0])
}
