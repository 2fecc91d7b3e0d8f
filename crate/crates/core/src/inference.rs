//! Clip-level prediction by averaging overlapping 1-second chunks, and a
//! latency harness.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Patch1s, WaveClip, PATCH_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics::ScoreMatrix;
use crate::model::{LeanModel, ModelInput, Stage};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub scores: Vec<f32>,
    pub chunks: usize,
    pub chunk_scores: Option<Vec<Vec<f32>>>,
}

/// Componentwise mean, accumulated in `f64` in chunk order.
pub fn mean_scores(chunks: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::Domain("no chunk scores to average".into()))?;
    let mut acc = vec![0f64; first.len()];
    for c in chunks {
        if c.len() != acc.len() {
            return Err(Error::Dimension("chunk score vectors differ in length".into()));
        }
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v as f64;
        }
    }
    let n = chunks.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn check_overlap(overlap: f64) -> Result<()> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap {overlap} is outside [0, 1)")));
    }
    Ok(())
}

/// Scores every chunk of `clip` (resampled to 16 kHz if needed) and
/// averages the probabilities.
pub fn predict_clip(
    clip_id: &str,
    clip: &WaveClip,
    model: &LeanModel<f32>,
    overlap: f64,
    keep_chunks: bool,
) -> Result<ClipPrediction> {
    check_overlap(overlap)?;
    if clip.samples.is_empty() {
        return Err(Error::Domain(format!("clip {clip_id} is empty")));
    }
    let clip = if clip.sample_rate == SAMPLE_RATE {
        std::borrow::Cow::Borrowed(clip)
    } else {
        std::borrow::Cow::Owned(dsp::resample(clip, SAMPLE_RATE)?)
    };
    let patches = dsp::patchify(&clip, 1.0 - overlap)?;
    let chunk_scores = patches
        .iter()
        .map(|p| model.predict(&ModelInput::from_patch(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipPrediction {
        clip_id: clip_id.to_string(),
        scores: mean_scores(&chunk_scores)?,
        chunks: chunk_scores.len(),
        chunk_scores: keep_chunks.then_some(chunk_scores),
    })
}

/// Clip-level scores for a list of `(id, clip)` pairs, one row per clip.
pub fn predict_all<'a, I>(clips: I, model: &LeanModel<f32>, overlap: f64) -> Result<Vec<ClipPrediction>>
where
    I: IntoIterator<Item = (&'a str, &'a WaveClip)>,
{
    clips
        .into_iter()
        .map(|(id, c)| predict_clip(id, c, model, overlap, false))
        .collect()
}

pub fn score_matrix(preds: &[ClipPrediction]) -> Result<ScoreMatrix> {
    let rows: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.scores.iter().map(|&s| s as f64).collect())
        .collect();
    ScoreMatrix::from_rows(&rows)
}

/// `clip_id` followed by one column per class, in vocabulary order.
pub fn write_scores_csv(path: &Path, class_names: &[String], preds: &[ClipPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["clip_id".to_string()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header)?;
    for p in preds {
        if p.scores.len() != class_names.len() {
            return Err(Error::Dimension(format!(
                "clip {} has {} scores for {} classes",
                p.clip_id,
                p.scores.len(),
                class_names.len()
            )));
        }
        let mut rec = vec![p.clip_id.clone()];
        rec.extend(p.scores.iter().map(|s| s.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl StageStats {
    fn from_samples(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return StageStats::default();
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        StageStats {
            median_ms: q(0.5),
            p95_ms: q(0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub runs: usize,
    pub warmup: usize,
    pub dsp: StageStats,
    pub extractor: StageStats,
    pub wave_encoder: StageStats,
    pub fusion: StageStats,
    pub head: StageStats,
    pub end_to_end: StageStats,
}

impl LatencyReport {
    pub fn stage_median_sum(&self) -> f64 {
        [self.dsp, self.extractor, self.wave_encoder, self.fusion, self.head]
            .iter()
            .map(|s| s.median_ms)
            .sum()
    }
}

pub const BENCH_WARMUP: usize = 5;

/// Times `runs` single-patch forward passes on a fixed pseudo-random input.
pub fn bench_latency(model: &LeanModel<f32>, runs: usize, seed: u64) -> Result<LatencyReport> {
    if runs < 10 {
        return Err(Error::Config(format!("bench needs at least 10 runs, got {runs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f32> = (0..PATCH_SAMPLES).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let patch = Patch1s::new(samples, 0.0)?;
    let mut cols: [Vec<f64>; 6] = Default::default();
    for i in 0..BENCH_WARMUP + runs {
        let t0 = Instant::now();
        let input = ModelInput::from_patch(&patch);
        let mut marks = vec![(None, Instant::now())];
        let mut tape = Tape::new();
        model.forward_marked(&mut tape, &input, &mut |s| marks.push((Some(s), Instant::now())))?;
        let end = Instant::now();
        if i < BENCH_WARMUP {
            continue;
        }
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        cols[0].push(ms(t0, marks[0].1));
        let mut per_stage = [0.0; 4];
        for w in marks.windows(2) {
            let k = match w[1].0 {
                Some(Stage::Extractor) => 0,
                Some(Stage::WaveEncoder) => 1,
                Some(Stage::Fusion) => 2,
                _ => 3,
            };
            per_stage[k] = ms(w[0].1, w[1].1);
        }
        for (k, v) in per_stage.into_iter().enumerate() {
            cols[k + 1].push(v);
        }
        cols[5].push(ms(t0, end));
    }
    let [dsp, extractor, wave_encoder, fusion, head, end_to_end] = cols.map(StageStats::from_samples);
    Ok(LatencyReport {
        runs,
        warmup: BENCH_WARMUP,
        dsp,
        extractor,
        wave_encoder,
        fusion,
        head,
        end_to_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_componentwise() {
        let m = mean_scores(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        assert_eq!(m, vec![0.25, 0.5]);
        assert!(mean_scores(&[]).is_err());
    }

    #[test]
    fn stats_quantiles() {
        let s = StageStats::from_samples((1..=100).map(f64::from).collect());
        assert_eq!(s.median_ms, 51.0);
        assert_eq!(s.p95_ms, 95.0);
    }

    #[test]
    fn overlap_range() {
        assert!(check_overlap(0.0).is_ok());
        assert!(check_overlap(0.5).is_ok());
        assert!(check_overlap(1.0).is_err());
        assert!(check_overlap(-0.1).is_err());
    }
}
