//! Audio front end: resampling, 1-second patching and the two model inputs.
//!
//! A patch becomes a `(96, 64)` log-mel matrix (25 ms Hann windows, 10 ms
//! hop, 64 HTK-mel bands over 125..7500 Hz, `ln(mel + 0.001)`, scalar mean
//! removed) and a `(40, 400)` matrix of consecutive raw-sample frames.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const PATCH_SAMPLES: usize = 16_000;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_BANDS: usize = 64;
pub const MEL_FMIN: f64 = 125.0;
pub const MEL_FMAX: f64 = 7_500.0;
pub const LOG_OFFSET: f64 = 0.001;
pub const PATCH_FRAMES: usize = 96;
pub const WAVE_STEPS: usize = 40;
pub const WAVE_FRAME: usize = 400;

const SPEC_BINS: usize = FFT_SIZE / 2 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WaveClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl WaveClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        WaveClip { samples, sample_rate }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Exactly one second of 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch1s {
    samples: Vec<f32>,
    pub offset_seconds: f64,
}

impl Patch1s {
    pub fn new(samples: Vec<f32>, offset_seconds: f64) -> Result<Self> {
        if samples.len() != PATCH_SAMPLES {
            return dim_err(format!("a patch holds {PATCH_SAMPLES} samples, got {}", samples.len()));
        }
        Ok(Patch1s {
            samples,
            offset_seconds,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }
}

/// `(96, 64)` log-mel matrix, rows are frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelPatch(pub Tensor<f32>);

/// `(40, 400)` matrix, row `t` is `samples[400t .. 400t + 400]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveSeq(pub Tensor<f32>);

/// Linear-interpolation resampler.
pub fn resample(clip: &WaveClip, target_rate: u32) -> Result<WaveClip> {
    if clip.samples.is_empty() {
        return Err(Error::Domain("cannot resample an empty clip".into()));
    }
    if clip.sample_rate < 8_000 {
        return Err(Error::Domain(format!(
            "source rate {} Hz is below 8000 Hz",
            clip.sample_rate
        )));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let src = &clip.samples;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = ((src.len() as f64) * target_rate as f64 / clip.sample_rate as f64).round() as usize;
    let out_len = out_len.max(1);
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = (pos - j as f64) as f32;
            let a = src[j];
            let b = src[(j + 1).min(last)];
            if frac == 0.0 {
                a
            } else {
                a + frac * (b - a)
            }
        })
        .collect();
    Ok(WaveClip::new(samples, target_rate))
}

/// Repeats `src` cyclically up to one patch.
fn tile(src: &[f32]) -> Vec<f32> {
    src.iter().copied().cycle().take(PATCH_SAMPLES).collect()
}

/// Cuts a 16 kHz clip into 1-second windows spaced `hop_fraction` seconds apart.
///
/// Clips shorter than a second are tiled to a full patch. When the last full
/// window stops short of the clip end, the remainder starting one hop later is
/// tiled into one more patch.
pub fn patchify(clip: &WaveClip, hop_fraction: f64) -> Result<Vec<Patch1s>> {
    if !(hop_fraction > 0.0 && hop_fraction <= 1.0) {
        return Err(Error::Config(format!("hop fraction {hop_fraction} is outside (0, 1]")));
    }
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!(
            "patchify expects {SAMPLE_RATE} Hz audio, got {} Hz",
            clip.sample_rate
        )));
    }
    let n = clip.samples.len();
    if n == 0 {
        return Err(Error::Domain("cannot patch an empty clip".into()));
    }
    let rate = SAMPLE_RATE as f64;
    if n <= PATCH_SAMPLES {
        return Ok(vec![Patch1s::new(tile(&clip.samples), 0.0)?]);
    }
    let hop = ((PATCH_SAMPLES as f64 * hop_fraction).round() as usize).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + PATCH_SAMPLES <= n {
        out.push(Patch1s::new(
            clip.samples[start..start + PATCH_SAMPLES].to_vec(),
            start as f64 / rate,
        )?);
        start += hop;
    }
    let last_end = start - hop + PATCH_SAMPLES;
    if last_end < n {
        out.push(Patch1s::new(tile(&clip.samples[start..]), start as f64 / rate)?);
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular HTK-mel filters over the `FFT_SIZE / 2 + 1` magnitude bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// Row-major `(257, 64)`.
    weights: Vec<f64>,
    centers_mel: Vec<f64>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let lo = hz_to_mel(MEL_FMIN);
        let hi = hz_to_mel(MEL_FMAX);
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| lo + (hi - lo) * i as f64 / (MEL_BANDS + 1) as f64)
            .collect();
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let mut weights = vec![0.0; SPEC_BINS * MEL_BANDS];
        // the DC bin stays zero
        for bin in 1..SPEC_BINS {
            let mel = hz_to_mel(nyquist * bin as f64 / (SPEC_BINS - 1) as f64);
            for b in 0..MEL_BANDS {
                let (l, c, u) = (edges[b], edges[b + 1], edges[b + 2]);
                let w = ((mel - l) / (c - l)).min((u - mel) / (u - c)).max(0.0);
                weights[bin * MEL_BANDS + b] = w;
            }
        }
        MelFilterbank {
            weights,
            centers_mel: edges[1..=MEL_BANDS].to_vec(),
        }
    }

    pub fn weight(&self, bin: usize, band: usize) -> f64 {
        self.weights[bin * MEL_BANDS + band]
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        self.centers_mel
            .iter()
            .map(|m| 700.0 * ((m / 1127.0).exp() - 1.0))
            .collect()
    }

    fn apply(&self, mag: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (bin, &m) in mag.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = &self.weights[bin * MEL_BANDS..(bin + 1) * MEL_BANDS];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += m * w;
            }
        }
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

struct FrontEnd {
    bank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn front_end() -> &'static FrontEnd {
    static FE: OnceLock<FrontEnd> = OnceLock::new();
    FE.get_or_init(|| {
        // periodic Hann
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect();
        FrontEnd {
            bank: MelFilterbank::new(),
            window,
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
        }
    })
}

/// Log-mel matrix before mean normalization.
pub fn log_mel_raw(patch: &Patch1s) -> Vec<f64> {
    let fe = front_end();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut mag = vec![0.0; SPEC_BINS];
    let mut mel = vec![0.0; MEL_BANDS];
    let mut out = Vec::with_capacity(PATCH_FRAMES * MEL_BANDS);
    for t in 0..PATCH_FRAMES {
        let frame = &patch.samples[t * HOP..t * HOP + WINDOW];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < WINDOW {
                Complex::new(frame[i] as f64 * fe.window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fe.fft.process(&mut buf);
        for (m, c) in mag.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        fe.bank.apply(&mag, &mut mel);
        out.extend(mel.iter().map(|&v| (v + LOG_OFFSET).ln()));
    }
    out
}

/// `(96, 64)` mean-normalized log-mel patch.
pub fn log_mel(patch: &Patch1s) -> LogMelPatch {
    let raw = log_mel_raw(patch);
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let data = raw.iter().map(|&v| (v - mean) as f32).collect();
    LogMelPatch(Tensor::new(vec![PATCH_FRAMES, MEL_BANDS], data).expect("log-mel of finite audio is finite"))
}

/// Folds a patch into `(40, 400)` without copying order around.
pub fn reshape_wave(patch: &Patch1s) -> WaveSeq {
    WaveSeq(Tensor::new(vec![WAVE_STEPS, WAVE_FRAME], patch.samples.clone()).expect("16000 finite samples"))
}

/// Inverse of [`reshape_wave`].
pub fn flatten(seq: &WaveSeq) -> Result<Patch1s> {
    let (r, c) = seq.0.dims2()?;
    if (r, c) != (WAVE_STEPS, WAVE_FRAME) {
        return dim_err(format!("expected (40, 400), got ({r}, {c})"));
    }
    Patch1s::new(seq.0.data().to_vec(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f32) -> Patch1s {
        let s = (0..PATCH_SAMPLES)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin() as f32)
            .collect();
        Patch1s::new(s, 0.0).unwrap()
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let c = WaveClip::new(vec![0.1, -0.2, 0.3], 16_000);
        assert_eq!(resample(&c, 16_000).unwrap(), c);
    }

    #[test]
    fn resample_length_formula() {
        let c = WaveClip::new(vec![0.0; 32_000], 32_000);
        assert_eq!(resample(&c, 16_000).unwrap().samples.len(), 16_000);
        let c = WaveClip::new(vec![0.0; 44_100], 44_100);
        assert_eq!(resample(&c, 16_000).unwrap().samples.len(), 16_000);
    }

    #[test]
    fn resample_keeps_dc() {
        let c = WaveClip::new(vec![0.5; 44_100], 44_100);
        let r = resample(&c, 16_000).unwrap();
        assert!(r.samples.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn resample_rejects_empty_and_low_rate() {
        assert!(resample(&WaveClip::new(vec![], 16_000), 16_000).is_err());
        assert!(resample(&WaveClip::new(vec![0.0; 10], 4_000), 16_000).is_err());
    }

    #[test]
    fn short_clip_is_tiled() {
        let s: Vec<f32> = (0..6_400).map(|i| i as f32 / 6_400.0).collect();
        let p = patchify(&WaveClip::new(s.clone(), 16_000), 0.5).unwrap();
        assert_eq!(p.len(), 1);
        let got = p[0].samples();
        assert_eq!(&got[..6_400], &s[..]);
        assert_eq!(&got[6_400..12_800], &s[..]);
        assert_eq!(&got[12_800..], &s[..3_200]);
    }

    #[test]
    fn two_and_a_half_seconds_half_hop() {
        let clip = WaveClip::new(vec![0.0; 40_000], 16_000);
        let p = patchify(&clip, 0.5).unwrap();
        let offs: Vec<f64> = p.iter().map(|p| p.offset_seconds).collect();
        assert_eq!(offs, vec![0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn remainder_forms_tiled_patch() {
        let s: Vec<f32> = (0..40_000).map(|i| (i % 1000) as f32 / 1000.0).collect();
        let p = patchify(&WaveClip::new(s.clone(), 16_000), 1.0).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].offset_seconds, 2.0);
        assert_eq!(&p[2].samples()[..8_000], &s[32_000..]);
        assert_eq!(&p[2].samples()[8_000..], &s[32_000..40_000]);
    }

    #[test]
    fn one_second_clip_is_single_identical_patch() {
        let s: Vec<f32> = (0..16_000).map(|i| (i as f32).sin()).collect();
        for hop in [0.25, 0.5, 1.0] {
            let p = patchify(&WaveClip::new(s.clone(), 16_000), hop).unwrap();
            assert_eq!(p.len(), 1);
            assert_eq!(p[0].samples(), &s[..]);
        }
    }

    #[test]
    fn bad_hop_is_config_error() {
        let c = WaveClip::new(vec![0.0; 100], 16_000);
        for h in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(patchify(&c, h), Err(Error::Config(_))));
        }
    }

    #[test]
    fn silence_normalizes_to_zero() {
        let p = Patch1s::new(vec![0.0; PATCH_SAMPLES], 0.0).unwrap();
        let raw = log_mel_raw(&p);
        assert!(raw.iter().all(|&v| (v - 0.001f64.ln()).abs() < 1e-12));
        let m = log_mel(&p);
        assert_eq!(m.0.shape(), &[96, 64]);
        assert!(m.0.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn filterbank_geometry() {
        let fb = MelFilterbank::new();
        let centers = fb.centers_hz();
        assert!(centers.windows(2).all(|w| w[0] < w[1]));
        assert!(centers[0] > MEL_FMIN && centers[63] < MEL_FMAX);
        for bin in 0..SPEC_BINS {
            for b in 0..MEL_BANDS {
                assert!(fb.weight(bin, b) >= 0.0);
            }
        }
        assert!((0..MEL_BANDS).all(|b| fb.weight(0, b) == 0.0));
    }

    #[test]
    fn tone_lands_in_nearest_band() {
        // Independent oracle: the band whose center (in mel) is nearest 1 kHz.
        let lo = hz_to_mel(MEL_FMIN);
        let hi = hz_to_mel(MEL_FMAX);
        let target = hz_to_mel(1000.0);
        let want = (0..MEL_BANDS)
            .min_by(|&a, &b| {
                let ca = lo + (hi - lo) * (a + 1) as f64 / 65.0;
                let cb = lo + (hi - lo) * (b + 1) as f64 / 65.0;
                (ca - target).abs().total_cmp(&(cb - target).abs())
            })
            .unwrap();
        let m = log_mel(&tone(1000.0, 0.5));
        for t in 0..PATCH_FRAMES {
            let row: Vec<f32> = (0..MEL_BANDS).map(|b| m.0.at2(t, b)).collect();
            let arg = (0..MEL_BANDS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, want, "frame {t}");
        }
    }

    #[test]
    fn louder_tone_never_lowers_its_peak_cell() {
        let quiet = log_mel_raw(&tone(2000.0, 0.1));
        let loud = log_mel_raw(&tone(2000.0, 0.8));
        let arg = (0..quiet.len()).max_by(|&a, &b| quiet[a].total_cmp(&quiet[b])).unwrap();
        assert!(loud[arg] >= quiet[arg]);
    }

    #[test]
    fn wave_fold_rows() {
        let p = Patch1s::new((0..16_000).map(|i| i as f32).collect(), 0.0).unwrap();
        let w = reshape_wave(&p);
        assert_eq!(w.0.shape(), &[40, 400]);
        assert_eq!(
            w.0.rows(0, 1).unwrap().data(),
            &(0..400).map(|i| i as f32).collect::<Vec<_>>()[..]
        );
        assert_eq!(
            w.0.rows(1, 2).unwrap().data(),
            &(400..800).map(|i| i as f32).collect::<Vec<_>>()[..]
        );
        assert_eq!(flatten(&w).unwrap().samples(), p.samples());
    }

    #[test]
    fn patch_rejects_wrong_length() {
        assert!(Patch1s::new(vec![0.0; 15_999], 0.0).is_err());
    }
}
