//! WAV files, manifest and vocabulary CSVs, and the synthetic corpus.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, WaveClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics::LabelMatrix;

// ---------------------------------------------------------------- WAV

const FMT_PCM: u16 = 1;
const FMT_FLOAT: u16 = 3;
const FMT_EXTENSIBLE: u16 = 0xFFFE;

fn decode_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Decode {
        offset: offset as u64,
        msg: msg.into(),
    })
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    match b.get(at..at + 2) {
        Some(s) => Ok(u16::from_le_bytes([s[0], s[1]])),
        None => decode_err(at, "unexpected end of file"),
    }
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    match b.get(at..at + 4) {
        Some(s) => Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]])),
        None => decode_err(at, "unexpected end of file"),
    }
}

/// Decodes RIFF/WAVE bytes holding 16-bit PCM or 32-bit float, mono or
/// stereo. Stereo is averaged to mono.
pub fn decode_wav(b: &[u8]) -> Result<WaveClip> {
    if b.get(0..4) != Some(b"RIFF") {
        return decode_err(0, "missing RIFF tag");
    }
    if b.get(8..12) != Some(b"WAVE") {
        return decode_err(8, "missing WAVE tag");
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    loop {
        if pos + 8 > b.len() {
            return decode_err(pos, "no data chunk");
        }
        let id = &b[pos..pos + 4];
        let len = u32_at(b, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if len < 16 {
                    return decode_err(pos + 4, format!("fmt chunk of {len} bytes is too short"));
                }
                let mut tag = u16_at(b, body)?;
                let channels = u16_at(b, body + 2)?;
                let rate = u32_at(b, body + 4)?;
                let bits = u16_at(b, body + 14)?;
                if tag == FMT_EXTENSIBLE {
                    if len < 40 {
                        return decode_err(body, "extensible fmt chunk is too short");
                    }
                    tag = u16_at(b, body + 24)?;
                }
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = match format {
                    Some(f) => f,
                    None => return decode_err(pos, "data chunk before fmt chunk"),
                };
                if body + len > b.len() {
                    return decode_err(
                        b.len(),
                        format!("data chunk declares {len} bytes, only {} present", b.len() - body),
                    );
                }
                return decode_samples(&b[body..body + len], body, tag, channels, rate, bits);
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
}

fn decode_samples(data: &[u8], at: usize, tag: u16, channels: u16, rate: u32, bits: u16) -> Result<WaveClip> {
    if !(channels == 1 || channels == 2) {
        return decode_err(at, format!("{channels} channels; only mono and stereo are supported"));
    }
    if rate == 0 {
        return decode_err(at, "sample rate 0");
    }
    let width = match (tag, bits) {
        (FMT_PCM, 16) => 2,
        (FMT_FLOAT, 32) => 4,
        _ => return decode_err(at, format!("unsupported encoding: format tag {tag}, {bits} bits")),
    };
    let frame = width * channels as usize;
    if !data.len().is_multiple_of(frame) {
        return decode_err(at + data.len(), "data chunk ends inside a sample frame");
    }
    let value = |s: &[u8]| -> f32 {
        if width == 2 {
            i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
        } else {
            f32::from_le_bytes([s[0], s[1], s[2], s[3]])
        }
    };
    let mut samples = Vec::with_capacity(data.len() / frame);
    for (i, f) in data.chunks_exact(frame).enumerate() {
        let v = if channels == 1 {
            value(f)
        } else {
            (value(&f[..width]) + value(&f[width..])) / 2.0
        };
        if !v.is_finite() {
            return decode_err(at + i * frame, "non-finite sample");
        }
        samples.push(v);
    }
    Ok(WaveClip::new(samples, rate))
}

pub fn read_wav(path: &Path) -> Result<WaveClip> {
    decode_wav(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Interleaved samples to RIFF bytes.
pub fn encode_wav(samples: &[f32], channels: u16, sample_rate: u32, enc: WavEncoding) -> Vec<u8> {
    let (tag, width) = match enc {
        WavEncoding::Pcm16 => (FMT_PCM, 2u16),
        WavEncoding::Float32 => (FMT_FLOAT, 4u16),
    };
    let data_len = samples.len() * width as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * (channels * width) as u32).to_le_bytes());
    out.extend_from_slice(&(channels * width).to_le_bytes());
    out.extend_from_slice(&(width * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        match enc {
            WavEncoding::Pcm16 => {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}

/// Writes a mono 16-bit PCM file.
pub fn write_wav(path: &Path, clip: &WaveClip) -> Result<()> {
    std::fs::write(path, encode_wav(&clip.samples, 1, clip.sample_rate, WavEncoding::Pcm16))?;
    Ok(())
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown split {s:?} (expected train, val or eval)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Manifest("empty class name".into()));
            }
            if n.contains(',') || n.trim() != n {
                return Err(Error::Manifest(format!(
                    "class name {n:?} has a comma or surrounding whitespace"
                )));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Vocabulary { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Reads `index,label` rows; indices must cover `0..c` exactly.
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            index: usize,
            label: String,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut slots: Vec<Option<String>> = Vec::new();
        for (line, rec) in rdr.deserialize::<Row>().enumerate() {
            let r = rec?;
            if r.index >= slots.len() {
                slots.resize(r.index + 1, None);
            }
            if slots[r.index].replace(r.label).is_some() {
                return Err(Error::Manifest(format!(
                    "vocabulary row {}: index {} repeated",
                    line + 1,
                    r.index
                )));
            }
        }
        let names = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Manifest(format!("vocabulary index {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(names)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "label"])?;
        for (i, n) in self.names.iter().enumerate() {
            w.write_record([i.to_string().as_str(), n])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub fname: String,
    pub labels: Vec<String>,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Checks weak-label, vocabulary and uniqueness contracts.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.rows.iter().enumerate() {
            let line = i + 2;
            if r.labels.is_empty() {
                return Err(Error::Manifest(format!("row {line} ({}): no labels", r.fname)));
            }
            if let Some(l) = r.labels.iter().find(|l| vocab.index_of(l).is_none()) {
                return Err(Error::Manifest(format!(
                    "row {line} ({}): unknown label {l:?}",
                    r.fname
                )));
            }
            if !seen.insert((r.split, r.fname.as_str())) {
                return Err(Error::Manifest(format!(
                    "row {line}: duplicate fname {} in split {}",
                    r.fname, r.split
                )));
            }
        }
        Ok(())
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn label_matrix(&self, vocab: &Vocabulary, split: Split) -> Result<LabelMatrix> {
        let rows = self
            .rows_in(split)
            .map(|r| encode_labels(&r.labels, vocab))
            .collect::<Result<Vec<_>>>()?;
        LabelMatrix::new(rows.len(), vocab.len(), rows.concat())
    }

    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            fname: String,
            labels: String,
            split: String,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            let r = rec?;
            let labels = r
                .labels
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            rows.push(ManifestRow {
                fname: r.fname,
                labels,
                split: r.split.trim().parse()?,
            });
        }
        Ok(Manifest { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fname", "labels", "split"])?;
        for r in &self.rows {
            w.write_record([r.fname.as_str(), r.labels.join(",").as_str(), r.split.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn encode_labels(labels: &[String], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut v = vec![0u8; vocab.len()];
    for l in labels {
        let k = vocab
            .index_of(l)
            .ok_or_else(|| Error::Manifest(format!("unknown label {l:?}")))?;
        v[k] = 1;
    }
    Ok(v)
}

/// Label names of a binary row, in vocabulary order.
pub fn decode_labels(row: &[u8], vocab: &Vocabulary) -> Vec<String> {
    row.iter()
        .zip(vocab.names())
        .filter(|(v, _)| **v == 1)
        .map(|(_, n)| n.clone())
        .collect()
}

pub fn load_manifest(csv_path: &Path, vocab_path: &Path) -> Result<(Manifest, Vocabulary)> {
    let vocab = Vocabulary::read(vocab_path)?;
    let manifest = Manifest::read(csv_path)?;
    manifest.validate(&vocab)?;
    Ok((manifest, vocab))
}

// ---------------------------------------------------------------- datasets

/// A decoded 16 kHz clip with its binary label row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub clip: WaveClip,
    pub labels: Vec<u8>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const VOCAB_FILE: &str = "vocabulary.csv";
pub const AUDIO_DIR: &str = "audio";

/// A corpus directory: `manifest.csv`, `vocabulary.csv` and `audio/`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let (manifest, vocab) = load_manifest(&root.join(MANIFEST_FILE), &root.join(VOCAB_FILE))?;
        Ok(Corpus {
            root: root.to_path_buf(),
            manifest,
            vocab,
        })
    }

    /// Decodes every clip of `split`, resampling to 16 kHz where needed.
    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledClip>> {
        self.manifest
            .rows_in(split)
            .map(|r| {
                let path = self.root.join(AUDIO_DIR).join(&r.fname);
                let mut clip = read_wav(&path).map_err(|e| match e {
                    Error::Decode { offset, msg } => Error::Decode {
                        offset,
                        msg: format!("{}: {msg}", path.display()),
                    },
                    other => other,
                })?;
                if clip.sample_rate != SAMPLE_RATE {
                    clip = dsp::resample(&clip, SAMPLE_RATE)?;
                }
                Ok(LabeledClip {
                    id: r.fname.clone(),
                    clip,
                    labels: encode_labels(&r.labels, &self.vocab)?,
                })
            })
            .collect()
    }
}

pub fn label_matrix_of(clips: &[LabeledClip], classes: usize) -> Result<LabelMatrix> {
    let rows: Vec<Vec<u8>> = clips.iter().map(|c| c.labels.clone()).collect();
    if rows.iter().any(|r| r.len() != classes) {
        return Err(Error::Dimension(format!("label rows must have {classes} entries")));
    }
    LabelMatrix::new(rows.len(), classes, rows.concat())
}

// ---------------------------------------------------------------- synthetic corpus

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundFamily {
    Tone,
    Chirp,
    AmNoise,
    ClickTrain,
}

impl SoundFamily {
    const CYCLE: [SoundFamily; 4] = [
        SoundFamily::Tone,
        SoundFamily::Chirp,
        SoundFamily::AmNoise,
        SoundFamily::ClickTrain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SoundFamily::Tone => "tone",
            SoundFamily::Chirp => "chirp",
            SoundFamily::AmNoise => "am_noise",
            SoundFamily::ClickTrain => "clicks",
        }
    }
}

/// One synthetic class: a sound family confined to `[low_hz, high_hz]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub family: SoundFamily,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl SynthClass {
    pub fn name(&self, index: usize) -> String {
        format!("{}_{}hz_{index}", self.family.as_str(), self.low_hz.round())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_clips: usize,
    pub val_clips: usize,
    pub eval_clips: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub max_labels: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 8,
            train_clips: 2000,
            val_clips: 400,
            eval_clips: 400,
            min_duration: 0.3,
            max_duration: 3.0,
            max_labels: 2,
            noise_level: 0.01,
            seed: 0,
        }
    }
}

const BAND_LOW_HZ: f64 = 200.0;
const BAND_HIGH_HZ: f64 = 6000.0;
/// Fraction of each log band actually used; the rest is a guard gap.
const BAND_FILL: f64 = 0.6;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.max_labels == 0 || self.max_labels > self.classes {
            return Err(Error::Config("need classes ≥ 1 and 1 ≤ max_labels ≤ classes".into()));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return Err(Error::Config("need 0 < min_duration ≤ max_duration".into()));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::Config("noise_level must lie in [0, 0.5]".into()));
        }
        Ok(())
    }

    /// Classes get disjoint log-spaced bands; families cycle so that
    /// neighbouring bands differ in family too.
    pub fn class_table(&self) -> Vec<SynthClass> {
        let ratio = (BAND_HIGH_HZ / BAND_LOW_HZ).ln() / self.classes as f64;
        (0..self.classes)
            .map(|k| {
                let lo = (BAND_LOW_HZ.ln() + ratio * k as f64).exp();
                let hi = (BAND_LOW_HZ.ln() + ratio * (k as f64 + BAND_FILL)).exp();
                SynthClass {
                    family: SoundFamily::CYCLE[k % 4],
                    low_hz: lo,
                    high_hz: hi,
                }
            })
            .collect()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            names: self.class_table().iter().enumerate().map(|(k, c)| c.name(k)).collect(),
        }
    }
}

/// Renders `len` samples of one class event at 16 kHz, peak amplitude ≈ 1.
pub fn render_event<R: Rng + ?Sized>(class: &SynthClass, len: usize, rng: &mut R) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let (lo, hi) = (class.low_hz, class.high_hz);
    let mut out = vec![0f64; len];
    match class.family {
        SoundFamily::Tone => {
            let f = rng.gen_range(lo..hi);
            let ph = rng.gen_range(0.0..2.0 * PI);
            for (n, o) in out.iter_mut().enumerate() {
                *o = (2.0 * PI * f * n as f64 / sr + ph).sin();
            }
        }
        SoundFamily::Chirp => {
            let (f0, f1) = if rng.gen_bool(0.5) { (lo, hi) } else { (hi, lo) };
            let sweep = len.max(1) as f64 / sr;
            let ph = rng.gen_range(0.0..2.0 * PI);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                *o = (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / sweep * t * t) + ph).sin();
            }
        }
        SoundFamily::AmNoise => {
            let parts: Vec<(f64, f64)> = (0..16)
                .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            let fm = rng.gen_range(3.0..8.0);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let carrier: f64 = parts.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>() / 4.0;
                *o = carrier * (0.6 + 0.4 * (2.0 * PI * fm * t).sin());
            }
        }
        SoundFamily::ClickTrain => {
            let rate = rng.gen_range(8.0..20.0);
            let period = (sr / rate) as usize;
            let f = (lo * hi).sqrt();
            let burst = (0.008 * sr) as usize;
            let start = rng.gen_range(0..period.max(1));
            let mut k = start;
            while k < len {
                for j in 0..burst.min(len - k) {
                    let t = j as f64 / sr;
                    out[k + j] += (2.0 * PI * f * t).sin() * (-t / 0.002).exp();
                }
                k += period;
            }
        }
    }
    let peak = out.iter().fold(0f64, |m, v| m.max(v.abs()));
    let norm = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    out.into_iter().map(|v| (v * norm) as f32).collect()
}

/// One synthetic clip and the classes mixed into it.
pub fn synth_clip<R: Rng + ?Sized>(spec: &SynthSpec, table: &[SynthClass], rng: &mut R) -> (WaveClip, Vec<usize>) {
    let dur = rng.gen_range(spec.min_duration..=spec.max_duration);
    let n = ((dur * SAMPLE_RATE as f64).round() as usize).max(1);
    let count = rng.gen_range(1..=spec.max_labels);
    let mut classes = sample(rng, spec.classes, count).into_vec();
    classes.sort_unstable();
    let mut mix = vec![0f32; n];
    for &k in &classes {
        // Events cover at least 60% of the clip.
        let slack = n / 5;
        let start = rng.gen_range(0..=slack);
        let end = n - rng.gen_range(0..=slack);
        let gain = rng.gen_range(0.3f32..0.8);
        let ev = render_event(&table[k], end - start, rng);
        for (m, e) in mix[start..end].iter_mut().zip(ev) {
            *m += gain * e;
        }
    }
    for m in mix.iter_mut() {
        *m += spec.noise_level as f32 * rng.gen_range(-1.0f32..1.0);
    }
    let peak = mix.iter().fold(0f32, |a, v| a.max(v.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        mix.iter_mut().for_each(|m| *m *= g);
    }
    (WaveClip::new(mix, SAMPLE_RATE), classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub clips: usize,
    pub train: usize,
    pub val: usize,
    pub eval: usize,
    pub classes: usize,
    pub label_counts: Vec<usize>,
    pub total_seconds: f64,
}

/// Writes `audio/*.wav`, `manifest.csv` and `vocabulary.csv` under `out_dir`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let table = spec.class_table();
    let vocab = spec.vocabulary();
    std::fs::create_dir_all(out_dir.join(AUDIO_DIR))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = Manifest::default();
    let mut label_counts = vec![0; spec.classes];
    let mut total_seconds = 0.0;
    for (split, count) in [
        (Split::Train, spec.train_clips),
        (Split::Val, spec.val_clips),
        (Split::Eval, spec.eval_clips),
    ] {
        for i in 0..count {
            let (clip, classes) = synth_clip(spec, &table, &mut rng);
            let fname = format!("{split}_{i:05}.wav");
            write_wav(&out_dir.join(AUDIO_DIR).join(&fname), &clip)?;
            total_seconds += clip.duration_secs();
            for &k in &classes {
                label_counts[k] += 1;
            }
            manifest.rows.push(ManifestRow {
                fname,
                labels: classes.iter().map(|&k| vocab.names[k].clone()).collect(),
                split,
            });
        }
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    vocab.write(&out_dir.join(VOCAB_FILE))?;
    Ok(SynthSummary {
        clips: manifest.rows.len(),
        train: spec.train_clips,
        val: spec.val_clips,
        eval: spec.eval_clips,
        classes: spec.classes,
        label_counts,
        total_seconds,
    })
}

/// Generates a corpus in memory, without touching the filesystem. Clips are
/// bit-identical to a [`synth_generate`] run after the 16-bit round trip.
pub fn synth_in_memory(spec: &SynthSpec) -> Result<[Vec<LabeledClip>; 3]> {
    spec.validate()?;
    let table = spec.class_table();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: [Vec<LabeledClip>; 3] = Default::default();
    for (slot, (split, count)) in [
        (Split::Train, spec.train_clips),
        (Split::Val, spec.val_clips),
        (Split::Eval, spec.eval_clips),
    ]
    .into_iter()
    .enumerate()
    {
        for i in 0..count {
            let (clip, classes) = synth_clip(spec, &table, &mut rng);
            let bytes = encode_wav(&clip.samples, 1, SAMPLE_RATE, WavEncoding::Pcm16);
            let mut labels = vec![0u8; spec.classes];
            classes.iter().for_each(|&k| labels[k] = 1);
            out[slot].push(LabeledClip {
                id: format!("{split}_{i:05}.wav"),
                clip: decode_wav(&bytes)?,
                labels,
            });
        }
    }
    Ok(out)
}
