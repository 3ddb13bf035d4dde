//! WAV ingestion and emission, dataset manifests, and the synthetic corpus.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FrequencyBand};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Mono signal with its sample rate. Never empty, every sample finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("waveform has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "waveform sample {i} is not finite"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Same rate, new samples. Fails if the new samples are empty or non-finite.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index: REAL is 0, FAKE is 1.
    pub fn class(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(format!("unknown label {other:?} (expected real|fake)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub waveform: Waveform,
    pub label: Label,
    pub source_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub source_id: String,
}

/// Clip list. Paths are relative to the manifest's directory and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Validation(format!(
                    "duplicate manifest path {}",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
        }
    }

    /// Decodes every referenced clip, in manifest order.
    pub fn load_clips(&self, base_dir: &Path) -> Result<Vec<LabeledClip>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(LabeledClip {
                    waveform: read_wav(&base_dir.join(&e.path))?,
                    label: e.label,
                    source_id: e.source_id.clone(),
                    split: e.split,
                })
            })
            .collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            file: path.display().to_string(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields[0].is_empty() {
            return Err(parse_err("empty path".into()));
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            label: fields[1].parse().map_err(parse_err)?,
            split: fields[2].parse().map_err(parse_err)?,
            source_id: fields[3].to_string(),
        });
    }
    let manifest = Manifest { entries };
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut out = String::new();
    for e in &manifest.entries {
        let p = e.path.to_string_lossy();
        if p.contains('\t') || p.contains('\n') || e.source_id.contains('\t') {
            return Err(Error::Validation(format!(
                "manifest fields may not contain tabs or newlines: {p}"
            )));
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p, e.label, e.split, e.source_id
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => {
            Error::Decode(format!("{}: unsupported codec", path.display()))
        }
        hound::Error::IoError(e) => {
            Error::Format(format!("{}: truncated or unreadable ({e})", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads 16-bit PCM or 32-bit float WAV, mono or stereo (downmixed by mean).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    // open failures are I/O errors; anything hound reports afterwards is
    // about the file's contents
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Decode(format!(
            "{}: {} channels (only mono and stereo are read)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Decode(format!(
                "{}: {bits}-bit {fmt:?} samples are not supported",
                path.display()
            )))
        }
    };
    let channels = usize::from(spec.channels);
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Format(format!(
            "{}: partial final frame",
            path.display()
        )));
    }
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{}: no audio frames",
            path.display()
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Quantizes one sample to 16-bit PCM after clamping to [-1, 1].
pub fn quantize_pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0)
        .round()
        .clamp(-32768.0, 32767.0) as i16
}

/// Writes mono 16-bit PCM. Samples outside [-1, 1] are clipped.
pub fn write_wav(waveform: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(write_err)?;
    for &s in waveform.samples() {
        writer.write_sample(quantize_pcm16(s)).map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}

/// Linear-interpolation resampler. With `anti_alias`, a brickwall low-pass at
/// the lower of the two Nyquist frequencies runs first.
pub fn resample_to(waveform: &Waveform, target_hz: u32, anti_alias: bool) -> Result<Waveform> {
    if target_hz == 0 {
        return Err(Error::Domain("target sample rate must be positive".into()));
    }
    let source_hz = waveform.sample_rate_hz();
    if target_hz == source_hz {
        return Ok(waveform.clone());
    }
    let filtered;
    let input = if anti_alias && target_hz < source_hz {
        filtered = dsp::brickwall_filter(
            waveform,
            f64::from(target_hz) / 2.0,
            dsp::FilterMode::Lowpass,
        )?;
        &filtered
    } else {
        waveform
    };
    let ratio = f64::from(source_hz) / f64::from(target_hz);
    let out_len = ((waveform.len() as f64) / ratio).round().max(1.0) as usize;
    let samples = linear_interpolate(input.samples(), ratio, out_len);
    Waveform::new(samples, target_hz)
}

/// Reads `x` at positions `i * step` for `i in 0..out_len`, holding the last
/// sample past the end.
pub(crate) fn linear_interpolate(x: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    let last = x.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = pos.floor() as usize;
            if i0 >= last {
                return x[last];
            }
            let frac = pos - i0 as f64;
            x[i0] * (1.0 - frac) + x[i0 + 1] * frac
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_real: usize,
    pub n_fake: usize,
    pub clip_seconds: f64,
    pub sample_rate_hz: u32,
    pub artifact_band: FrequencyBand,
    /// Artifact RMS relative to the clip RMS, in dB.
    pub artifact_level_db: f64,
    /// REAL clip RMS is drawn log-uniformly from this range.
    pub clip_rms_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_real: 1250,
            n_fake: 1250,
            clip_seconds: 1.0,
            sample_rate_hz: 16_000,
            artifact_band: FrequencyBand::new(5500.0, 7500.0),
            artifact_level_db: -15.0,
            clip_rms_range: (0.05, 0.15),
            seed: 0,
        }
    }
}

/// Upper edge of the speech-like content in generated clips.
pub const SYNTH_SPEECH_CUTOFF_HZ: f64 = 4000.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_real + self.n_fake == 0 {
            return Err(Error::Config(
                "synthetic corpus needs at least one clip".into(),
            ));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        if f64::from(self.sample_rate_hz) / 2.0 <= SYNTH_SPEECH_CUTOFF_HZ {
            return Err(Error::Config(format!(
                "sample rate {} Hz leaves no room above the {} Hz speech band",
                self.sample_rate_hz, SYNTH_SPEECH_CUTOFF_HZ
            )));
        }
        self.artifact_band
            .validate(self.sample_rate_hz)
            .map_err(|e| Error::Config(format!("artifact_band: {e}")))?;
        if !self.artifact_level_db.is_finite() {
            return Err(Error::Config("artifact_level_db must be finite".into()));
        }
        let (lo, hi) = self.clip_rms_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "clip_rms_range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * f64::from(self.sample_rate_hz)).round() as usize
    }
}

/// Harmonic "voiced" clip with pink-ish noise, band-limited below
/// [`SYNTH_SPEECH_CUTOFF_HZ`]. Pair index `i` fully determines the clip.
pub fn synth_real_clip(cfg: &SynthConfig, index: u64) -> Vec<f64> {
    let mut rng = rng::stream(cfg.seed, Purpose::Data, 2 * index);
    let sr = f64::from(cfg.sample_rate_hz);
    let len = cfg.clip_len();
    let tau = 2.0 * std::f64::consts::PI;

    let f0 = rng.gen_range(100.0..400.0);
    let n_harmonics = rng.gen_range(3..=6usize);
    let partials: Vec<(f64, f64, f64)> = (1..=n_harmonics)
        .map(|h| {
            let amp = rng.gen_range(0.3..1.0) / h as f64;
            (h as f64 * f0, amp, rng.gen_range(0.0..tau))
        })
        .collect();
    let vibrato_hz = rng.gen_range(3.0..6.0);
    let vibrato_depth = rng.gen_range(0.0..0.01);
    let envelope_hz = rng.gen_range(2.0..5.0);
    let envelope_phase = rng.gen_range(0.0..tau);

    let mut x = vec![0.0; len];
    let mut phases: Vec<f64> = partials.iter().map(|p| p.2).collect();
    for (n, v) in x.iter_mut().enumerate() {
        let t = n as f64 / sr;
        let bend = 1.0 + vibrato_depth * (tau * vibrato_hz * t).sin();
        let env = 0.6 + 0.4 * (tau * envelope_hz * t + envelope_phase).sin();
        let mut s = 0.0;
        for ((freq, amp, _), ph) in partials.iter().zip(phases.iter_mut()) {
            s += amp * ph.sin();
            *ph += tau * freq * bend / sr;
        }
        *v = env * s;
    }

    let noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    // 1/f power tilt, low-passed with the rest of the clip below.
    let pink = dsp::spectral_gain(&noise, |k| {
        let f = (k as f64 * sr / len as f64).max(50.0);
        (100.0 / f).sqrt()
    });
    let harmonic_rms = rms(&x);
    let pink_rms = rms(&pink).max(f64::MIN_POSITIVE);
    let noise_gain = 0.1 * harmonic_rms / pink_rms;
    for (v, p) in x.iter_mut().zip(&pink) {
        *v += noise_gain * p;
    }

    let mut y = dsp::spectral_gain(&x, |k| {
        if (k as f64 * sr / len as f64) < SYNTH_SPEECH_CUTOFF_HZ {
            1.0
        } else {
            0.0
        }
    });
    let (lo, hi) = cfg.clip_rms_range;
    let target_rms = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    let gain = target_rms / rms(&y).max(f64::MIN_POSITIVE);
    y.iter_mut().for_each(|v| *v *= gain);
    y
}

/// Stationary Gaussian noise confined to `cfg.artifact_band`, scaled to
/// `artifact_level_db` relative to `reference_rms`.
pub fn synth_artifact(cfg: &SynthConfig, index: u64, reference_rms: f64) -> Vec<f64> {
    let mut rng = rng::stream(cfg.seed, Purpose::Data, 2 * index + 1);
    let sr = f64::from(cfg.sample_rate_hz);
    let len = cfg.clip_len();
    let band = cfg.artifact_band;
    let noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mut a = dsp::spectral_gain(&noise, |k| {
        let f = k as f64 * sr / len as f64;
        if f >= band.f_l && f < band.f_u {
            1.0
        } else {
            0.0
        }
    });
    let gain =
        reference_rms * 10f64.powf(cfg.artifact_level_db / 20.0) / rms(&a).max(f64::MIN_POSITIVE);
    a.iter_mut().for_each(|v| *v *= gain);
    a
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pair `i` goes to the test split when `i % 5 == 4` (an 80/20 split).
pub fn synth_split(index: usize) -> Split {
    if index % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Generates the REAL and FAKE clips of pair `index`.
pub fn synth_pair(cfg: &SynthConfig, index: u64) -> (Vec<f64>, Vec<f64>) {
    let real = synth_real_clip(cfg, index);
    let artifact = synth_artifact(cfg, index, rms(&real));
    let fake = real.iter().zip(&artifact).map(|(r, a)| r + a).collect();
    (real, fake)
}

fn synth_entries(cfg: &SynthConfig) -> impl Iterator<Item = (ManifestEntry, Vec<f64>)> + '_ {
    (0..cfg.n_real.max(cfg.n_fake)).flat_map(move |i| {
        let (real, fake) = synth_pair(cfg, i as u64);
        let entry = |label: Label| ManifestEntry {
            path: PathBuf::from("wav").join(format!("{label}_{i:05}.wav")),
            label,
            split: synth_split(i),
            source_id: format!("synth-{i:05}"),
        };
        let real = (i < cfg.n_real).then(|| (entry(Label::Real), real));
        let fake = (i < cfg.n_fake).then(|| (entry(Label::Fake), fake));
        real.into_iter().chain(fake)
    })
}

/// Writes `wav/real_NNNNN.wav` and `wav/fake_NNNNN.wav` under `out_dir` plus
/// `manifest.tsv`, and returns the manifest.
///
/// FAKE clip `i` is REAL clip `i` plus the band-limited artifact, so every pair
/// differs only inside the artifact band.
pub fn gen_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::with_capacity(cfg.n_real + cfg.n_fake);
    for (entry, samples) in synth_entries(cfg) {
        write_wav(
            &Waveform::new(samples, cfg.sample_rate_hz)?,
            &out_dir.join(&entry.path),
        )?;
        entries.push(entry);
    }
    let manifest = Manifest { entries };
    let manifest_path = out_dir.join("manifest.tsv");
    save_manifest(&manifest, &manifest_path)?;
    Ok(manifest)
}

/// The corpus of [`gen_synthetic_corpus`] without touching disk. Samples are
/// quantized to 16 bits, so clips equal what reading the written files gives.
pub fn synth_clips(cfg: &SynthConfig) -> Result<Vec<LabeledClip>> {
    cfg.validate()?;
    synth_entries(cfg)
        .map(|(entry, samples)| {
            let q = samples
                .iter()
                .map(|&x| f64::from(quantize_pcm16(x)) / 32768.0)
                .collect();
            Ok(LabeledClip {
                waveform: Waveform::new(q, cfg.sample_rate_hz)?,
                label: entry.label,
                source_id: entry.source_id,
                split: entry.split,
            })
        })
        .collect()
}
