//! Corruption catalogue and the audio RandAugment policy.
//!
//! Magnitude units per kind:
//!
//! | kind              | magnitude                         | domain                |
//! |-------------------|-----------------------------------|-----------------------|
//! | `gaussian_noise`  | target SNR, dB                    | finite                |
//! | `lowpass`         | cutoff, Hz                        | (0, Nyquist)          |
//! | `highpass`        | cutoff, Hz                        | (0, Nyquist)          |
//! | `peaking_eq`      | gain, dB (Q = 1, random center)   | [-40, 40]             |
//! | `seven_band_eq`   | max abs band gain, dB             | [0, 40]               |
//! | `aliasing`        | downsampling factor               | >= 1                  |
//! | `bit_crush`       | bit depth (rounded)               | [1, 32]               |
//! | `tanh_distortion` | drive k                           | > 0                   |
//! | `gain`            | gain, dB                          | finite                |
//! | `gain_transition` | final gain of the ramp, dB        | finite                |
//! | `time_mask`       | masked fraction of the clip       | [0, 1]                |
//! | `time_stretch`    | playback-rate factor              | > 0                   |
//! | `air_absorption`  | distance, m                       | >= 0                  |
//! | `room_reverb`     | RT60, s                           | (0, 5]                |

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, Waveform};
use crate::dsp::{self, FilterMode};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    Lowpass,
    Highpass,
    PeakingEq,
    SevenBandEq,
    Aliasing,
    BitCrush,
    TanhDistortion,
    Gain,
    GainTransition,
    TimeMask,
    TimeStretch,
    AirAbsorption,
    RoomReverb,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 14] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::Lowpass,
        CorruptionKind::Highpass,
        CorruptionKind::PeakingEq,
        CorruptionKind::SevenBandEq,
        CorruptionKind::Aliasing,
        CorruptionKind::BitCrush,
        CorruptionKind::TanhDistortion,
        CorruptionKind::Gain,
        CorruptionKind::GainTransition,
        CorruptionKind::TimeMask,
        CorruptionKind::TimeStretch,
        CorruptionKind::AirAbsorption,
        CorruptionKind::RoomReverb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::Lowpass => "lowpass",
            CorruptionKind::Highpass => "highpass",
            CorruptionKind::PeakingEq => "peaking_eq",
            CorruptionKind::SevenBandEq => "seven_band_eq",
            CorruptionKind::Aliasing => "aliasing",
            CorruptionKind::BitCrush => "bit_crush",
            CorruptionKind::TanhDistortion => "tanh_distortion",
            CorruptionKind::Gain => "gain",
            CorruptionKind::GainTransition => "gain_transition",
            CorruptionKind::TimeMask => "time_mask",
            CorruptionKind::TimeStretch => "time_stretch",
            CorruptionKind::AirAbsorption => "air_absorption",
            CorruptionKind::RoomReverb => "room_reverb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Magnitude range used by the default RandAugment policy.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            CorruptionKind::GaussianNoise => (10.0, 40.0),
            CorruptionKind::Lowpass => (2000.0, 7000.0),
            CorruptionKind::Highpass => (50.0, 500.0),
            CorruptionKind::PeakingEq => (-12.0, 12.0),
            CorruptionKind::SevenBandEq => (0.0, 12.0),
            CorruptionKind::Aliasing => (1.5, 4.0),
            CorruptionKind::BitCrush => (4.0, 10.0),
            CorruptionKind::TanhDistortion => (0.5, 5.0),
            CorruptionKind::Gain => (-12.0, 6.0),
            CorruptionKind::GainTransition => (-12.0, 12.0),
            CorruptionKind::TimeMask => (0.02, 0.2),
            CorruptionKind::TimeStretch => (0.8, 1.25),
            CorruptionKind::AirAbsorption => (1.0, 20.0),
            CorruptionKind::RoomReverb => (0.1, 0.8),
        }
    }
}

/// Checks `magnitude` against the domain of `kind` at `sample_rate_hz`.
pub fn check_magnitude(kind: CorruptionKind, magnitude: f64, sample_rate_hz: u32) -> Result<()> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    let ok = magnitude.is_finite()
        && match kind {
            CorruptionKind::GaussianNoise
            | CorruptionKind::Gain
            | CorruptionKind::GainTransition => true,
            CorruptionKind::Lowpass | CorruptionKind::Highpass => {
                magnitude > 0.0 && magnitude < nyquist
            }
            CorruptionKind::PeakingEq => magnitude.abs() <= 40.0,
            CorruptionKind::SevenBandEq => (0.0..=40.0).contains(&magnitude),
            CorruptionKind::Aliasing => {
                magnitude >= 1.0 && f64::from(sample_rate_hz) / magnitude >= 1.0
            }
            CorruptionKind::BitCrush => (1.0..=32.0).contains(&magnitude.round()),
            CorruptionKind::TanhDistortion => magnitude > 0.0,
            CorruptionKind::TimeMask => (0.0..=1.0).contains(&magnitude),
            CorruptionKind::TimeStretch => magnitude > 0.0,
            CorruptionKind::AirAbsorption => magnitude >= 0.0,
            CorruptionKind::RoomReverb => magnitude > 0.0 && magnitude <= 5.0,
        };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "magnitude {magnitude} is outside the domain of {}",
            kind.name()
        )))
    }
}

/// Second-order IIR section, direct form I, coefficients normalized by `a0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Parametric-EQ peaking section (Bristow-Johnson cookbook form).
    pub fn peaking(center_hz: f64, gain_db: f64, q: f64, sample_rate_hz: u32) -> Self {
        let amp = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * center_hz / f64::from(sample_rate_hz);
        let alpha = w0.sin() / (2.0 * q);
        let cos_w0 = w0.cos();
        let a0 = 1.0 + alpha / amp;
        Self {
            b: [
                (1.0 + alpha * amp) / a0,
                (-2.0 * cos_w0) / a0,
                (1.0 - alpha * amp) / a0,
            ],
            a: [(-2.0 * cos_w0) / a0, (1.0 - alpha / amp) / a0],
        }
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }

    /// Magnitude response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: u32) -> f64 {
        use rustfft::num_complex::Complex64;
        let w = 2.0 * PI * freq_hz / f64::from(sample_rate_hz);
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

pub const SEVEN_BAND_CENTERS_HZ: [f64; 7] = [60.0, 150.0, 400.0, 1000.0, 2400.0, 4800.0, 7000.0];
const EQ_Q: f64 = 1.0;
const AIR_COEFF: f64 = 0.005;

/// Cascade of peaking sections, one per center below Nyquist.
pub fn seven_band_eq(x: &[f64], gains_db: &[f64; 7], sample_rate_hz: u32) -> Vec<f64> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    SEVEN_BAND_CENTERS_HZ
        .iter()
        .zip(gains_db)
        .filter(|(f0, _)| **f0 < nyquist)
        .fold(x.to_vec(), |y, (&f0, &g)| {
            Biquad::peaking(f0, g, EQ_Q, sample_rate_hz).process(&y)
        })
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn fit_length(mut y: Vec<f64>, len: usize) -> Vec<f64> {
    y.resize(len, 0.0);
    y
}

fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |v: &[f64]| {
        let mut buf = vec![0.0; n];
        buf[..v.len()].copy_from_slice(v);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("plan-sized buffers");
        out
    };
    let (sx, sh) = (spectrum(x), spectrum(h));
    let mut prod: Vec<_> = sx.iter().zip(&sh).map(|(a, b)| a * b).collect();
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut prod, &mut out)
        .expect("plan-sized buffers");
    out.truncate(x.len());
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Applies one corruption. Output keeps the input's length and rate.
pub fn apply_corruption(
    w: &Waveform,
    kind: CorruptionKind,
    magnitude: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let sr = w.sample_rate_hz();
    check_magnitude(kind, magnitude, sr)?;
    let x = w.samples();
    let len = x.len();
    let y = match kind {
        CorruptionKind::GaussianNoise => {
            let sigma = rms(x) * 10f64.powf(-magnitude / 20.0);
            x.iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        CorruptionKind::Lowpass => {
            return dsp::brickwall_filter(w, magnitude, FilterMode::Lowpass);
        }
        CorruptionKind::Highpass => {
            return dsp::brickwall_filter(w, magnitude, FilterMode::Highpass);
        }
        CorruptionKind::PeakingEq => {
            let nyquist = f64::from(sr) / 2.0;
            let (lo, hi) = (100f64.min(0.1 * nyquist), 0.9 * nyquist);
            let center = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
            Biquad::peaking(center, magnitude, EQ_Q, sr).process(x)
        }
        CorruptionKind::SevenBandEq => {
            let mut gains = [0.0; 7];
            for g in &mut gains {
                *g = if magnitude > 0.0 {
                    rng.gen_range(-magnitude..=magnitude)
                } else {
                    0.0
                };
            }
            seven_band_eq(x, &gains, sr)
        }
        CorruptionKind::Aliasing => {
            let target = (f64::from(sr) / magnitude).round().max(1.0) as u32;
            let down = audio_io::resample_to(w, target, false)?;
            let up = audio_io::resample_to(&down, sr, false)?;
            fit_length(up.into_samples(), len)
        }
        CorruptionKind::BitCrush => {
            let bits = magnitude.round() as i32;
            let scale = 2f64.powi(bits - 1);
            x.iter()
                .map(|v| (v * scale).round().clamp(-scale, scale - 1.0) / scale + 0.0)
                .collect()
        }
        CorruptionKind::TanhDistortion => x.iter().map(|v| (magnitude * v).tanh()).collect(),
        CorruptionKind::Gain => {
            let g = 10f64.powf(magnitude / 20.0);
            x.iter().map(|v| v * g).collect()
        }
        CorruptionKind::GainTransition => {
            let ramp = (len / 2).max(1);
            let start = rng.gen_range(0..=len - ramp.min(len));
            x.iter()
                .enumerate()
                .map(|(n, v)| {
                    let db = if n < start {
                        0.0
                    } else if n >= start + ramp {
                        magnitude
                    } else {
                        magnitude * (n - start) as f64 / ramp as f64
                    };
                    v * 10f64.powf(db / 20.0)
                })
                .collect()
        }
        CorruptionKind::TimeMask => {
            let masked = ((magnitude * len as f64).round() as usize).min(len);
            let start = rng.gen_range(0..=len - masked);
            let mut y = x.to_vec();
            y[start..start + masked].iter_mut().for_each(|v| *v = 0.0);
            y
        }
        CorruptionKind::TimeStretch => {
            let stretched = ((len as f64 / magnitude).round() as usize).max(1);
            fit_length(audio_io::linear_interpolate(x, magnitude, stretched), len)
        }
        CorruptionKind::AirAbsorption => {
            let fs = f64::from(sr);
            dsp::spectral_gain(x, |k| {
                let f_khz = k as f64 * fs / len as f64 / 1000.0;
                (-AIR_COEFF * magnitude * f_khz * f_khz).exp()
            })
        }
        CorruptionKind::RoomReverb => {
            let fs = f64::from(sr);
            let ir_len = ((magnitude * fs).round() as usize).max(1);
            let mut h: Vec<f64> = (0..ir_len)
                .map(|n| {
                    let t = n as f64 / fs;
                    rng.sample::<f64, _>(StandardNormal) * (-6.91 * t / magnitude).exp()
                })
                .collect();
            let energy = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            h.iter_mut().for_each(|v| *v /= energy);
            fft_convolve(x, &h)
        }
    };
    w.with_samples(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionOp {
    pub kind: CorruptionKind,
    pub range: (f64, f64),
}

impl CorruptionOp {
    pub fn with_default_range(kind: CorruptionKind) -> Self {
        Self {
            kind,
            range: kind.default_range(),
        }
    }
}

/// Draw `n_select` ops uniformly without replacement, apply each with
/// probability `apply_prob` at a magnitude uniform in its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub ops: Vec<CorruptionOp>,
    pub n_select: usize,
    pub apply_prob: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            ops: CorruptionKind::ALL
                .into_iter()
                .map(CorruptionOp::with_default_range)
                .collect(),
            n_select: 2,
            apply_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.ops.is_empty() || self.n_select == 0 || self.n_select > self.ops.len() {
            return Err(Error::Config(format!(
                "n_select must lie in 1..={} (got {})",
                self.ops.len(),
                self.n_select
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply_prob must lie in [0, 1], got {}",
                self.apply_prob
            )));
        }
        for op in &self.ops {
            let (lo, hi) = op.range;
            if !(lo <= hi) {
                return Err(Error::Config(format!(
                    "{}: range [{lo}, {hi}] is empty",
                    op.kind.name()
                )));
            }
            check_magnitude(op.kind, lo, sample_rate_hz)?;
            check_magnitude(op.kind, hi, sample_rate_hz)?;
        }
        Ok(())
    }
}

/// A corruption actually applied by [`rand_augment_traced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedOp {
    pub kind: CorruptionKind,
    pub magnitude: f64,
}

/// RandAugment draw `counter` of `policy`; deterministic in `(policy.seed, counter)`.
pub fn rand_augment(w: &Waveform, policy: &AugmentPolicy, counter: u64) -> Result<Waveform> {
    rand_augment_traced(w, policy, counter).map(|(out, _)| out)
}

pub fn rand_augment_traced(
    w: &Waveform,
    policy: &AugmentPolicy,
    counter: u64,
) -> Result<(Waveform, Vec<AppliedOp>)> {
    policy.validate(w.sample_rate_hz())?;
    let mut r = rng::stream(policy.seed, Purpose::Augment, counter);
    let picks = index::sample(&mut r, policy.ops.len(), policy.n_select);
    let mut out = w.clone();
    let mut applied = Vec::new();
    for i in picks.iter() {
        if r.gen::<f64>() >= policy.apply_prob {
            continue;
        }
        let op = &policy.ops[i];
        let (lo, hi) = op.range;
        let magnitude = lo + (hi - lo) * r.gen::<f64>();
        out = apply_corruption(&out, op.kind, magnitude, &mut r)?;
        applied.push(AppliedOp {
            kind: op.kind,
            magnitude,
        });
    }
    Ok((out, applied))
}
