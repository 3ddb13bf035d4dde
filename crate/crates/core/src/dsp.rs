//! Spectral substrate: framed STFT/ISTFT, the exact adjoint of the ISTFT,
//! band-to-bin mapping, band masks, magnitude composition and brickwall
//! filters.
//!
//! Framing is centered: the signal is zero-padded by `n_fft / 2` on the left
//! and enough on the right that `ceil(len / hop) + 1` frames cover it. With a
//! Hann window and `hop <= n_fft / 2` every original sample then sits under at
//! least one window at non-negligible weight, which keeps the least-squares
//! overlap-add well conditioned at the clip edges.

use std::f64::consts::PI;

use ndarray::Array2;
use realfft::RealFftPlanner;
pub use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 128,
            window: Window::Hann,
            sample_rate_hz: 16_000,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn nyquist_hz(&self) -> f64 {
        f64::from(self.sample_rate_hz) / 2.0
    }

    /// Number of frames covering a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }

    fn pad_left(&self) -> usize {
        self.n_fft / 2
    }

    fn padded_len(&self, len: usize) -> usize {
        (self.n_frames(len) - 1) * self.hop + self.n_fft
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 4 || !self.n_fft.is_power_of_two() {
            return Err(Error::Config(format!(
                "n_fft must be a power of two >= 4, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft || !self.n_fft.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop must divide n_fft and lie in 1..={}, got {}",
                self.n_fft, self.hop
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        // Periodic window-square sum; its minimum bounds how much the
        // overlap-add normalization can amplify a modified spectrogram.
        let window = self.window();
        let envelope: Vec<f64> = (0..self.hop)
            .map(|n| {
                window
                    .iter()
                    .skip(n)
                    .step_by(self.hop)
                    .map(|w| w * w)
                    .sum::<f64>()
            })
            .collect();
        let max = envelope.iter().cloned().fold(0.0, f64::max);
        let min = envelope.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-3 * max) {
            return Err(Error::Config(format!(
                "window-square overlap sum degenerates for n_fft={} hop={} (min/max = {:.3e})",
                self.n_fft,
                self.hop,
                min / max
            )));
        }
        Ok(())
    }

    /// Periodic Hann window of length `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => (0..self.n_fft)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.n_fft as f64).cos())
                .collect(),
        }
    }

    /// Overlap-added squared window for every padded position of a
    /// `len`-sample signal.
    fn window_square_sum(&self, window: &[f64], len: usize) -> Vec<f64> {
        let mut env = vec![0.0; self.padded_len(len)];
        for t in 0..self.n_frames(len) {
            let start = t * self.hop;
            for (e, w) in env[start..start + self.n_fft].iter_mut().zip(window) {
                *e += w * w;
            }
        }
        env
    }
}

/// Framed one-sided STFT, shape `(n_frames, n_fft / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub cfg: StftConfig,
    pub original_length: usize,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    /// Phase in `(-pi, pi]`; zero where the bin is exactly zero.
    pub fn phase(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.arg())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyBand {
    pub f_l: f64,
    pub f_u: f64,
}

impl FrequencyBand {
    pub fn new(f_l: f64, f_u: f64) -> Self {
        Self { f_l, f_u }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        if !(self.f_l.is_finite() && self.f_u.is_finite()) || self.f_l < 0.0 || self.f_l >= self.f_u
        {
            return Err(Error::Domain(format!(
                "band [{}, {}] Hz must satisfy 0 <= f_l < f_u",
                self.f_l, self.f_u
            )));
        }
        if self.f_u > nyquist {
            return Err(Error::Domain(format!(
                "band upper edge {} Hz exceeds Nyquist {} Hz",
                self.f_u, nyquist
            )));
        }
        Ok(())
    }
}

/// Diagonal 0/1 selector over STFT bins `r_l..=r_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandMask {
    pub r_l: usize,
    pub r_u: usize,
    pub n_bins: usize,
}

impl BandMask {
    pub fn full(n_bins: usize) -> Self {
        Self {
            r_l: 0,
            r_u: n_bins - 1,
            n_bins,
        }
    }

    #[inline]
    pub fn contains(&self, bin: usize) -> bool {
        (self.r_l..=self.r_u).contains(&bin)
    }
}

/// Maps a band in Hz to the inclusive bin range
/// `r_l = floor(f_l * n_fft / sr)`, `r_u = ceil(f_u * n_fft / sr)`, with `r_u`
/// clamped to the last bin.
pub fn band_to_bins(band: &FrequencyBand, cfg: &StftConfig) -> Result<BandMask> {
    band.validate(cfg.sample_rate_hz)?;
    let n_fft = cfg.n_fft as f64;
    let sr = f64::from(cfg.sample_rate_hz);
    let n_bins = cfg.n_bins();
    let r_l = (band.f_l * n_fft / sr).floor() as usize;
    let r_u = ((band.f_u * n_fft / sr).ceil() as usize).min(n_bins - 1);
    Ok(BandMask {
        r_l: r_l.min(r_u),
        r_u,
        n_bins,
    })
}

/// Zeroes every column outside the mask; in-band entries are copied unchanged.
pub fn apply_band_mask(delta: &Array2<f64>, mask: &BandMask) -> Result<Array2<f64>> {
    if delta.ncols() != mask.n_bins {
        return Err(Error::Size(format!(
            "perturbation has {} bins, mask expects {}",
            delta.ncols(),
            mask.n_bins
        )));
    }
    let mut out = delta.clone();
    for ((_, k), v) in out.indexed_iter_mut() {
        if !mask.contains(k) {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Centered STFT with orthonormal scaling: each frame is `rfft(w * x) / sqrt(n_fft)`,
/// so bin magnitudes are on the same scale as sample amplitudes.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let len = w.len();
    if len < cfg.n_fft {
        return Err(Error::Size(format!(
            "waveform of {} samples is shorter than one frame ({})",
            len, cfg.n_fft
        )));
    }
    let n_frames = cfg.n_frames(len);
    let mut padded = vec![0.0; cfg.padded_len(len)];
    padded[cfg.pad_left()..cfg.pad_left() + len].copy_from_slice(w.samples());

    let window = cfg.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let norm = 1.0 / (cfg.n_fft as f64).sqrt();
    let mut bins = Array2::<Complex64>::zeros((n_frames, cfg.n_bins()));
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for ((f, x), wv) in frame
            .iter_mut()
            .zip(&padded[start..start + cfg.n_fft])
            .zip(&window)
        {
            *f = x * wv;
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .expect("buffer sizes come from the plan");
        bins.row_mut(t)
            .iter_mut()
            .zip(&spectrum)
            .for_each(|(b, s)| *b = *s * norm);
    }
    Ok(ComplexSpectrogram {
        bins,
        cfg: *cfg,
        original_length: len,
    })
}

/// Least-squares overlap-add inverse, truncated to `original_length`.
///
/// This is a real-linear map of the bins. Imaginary parts of the DC and
/// Nyquist bins do not contribute.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let samples = istft_samples(s)?;
    Waveform::new(samples, s.cfg.sample_rate_hz)
}

pub(crate) fn istft_samples(s: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let cfg = &s.cfg;
    cfg.validate()?;
    let len = s.original_length;
    if s.n_bins() != cfg.n_bins() || s.n_frames() != cfg.n_frames(len) {
        return Err(Error::Size(format!(
            "spectrogram shape {:?} does not match config for {} samples",
            s.bins.dim(),
            len
        )));
    }
    let window = cfg.window();
    let env = cfg.window_square_sum(&window, len);

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.n_fft);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / (cfg.n_fft as f64).sqrt();
    let last = cfg.n_bins() - 1;

    let mut acc = vec![0.0; env.len()];
    for t in 0..s.n_frames() {
        spectrum
            .iter_mut()
            .zip(s.bins.row(t))
            .for_each(|(d, b)| *d = *b);
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .expect("buffer sizes come from the plan");
        let start = t * cfg.hop;
        for ((a, f), wv) in acc[start..start + cfg.n_fft]
            .iter_mut()
            .zip(&frame)
            .zip(&window)
        {
            *a += f * scale * wv;
        }
    }
    let offset = cfg.pad_left();
    Ok((offset..offset + len).map(|p| acc[p] / env[p]).collect())
}

/// Adjoint of the ISTFT map under the real inner products
/// `<x, g> = sum x_n g_n` and `<V, G> = sum Re(V) Re(G) + Im(V) Im(G)`.
///
/// For any one-sided `V` of matching shape,
/// `<istft(V), g> == <V, istft_adjoint(g)>`.
pub fn istft_adjoint(g: &[f64], cfg: &StftConfig) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    let len = g.len();
    if len < cfg.n_fft {
        return Err(Error::Size(format!(
            "gradient of {} samples is shorter than one frame ({})",
            len, cfg.n_fft
        )));
    }
    let window = cfg.window();
    let env = cfg.window_square_sum(&window, len);
    let offset = cfg.pad_left();
    let mut scaled = vec![0.0; env.len()];
    for (i, gv) in g.iter().enumerate() {
        scaled[offset + i] = gv / env[offset + i];
    }

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let root_n = (cfg.n_fft as f64).sqrt();
    let last = cfg.n_bins() - 1;

    let n_frames = cfg.n_frames(len);
    let mut out = Array2::<Complex64>::zeros((n_frames, cfg.n_bins()));
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for ((f, x), wv) in frame
            .iter_mut()
            .zip(&scaled[start..start + cfg.n_fft])
            .zip(&window)
        {
            *f = x * wv;
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .expect("buffer sizes come from the plan");
        for (k, (o, s)) in out.row_mut(t).iter_mut().zip(&spectrum).enumerate() {
            let c = if k == 0 || k == last { 1.0 } else { 2.0 };
            *o = s * (c / root_n);
        }
        out[(t, 0)].im = 0.0;
        out[(t, last)].im = 0.0;
    }
    Ok(out)
}

/// Rebuilds a spectrogram with magnitude `|X| + delta_s` and the phase of `X`.
///
/// Bins where `delta_s` is exactly zero are copied from `s` bit for bit. With
/// `clamp_nonneg`, perturbed magnitudes are floored at zero.
pub fn compose_perturbed(
    s: &ComplexSpectrogram,
    delta_s: &Array2<f64>,
    clamp_nonneg: bool,
) -> Result<ComplexSpectrogram> {
    if delta_s.dim() != s.bins.dim() {
        return Err(Error::Size(format!(
            "perturbation shape {:?} does not match spectrogram {:?}",
            delta_s.dim(),
            s.bins.dim()
        )));
    }
    let mut out = s.clone();
    ndarray::Zip::from(&mut out.bins)
        .and(delta_s)
        .for_each(|b, &d| {
            if d != 0.0 {
                *b = perturb_bin(*b, d, clamp_nonneg);
            }
        });
    Ok(out)
}

#[inline]
fn perturb_bin(x: Complex64, delta: f64, clamp_nonneg: bool) -> Complex64 {
    let rho = x.norm();
    let mut target = rho + delta;
    if clamp_nonneg && target < 0.0 {
        target = 0.0;
    }
    if rho > 0.0 {
        x * (target / rho)
    } else {
        // arg(0) = 0
        Complex64::new(target, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Highpass,
    Lowpass,
}

/// Full-signal FFT brickwall. The two modes partition the spectrum at
/// `cutoff_hz`: low-pass keeps `f < cutoff`, high-pass keeps `f >= cutoff`.
pub fn brickwall_filter(w: &Waveform, cutoff_hz: f64, mode: FilterMode) -> Result<Waveform> {
    let nyquist = f64::from(w.sample_rate_hz()) / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Domain(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)"
        )));
    }
    let sr = f64::from(w.sample_rate_hz());
    let len = w.len();
    let out = spectral_gain(w.samples(), |k| {
        let f = k as f64 * sr / len as f64;
        let keep = match mode {
            FilterMode::Highpass => f >= cutoff_hz,
            FilterMode::Lowpass => f < cutoff_hz,
        };
        if keep {
            1.0
        } else {
            0.0
        }
    });
    Waveform::new(out, w.sample_rate_hz())
}

/// One-sided real FFT of the whole signal.
pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(x.len());
    let mut input = x.to_vec();
    let mut out = fft.make_output_vec();
    fft.process(&mut input, &mut out)
        .expect("buffer sizes come from the plan");
    out
}

/// Inverse of [`rfft`] for a signal of `len` samples, normalized.
pub fn irfft(spectrum: &[Complex64], len: usize) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(len);
    let mut input = spectrum.to_vec();
    input[0].im = 0.0;
    if len.is_multiple_of(2) {
        let last = input.len() - 1;
        input[last].im = 0.0;
    }
    let mut out = ifft.make_output_vec();
    ifft.process(&mut input, &mut out)
        .expect("buffer sizes come from the plan");
    let scale = 1.0 / len as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Multiplies each one-sided FFT bin `k` of `x` by the real `gain(k)`.
pub(crate) fn spectral_gain(x: &[f64], gain: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut spectrum = rfft(x);
    for (k, b) in spectrum.iter_mut().enumerate() {
        *b *= gain(k);
    }
    irfft(&spectrum, x.len())
}

/// Energy of `x` between `lo_hz` (inclusive) and `hi_hz` (exclusive),
/// computed from the full-signal spectrum with Parseval weights.
pub fn band_energy(x: &[f64], sample_rate_hz: u32, lo_hz: f64, hi_hz: f64) -> f64 {
    let len = x.len();
    let sr = f64::from(sample_rate_hz);
    let spectrum = rfft(x);
    spectrum
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * sr / len as f64;
            f >= lo_hz && f < hi_hz
        })
        .map(|(k, b)| parseval_weight(k, len) * b.norm_sqr())
        .sum::<f64>()
        / len as f64
}

/// Weight of one-sided bin `k` in the two-sided Parseval sum.
pub(crate) fn parseval_weight(k: usize, len: usize) -> f64 {
    if k == 0 || (len.is_multiple_of(2) && k == len / 2) {
        1.0
    } else {
        2.0
    }
}
