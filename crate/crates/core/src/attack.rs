//! ℓ∞ projected-gradient attacks: time-domain PGD on samples and the
//! frequency-selective attack on STFT magnitudes inside a band.
//!
//! Both attacks track the maximum-loss iterate across all restarts, with the
//! unperturbed input as the first candidate, so `loss_after >= loss_before`.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio_io::{Label, LabeledClip, Waveform};
use crate::dsp::{self, BandMask, ComplexSpectrogram, FrequencyBand, StftConfig};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::model::{self, ClassifierParams, Wants};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackDomain {
    Time,
    FreqMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub domain: AttackDomain,
    /// ℓ∞ budget: amplitude units for TIME, STFT magnitude units for FREQ.
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    #[serde(default)]
    pub band: Option<FrequencyBand>,
    #[serde(default)]
    pub random_init: bool,
    #[serde(default)]
    pub stft: StftConfig,
}

impl AttackConfig {
    /// Time-domain evaluation defaults: ε = 1e-4, α = 4e-5.
    pub fn time(iterations: usize, restarts: usize) -> Self {
        Self {
            domain: AttackDomain::Time,
            epsilon: 1e-4,
            alpha: 4e-5,
            iterations,
            restarts,
            band: None,
            random_init: false,
            stft: StftConfig::default(),
        }
    }

    /// Frequency-domain evaluation defaults: ε = 1e-4, α = 4e-4.
    pub fn freq(band: FrequencyBand, iterations: usize, restarts: usize) -> Self {
        Self {
            domain: AttackDomain::FreqMagnitude,
            epsilon: 1e-4,
            alpha: 4e-4,
            iterations,
            restarts,
            band: Some(band),
            random_init: false,
            stft: StftConfig::default(),
        }
    }

    pub fn with_budget(mut self, epsilon: f64, alpha: f64) -> Self {
        self.epsilon = epsilon;
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::Config("iterations and restarts must be >= 1".into()));
        }
        if self.domain == AttackDomain::FreqMagnitude {
            self.stft.validate()?;
            let band = self
                .band
                .ok_or_else(|| Error::Config("frequency attack needs a band".into()))?;
            band.validate(self.stft.sample_rate_hz)?;
        }
        Ok(())
    }

    /// Short human-readable description used as a report condition.
    pub fn describe(&self) -> String {
        match self.domain {
            AttackDomain::Time => format!(
                "time eps={:e} alpha={:e} K={} R={}",
                self.epsilon, self.alpha, self.iterations, self.restarts
            ),
            AttackDomain::FreqMagnitude => {
                let b = self.band.unwrap_or(FrequencyBand::new(0.0, 0.0));
                format!(
                    "freq {}-{}Hz eps={:e} alpha={:e} K={} R={}",
                    b.f_l, b.f_u, self.epsilon, self.alpha, self.iterations, self.restarts
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Waveform,
    /// TIME: max |x' - x| over samples. FREQ: max |δ| over bins.
    pub delta_norm_inf: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Steps taken within the winning restart (0 = its initial point).
    pub iterate_of_max_loss: usize,
    pub restart_of_max_loss: usize,
}

/// Current perturbation, as seen by an [`IterateEvent`].
#[derive(Debug, Clone, Copy)]
pub enum DeltaView<'a> {
    Time(&'a [f64]),
    Freq(&'a Array2<f64>),
}

/// One visited iterate, reported to an attack observer.
#[derive(Debug, Clone, Copy)]
pub struct IterateEvent<'a> {
    pub restart: usize,
    pub iteration: usize,
    pub delta_norm_inf: f64,
    pub loss: f64,
    pub delta: DeltaView<'a>,
    /// FREQ only: original and composed spectrograms before the inverse STFT.
    pub spectrograms: Option<(&'a ComplexSpectrogram, &'a ComplexSpectrogram)>,
}

pub type Observer<'o> = dyn FnMut(&IterateEvent<'_>) + 'o;

fn norm_inf<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_budget(norm: f64, epsilon: f64) -> Result<()> {
    if norm > epsilon + 1e-12 {
        return Err(Error::NonFinite(format!(
            "perturbation norm {norm} left the epsilon ball ({epsilon})"
        )));
    }
    Ok(())
}

struct Best {
    loss: f64,
    samples: Vec<f64>,
    norm: f64,
    iteration: usize,
    restart: usize,
}

impl Best {
    fn offer(&mut self, loss: f64, samples: &[f64], norm: f64, iteration: usize, restart: usize) {
        if loss > self.loss {
            *self = Best {
                loss,
                samples: samples.to_vec(),
                norm,
                iteration,
                restart,
            };
        }
    }
}

/// Time-domain PGD: `δ <- clip(δ + α sign(∇x L(x + δ)), -ε, ε)`.
pub fn attack_time(
    params: &ClassifierParams,
    w: &Waveform,
    y: Label,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    attack_time_observed(params, w, y, cfg, seed, &mut |_| {})
}

pub fn attack_time_observed(
    params: &ClassifierParams,
    w: &Waveform,
    y: Label,
    cfg: &AttackConfig,
    seed: u64,
    observer: &mut Observer<'_>,
) -> Result<AttackResult> {
    if cfg.domain != AttackDomain::Time {
        return Err(Error::Config(
            "attack_time needs a time-domain config".into(),
        ));
    }
    cfg.validate()?;
    let x = w.samples();
    let eps = cfg.epsilon;
    let loss_before = model::forward(params, w)?.loss(y);
    let mut best = Best {
        loss: loss_before,
        samples: x.to_vec(),
        norm: 0.0,
        iteration: 0,
        restart: 0,
    };

    let mut candidate = vec![0.0; x.len()];
    for restart in 0..cfg.restarts {
        let mut delta = if cfg.random_init || restart > 0 {
            let mut r = rng::stream(seed, Purpose::Attack, restart as u64);
            (0..x.len())
                .map(|_| {
                    if eps > 0.0 {
                        r.gen_range(-eps..=eps)
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![0.0; x.len()]
        };
        for iteration in 0..=cfg.iterations {
            for ((c, xv), d) in candidate.iter_mut().zip(x).zip(&delta) {
                *c = (xv + d).clamp(-1.0, 1.0);
            }
            let fwd = model::forward_samples(params, &candidate)?;
            let loss = fwd.loss(y);
            if !loss.is_finite() {
                return Err(Error::NonFinite("attack loss is not finite".into()));
            }
            let dnorm = norm_inf(&delta);
            check_budget(dnorm, eps)?;
            observer(&IterateEvent {
                restart,
                iteration,
                delta_norm_inf: dnorm,
                loss,
                delta: DeltaView::Time(&delta),
                spectrograms: None,
            });
            let applied = candidate
                .iter()
                .zip(x)
                .fold(0.0f64, |m, (c, xv)| m.max((c - xv).abs()));
            best.offer(loss, &candidate, applied, iteration, restart);
            if iteration == cfg.iterations {
                break;
            }
            let g = model::backward_with(params, &fwd.trace, y, Wants::INPUT)?.d_input;
            for (d, gv) in delta.iter_mut().zip(&g) {
                *d = (*d + cfg.alpha * sign(*gv)).clamp(-eps, eps);
            }
        }
    }
    Ok(AttackResult {
        adversarial: w.with_samples(best.samples)?,
        delta_norm_inf: best.norm,
        loss_before,
        loss_after: best.loss,
        iterate_of_max_loss: best.iteration,
        restart_of_max_loss: best.restart,
    })
}

/// Pulls a waveform gradient back to the magnitude perturbation:
/// `dL/dδ(t, k) = Re(e^{-jφ(t,k)} G(t, k))` where `G` is the ISTFT adjoint of
/// `g`, zero where the clamped magnitude sits below zero and outside `mask`.
pub fn magnitude_gradient(
    original: &ComplexSpectrogram,
    delta: &Array2<f64>,
    g: &[f64],
    mask: &BandMask,
) -> Result<Array2<f64>> {
    let adj = dsp::istft_adjoint(g, &original.cfg)?;
    let mut out = Array2::<f64>::zeros(original.bins.dim());
    for ((t, k), o) in out.indexed_iter_mut() {
        if !mask.contains(k) {
            continue;
        }
        let x = original.bins[(t, k)];
        let rho = x.norm();
        if rho + delta[(t, k)] < 0.0 {
            continue;
        }
        let unit = if rho > 0.0 {
            x / rho
        } else {
            Complex64::new(1.0, 0.0)
        };
        *o = (unit.conj() * adj[(t, k)]).re;
    }
    Ok(out)
}

/// Waveform produced by the frequency-selective attack for perturbation `delta`.
pub fn freq_selective_waveform(
    original: &ComplexSpectrogram,
    delta: &Array2<f64>,
    mask: &BandMask,
) -> Result<Vec<f64>> {
    let masked = dsp::apply_band_mask(delta, mask)?;
    let composed = dsp::compose_perturbed(original, &masked, true)?;
    dsp::istft_samples(&composed)
}

/// Frequency-selective attack: PGD on a band-masked perturbation of the STFT
/// magnitude, with phase and out-of-band bins always taken from the original.
pub fn attack_freq_selective(
    params: &ClassifierParams,
    w: &Waveform,
    y: Label,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    attack_freq_selective_observed(params, w, y, cfg, seed, &mut |_| {})
}

pub fn attack_freq_selective_observed(
    params: &ClassifierParams,
    w: &Waveform,
    y: Label,
    cfg: &AttackConfig,
    seed: u64,
    observer: &mut Observer<'_>,
) -> Result<AttackResult> {
    if cfg.domain != AttackDomain::FreqMagnitude {
        return Err(Error::Config(
            "attack_freq_selective needs a frequency-domain config".into(),
        ));
    }
    cfg.validate()?;
    if w.sample_rate_hz() != cfg.stft.sample_rate_hz {
        return Err(Error::Config(format!(
            "waveform rate {} Hz differs from STFT rate {} Hz",
            w.sample_rate_hz(),
            cfg.stft.sample_rate_hz
        )));
    }
    let band = cfg.band.expect("validated");
    let mask = dsp::band_to_bins(&band, &cfg.stft)?;
    let original = dsp::stft(w, &cfg.stft)?;
    let eps = cfg.epsilon;

    // δ = 0 reproduces the STFT round trip, which is the baseline candidate.
    let round_trip = dsp::istft_samples(&original)?;
    let loss_before = model::forward_samples(params, &round_trip)?.loss(y);
    let mut best = Best {
        loss: loss_before,
        samples: round_trip,
        norm: 0.0,
        iteration: 0,
        restart: 0,
    };

    let shape = original.bins.dim();
    for restart in 0..cfg.restarts {
        let mut delta = if cfg.random_init || restart > 0 {
            let mut r = rng::stream(seed, Purpose::Attack, restart as u64);
            let init = Array2::from_shape_simple_fn(shape, || {
                if eps > 0.0 {
                    r.gen_range(-eps..=eps)
                } else {
                    0.0
                }
            });
            dsp::apply_band_mask(&init, &mask)?
        } else {
            Array2::zeros(shape)
        };
        for iteration in 0..=cfg.iterations {
            let masked = dsp::apply_band_mask(&delta, &mask)?;
            let composed = dsp::compose_perturbed(&original, &masked, true)?;
            let candidate = dsp::istft_samples(&composed)?;
            let fwd = model::forward_samples(params, &candidate)?;
            let loss = fwd.loss(y);
            if !loss.is_finite() {
                return Err(Error::NonFinite("attack loss is not finite".into()));
            }
            let dnorm = norm_inf(&delta);
            check_budget(dnorm, eps)?;
            observer(&IterateEvent {
                restart,
                iteration,
                delta_norm_inf: dnorm,
                loss,
                delta: DeltaView::Freq(&delta),
                spectrograms: Some((&original, &composed)),
            });
            best.offer(loss, &candidate, dnorm, iteration, restart);
            if iteration == cfg.iterations {
                break;
            }
            let g = model::backward_with(params, &fwd.trace, y, Wants::INPUT)?.d_input;
            let grad = magnitude_gradient(&original, &delta, &g, &mask)?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("magnitude gradient is not finite".into()));
            }
            ndarray::Zip::from(&mut delta)
                .and(&grad)
                .for_each(|d, &gv| {
                    *d = (*d + cfg.alpha * sign(gv)).clamp(-eps, eps);
                });
        }
    }
    Ok(AttackResult {
        adversarial: w.with_samples(best.samples)?,
        delta_norm_inf: best.norm,
        loss_before,
        loss_after: best.loss,
        iterate_of_max_loss: best.iteration,
        restart_of_max_loss: best.restart,
    })
}

/// Dispatches on `cfg.domain`.
pub fn attack(
    params: &ClassifierParams,
    w: &Waveform,
    y: Label,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    match cfg.domain {
        AttackDomain::Time => attack_time(params, w, y, cfg, seed),
        AttackDomain::FreqMagnitude => attack_freq_selective(params, w, y, cfg, seed),
    }
}

/// Where attack gradients come from. `params: None` attacks the evaluated
/// model itself (white box); `Some` crafts perturbations on a surrogate and
/// transfers them.
#[derive(Debug, Clone, Copy)]
pub struct AttackSource<'a> {
    pub name: &'a str,
    pub params: Option<&'a ClassifierParams>,
}

impl<'a> AttackSource<'a> {
    pub fn white_box() -> Self {
        Self {
            name: "A",
            params: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridEntry<'a> {
    pub cfg: AttackConfig,
    pub source: AttackSource<'a>,
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub cfg: AttackConfig,
    pub source: String,
    pub report: EvalReport,
    /// Clips whose attack failed; they are left out of the accuracies.
    pub failures: Vec<(usize, String)>,
}

/// Per-class accuracy of `params` on attacked clips, one row per grid entry.
/// Clip `i` always uses attack seed `derive_seed(seed, Attack, i)`, so
/// configurations that differ only in restart count see nested restarts.
pub fn attack_grid(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    grid: &[GridEntry<'_>],
    threshold: f64,
    seed: u64,
) -> Result<Vec<GridRow>> {
    if dataset.is_empty() {
        return Err(Error::Validation(
            "attack grid needs a nonempty dataset".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Validation("attack grid is empty".into()));
    }
    for entry in grid {
        entry.cfg.validate()?;
    }
    grid.iter()
        .map(|entry| {
            let source_params = entry.source.params.unwrap_or(params);
            let outcomes: Vec<Result<f64>> = dataset
                .par_iter()
                .enumerate()
                .map(|(i, clip)| {
                    let clip_seed = rng::derive_seed(seed, Purpose::Attack, i as u64);
                    let adv = attack(
                        source_params,
                        &clip.waveform,
                        clip.label,
                        &entry.cfg,
                        clip_seed,
                    )?;
                    Ok(model::forward(params, &adv.adversarial)?.score_fake)
                })
                .collect();
            let mut scored = Vec::with_capacity(dataset.len());
            let mut failures = Vec::new();
            for (i, (clip, outcome)) in dataset.iter().zip(outcomes).enumerate() {
                match outcome {
                    Ok(score) => scored.push((clip.label, score)),
                    Err(e) => failures.push((i, e.to_string())),
                }
            }
            let condition = format!("{} src={}", entry.cfg.describe(), entry.source.name);
            Ok(GridRow {
                cfg: entry.cfg.clone(),
                source: entry.source.name.to_string(),
                report: EvalReport::from_scores(&condition, &scored, threshold),
                failures,
            })
        })
        .collect()
}
