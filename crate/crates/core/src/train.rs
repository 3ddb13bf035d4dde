//! Baseline, RandAugment and frequency-selective adversarial training, plus
//! the binary checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::audio_io::LabeledClip;
use crate::augment::{self, AugmentPolicy};
use crate::dsp::FrequencyBand;
use crate::error::{Error, Result};
use crate::model::{self, ClassifierParams, ParamLayout, Precision, Sgd, Wants};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the robust loss; 0 disables the inner attack.
    pub gamma: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: Option<AugmentPolicy>,
    pub attack: Option<AttackConfig>,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub precision: Precision,
    /// Rescale each batch gradient to at most this L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            lr: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            augment: None,
            attack: None,
            seed: 0,
            checkpoint_every: 0,
            precision: Precision::F64,
            grad_clip: None,
        }
    }
}

/// Inner attack used for adversarial training on the synthetic task:
/// 4–8 kHz magnitude band, ε = 0.01, α = 0.04, two steps, one restart.
pub fn default_training_attack() -> AttackConfig {
    AttackConfig::freq(FrequencyBand::new(4000.0, 8000.0), 2, 1).with_budget(0.01, 0.04)
}

impl TrainConfig {
    /// `gamma` robust weight with [`default_training_attack`].
    pub fn fsat(gamma: f64) -> Self {
        Self {
            gamma,
            attack: Some(default_training_attack()),
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.gamma > 0.0 && self.attack.is_none() {
            return Err(Error::Config(
                "gamma > 0 needs an attack configuration".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Sgd::new(self.lr, self.momentum)?;
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        if let Some(policy) = &self.augment {
            policy.validate(sample_rate_hz)?;
        }
        if let Some(a) = &self.attack {
            a.validate()?;
            if a.domain == attack::AttackDomain::FreqMagnitude
                && a.stft.sample_rate_hz != sample_rate_hz
            {
                return Err(Error::Config(format!(
                    "attack STFT rate {} Hz differs from the data rate {} Hz",
                    a.stft.sample_rate_hz, sample_rate_hz
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gamma: f64,
    pub l_clean: f64,
    pub l_robust: f64,
    pub l_total: f64,
    pub train_acc: f64,
    /// Not stored in checkpoints, so it is `None` after a load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON object per epoch. Wall time is left out so the file is
    /// reproducible; see [`TrainHistory::write_timing`].
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            let r = EpochRecord {
                wall_time_s: None,
                ..r.clone()
            };
            out.push_str(&serde_json::to_string(&r).map_err(json_err)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            let v = serde_json::json!({ "epoch": r.epoch, "wall_time_s": r.wall_time_s });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Validation(format!("cannot serialize history: {e}"))
}

/// Everything needed to continue a run: weights, optimizer state, history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ClassifierParams,
    pub velocity: Vec<f64>,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Self {
        let mut params = model::init_classifier(cfg.seed);
        set_precision(&mut params, cfg.precision);
        Self {
            params,
            velocity: vec![0.0; ParamLayout::TOTAL],
            history: TrainHistory::default(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.records.len()
    }
}

fn set_precision(params: &mut ClassifierParams, precision: Precision) {
    params.precision = precision;
    if precision == Precision::F32 {
        round_to_f32(params.values_mut());
    }
}

fn round_to_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

struct ClipStep {
    l_clean: f64,
    l_robust: f64,
    correct: bool,
    grad: Vec<f64>,
}

fn clip_step(
    params: &ClassifierParams,
    clip: &LabeledClip,
    cfg: &TrainConfig,
    draw: u64,
) -> Result<ClipStep> {
    let x = match &cfg.augment {
        Some(policy) => augment::rand_augment(&clip.waveform, policy, draw)?,
        None => clip.waveform.clone(),
    };
    let fwd = model::forward(params, &x)?;
    let l_clean = fwd.loss(clip.label);
    let correct = (fwd.score_fake >= 0.5) == (clip.label.class() == 1);
    let mut grad = model::backward_with(params, &fwd.trace, clip.label, Wants::PARAMS)?.d_params;
    let mut l_robust = 0.0;
    if cfg.gamma > 0.0 {
        let acfg = cfg
            .attack
            .as_ref()
            .expect("validated: gamma > 0 has an attack");
        let seed = rng::derive_seed(cfg.seed, Purpose::Attack, draw);
        let adv = attack::attack(params, &x, clip.label, acfg, seed)?;
        let fwd_adv = model::forward(params, &adv.adversarial)?;
        l_robust = fwd_adv.loss(clip.label);
        let g_adv =
            model::backward_with(params, &fwd_adv.trace, clip.label, Wants::PARAMS)?.d_params;
        for (g, ga) in grad.iter_mut().zip(&g_adv) {
            *g += cfg.gamma * ga;
        }
    }
    Ok(ClipStep {
        l_clean,
        l_robust,
        correct,
        grad,
    })
}

/// Trains from scratch. See [`train_resume`].
pub fn train(clips: &[LabeledClip], cfg: &TrainConfig) -> Result<(ClassifierParams, TrainHistory)> {
    let state = train_resume(clips, cfg, TrainState::fresh(cfg), &mut |_| Ok(()))?;
    Ok((state.params, state.history))
}

/// Runs epochs `state.epochs_done()..cfg.epochs`, calling `on_epoch` after
/// each one.
///
/// Per batch the clean loss and, when `gamma > 0`, the loss on an attack
/// crafted against the current weights are averaged over the batch and one
/// SGD step is taken on `L_clean + gamma * L_robust`. Per-clip work runs in
/// parallel but gradients are summed in batch order, so results do not
/// depend on the thread count.
pub fn train_resume(
    clips: &[LabeledClip],
    cfg: &TrainConfig,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    if clips.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    cfg.validate(clips[0].waveform.sample_rate_hz())?;
    if state.params.precision != cfg.precision {
        return Err(Error::Config(format!(
            "resumed weights are {:?} but the run asks for {:?}",
            state.params.precision, cfg.precision
        )));
    }
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    sgd.velocity = std::mem::take(&mut state.velocity);
    if sgd.velocity.len() != ParamLayout::TOTAL {
        return Err(Error::Size("optimizer state has the wrong length".into()));
    }
    let n = clips.len();
    for epoch in state.epochs_done()..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Order, epoch as u64));
        let (mut sum_clean, mut sum_robust, mut n_correct) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let params = &state.params;
            let steps: Vec<Result<ClipStep>> = batch
                .par_iter()
                .map(|&i| clip_step(params, &clips[i], cfg, (epoch * n + i) as u64))
                .collect();
            let mut grad = vec![0.0; ParamLayout::TOTAL];
            let (mut bc, mut br) = (0.0, 0.0);
            for step in steps {
                let step = step.map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}"))
                    }
                    other => other,
                })?;
                bc += step.l_clean;
                br += step.l_robust;
                n_correct += usize::from(step.correct);
                for (g, s) in grad.iter_mut().zip(&step.grad) {
                    *g += s;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let total = (bc + cfg.gamma * br) * scale;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss is {total}"
                )));
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            if let Some(max_norm) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    grad.iter_mut().for_each(|g| *g *= max_norm / norm);
                }
            }
            sgd.step(&mut state.params, &grad)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            if cfg.precision == Precision::F32 {
                round_to_f32(state.params.values_mut());
            }
            sum_clean += bc;
            sum_robust += br;
        }
        let l_clean = sum_clean / n as f64;
        let l_robust = sum_robust / n as f64;
        let record = EpochRecord {
            epoch,
            gamma: cfg.gamma,
            l_clean,
            l_robust,
            l_total: l_clean + cfg.gamma * l_robust,
            train_acc: n_correct as f64 / n as f64,
            wall_time_s: Some(started.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {epoch}: L_clean {l_clean:.4} L_robust {l_robust:.4} acc {:.3} ({:.1}s)",
            record.train_acc,
            record.wall_time_s.unwrap_or(0.0)
        );
        state.history.records.push(record);
        state.velocity = sgd.velocity.clone();
        on_epoch(&state)?;
    }
    state.velocity = sgd.velocity;
    Ok(state)
}

const MAGIC: &[u8; 8] = b"FSATCKPT";
const VERSION: u32 = 1;

/// Options for [`load_checkpoint`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Convert single-precision weights to a double-precision model.
    pub widen_to_f64: bool,
}

/// Layout (all integers little-endian):
/// magic, version u32, precision u8, seed u64, tensor count u32, then per
/// tensor its name, rank and dims followed by the values (f64 or f32 by
/// precision); momentum velocity as f64; history records; CRC-32 of all
/// preceding bytes.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let p = &state.params;
    buf.push(match p.precision {
        Precision::F64 => 0,
        Precision::F32 => 1,
    });
    buf.extend_from_slice(&p.seed.to_le_bytes());
    let tensors = ParamLayout::tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, range) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for d in &shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for &v in &p.values()[range] {
            match p.precision {
                Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    buf.extend_from_slice(&(state.velocity.len() as u32).to_le_bytes());
    for v in &state.velocity {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(state.history.records.len() as u32).to_le_bytes());
    for r in &state.history.records {
        buf.extend_from_slice(&(r.epoch as u32).to_le_bytes());
        for v in [r.gamma, r.l_clean, r.l_robust, r.l_total, r.train_acc] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }
}

pub fn load_checkpoint(path: &Path, opts: LoadOptions) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut c = Cursor {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let precision = match c.u8()? {
        0 => Precision::F64,
        1 => Precision::F32,
        t => return Err(Error::Checkpoint(format!("unknown precision tag {t}"))),
    };
    let seed = c.u64()?;
    let tensors = ParamLayout::tensors();
    if c.u32()? as usize != tensors.len() {
        return Err(Error::Checkpoint("tensor count mismatch".into()));
    }
    let mut values = vec![0.0; ParamLayout::TOTAL];
    for (name, shape, range) in tensors {
        let len = c.u16()? as usize;
        let got = c.take(len)?;
        if got != name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(got)
            )));
        }
        let rank = c.u8()? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != shape {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {dims:?} does not match model shape {shape:?}"
            )));
        }
        for v in &mut values[range] {
            *v = match precision {
                Precision::F64 => c.f64()?,
                Precision::F32 => f64::from(c.f32()?),
            };
        }
    }
    let n_vel = c.u32()? as usize;
    if n_vel != ParamLayout::TOTAL {
        return Err(Error::Checkpoint(
            "optimizer state has the wrong length".into(),
        ));
    }
    let velocity = (0..n_vel).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let n_rec = c.u32()? as usize;
    let mut records = Vec::with_capacity(n_rec.min(1 << 16));
    for _ in 0..n_rec {
        let epoch = c.u32()? as usize;
        let [gamma, l_clean, l_robust, l_total, train_acc] =
            [c.f64()?, c.f64()?, c.f64()?, c.f64()?, c.f64()?];
        records.push(EpochRecord {
            epoch,
            gamma,
            l_clean,
            l_robust,
            l_total,
            train_acc,
            wall_time_s: None,
        });
    }
    if c.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after history".into()));
    }
    let precision = match (precision, opts.widen_to_f64) {
        (Precision::F32, true) => Precision::F64,
        (p, _) => p,
    };
    let params = ClassifierParams::from_values(values, precision, seed)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(TrainState {
        params,
        velocity,
        history: TrainHistory { records },
    })
}
