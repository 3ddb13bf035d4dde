//! Small raw-waveform classifier with hand-written backpropagation.
//!
//! Layout: `conv1 (8 x 1 x 31, stride 4) -> ReLU -> conv2 (16 x 8 x 15,
//! stride 4) -> ReLU -> mean over time -> linear 16 -> 2`. Gradients are
//! exact with respect to every parameter and every input sample.
//!
//! Parameters live in one flat `f64` vector (see [`ParamLayout`]); the F32
//! precision mode narrows them per call and runs the same kernels in `f32`.

use std::ops::Range;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{Label, Waveform};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub taps: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.taps
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        (input_len >= self.taps).then(|| (input_len - self.taps) / self.stride + 1)
    }
}

pub const CONV1: ConvSpec = ConvSpec {
    out_channels: 8,
    in_channels: 1,
    taps: 31,
    stride: 4,
};
pub const CONV2: ConvSpec = ConvSpec {
    out_channels: 16,
    in_channels: 8,
    taps: 15,
    stride: 4,
};
pub const N_CLASSES: usize = 2;
const HIDDEN: usize = CONV2.out_channels;

/// Shortest input producing one conv2 output: `31 + (15 - 1) * 4`.
pub const RECEPTIVE_FIELD: usize = CONV1.taps + (CONV2.taps - 1) * CONV1.stride;

/// Offsets of each tensor inside the flat parameter vector.
pub struct ParamLayout;

impl ParamLayout {
    pub const CONV1_W: Range<usize> = 0..CONV1.weight_count();
    pub const CONV1_B: Range<usize> = Self::CONV1_W.end..Self::CONV1_W.end + CONV1.out_channels;
    pub const CONV2_W: Range<usize> = Self::CONV1_B.end..Self::CONV1_B.end + CONV2.weight_count();
    pub const CONV2_B: Range<usize> = Self::CONV2_W.end..Self::CONV2_W.end + CONV2.out_channels;
    pub const HEAD_W: Range<usize> = Self::CONV2_B.end..Self::CONV2_B.end + N_CLASSES * HIDDEN;
    pub const HEAD_B: Range<usize> = Self::HEAD_W.end..Self::HEAD_W.end + N_CLASSES;
    pub const TOTAL: usize = Self::HEAD_B.end;

    /// `(name, shape, range)` for every tensor, in storage order.
    pub fn tensors() -> [(&'static str, Vec<usize>, Range<usize>); 6] {
        [
            (
                "conv1.weight",
                vec![CONV1.out_channels, CONV1.in_channels, CONV1.taps],
                Self::CONV1_W,
            ),
            ("conv1.bias", vec![CONV1.out_channels], Self::CONV1_B),
            (
                "conv2.weight",
                vec![CONV2.out_channels, CONV2.in_channels, CONV2.taps],
                Self::CONV2_W,
            ),
            ("conv2.bias", vec![CONV2.out_channels], Self::CONV2_B),
            ("head.weight", vec![N_CLASSES, HIDDEN], Self::HEAD_W),
            ("head.bias", vec![N_CLASSES], Self::HEAD_B),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    values: Vec<f64>,
    pub precision: Precision,
    pub seed: u64,
}

impl ClassifierParams {
    pub fn from_values(values: Vec<f64>, precision: Precision, seed: u64) -> Result<Self> {
        if values.len() != ParamLayout::TOTAL {
            return Err(Error::Size(format!(
                "expected {} parameters, got {}",
                ParamLayout::TOTAL,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "parameters contain NaN or infinity".into(),
            ));
        }
        Ok(Self {
            values,
            precision,
            seed,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn conv1_weight(&self) -> &[f64] {
        &self.values[ParamLayout::CONV1_W]
    }

    pub fn conv1_bias(&self) -> &[f64] {
        &self.values[ParamLayout::CONV1_B]
    }

    pub fn conv2_weight(&self) -> &[f64] {
        &self.values[ParamLayout::CONV2_W]
    }

    pub fn conv2_bias(&self) -> &[f64] {
        &self.values[ParamLayout::CONV2_B]
    }

    pub fn head_weight(&self) -> &[f64] {
        &self.values[ParamLayout::HEAD_W]
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.values[ParamLayout::HEAD_B]
    }

    fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in &self.values {
            h.update(&v.to_le_bytes());
        }
        h.update(&[self.precision as u8]);
        h.finalize()
    }
}

/// He-uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
pub fn init_classifier(seed: u64) -> ClassifierParams {
    let mut rng = rng::stream(seed, Purpose::Init, 0);
    let mut values = vec![0.0; ParamLayout::TOTAL];
    let fills = [
        (ParamLayout::CONV1_W, CONV1.in_channels * CONV1.taps),
        (ParamLayout::CONV2_W, CONV2.in_channels * CONV2.taps),
        (ParamLayout::HEAD_W, HIDDEN),
    ];
    for (range, fan_in) in fills {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in &mut values[range] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    ClassifierParams {
        values,
        precision: Precision::F64,
        seed,
    }
}

trait Scalar: Float + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn to(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to(self) -> f64 {
        f64::from(self)
    }
}

#[derive(Debug, Clone)]
struct Activations<T> {
    input: Vec<T>,
    /// Post-ReLU conv1 output, channel-major.
    h1: Vec<T>,
    /// Post-ReLU conv2 output, channel-major.
    h2: Vec<T>,
    pooled: [T; HIDDEN],
    len1: usize,
    len2: usize,
}

#[derive(Debug, Clone)]
enum TraceData {
    F64(Activations<f64>),
    F32(Activations<f32>),
}

/// Cached activations of one forward pass, tied to the parameters it used.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    data: TraceData,
    params_digest: u32,
    logits: [f64; N_CLASSES],
}

impl ForwardTrace {
    pub fn input_len(&self) -> usize {
        match &self.data {
            TraceData::F64(a) => a.input.len(),
            TraceData::F32(a) => a.input.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: [f64; N_CLASSES],
    pub score_fake: f64,
    pub trace: ForwardTrace,
}

impl Forward {
    /// Cross-entropy of the cached logits against `y`.
    pub fn loss(&self, y: Label) -> f64 {
        cross_entropy(&self.logits, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as [`ClassifierParams::values`]; empty when not requested.
    pub d_params: Vec<f64>,
    /// One entry per input sample; empty when not requested.
    pub d_input: Vec<f64>,
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// `-log softmax(logits)[y]`, evaluated with log-sum-exp.
pub fn cross_entropy(logits: &[f64; N_CLASSES], y: Label) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[y.class()]
}

pub fn forward(params: &ClassifierParams, w: &Waveform) -> Result<Forward> {
    forward_samples(params, w.samples())
}

pub fn forward_samples(params: &ClassifierParams, x: &[f64]) -> Result<Forward> {
    if x.len() < RECEPTIVE_FIELD {
        return Err(Error::Size(format!(
            "input of {} samples is shorter than the receptive field ({RECEPTIVE_FIELD})",
            x.len()
        )));
    }
    let (data, logits) = match params.precision {
        Precision::F64 => {
            let (a, z) = forward_impl::<f64>(params.values(), x);
            (TraceData::F64(a), z)
        }
        Precision::F32 => {
            let (a, z) = forward_impl::<f32>(params.values(), x);
            (TraceData::F32(a), z)
        }
    };
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits are not finite".into()));
    }
    let probs = softmax(&logits);
    Ok(Forward {
        logits,
        score_fake: probs[Label::Fake.class()],
        trace: ForwardTrace {
            data,
            params_digest: params.digest(),
            logits,
        },
    })
}

pub fn loss(params: &ClassifierParams, w: &Waveform, y: Label) -> Result<f64> {
    Ok(forward(params, w)?.loss(y))
}

/// Which gradients [`backward_with`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wants {
    pub params: bool,
    pub input: bool,
}

impl Wants {
    pub const ALL: Wants = Wants {
        params: true,
        input: true,
    };
    pub const PARAMS: Wants = Wants {
        params: true,
        input: false,
    };
    pub const INPUT: Wants = Wants {
        params: false,
        input: true,
    };
}

/// Gradient of `cross_entropy(forward(params, x), y)` w.r.t. parameters and input.
pub fn backward(params: &ClassifierParams, trace: &ForwardTrace, y: Label) -> Result<Gradients> {
    backward_with(params, trace, y, Wants::ALL)
}

pub fn backward_with(
    params: &ClassifierParams,
    trace: &ForwardTrace,
    y: Label,
    wants: Wants,
) -> Result<Gradients> {
    if trace.params_digest != params.digest() {
        return Err(Error::Validation(
            "stale forward trace: parameters changed since the forward pass".into(),
        ));
    }
    let probs = softmax(&trace.logits);
    let mut d_logits = probs;
    d_logits[y.class()] -= 1.0;
    let grads = match &trace.data {
        TraceData::F64(a) => backward_impl::<f64>(params.values(), a, d_logits, wants),
        TraceData::F32(a) => backward_impl::<f32>(params.values(), a, d_logits, wants),
    };
    if grads
        .d_params
        .iter()
        .chain(&grads.d_input)
        .any(|g| !g.is_finite())
    {
        return Err(Error::NonFinite("gradient is not finite".into()));
    }
    Ok(grads)
}

fn cast<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn forward_impl<T: Scalar>(theta: &[f64], x: &[f64]) -> (Activations<T>, [f64; N_CLASSES]) {
    let w1: Vec<T> = cast(&theta[ParamLayout::CONV1_W]);
    let b1: Vec<T> = cast(&theta[ParamLayout::CONV1_B]);
    let w2: Vec<T> = cast(&theta[ParamLayout::CONV2_W]);
    let b2: Vec<T> = cast(&theta[ParamLayout::CONV2_B]);
    let input: Vec<T> = cast(x);

    let len1 = CONV1.output_len(input.len()).expect("checked by caller");
    let len2 = CONV2.output_len(len1).expect("checked by caller");

    let mut h1 = vec![T::zero(); CONV1.out_channels * len1];
    for c in 0..CONV1.out_channels {
        let taps = &w1[c * CONV1.taps..(c + 1) * CONV1.taps];
        let out = &mut h1[c * len1..(c + 1) * len1];
        for (i, o) in out.iter_mut().enumerate() {
            let start = i * CONV1.stride;
            let a = b1[c] + dot(taps, &input[start..start + CONV1.taps]);
            *o = a.max(T::zero());
        }
    }

    let mut h2 = vec![T::zero(); CONV2.out_channels * len2];
    let mut pooled = [T::zero(); HIDDEN];
    for o in 0..CONV2.out_channels {
        let kernel =
            &w2[o * CONV2.in_channels * CONV2.taps..(o + 1) * CONV2.in_channels * CONV2.taps];
        let out = &mut h2[o * len2..(o + 1) * len2];
        for (j, v) in out.iter_mut().enumerate() {
            let start = j * CONV2.stride;
            let mut a = b2[o];
            for c in 0..CONV2.in_channels {
                a = a + dot(
                    &kernel[c * CONV2.taps..(c + 1) * CONV2.taps],
                    &h1[c * len1 + start..c * len1 + start + CONV2.taps],
                );
            }
            *v = a.max(T::zero());
        }
        let sum = out.iter().fold(T::zero(), |s, &v| s + v);
        pooled[o] = sum / T::of(len2 as f64);
    }

    let wh: Vec<T> = cast(&theta[ParamLayout::HEAD_W]);
    let bh: Vec<T> = cast(&theta[ParamLayout::HEAD_B]);
    let mut logits = [0.0; N_CLASSES];
    for (k, z) in logits.iter_mut().enumerate() {
        *z = (bh[k] + dot(&wh[k * HIDDEN..(k + 1) * HIDDEN], &pooled)).to();
    }
    (
        Activations {
            input,
            h1,
            h2,
            pooled,
            len1,
            len2,
        },
        logits,
    )
}

fn backward_impl<T: Scalar>(
    theta: &[f64],
    a: &Activations<T>,
    d_logits: [f64; N_CLASSES],
    wants: Wants,
) -> Gradients {
    let (len1, len2) = (a.len1, a.len2);
    let wh: Vec<T> = cast(&theta[ParamLayout::HEAD_W]);
    let w2: Vec<T> = cast(&theta[ParamLayout::CONV2_W]);
    let w1: Vec<T> = cast(&theta[ParamLayout::CONV1_W]);
    let dz = [T::of(d_logits[0]), T::of(d_logits[1])];

    let mut d_params = if wants.params {
        vec![0.0; ParamLayout::TOTAL]
    } else {
        Vec::new()
    };

    // head
    let mut d_pooled = [T::zero(); HIDDEN];
    for (h, dp) in d_pooled.iter_mut().enumerate() {
        *dp = wh[h] * dz[0] + wh[HIDDEN + h] * dz[1];
    }
    if wants.params {
        for k in 0..N_CLASSES {
            for h in 0..HIDDEN {
                d_params[ParamLayout::HEAD_W.start + k * HIDDEN + h] = (dz[k] * a.pooled[h]).to();
            }
            d_params[ParamLayout::HEAD_B.start + k] = d_logits[k];
        }
    }

    // mean pool + ReLU of conv2
    let inv_len2 = T::one() / T::of(len2 as f64);
    let mut da2 = vec![T::zero(); CONV2.out_channels * len2];
    for o in 0..CONV2.out_channels {
        let g = d_pooled[o] * inv_len2;
        for j in 0..len2 {
            if a.h2[o * len2 + j] > T::zero() {
                da2[o * len2 + j] = g;
            }
        }
    }

    // conv2
    let k2 = CONV2.in_channels * CONV2.taps;
    let mut dh1 = vec![T::zero(); CONV1.out_channels * len1];
    let mut dw2 = vec![T::zero(); CONV2.weight_count()];
    for o in 0..CONV2.out_channels {
        let kernel = &w2[o * k2..(o + 1) * k2];
        let dkernel = &mut dw2[o * k2..(o + 1) * k2];
        let mut db = T::zero();
        for j in 0..len2 {
            let g = da2[o * len2 + j];
            if g == T::zero() {
                continue;
            }
            db = db + g;
            let start = j * CONV2.stride;
            for c in 0..CONV2.in_channels {
                let base = c * len1 + start;
                let window = &a.h1[base..base + CONV2.taps];
                let taps = &kernel[c * CONV2.taps..(c + 1) * CONV2.taps];
                if wants.params {
                    for (dk, &hv) in dkernel[c * CONV2.taps..(c + 1) * CONV2.taps]
                        .iter_mut()
                        .zip(window)
                    {
                        *dk = *dk + g * hv;
                    }
                }
                for (dh, &wv) in dh1[base..base + CONV2.taps].iter_mut().zip(taps) {
                    *dh = *dh + g * wv;
                }
            }
        }
        if wants.params {
            d_params[ParamLayout::CONV2_B.start + o] = db.to();
        }
    }
    if wants.params {
        for (d, v) in d_params[ParamLayout::CONV2_W].iter_mut().zip(&dw2) {
            *d = v.to();
        }
    }

    // ReLU of conv1, then conv1
    let mut d_input = if wants.input {
        vec![T::zero(); a.input.len()]
    } else {
        Vec::new()
    };
    let mut dw1 = vec![T::zero(); CONV1.weight_count()];
    for c in 0..CONV1.out_channels {
        let taps = &w1[c * CONV1.taps..(c + 1) * CONV1.taps];
        let mut db = T::zero();
        for i in 0..len1 {
            if a.h1[c * len1 + i] <= T::zero() {
                continue;
            }
            let g = dh1[c * len1 + i];
            if g == T::zero() {
                continue;
            }
            db = db + g;
            let start = i * CONV1.stride;
            if wants.params {
                for (dk, &xv) in dw1[c * CONV1.taps..(c + 1) * CONV1.taps]
                    .iter_mut()
                    .zip(&a.input[start..start + CONV1.taps])
                {
                    *dk = *dk + g * xv;
                }
            }
            if wants.input {
                for (dx, &wv) in d_input[start..start + CONV1.taps].iter_mut().zip(taps) {
                    *dx = *dx + g * wv;
                }
            }
        }
        if wants.params {
            d_params[ParamLayout::CONV1_B.start + c] = db.to();
        }
    }
    if wants.params {
        for (d, v) in d_params[ParamLayout::CONV1_W].iter_mut().zip(&dw1) {
            *d = v.to();
        }
    }

    Gradients {
        d_params,
        d_input: d_input.into_iter().map(Scalar::to).collect(),
    }
}

/// `v <- momentum * v - lr * g; theta <- theta + v`, elementwise.
pub fn sgd_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: vec![0.0; ParamLayout::TOTAL],
        })
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grad: &[f64]) -> Result<()> {
        if grad.len() != ParamLayout::TOTAL {
            return Err(Error::Size(format!(
                "gradient has {} entries, expected {}",
                grad.len(),
                ParamLayout::TOTAL
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is not finite"
            )));
        }
        sgd_update(
            params.values_mut(),
            &mut self.velocity,
            grad,
            self.lr,
            self.momentum,
        );
        Ok(())
    }
}
