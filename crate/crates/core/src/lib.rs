//! Frequency-selective adversarial training for raw-waveform audio deepfake
//! detectors: STFT-domain band-limited magnitude attacks, time-domain PGD,
//! audio RandAugment, a small differentiable classifier and a robustness
//! evaluation harness.

pub mod attack;
pub mod audio_io;
pub mod augment;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;

pub use audio_io::{Label, LabeledClip, Manifest, Split, Waveform};
pub use error::{Error, Result};
