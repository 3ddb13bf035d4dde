//! Accuracy reports, corruption and high-pass sweeps, score histograms.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{Label, LabeledClip};
use crate::augment::{self, CorruptionKind};
use crate::dsp::{self, FilterMode};
use crate::error::{Error, Result};
use crate::model::{self, ClassifierParams};
use crate::rng::{self, Purpose};

pub const HIST_BINS: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-class accuracy for one evaluation condition.
///
/// A class with no clips has accuracy `None`; `acc_avg` is the mean over the
/// classes that are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub acc_real: Option<f64>,
    pub acc_fake: Option<f64>,
    pub acc_avg: f64,
    pub hist_real: [u64; HIST_BINS],
    pub hist_fake: [u64; HIST_BINS],
}

fn hist_bin(score: f64) -> usize {
    ((score * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1)
}

impl EvalReport {
    /// Clips are called FAKE when `score >= threshold`.
    pub fn from_scores(condition: &str, scored: &[(Label, f64)], threshold: f64) -> Self {
        let mut n = [0usize; 2];
        let mut correct = [0usize; 2];
        let mut hist = [[0u64; HIST_BINS]; 2];
        for &(label, score) in scored {
            let c = label.class();
            n[c] += 1;
            let predicted = if score >= threshold {
                Label::Fake
            } else {
                Label::Real
            };
            if predicted == label {
                correct[c] += 1;
            }
            hist[c][hist_bin(score)] += 1;
        }
        let acc = |c: usize| (n[c] > 0).then(|| correct[c] as f64 / n[c] as f64);
        let (acc_real, acc_fake) = (acc(0), acc(1));
        let acc_avg = match (acc_real, acc_fake) {
            (Some(r), Some(f)) => (r + f) / 2.0,
            (Some(r), None) => r,
            (None, Some(f)) => f,
            (None, None) => 0.0,
        };
        Self {
            condition: condition.to_string(),
            n_real: n[0],
            n_fake: n[1],
            acc_real,
            acc_fake,
            acc_avg,
            hist_real: hist[0],
            hist_fake: hist[1],
        }
    }

    /// Same numbers under a different condition name.
    pub fn renamed(mut self, condition: &str) -> Self {
        self.condition = condition.to_string();
        self
    }

    pub fn same_numbers(&self, other: &EvalReport) -> bool {
        self.n_real == other.n_real
            && self.n_fake == other.n_fake
            && self.acc_real == other.acc_real
            && self.acc_fake == other.acc_fake
            && self.acc_avg == other.acc_avg
            && self.hist_real == other.hist_real
            && self.hist_fake == other.hist_fake
    }
}

fn require_clips(dataset: &[LabeledClip]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Validation("evaluation dataset is empty".into()));
    }
    Ok(())
}

/// Scores every clip after `transform`, in dataset order.
fn score_with<F>(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    transform: F,
) -> Result<Vec<(Label, f64)>>
where
    F: Fn(usize, &LabeledClip) -> Result<Option<crate::audio_io::Waveform>> + Sync,
{
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let score = match transform(i, clip)? {
                Some(w) => model::forward(params, &w)?.score_fake,
                None => model::forward(params, &clip.waveform)?.score_fake,
            };
            Ok((clip.label, score))
        })
        .collect()
}

pub fn evaluate(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    threshold: f64,
) -> Result<EvalReport> {
    evaluate_named(params, dataset, threshold, "clean")
}

pub fn evaluate_named(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    threshold: f64,
    condition: &str,
) -> Result<EvalReport> {
    require_clips(dataset)?;
    let scored = score_with(params, dataset, |_, _| Ok(None))?;
    Ok(EvalReport::from_scores(condition, &scored, threshold))
}

/// One report per `(kind, magnitude)`, applied to every clip with the
/// corruption stream `(seed, clip index)`.
pub fn corruption_sweep(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    ops: &[(CorruptionKind, f64)],
    threshold: f64,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    require_clips(dataset)?;
    for &(kind, magnitude) in ops {
        augment::check_magnitude(kind, magnitude, dataset[0].waveform.sample_rate_hz())?;
    }
    ops.iter()
        .map(|&(kind, magnitude)| {
            let scored = score_with(params, dataset, |i, clip| {
                let mut r = rng::stream(seed, Purpose::Corrupt, i as u64);
                augment::apply_corruption(&clip.waveform, kind, magnitude, &mut r).map(Some)
            })?;
            Ok(EvalReport::from_scores(
                &format!("corrupt {}={}", kind.name(), magnitude),
                &scored,
                threshold,
            ))
        })
        .collect()
}

/// Evaluates on brickwall high-passed clips for each cutoff. A cutoff of 0
/// leaves clips untouched.
pub fn highpass_sweep(
    params: &ClassifierParams,
    dataset: &[LabeledClip],
    cutoffs_hz: &[f64],
    threshold: f64,
) -> Result<Vec<(f64, EvalReport)>> {
    require_clips(dataset)?;
    if cutoffs_hz.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("high-pass cutoffs must be ascending".into()));
    }
    let nyquist = f64::from(dataset[0].waveform.sample_rate_hz()) / 2.0;
    if let Some(bad) = cutoffs_hz.iter().find(|c| !(**c >= 0.0 && **c < nyquist)) {
        return Err(Error::Domain(format!(
            "high-pass cutoff {bad} Hz outside [0, {nyquist})"
        )));
    }
    cutoffs_hz
        .iter()
        .map(|&cutoff| {
            let scored = score_with(params, dataset, |_, clip| {
                if cutoff == 0.0 {
                    Ok(None)
                } else {
                    dsp::brickwall_filter(&clip.waveform, cutoff, FilterMode::Highpass).map(Some)
                }
            })?;
            Ok((
                cutoff,
                EvalReport::from_scores(&format!("highpass {cutoff}Hz"), &scored, threshold),
            ))
        })
        .collect()
}

/// Writes the per-condition histograms (and accuracies) as one JSON array.
pub fn score_histogram_export(reports: &[EvalReport], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::Validation(format!("cannot serialize reports: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_reports_jsonl(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in reports {
        out.push_str(
            &serde_json::to_string(r)
                .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))?,
        );
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.jsonl` and the summary document `<stem>.json` under `dir`.
pub fn write_reports(reports: &[EvalReport], dir: &Path, stem: &str) -> Result<()> {
    write_reports_jsonl(reports, &dir.join(format!("{stem}.jsonl")))?;
    score_histogram_export(reports, &dir.join(format!("{stem}.json")))
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}
