//! Run configuration: one TOML file per run, covering every pipeline stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file. All randomness derives from the top-level `seed`; the CLI copies it
//! into every stage before the run starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackDomain};
use crate::audio_io::{Split, SynthConfig};
use crate::augment::{self, CorruptionKind};
use crate::dsp::FrequencyBand;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest consumed by `train`, `eval`, `attack`, `corrupt` and
    /// `sweep-highpass`. Clip paths inside it are relative to its directory.
    pub manifest: Option<PathBuf>,
    /// Split used by the evaluation commands.
    pub eval_split: Split,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            eval_split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Model under evaluation.
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    /// Allow a single-precision checkpoint to be evaluated in double precision.
    pub widen_f32: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            checkpoint: None,
            threshold: DEFAULT_THRESHOLD,
            widen_f32: false,
        }
    }
}

/// One attack row: an attack configuration plus the name of the model the
/// perturbation is crafted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "white_box_name")]
    pub source: String,
    #[serde(flatten)]
    pub attack: AttackConfig,
}

fn white_box_name() -> String {
    "A".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackOptions {
    /// Append the 45-row table: TIME and FREQ bands 0–8k, 2–8k, 4–8k, 6–8k,
    /// each at (K, R) = (2, 1), (5, 1), (5, 2), for every source in `sources`.
    pub table5: bool,
    /// Surrogate checkpoints by source name. `A` is the evaluated model
    /// unless listed here.
    pub sources: BTreeMap<String, PathBuf>,
    pub grid: Vec<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptOptions {
    pub ops: Vec<CorruptionSpec>,
    /// Also write every corrupted clip as a WAV file.
    pub write_wavs: bool,
}

impl Default for CorruptOptions {
    fn default() -> Self {
        Self {
            ops: Vec::new(),
            write_wavs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighpassOptions {
    pub cutoffs_hz: Vec<f64>,
}

impl Default for HighpassOptions {
    fn default() -> Self {
        Self {
            cutoffs_hz: (0..8).map(|k| f64::from(k) * 1000.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub attack: AttackOptions,
    pub corrupt: CorruptOptions,
    pub highpass: HighpassOptions,
}

/// Table-5-shaped evaluation grid for the given source names.
pub fn table5_grid(sources: &[String]) -> Vec<GridSpec> {
    let mut domains = vec![None];
    domains.extend(
        [0.0, 2000.0, 4000.0, 6000.0]
            .into_iter()
            .map(|lo| Some(FrequencyBand::new(lo, 8000.0))),
    );
    let mut grid = Vec::new();
    for band in &domains {
        for (k, r) in [(2, 1), (5, 1), (5, 2)] {
            for source in sources {
                let attack = match band {
                    None => AttackConfig::time(k, r),
                    Some(b) => AttackConfig::freq(*b, k, r),
                };
                grid.push(GridSpec {
                    source: source.clone(),
                    attack,
                });
            }
        }
    }
    grid
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                file: file.to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(m) = &mut self.data.manifest {
            *m = resolve(base, m);
        }
        if let Some(c) = &mut self.eval.checkpoint {
            *c = resolve(base, c);
        }
        for p in self.attack.sources.values_mut() {
            *p = resolve(base, p);
        }
    }

    /// Copies the top-level seed into every stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        if let Some(policy) = &mut self.train.augment {
            policy.seed = seed;
        }
    }

    /// The full attack grid: explicit rows, then the table preset if enabled.
    pub fn attack_grid(&self) -> Vec<GridSpec> {
        let mut grid = self.attack.grid.clone();
        if self.attack.table5 {
            let mut names: Vec<String> = self.attack.sources.keys().cloned().collect();
            if !names.iter().any(|n| n == "A") {
                names.insert(0, "A".into());
            }
            grid.extend(table5_grid(&names));
        }
        grid
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate_synth(&self) -> Result<()> {
        self.synth.validate()
    }

    pub fn validate_train(&self) -> Result<()> {
        self.require_manifest()?;
        self.train.validate(self.synth.sample_rate_hz)
    }

    fn require_manifest(&self) -> Result<&Path> {
        let m = self
            .data
            .manifest
            .as_deref()
            .ok_or_else(|| Error::Config("data.manifest is required".into()))?;
        if !m.is_file() {
            return Err(Error::Config(format!(
                "manifest {} does not exist",
                m.display()
            )));
        }
        Ok(m)
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.require_manifest()
    }

    /// Checks the pieces shared by the evaluation commands.
    pub fn validate_eval(&self) -> Result<&Path> {
        self.require_manifest()?;
        if !(self.eval.threshold.is_finite() && (0.0..=1.0).contains(&self.eval.threshold)) {
            return Err(Error::Config(format!(
                "eval.threshold must lie in [0, 1], got {}",
                self.eval.threshold
            )));
        }
        let ckpt = self
            .eval
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("eval.checkpoint is required".into()))?;
        if !ckpt.is_file() {
            return Err(Error::Config(format!(
                "checkpoint {} does not exist",
                ckpt.display()
            )));
        }
        Ok(ckpt)
    }

    pub fn validate_attack(&self) -> Result<()> {
        self.validate_eval()?;
        let grid = self.attack_grid();
        if grid.is_empty() {
            return Err(Error::Config("attack grid is empty".into()));
        }
        for (name, path) in &self.attack.sources {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "checkpoint {} for source {name} does not exist",
                    path.display()
                )));
            }
        }
        for row in &grid {
            if row.source != "A" && !self.attack.sources.contains_key(&row.source) {
                return Err(Error::Config(format!(
                    "unknown attack source {}",
                    row.source
                )));
            }
            row.attack.validate()?;
            if row.attack.domain == AttackDomain::FreqMagnitude
                && row.attack.stft.sample_rate_hz != self.synth.sample_rate_hz
            {
                return Err(Error::Config(format!(
                    "attack STFT rate {} Hz differs from the data rate {} Hz",
                    row.attack.stft.sample_rate_hz, self.synth.sample_rate_hz
                )));
            }
        }
        Ok(())
    }

    pub fn validate_corrupt(&self) -> Result<()> {
        self.validate_eval()?;
        if self.corrupt.ops.is_empty() {
            return Err(Error::Config("corrupt.ops is empty".into()));
        }
        for op in &self.corrupt.ops {
            augment::check_magnitude(op.kind, op.magnitude, self.synth.sample_rate_hz)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate_highpass(&self) -> Result<()> {
        self.validate_eval()?;
        let c = &self.highpass.cutoffs_hz;
        if c.is_empty() {
            return Err(Error::Config("highpass.cutoffs_hz is empty".into()));
        }
        let nyquist = f64::from(self.synth.sample_rate_hz) / 2.0;
        if c.windows(2).any(|w| w[1] < w[0]) || c.iter().any(|v| !(*v >= 0.0 && *v < nyquist)) {
            return Err(Error::Config(format!(
                "highpass.cutoffs_hz must be ascending within [0, {nyquist})"
            )));
        }
        Ok(())
    }
}
