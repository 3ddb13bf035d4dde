//! Command-line front end. Each subcommand reads one TOML run config, writes
//! its outputs under `--out`, and maps errors to stable exit codes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::attack::{self, AttackSource, GridEntry};
use crate::audio_io::{self, LabeledClip, Manifest, Split};
use crate::augment;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::model::ClassifierParams;
use crate::rng::{self, Purpose};
use crate::train::{self, LoadOptions, TrainState};

#[derive(Debug, Parser)]
#[command(
    name = "fsat",
    version,
    about = "Frequency-selective adversarial training toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for every artifact of the run.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic REAL/FAKE corpus and its manifest.
    GenData,
    /// Train a classifier on the manifest's train split.
    Train {
        /// Continue from `<out>/model.ckpt` if present.
        #[arg(long)]
        resume: bool,
    },
    /// Clean accuracy of a checkpoint.
    Eval,
    /// Accuracy under the configured attack grid.
    Attack,
    /// Accuracy under fixed corruptions; optionally writes corrupted clips.
    Corrupt,
    /// Accuracy after brickwall high-pass filtering at each cutoff.
    SweepHighpass,
}

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const MODEL_CHECKPOINT: &str = "model.ckpt";

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.resolve_paths(Path::new("."));
            cfg
        }
    };
    cfg.apply_seed(cli.seed.unwrap_or(cfg.seed));
    match &cli.command {
        Command::GenData => cfg.validate_synth()?,
        Command::Train { .. } => cfg.validate_train()?,
        Command::Eval => {
            cfg.validate_eval()?;
        }
        Command::Attack => cfg.validate_attack()?,
        Command::Corrupt => cfg.validate_corrupt()?,
        Command::SweepHighpass => cfg.validate_highpass()?,
    }
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let echo = out.join(EFFECTIVE_CONFIG);
    fs::write(&echo, cfg.to_toml()?).map_err(|e| Error::io(&echo, e))?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, out),
        Command::Train { resume } => cmd_train(&cfg, out, *resume),
        Command::Eval => cmd_eval(&cfg, out),
        Command::Attack => cmd_attack(&cfg, out),
        Command::Corrupt => cmd_corrupt(&cfg, out),
        Command::SweepHighpass => cmd_sweep_highpass(&cfg, out),
    }
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = audio_io::gen_synthetic_corpus(&cfg.synth, out)?;
    let path = out.join("manifest.tsv");
    info!("wrote {} clips", manifest.entries.len());
    println!("{}", path.display());
    Ok(())
}

/// The manifest restricted to `split`, its clips, and their base directory.
fn load_split(cfg: &RunConfig, split: Split) -> Result<(Manifest, Vec<LabeledClip>)> {
    let path = cfg.manifest_path()?;
    let manifest = audio_io::load_manifest(path)?.split(split);
    if manifest.entries.is_empty() {
        return Err(Error::Validation(format!(
            "manifest {} has no {split} clips",
            path.display()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let clips = manifest.load_clips(base)?;
    if let Some(clip) = clips
        .iter()
        .find(|c| c.waveform.sample_rate_hz() != cfg.synth.sample_rate_hz)
    {
        return Err(Error::Validation(format!(
            "clip {} is {} Hz but the run is configured for {} Hz",
            clip.source_id,
            clip.waveform.sample_rate_hz(),
            cfg.synth.sample_rate_hz
        )));
    }
    Ok((manifest, clips))
}

fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<()> {
    let tc = &cfg.train;
    let (_, clips) = load_split(cfg, Split::Train)?;
    let ckpt_path = out.join(MODEL_CHECKPOINT);
    let state = if resume && ckpt_path.is_file() {
        let state = train::load_checkpoint(&ckpt_path, LoadOptions::default())?;
        if state.params.seed != tc.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {} but the run uses {}",
                state.params.seed, tc.seed
            )));
        }
        info!("resuming after epoch {}", state.epochs_done());
        state
    } else {
        TrainState::fresh(tc)
    };
    let every = tc.checkpoint_every;
    let mut on_epoch = |s: &TrainState| -> Result<()> {
        train::save_checkpoint(s, &ckpt_path)?;
        let done = s.epochs_done();
        if every > 0 && done.is_multiple_of(every) {
            train::save_checkpoint(s, &out.join(format!("epoch_{done:04}.ckpt")))?;
        }
        Ok(())
    };
    let state = train::train_resume(&clips, tc, state, &mut on_epoch)?;
    train::save_checkpoint(&state, &ckpt_path)?;
    state.history.write_jsonl(&out.join("history.jsonl"))?;
    state.history.write_timing(&out.join("timing.jsonl"))?;
    println!("{}", ckpt_path.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<ClassifierParams> {
    let opts = LoadOptions {
        widen_to_f64: cfg.eval.widen_f32,
    };
    Ok(train::load_checkpoint(path, opts)?.params)
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = load_model(cfg, cfg.validate_eval()?)?;
    let (_, clips) = load_split(cfg, cfg.data.eval_split)?;
    let report = eval::evaluate(&params, &clips, cfg.eval.threshold)?;
    log_report(&report);
    eval::write_reports(&[report], out, "eval")
}

fn cmd_attack(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = load_model(cfg, cfg.validate_eval()?)?;
    let (_, clips) = load_split(cfg, cfg.data.eval_split)?;
    let surrogates: BTreeMap<&str, ClassifierParams> = cfg
        .attack
        .sources
        .iter()
        .map(|(name, path)| Ok((name.as_str(), load_model(cfg, path)?)))
        .collect::<Result<_>>()?;
    let specs = cfg.attack_grid();
    let grid: Vec<GridEntry<'_>> = specs
        .iter()
        .map(|spec| GridEntry {
            cfg: spec.attack.clone(),
            source: AttackSource {
                name: &spec.source,
                params: surrogates.get(spec.source.as_str()),
            },
        })
        .collect();
    let rows = attack::attack_grid(&params, &clips, &grid, cfg.eval.threshold, cfg.seed)?;
    let mut reports = Vec::with_capacity(rows.len());
    for row in rows {
        for (i, msg) in &row.failures {
            warn!("{}: clip {i} failed: {msg}", row.report.condition);
        }
        log_report(&row.report);
        reports.push(row.report);
    }
    eval::write_reports(&reports, out, "attack")
}

fn cmd_corrupt(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = load_model(cfg, cfg.validate_eval()?)?;
    let (manifest, clips) = load_split(cfg, cfg.data.eval_split)?;
    let ops: Vec<_> = cfg
        .corrupt
        .ops
        .iter()
        .map(|o| (o.kind, o.magnitude))
        .collect();
    let reports = eval::corruption_sweep(&params, &clips, &ops, cfg.eval.threshold, cfg.seed)?;
    reports.iter().for_each(log_report);
    if cfg.corrupt.write_wavs {
        for &(kind, magnitude) in &ops {
            let dir = out
                .join("corrupted")
                .join(format!("{}_{magnitude}", kind.name()));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, (entry, clip)) in manifest.entries.iter().zip(&clips).enumerate() {
                // same stream as the sweep, so the files are what was scored
                let mut r = rng::stream(cfg.seed, Purpose::Corrupt, i as u64);
                let w = augment::apply_corruption(&clip.waveform, kind, magnitude, &mut r)?;
                let name = entry
                    .path
                    .file_name()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(format!("clip_{i:05}.wav")));
                audio_io::write_wav(&w, &dir.join(name))?;
            }
        }
    }
    eval::write_reports(&reports, out, "corrupt")
}

fn cmd_sweep_highpass(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = load_model(cfg, cfg.validate_eval()?)?;
    let (_, clips) = load_split(cfg, cfg.data.eval_split)?;
    let rows = eval::highpass_sweep(
        &params,
        &clips,
        &cfg.highpass.cutoffs_hz,
        cfg.eval.threshold,
    )?;
    let reports: Vec<EvalReport> = rows.into_iter().map(|(_, r)| r).collect();
    reports.iter().for_each(log_report);
    eval::write_reports(&reports, out, "highpass")
}

fn log_report(r: &EvalReport) {
    let fmt = |a: Option<f64>| a.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    info!(
        "{}: real {} fake {} avg {:.3}",
        r.condition,
        fmt(r.acc_real),
        fmt(r.acc_fake),
        r.acc_avg
    );
}
