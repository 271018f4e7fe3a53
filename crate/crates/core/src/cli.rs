//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or config error, 3 missing checkpoint, 4 I/O or file format.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audio::{
    apply_normalizer, compute_spectrogram, griffin_lim, read_spectrogram_cache, read_wav, write_spectrogram_cache,
    write_wav, NormStats, Spectrogram,
};
use crate::bands::build_band_layout;
use crate::config::RunConfigFile;
use crate::datasets::{
    fixed_crops, load_manifest, synthesize_domain_dataset, Corpus, Domain, DomainKind,
    SyntheticDomainSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    band_stats_distance, checkerboard_score, classifier_flip_rate, identity_collapse_score, DomainClassifier, EvalReport,
};
use crate::fsutil::write_atomic;
use crate::losses::LossVariant;
use crate::models::{Direction, GeneratorMode, ModelBundle};
use crate::trainer::{load_checkpoint, run_paths, Checkpoint, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mdcyclegan", version, about = "Multi-discriminator CycleGAN for spectrogram domain adaptation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    X2y,
    Y2x,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Bce,
    Ls,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Single,
    OneOne,
    OneMany,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic smooth (X) / peaky (Y) corpus and its manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cache spectrograms and fit normalization statistics.
    Prepare {
        /// Manifest; defaults to `data.manifest` from the config.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Statistics JSON; defaults to `norm_stats.json` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train (or resume) a model.
    Train {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Run directory for the checkpoint and log.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Checkpoint path; defaults to `<out>/checkpoint.mdck`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from the checkpoint if it exists.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Band count for both domains.
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        loss: Option<LossArg>,
        #[arg(long)]
        pretrain_d_steps: Option<usize>,
        #[arg(long)]
        generator_mode: Option<ModeArg>,
    },
    /// Map a WAV or cached spectrogram through a trained generator.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output spectrogram cache (`.mdcg`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "x2y")]
        direction: DirectionArg,
    },
    /// Griffin-Lim resynthesis of a cached magnitude spectrogram.
    Reconstruct {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a manifest and write an evaluation report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "x2y")]
        direction: DirectionArg,
    },
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::X2y => Direction::XToY,
            DirectionArg::Y2x => Direction::YToX,
        }
    }
}

/// Maps an error onto the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound && is_checkpoint_error(e) => 3,
        Error::Io { .. } | Error::Format { .. } | Error::UnsupportedAudio(_) | Error::Manifest { .. } => 4,
        _ => 1,
    }
}

fn is_checkpoint_error(e: &Error) -> bool {
    matches!(e, Error::Io { path, .. } if path.extension().is_some_and(|x| x == "mdck"))
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code. Diagnostics go to stderr as one line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::MissingCheckpoint(p)) => {
            eprintln!("error: checkpoint {} does not exist", p.display());
            3
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

enum CliError {
    MissingCheckpoint(PathBuf),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => RunConfigFile::from_json("{}", Path::new("")),
    }
}

fn open_checkpoint(path: &Path) -> std::result::Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(load_checkpoint(path)?)
}

fn manifest_path(flag: Option<PathBuf>, cfg: &RunConfigFile) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| Error::InvalidArgument("no manifest: pass --in or set data.manifest".into()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct StatsFile<'a> {
    norm_x: &'a NormStats,
    norm_y: &'a NormStats,
}

fn run(cli: Cli) -> std::result::Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::SynthData { out, seed } => {
            let s = &cfg.data.synthetic;
            let seed = seed.unwrap_or(s.seed);
            let x = SyntheticDomainSpec::new(DomainKind::Smooth, s.num_utterances, s.duration_s, seed);
            let y = SyntheticDomainSpec::new(DomainKind::Peaky, s.num_utterances, s.duration_s, seed.wrapping_add(1));
            let mut m = synthesize_domain_dataset(&x, Domain::X, &out)?;
            m.entries.extend(synthesize_domain_dataset(&y, Domain::Y, &out)?.entries);
            m.write(&out.join("manifest.jsonl"))?;
            eprintln!("wrote {} utterances to {}", m.entries.len(), out.display());
        }
        Command::Prepare { input, out } => {
            let manifest = load_manifest(&manifest_path(input, &cfg)?)?;
            let corpus = Corpus::load(&manifest, &cfg.stft.params(), Some(&cfg.cache_dir(&manifest)))?;
            let stats = corpus.fit_shared_stats()?;
            let out = out.unwrap_or_else(|| manifest.root.join("norm_stats.json"));
            write_json(
                &StatsFile {
                    norm_x: &stats,
                    norm_y: &stats,
                },
                Some(&out),
            )?;
        }
        Command::Train {
            input,
            out,
            checkpoint,
            resume,
            seed,
            steps,
            bands,
            loss,
            pretrain_d_steps,
            generator_mode,
        } => {
            let t = &mut cfg.train;
            if let Some(v) = seed {
                t.seed = v;
            }
            if let Some(v) = steps {
                t.total_steps = v;
            }
            if let Some(v) = bands {
                cfg.bands.num_bands_x = v;
                cfg.bands.widths_x = None;
                cfg.bands.num_bands_y = v;
                cfg.bands.widths_y = None;
            }
            if let Some(v) = loss {
                t.loss_variant = match v {
                    LossArg::Bce => LossVariant::NonsaturatingBce,
                    LossArg::Ls => LossVariant::LeastSquares,
                };
            }
            if let Some(v) = pretrain_d_steps {
                t.pretrain_d_steps = v;
            }
            if let Some(v) = generator_mode {
                t.generator_mode = match v {
                    ModeArg::Single => GeneratorMode::Single,
                    ModeArg::OneOne => GeneratorMode::OneOne,
                    ModeArg::OneMany => GeneratorMode::OneMany,
                };
            }
            cfg.sync_bands();
            cfg.validate()?;
            let corpus = cfg.load_corpus(input.as_deref())?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (default_ckpt, log) = run_paths(&out);
            let ckpt_path = checkpoint.unwrap_or(default_ckpt);
            let mut trainer = if resume && ckpt_path.is_file() {
                let mut t = Trainer::resume(load_checkpoint(&ckpt_path)?, &corpus)?;
                t.settings.train.total_steps = cfg.train.total_steps;
                t
            } else {
                Trainer::new(cfg.run_settings(), &corpus)?
            };
            trainer.run(Some(&ckpt_path), Some(&log))?;
            eprintln!("trained to step {}; checkpoint {}", trainer.step, ckpt_path.display());
        }
        Command::Adapt {
            checkpoint,
            input,
            out,
            direction,
        } => {
            let ckpt = open_checkpoint(&checkpoint)?;
            let stft = ckpt.settings.stft;
            let spec = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                let w = read_wav(&input)?;
                compute_spectrogram(&w, stft.window_s, stft.hop_s)?
            } else {
                read_spectrogram_cache(&input, &stft)?
            };
            let adapted = adapt_spectrogram(&ckpt, &spec, direction.into())?;
            let out = out.unwrap_or_else(|| input.with_extension("adapted.mdcg"));
            write_spectrogram_cache(&out, &adapted)?;
        }
        Command::Reconstruct { input, out, seed } => {
            let mut gl = cfg.stft.griffin_lim();
            if let Some(s) = seed {
                gl.seed = s;
            }
            let spec = read_spectrogram_cache(&input, &cfg.stft.params())?;
            write_wav(&out, &griffin_lim(&spec, &gl)?)?;
        }
        Command::Eval {
            checkpoint,
            input,
            out,
            direction,
        } => {
            let ckpt = open_checkpoint(&checkpoint)?;
            let manifest = load_manifest(&manifest_path(input, &cfg)?)?;
            let corpus = Corpus::load(&manifest, &ckpt.settings.stft, Some(&cfg.cache_dir(&manifest)))?;
            let report = evaluate_checkpoint(&ckpt, &corpus, direction.into(), cfg.bands.classifier_bands)?;
            write_json(&report, out.as_deref())?;
        }
    }
    Ok(())
}

/// Normalizes with the source domain's statistics, runs the generator over
/// the whole utterance (edge-padded to the time stride) and denormalizes
/// with the target domain's statistics.
pub fn adapt_spectrogram(ckpt: &Checkpoint, spec: &Spectrogram, dir: Direction) -> Result<Spectrogram> {
    let (src, dst) = match dir {
        Direction::XToY => (&ckpt.norm_x, &ckpt.norm_y),
        Direction::YToX => (&ckpt.norm_y, &ckpt.norm_x),
    };
    let norm = apply_normalizer(spec, src, false)?;
    let out = translate_spectrogram(&ckpt.inference_bundle(), &norm, dir)?;
    let mut out = apply_normalizer(&out, dst, true)?;
    out.phase = None;
    Ok(out)
}

/// Generator pass over a whole normalized spectrogram of any length.
pub fn translate_spectrogram(bundle: &ModelBundle<f32>, spec: &Spectrogram, dir: Direction) -> Result<Spectrogram> {
    let (frames, bins) = spec.mag.dim();
    let factor = bundle.config.generator.time_factor();
    let padded = frames.div_ceil(factor).max(1) * factor;
    let x = ndarray::Array4::from_shape_fn((1, 1, bins, padded), |(_, _, f, t)| spec.mag[[t.min(frames - 1), f]]);
    let y = bundle.translate(dir, &x)?;
    let mag = ndarray::Array2::from_shape_fn((frames, bins), |(t, f)| y[[0, 0, f, t]]);
    Spectrogram::new(mag, spec.frame_hop_s, spec.window_s, true)
}

/// Fixed centre crops of every utterance: even-indexed utterances train the
/// domain classifier, odd-indexed ones validate it; all of them are
/// adapted and scored.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, corpus: &Corpus, dir: Direction, classifier_bands: usize) -> Result<EvalReport> {
    let data = Corpus {
        x: corpus.x.clone(),
        y: corpus.y.clone(),
    };
    let nx = Corpus {
        x: data.x.iter().map(|s| apply_normalizer(s, &ckpt.norm_x, false)).collect::<Result<_>>()?,
        y: data.y.iter().map(|s| apply_normalizer(s, &ckpt.norm_y, false)).collect::<Result<_>>()?,
    };
    let crop = ckpt.bundle.config.frames;
    let split = |v: &[Spectrogram], parity: usize| v.iter().skip(parity).step_by(2).cloned().collect::<Vec<_>>();
    for (d, v) in [("X", &nx.x), ("Y", &nx.y)] {
        if v.len() < 2 {
            return Err(Error::InvalidArgument(format!("domain {d} needs at least two utterances to evaluate")));
        }
    }
    let layout = build_band_layout(ckpt.bundle.config.bins(), classifier_bands)?;
    let classifier = DomainClassifier::fit(
        &fixed_crops(&split(&nx.x, 0), crop)?,
        &fixed_crops(&split(&nx.y, 0), crop)?,
        &fixed_crops(&split(&nx.x, 1), crop)?,
        &fixed_crops(&split(&nx.y, 1), crop)?,
        &layout,
    )?;
    let (source, target, target_domain) = match dir {
        Direction::XToY => (fixed_crops(&nx.x, crop)?, fixed_crops(&nx.y, crop)?, Domain::Y),
        Direction::YToX => (fixed_crops(&nx.y, crop)?, fixed_crops(&nx.x, crop)?, Domain::X),
    };
    let adapted = ckpt.inference_bundle().translate(dir, &source)?;
    Ok(EvalReport {
        identity_collapse: identity_collapse_score(|_| Ok(adapted.clone()), &source)?,
        band_stats_distance: band_stats_distance(&adapted, &target, ckpt.bundle.config.target_layout(dir))?,
        checkerboard: checkerboard_score(&adapted)?,
        flip_rate: classifier_flip_rate(&adapted, &classifier, target_domain)?,
    })
}
