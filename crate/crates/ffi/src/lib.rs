//! C ABI over the `mdcyclegan` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`MdcgStatus`]; on failure a description is available from
//! [`mdcg_last_error_message`] on the same thread until the next failing
//! call. Panics are caught and reported as `MDCG_STATUS_PANIC`.
//!
//! Spectrogram buffers are row-major `frames × bins` `float` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mdcyclegan::audio::{compute_spectrogram, griffin_lim, read_wav, write_wav, GriffinLimOptions, Spectrogram};
use mdcyclegan::bands::build_band_layout;
use mdcyclegan::cli::adapt_spectrogram;
use mdcyclegan::config::RunConfigFile;
use mdcyclegan::models::Direction;
use mdcyclegan::trainer::{load_checkpoint, save_checkpoint, Checkpoint, Trainer};
use mdcyclegan::Error;
use ndarray::Array2;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    UnsupportedAudio = 7,
    NonFinite = 8,
    Diverged = 9,
    MetricUndefined = 10,
    Panic = 11,
}

/// Translation direction.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcgDirection {
    XToY = 0,
    YToX = 1,
}

/// Scalar entries of one training step's loss report.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MdcgLossReport {
    pub d_loss_x: f64,
    pub d_loss_y: f64,
    pub g_adv_xy: f64,
    pub g_adv_yx: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total_g: f64,
}

/// A checkpoint loaded for inference.
pub struct MdcgModel {
    ckpt: Checkpoint,
}

/// A magnitude spectrogram.
pub struct MdcgSpectrogram {
    spec: Spectrogram,
}

/// An in-memory training run.
pub struct MdcgTrainer {
    trainer: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MdcgStatus {
    match e {
        Error::InvalidArgument(_) => MdcgStatus::InvalidArgument,
        Error::Shape(_) | Error::NormalizationFlag(_) => MdcgStatus::Shape,
        Error::Config { .. } | Error::Manifest { .. } => MdcgStatus::Config,
        Error::Io { .. } => MdcgStatus::Io,
        Error::Format { .. } => MdcgStatus::Format,
        Error::UnsupportedAudio(_) => MdcgStatus::UnsupportedAudio,
        Error::NonFinite(_) => MdcgStatus::NonFinite,
        Error::Diverged { .. } => MdcgStatus::Diverged,
        Error::MetricUndefined(_) => MdcgStatus::MetricUndefined,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MdcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MdcgStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            MdcgStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MdcgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mdcg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Writes the band widths of `num_bands` contiguous bands over
/// `total_bins` into `widths` (capacity `capacity`).
///
/// # Safety
/// `widths` must point to `capacity` writable elements.
#[no_mangle]
pub unsafe extern "C" fn mdcg_band_widths(total_bins: usize, num_bands: usize, widths: *mut usize, capacity: usize) -> MdcgStatus {
    guard(|| {
        if widths.is_null() {
            return Err(Fail::Null("widths"));
        }
        let layout = build_band_layout(total_bins, num_bands)?;
        if capacity < layout.widths.len() {
            return Err(Error::InvalidArgument(format!("capacity {capacity} < {} bands", layout.widths.len())).into());
        }
        std::slice::from_raw_parts_mut(widths, layout.widths.len()).copy_from_slice(&layout.widths);
        Ok(())
    })
}

/// Reads a 16 kHz mono 16-bit WAV and computes its magnitude spectrogram.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_from_wav(
    path: *const c_char,
    window_s: f64,
    hop_s: f64,
    out: *mut *mut MdcgSpectrogram,
) -> MdcgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = compute_spectrogram(&read_wav(&path)?, window_s, hop_s)?;
        store(out, MdcgSpectrogram { spec });
        Ok(())
    })
}

/// Wraps a caller-owned `frames × bins` magnitude buffer (copied).
///
/// # Safety
/// `mag` must point to `frames * bins` readable floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_new(
    mag: *const f32,
    frames: usize,
    bins: usize,
    window_s: f64,
    hop_s: f64,
    out: *mut *mut MdcgSpectrogram,
) -> MdcgStatus {
    guard(|| {
        if mag.is_null() {
            return Err(Fail::Null("mag"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let len = frames
            .checked_mul(bins)
            .ok_or_else(|| Error::InvalidArgument("frames * bins overflows".into()))?;
        let data = std::slice::from_raw_parts(mag, len).to_vec();
        let a = Array2::from_shape_vec((frames, bins), data).map_err(|e| Error::Shape(e.to_string()))?;
        let spec = Spectrogram::new(a, hop_s, window_s, false)?;
        store(out, MdcgSpectrogram { spec });
        Ok(())
    })
}

/// # Safety
/// `s`, `frames` and `bins` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_dims(s: *const MdcgSpectrogram, frames: *mut usize, bins: *mut usize) -> MdcgStatus {
    guard(|| {
        let s = handle(s, "spectrogram")?;
        if frames.is_null() || bins.is_null() {
            return Err(Fail::Null("frames/bins"));
        }
        *frames = s.spec.frames();
        *bins = s.spec.bins();
        Ok(())
    })
}

/// Copies the magnitudes into `out` (capacity `len` floats).
///
/// # Safety
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_copy(s: *const MdcgSpectrogram, out: *mut f32, len: usize) -> MdcgStatus {
    guard(|| {
        let s = handle(s, "spectrogram")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let mag = s.spec.mag.as_standard_layout();
        let src = mag.as_slice().expect("standard layout");
        if len < src.len() {
            return Err(Error::InvalidArgument(format!("buffer of {len} floats is smaller than {}", src.len())).into());
        }
        std::slice::from_raw_parts_mut(out, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// Griffin-Lim resynthesis written to a WAV file.
///
/// # Safety
/// `s` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_reconstruct(
    s: *const MdcgSpectrogram,
    iterations: usize,
    seed: u64,
    path: *const c_char,
) -> MdcgStatus {
    guard(|| {
        let s = handle(s, "spectrogram")?;
        let path = path_arg(path, "path")?;
        let mut spec = s.spec.clone();
        spec.phase = None;
        write_wav(&path, &griffin_lim(&spec, &GriffinLimOptions { iterations, seed, ..Default::default() })?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn mdcg_spectrogram_free(s: *mut MdcgSpectrogram) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Loads a checkpoint for translation.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_model_load(path: *const c_char, out: *mut *mut MdcgModel) -> MdcgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ckpt = load_checkpoint(&path)?;
        store(out, MdcgModel { ckpt });
        Ok(())
    })
}

/// Training step the checkpoint was taken at.
///
/// # Safety
/// `m` must be a live handle and `step` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_model_step(m: *const MdcgModel, step: *mut u64) -> MdcgStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if step.is_null() {
            return Err(Fail::Null("step"));
        }
        *step = m.ckpt.step;
        Ok(())
    })
}

/// Maps an unnormalized magnitude spectrogram to the other domain. The
/// result is a new handle.
///
/// # Safety
/// `m` and `s` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_model_adapt(
    m: *const MdcgModel,
    direction: MdcgDirection,
    s: *const MdcgSpectrogram,
    out: *mut *mut MdcgSpectrogram,
) -> MdcgStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let s = handle(s, "spectrogram")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let dir = match direction {
            MdcgDirection::XToY => Direction::XToY,
            MdcgDirection::YToX => Direction::YToX,
        };
        let spec = adapt_spectrogram(&m.ckpt, &s.spec, dir)?;
        store(out, MdcgSpectrogram { spec });
        Ok(())
    })
}

/// # Safety
/// See [`mdcg_spectrogram_free`].
#[no_mangle]
pub unsafe extern "C" fn mdcg_model_free(m: *mut MdcgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Starts a training run from a JSON config whose `data.manifest` lists
/// the corpus.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_new(config_path: *const c_char, out: *mut *mut MdcgTrainer) -> MdcgStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = RunConfigFile::load(&path)?;
        let corpus = cfg.load_corpus(None)?;
        let trainer = Trainer::new(cfg.run_settings(), &corpus)?;
        store(out, MdcgTrainer { trainer });
        Ok(())
    })
}

/// Resumes a run from a checkpoint, reading the corpus named by the config.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_resume(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut MdcgTrainer,
) -> MdcgStatus {
    guard(|| {
        let cfg = RunConfigFile::load(&path_arg(config_path, "config_path")?)?;
        let ckpt = load_checkpoint(&path_arg(checkpoint_path, "checkpoint_path")?)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let trainer = Trainer::resume(ckpt, &cfg.load_corpus(None)?)?;
        store(out, MdcgTrainer { trainer });
        Ok(())
    })
}

/// Runs discriminator pretraining (once) and one training step. `report`
/// may be NULL.
///
/// # Safety
/// `t` must be a live handle; `report`, if not NULL, writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_step(t: *mut MdcgTrainer, report: *mut MdcgLossReport) -> MdcgStatus {
    guard(|| {
        let t = handle_mut(t, "trainer")?;
        t.trainer.pretrain()?;
        let r = t.trainer.step()?;
        if let Some(out) = report.as_mut() {
            *out = MdcgLossReport {
                d_loss_x: r.d_loss_x,
                d_loss_y: r.d_loss_y,
                g_adv_xy: r.g_adv_xy,
                g_adv_yx: r.g_adv_yx,
                cycle: r.cycle,
                identity: r.identity,
                total_g: r.total_g,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle and `step` writable.
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_current_step(t: *const MdcgTrainer, step: *mut u64) -> MdcgStatus {
    guard(|| {
        let t = handle(t, "trainer")?;
        if step.is_null() {
            return Err(Fail::Null("step"));
        }
        *step = t.trainer.step;
        Ok(())
    })
}

/// Writes a checkpoint atomically.
///
/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_save(t: *const MdcgTrainer, path: *const c_char) -> MdcgStatus {
    guard(|| {
        let t = handle(t, "trainer")?;
        save_checkpoint(&t.trainer.checkpoint(), Path::new(&path_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// See [`mdcg_spectrogram_free`].
#[no_mangle]
pub unsafe extern "C" fn mdcg_trainer_free(t: *mut MdcgTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
