//! Waveform and magnitude-spectrogram handling: analysis, Griffin-Lim
//! resynthesis, per-bin normalization and on-disk formats.

mod cache;
mod stft;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use cache::{read_spectrogram_cache, write_spectrogram_cache, CACHE_MAGIC, CACHE_VERSION};
pub use stft::{
    compute_spectrogram, griffin_lim, griffin_lim_traced, hann_window, inconsistency, istft, GriffinLimOptions,
    StftParams,
};
pub use wav::{read_wav, write_wav, REQUIRED_SAMPLE_RATE};
pub(crate) use wav::decode_wav;

/// Floor applied to per-bin standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        ensure!(sample_rate > 0, InvalidArgument, "sample rate must be positive");
        ensure!(
            samples.iter().all(|s| s.is_finite()),
            NonFinite,
            "waveform contains non-finite samples"
        );
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Time-frequency magnitude tensor, `frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mag: Array2<f32>,
    pub phase: Option<Array2<f32>>,
    pub frame_hop_s: f64,
    pub window_s: f64,
    pub normalized: bool,
}

impl Spectrogram {
    pub fn new(mag: Array2<f32>, frame_hop_s: f64, window_s: f64, normalized: bool) -> Result<Self> {
        let s = Spectrogram {
            mag,
            phase: None,
            frame_hop_s,
            window_s,
            normalized,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn frames(&self) -> usize {
        self.mag.nrows()
    }

    pub fn bins(&self) -> usize {
        self.mag.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.frames() >= 1, Shape, "spectrogram has no frames");
        ensure!(self.bins() >= 1, Shape, "spectrogram has no bins");
        ensure!(
            self.mag.iter().all(|v| v.is_finite()),
            NonFinite,
            "spectrogram magnitude is not finite"
        );
        if !self.normalized {
            ensure!(
                self.mag.iter().all(|&v| v >= 0.0),
                InvalidArgument,
                "unnormalized magnitude must be nonnegative"
            );
        }
        if let Some(p) = &self.phase {
            ensure!(p.dim() == self.mag.dim(), Shape, "phase shape {:?} != magnitude shape {:?}", p.dim(), self.mag.dim());
        }
        Ok(())
    }
}

/// Per-bin mean and standard deviation of linear magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.mean.len() == self.std.len() && !self.mean.is_empty(),
            Shape,
            "norm stats mean/std lengths differ or are empty"
        );
        ensure!(
            self.std.iter().all(|&s| s > 0.0 && s.is_finite()) && self.mean.iter().all(|m| m.is_finite()),
            InvalidArgument,
            "norm stats must be finite with strictly positive std"
        );
        Ok(())
    }
}

/// Per-bin mean/std over every frame of every input.
pub fn fit_normalizer<'a, I>(specs: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut bins = None;
    let mut count = 0usize;
    let mut sum = Vec::new();
    let mut sum_sq = Vec::new();
    for s in specs {
        ensure!(!s.normalized, NormalizationFlag, "cannot fit statistics on normalized spectrograms");
        match bins {
            None => {
                bins = Some(s.bins());
                sum = vec![0.0f64; s.bins()];
                sum_sq = vec![0.0f64; s.bins()];
            }
            Some(b) => ensure!(b == s.bins(), Shape, "mixed bin counts: {} and {}", b, s.bins()),
        }
        for row in s.mag.rows() {
            for ((acc, acc_sq), &v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row) {
                let v = v as f64;
                *acc += v;
                *acc_sq += v * v;
            }
        }
        count += s.frames();
    }
    ensure!(bins.is_some(), InvalidArgument, "cannot fit normalizer on an empty collection");
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0).sqrt()).max(STD_FLOOR) as f32)
        .collect();
    Ok(NormStats {
        mean: mean.into_iter().map(|m| m as f32).collect(),
        std,
    })
}

/// Forward: `(mag - mean) / std` per bin. Inverse: `mag * std + mean`,
/// clamped at zero.
pub fn apply_normalizer(s: &Spectrogram, stats: &NormStats, inverse: bool) -> Result<Spectrogram> {
    ensure!(
        s.bins() == stats.bins(),
        Shape,
        "spectrogram has {} bins but stats have {}",
        s.bins(),
        stats.bins()
    );
    if inverse {
        ensure!(s.normalized, NormalizationFlag, "inverse normalization requires a normalized spectrogram");
    } else {
        ensure!(!s.normalized, NormalizationFlag, "spectrogram is already normalized");
    }
    let mut out = s.clone();
    for mut row in out.mag.rows_mut() {
        for ((v, &m), &sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            let (x, m, sd) = (*v as f64, m as f64, sd as f64);
            *v = if inverse { (x * sd + m).max(0.0) as f32 } else { ((x - m) / sd) as f32 };
        }
    }
    out.normalized = !inverse;
    Ok(out)
}

pub(crate) fn samples_for(seconds: f64, sample_rate: u32) -> Result<usize> {
    let exact = seconds * sample_rate as f64;
    let rounded = exact.round();
    if rounded < 1.0 || (exact - rounded).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "{seconds} s at {sample_rate} Hz is not a positive whole number of samples"
        )));
    }
    Ok(rounded as usize)
}
