use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{samples_for, Spectrogram, Waveform};
use crate::error::{ensure, Result};

/// Analysis window and hop, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams { window_s: 0.02, hop_s: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GriffinLimOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Extrapolation weight of the accelerated update; 0 is the classic
    /// algorithm. A step that would raise the inconsistency is redone
    /// without extrapolation, so the trace never increases.
    #[serde(default)]
    pub momentum: f64,
}

impl Default for GriffinLimOptions {
    fn default() -> Self {
        GriffinLimOptions { iterations: 60, seed: 0, momentum: 0.9 }
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

struct Stft {
    win: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new(win: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            win,
            hop,
            window: hann_window(win),
            forward: planner.plan_fft_forward(win),
            inverse: planner.plan_fft_inverse(win),
        }
    }

    fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    fn frame_count(&self, len: usize) -> usize {
        (len - self.win) / self.hop + 1
    }

    fn signal_len(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.win
    }

    /// One-sided spectra of every full frame; no edge padding.
    fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let mut buf = vec![Complex64::default(); self.win];
        (0..self.frame_count(x.len()))
            .map(|t| {
                let start = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Least-squares inverse: weighted overlap-add divided by the summed
    /// squared window. Samples no window touches are left at zero.
    fn synthesize(&self, spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let len = self.signal_len(spectra.len());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::default(); self.win];
        let bins = self.bins();
        for (t, spec) in spectra.iter().enumerate() {
            for k in 0..self.win {
                buf[k] = if k < bins { spec[k] } else { spec[self.win - k].conj() };
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..self.win {
                let w = self.window[i];
                out[start + i] += w * buf[i].re / self.win as f64;
                norm[start + i] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(norm) {
            *o = if n > 1e-12 { *o / n } else { 0.0 };
        }
        out
    }
}

/// Windowed-DFT magnitude and phase of `w`, Hann window with FFT length
/// equal to the window length.
pub fn compute_spectrogram(w: &Waveform, window_s: f64, hop_s: f64) -> Result<Spectrogram> {
    let win = samples_for(window_s, w.sample_rate)?;
    let hop = samples_for(hop_s, w.sample_rate)?;
    ensure!(win >= hop, InvalidArgument, "window ({win} samples) shorter than hop ({hop})");
    ensure!(
        w.samples.len() >= win,
        InvalidArgument,
        "waveform of {} samples is shorter than one {win}-sample window",
        w.samples.len()
    );
    let stft = Stft::new(win, hop);
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let spectra = stft.analyze(&x);
    let shape = (spectra.len(), stft.bins());
    let mag = Array2::from_shape_fn(shape, |(t, k)| spectra[t][k].norm() as f32);
    let phase = Array2::from_shape_fn(shape, |(t, k)| spectra[t][k].arg() as f32);
    Ok(Spectrogram {
        mag,
        phase: Some(phase),
        frame_hop_s: hop_s,
        window_s,
        normalized: false,
    })
}

/// Window/hop lengths and sample rate implied by a spectrogram's bin count.
fn geometry(spec: &Spectrogram) -> Result<(usize, usize, u32)> {
    ensure!(spec.bins() >= 2, Shape, "need at least two bins to infer the window length");
    let win = 2 * (spec.bins() - 1);
    let rate = (win as f64 / spec.window_s).round();
    ensure!(rate >= 1.0 && rate < u32::MAX as f64, InvalidArgument, "implausible sample rate {rate}");
    let hop = samples_for(spec.frame_hop_s, rate as u32)?;
    Ok((win, hop, rate as u32))
}

/// Inverse STFT using the stored phase (zero phase when absent).
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    ensure!(!spec.normalized, NormalizationFlag, "denormalize before resynthesis");
    let (win, hop, rate) = geometry(spec)?;
    let stft = Stft::new(win, hop);
    let spectra: Vec<Vec<Complex64>> = (0..spec.frames())
        .map(|t| {
            (0..spec.bins())
                .map(|k| {
                    let p = spec.phase.as_ref().map_or(0.0, |p| p[[t, k]] as f64);
                    Complex64::from_polar(spec.mag[[t, k]] as f64, p)
                })
                .collect()
        })
        .collect();
    let samples = stft.synthesize(&spectra).into_iter().map(|v| v as f32).collect();
    Waveform::new(samples, rate)
}

/// Two-sided spectral distance `‖ |STFT(x)| − mag ‖₂`: interior bins count
/// twice, DC and Nyquist once. This is the norm Griffin-Lim descends.
fn two_sided_distance(spectra: &[Vec<Complex64>], mag: &Array2<f32>) -> f64 {
    let bins = mag.ncols();
    let mut acc = 0.0;
    for (t, spec) in spectra.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            let d = c.norm() - mag[[t, k]] as f64;
            let weight = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            acc += weight * d * d;
        }
    }
    acc.sqrt()
}

/// Inconsistency of a waveform against a target magnitude, two-sided norm.
pub fn inconsistency(w: &Waveform, target: &Spectrogram) -> Result<f64> {
    let (win, hop, _) = geometry(target)?;
    let stft = Stft::new(win, hop);
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    ensure!(x.len() >= win, InvalidArgument, "waveform shorter than one window");
    let spectra = stft.analyze(&x);
    ensure!(
        spectra.len() == target.frames(),
        Shape,
        "waveform gives {} frames, target has {}",
        spectra.len(),
        target.frames()
    );
    Ok(two_sided_distance(&spectra, &target.mag))
}

/// Phase of `analyzed - alpha * older`, keeping the old phase where that is
/// exactly zero.
fn set_phase(phase: &mut [Vec<f64>], analyzed: &[Vec<Complex64>], older: Option<&Vec<Vec<Complex64>>>, alpha: f64) {
    for (t, (row, spec)) in phase.iter_mut().zip(analyzed).enumerate() {
        for (k, (p, &c)) in row.iter_mut().zip(spec).enumerate() {
            let c = match older {
                Some(q) => c - q[t][k] * alpha,
                None => c,
            };
            if c.norm() > 0.0 {
                *p = c.arg();
            }
        }
    }
}

/// Griffin-Lim phase recovery from a nonnegative linear magnitude.
pub fn griffin_lim(spec: &Spectrogram, opts: &GriffinLimOptions) -> Result<Waveform> {
    griffin_lim_traced(spec, opts).map(|(w, _)| w)
}

/// Like [`griffin_lim`], also returning the inconsistency after each
/// iteration.
pub fn griffin_lim_traced(spec: &Spectrogram, opts: &GriffinLimOptions) -> Result<(Waveform, Vec<f64>)> {
    ensure!(!spec.normalized, NormalizationFlag, "denormalize before Griffin-Lim");
    ensure!(opts.iterations >= 1, InvalidArgument, "Griffin-Lim needs at least one iteration");
    ensure!(
        opts.momentum.is_finite() && opts.momentum >= 0.0,
        InvalidArgument,
        "Griffin-Lim momentum must be finite and >= 0"
    );
    spec.validate()?;
    let (win, hop, rate) = geometry(spec)?;
    let stft = Stft::new(win, hop);
    let mag = &spec.mag;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut phase: Vec<Vec<f64>> = (0..spec.frames())
        .map(|_| (0..spec.bins()).map(|_| rng.gen_range(-PI..PI)).collect())
        .collect();
    let project = |phase: &[Vec<f64>]| {
        let target: Vec<Vec<Complex64>> = phase
            .iter()
            .enumerate()
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, &p)| Complex64::from_polar(mag[[t, k]] as f64, p))
                    .collect()
            })
            .collect();
        let x = stft.synthesize(&target);
        let analyzed = stft.analyze(&x);
        let d = two_sided_distance(&analyzed, mag);
        (x, analyzed, d)
    };
    let alpha = opts.momentum / (1.0 + opts.momentum);
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut x = Vec::new();
    // analysis and distance of the last accepted iterate
    let mut last: Option<(Vec<Vec<Complex64>>, f64)> = None;
    let mut extrapolated = false;
    for _ in 0..opts.iterations {
        let (mut xs, mut analyzed, mut d) = project(&phase);
        let mut older = None;
        if let Some((prev, prev_d)) = last.take() {
            if extrapolated && d > prev_d {
                // restart with a plain step, which cannot increase the distance
                set_phase(&mut phase, &prev, None, 0.0);
                (xs, analyzed, d) = project(&phase);
            } else {
                older = Some(prev);
            }
        }
        trace.push(d);
        x = xs;
        extrapolated = alpha > 0.0 && older.is_some();
        set_phase(&mut phase, &analyzed, older.as_ref(), alpha);
        last = Some((analyzed, d));
    }
    let samples = x.into_iter().map(|v| v as f32).collect();
    Ok((Waveform::new(samples, rate)?, trace))
}
