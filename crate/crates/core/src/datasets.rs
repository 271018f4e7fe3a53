//! Manifests, the synthetic smooth/peaky corpus, spectrogram caching and
//! crop sampling.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{
    apply_normalizer, compute_spectrogram, decode_wav, fit_normalizer, read_spectrogram_cache, write_spectrogram_cache,
    write_wav, NormStats, Spectrogram, StftParams, Waveform, REQUIRED_SAMPLE_RATE,
};
use crate::bands::BandLayout;
use crate::error::{ensure, Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain: Domain,
    pub duration_s: f64,
}

/// Entries plus the directory relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn domain_entries(&self, domain: Domain) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.domain == domain)
    }

    /// JSON lines, one entry per line, paths as stored.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entries serialize") + "\n")
            .collect()
    }

    /// Writes the manifest; stored paths are expected to be relative to the
    /// manifest's own directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Reads and validates a JSONL manifest. Both domains must be present and
/// every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        if !(entry.duration_s > 0.0 && entry.duration_s.is_finite()) {
            return Err(err(format!("line {}: duration_s must be positive", i + 1)));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(err("no entries".into()));
    }
    let manifest = DatasetManifest { entries, root };
    for d in [Domain::X, Domain::Y] {
        if manifest.domain_entries(d).next().is_none() {
            return Err(err(format!("no entries for domain {d:?}")));
        }
    }
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .map(|e| manifest.resolve(e))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(err(format!("missing audio files: {}", missing.join(", "))));
    }
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// Few wide spectral bumps drifting slowly, energy mostly below 3.5 kHz.
    Smooth,
    /// Harmonic comb with narrow peaks and fast F0 modulation.
    Peaky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDomainSpec {
    pub domain_kind: DomainKind,
    pub num_utterances: usize,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "defaults::bump_count")]
    pub bump_count: usize,
    /// Standard deviation of each bump, Hz.
    #[serde(default = "defaults::bump_width_hz")]
    pub bump_width_hz: f64,
    /// Maximum drift speed of a bump centre, Hz per second.
    #[serde(default = "defaults::bump_drift_hz_per_s")]
    pub bump_drift_hz_per_s: f64,
    /// Mean fundamental of the comb, Hz; harmonics are spaced by it.
    #[serde(default = "defaults::comb_f0_hz")]
    pub comb_f0_hz: f64,
    #[serde(default = "defaults::f0_mod_rate_hz")]
    pub f0_mod_rate_hz: f64,
    /// Peak relative F0 deviation of the modulation.
    #[serde(default = "defaults::f0_mod_depth")]
    pub f0_mod_depth: f64,
}

mod defaults {
    pub fn bump_count() -> usize {
        3
    }
    pub fn bump_width_hz() -> f64 {
        450.0
    }
    pub fn bump_drift_hz_per_s() -> f64 {
        300.0
    }
    pub fn comb_f0_hz() -> f64 {
        350.0
    }
    pub fn f0_mod_rate_hz() -> f64 {
        5.0
    }
    pub fn f0_mod_depth() -> f64 {
        0.03
    }
}

impl SyntheticDomainSpec {
    pub fn new(domain_kind: DomainKind, num_utterances: usize, duration_s: f64, seed: u64) -> Self {
        SyntheticDomainSpec {
            domain_kind,
            num_utterances,
            duration_s,
            seed,
            bump_count: defaults::bump_count(),
            bump_width_hz: defaults::bump_width_hz(),
            bump_drift_hz_per_s: defaults::bump_drift_hz_per_s(),
            comb_f0_hz: defaults::comb_f0_hz(),
            f0_mod_rate_hz: defaults::f0_mod_rate_hz(),
            f0_mod_depth: defaults::f0_mod_depth(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_utterances >= 1, InvalidArgument, "num_utterances must be >= 1");
        ensure!(
            self.duration_s > 0.0 && self.duration_s.is_finite(),
            InvalidArgument,
            "duration_s must be positive"
        );
        ensure!(self.bump_count >= 1, InvalidArgument, "bump_count must be >= 1");
        ensure!(
            self.bump_width_hz > 0.0 && self.comb_f0_hz > 0.0 && self.comb_f0_hz < 4000.0,
            InvalidArgument,
            "bump width and comb F0 must be positive (F0 below 4 kHz)"
        );
        ensure!(
            self.f0_mod_rate_hz >= 0.0 && (0.0..0.5).contains(&self.f0_mod_depth) && self.bump_drift_hz_per_s >= 0.0,
            InvalidArgument,
            "modulation parameters out of range"
        );
        Ok(())
    }
}

const NYQUIST_MARGIN_HZ: f64 = 7800.0;
/// Broadband floor under the smooth envelope, relative to a unit bump.
const SMOOTH_FLOOR: f64 = 0.06;
/// Envelopes are evaluated every this many samples and held in between.
const ENVELOPE_BLOCK: usize = 40;

/// Sinusoid bank with phases advanced by complex rotation.
struct Oscillator {
    re: f64,
    im: f64,
}

impl Oscillator {
    fn new(phase: f64) -> Self {
        Oscillator {
            re: phase.cos(),
            im: phase.sin(),
        }
    }

    fn advance(&mut self, cos: f64, sin: f64) -> f64 {
        let re = self.re * cos - self.im * sin;
        self.im = self.re * sin + self.im * cos;
        self.re = re;
        self.im
    }
}

fn smooth_utterance(spec: &SyntheticDomainSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = REQUIRED_SAMPLE_RATE as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..spec.bump_count)
        .map(|_| {
            let centre = rng.gen_range(250.0..3000.0);
            let width = spec.bump_width_hz * rng.gen_range(0.7..1.3);
            let drift = rng.gen_range(-spec.bump_drift_hz_per_s..=spec.bump_drift_hz_per_s);
            let gain = rng.gen_range(0.5..1.0);
            (centre, width, drift, gain)
        })
        .collect();
    // Components every 25 Hz with random phase and a small frequency jitter
    // so the bank never lines up into a comb.
    let freqs: Vec<f64> = (1..)
        .map(|k| k as f64 * 25.0 + rng.gen_range(-6.0..6.0))
        .take_while(|&f| f < NYQUIST_MARGIN_HZ)
        .collect();
    let mut oscs: Vec<Oscillator> = freqs.iter().map(|_| Oscillator::new(rng.gen_range(0.0..2.0 * PI))).collect();
    let rot: Vec<(f64, f64)> = freqs.iter().map(|f| (2.0 * PI * f / rate).sin_cos()).map(|(s, c)| (c, s)).collect();
    let mut out = vec![0.0; n];
    let mut amps = vec![0.0; freqs.len()];
    for (b, block) in out.chunks_mut(ENVELOPE_BLOCK).enumerate() {
        let t = (b * ENVELOPE_BLOCK) as f64 / rate;
        for (a, &f) in amps.iter_mut().zip(&freqs) {
            *a = bumps
                .iter()
                .map(|&(c, w, d, g)| {
                    let centre = (c + d * t).clamp(150.0, 4000.0);
                    g * (-(f - centre).powi(2) / (2.0 * w * w)).exp()
                })
                .sum::<f64>()
                + SMOOTH_FLOOR;
        }
        for v in block.iter_mut() {
            *v = oscs
                .iter_mut()
                .zip(&rot)
                .zip(&amps)
                .map(|((o, &(c, s)), &a)| a * o.advance(c, s))
                .sum();
        }
    }
    out
}

fn peaky_utterance(spec: &SyntheticDomainSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = REQUIRED_SAMPLE_RATE as f64;
    let f0 = spec.comb_f0_hz * rng.gen_range(0.85..1.15);
    let mod_phase = rng.gen_range(0.0..2.0 * PI);
    let harmonics = (NYQUIST_MARGIN_HZ / (f0 * (1.0 - spec.f0_mod_depth))) as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    // Slow random walk on top of the periodic modulation, one step per
    // envelope block.
    let mut wander = 0.0f64;
    let mut theta = 0.0f64;
    let mut out = vec![0.0; n];
    for (b, block) in out.chunks_mut(ENVELOPE_BLOCK).enumerate() {
        wander = (wander + rng.gen_range(-0.001..0.001)).clamp(-0.03, 0.03);
        for (i, v) in block.iter_mut().enumerate() {
            let t = (b * ENVELOPE_BLOCK + i) as f64 / rate;
            let f = f0 * (1.0 + spec.f0_mod_depth * (2.0 * PI * spec.f0_mod_rate_hz * t + mod_phase).sin() + wander);
            theta += 2.0 * PI * f / rate;
            let mut acc = 0.0;
            for (h, &p) in phases.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                if fh >= NYQUIST_MARGIN_HZ {
                    break;
                }
                // Gentle tilt so upper bands keep substantial energy.
                acc += (-fh / 5000.0).exp() * ((h + 1) as f64 * theta + p).sin();
            }
            *v = acc;
        }
    }
    out
}

/// One utterance of the requested domain, scaled to peak 0.8.
pub fn synthesize_utterance(spec: &SyntheticDomainSpec, index: usize) -> Result<Waveform> {
    spec.validate()?;
    let n = (spec.duration_s * REQUIRED_SAMPLE_RATE as f64).round() as usize;
    ensure!(n >= 1, InvalidArgument, "duration too short");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let raw = match spec.domain_kind {
        DomainKind::Smooth => smooth_utterance(spec, n, &mut rng),
        DomainKind::Peaky => peaky_utterance(spec, n, &mut rng),
    };
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.8 / peak } else { 0.0 };
    Waveform::new(raw.iter().map(|v| (v * scale) as f32).collect(), REQUIRED_SAMPLE_RATE)
}

/// Writes `num_utterances` WAV files into `out_dir` and returns a manifest
/// rooted there with every entry labelled `domain`.
pub fn synthesize_domain_dataset(spec: &SyntheticDomainSpec, domain: Domain, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prefix = match spec.domain_kind {
        DomainKind::Smooth => "smooth",
        DomainKind::Peaky => "peaky",
    };
    let mut entries = Vec::with_capacity(spec.num_utterances);
    for i in 0..spec.num_utterances {
        let w = synthesize_utterance(spec, i)?;
        let name = PathBuf::from(format!("{prefix}_{i:04}.wav"));
        write_wav(&out_dir.join(&name), &w)?;
        entries.push(ManifestEntry {
            path: name,
            domain,
            duration_s: w.duration_s(),
        });
    }
    Ok(DatasetManifest {
        entries,
        root: out_dir.to_path_buf(),
    })
}

/// Mean over frames of the per-band spectral flatness (geometric over
/// arithmetic mean of power).
pub fn spectral_flatness(spec: &Spectrogram, layout: &BandLayout) -> Result<Vec<f64>> {
    ensure!(spec.bins() == layout.total_bins, Shape, "layout does not match spectrogram bins");
    ensure!(!spec.normalized, NormalizationFlag, "flatness needs raw magnitudes");
    const EPS: f64 = 1e-12;
    Ok((0..layout.num_bands())
        .map(|b| {
            let r = layout.range(b);
            let w = r.len() as f64;
            spec.mag
                .rows()
                .into_iter()
                .map(|row| {
                    let p: Vec<f64> = row.slice(s![r.clone()]).iter().map(|&m| (m as f64).powi(2) + EPS).collect();
                    let geo = (p.iter().map(|v| v.ln()).sum::<f64>() / w).exp();
                    geo / (p.iter().sum::<f64>() / w)
                })
                .sum::<f64>()
                / spec.frames() as f64
        })
        .collect())
}

fn cache_key(wav_bytes: &[u8], stft: &StftParams) -> String {
    let mut h = Sha256::new();
    h.update(wav_bytes);
    h.update(stft.window_s.to_le_bytes());
    h.update(stft.hop_s.to_le_bytes());
    hex::encode(h.finalize())
}

/// Spectrogram of a WAV file, read from or written to `cache_dir` when
/// given. The cache file name is a hash of the WAV bytes and STFT settings.
pub fn load_spectrogram(path: &Path, stft: &StftParams, cache_dir: Option<&Path>) -> Result<Spectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let cached = cache_dir.map(|d| d.join(format!("{}.mdcg", cache_key(&bytes, stft))));
    if let Some(c) = &cached {
        if c.is_file() {
            return read_spectrogram_cache(c, stft);
        }
    }
    let w = decode_wav(&bytes).map_err(|m| Error::UnsupportedAudio(format!("{}: {m}", path.display())))?;
    let spec = compute_spectrogram(&w, stft.window_s, stft.hop_s)?;
    if let (Some(c), Some(d)) = (&cached, cache_dir) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        write_spectrogram_cache(c, &spec)?;
    }
    Ok(spec)
}

/// Raw spectrograms of both domains of a manifest.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub x: Vec<Spectrogram>,
    pub y: Vec<Spectrogram>,
}

impl Corpus {
    pub fn load(manifest: &DatasetManifest, stft: &StftParams, cache_dir: Option<&Path>) -> Result<Self> {
        let load = |d| {
            manifest
                .domain_entries(d)
                .map(|e| load_spectrogram(&manifest.resolve(e), stft, cache_dir))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Corpus {
            x: load(Domain::X)?,
            y: load(Domain::Y)?,
        })
    }

    /// Synthesizes both domains in memory, without touching the disk.
    pub fn synthesize(x: &SyntheticDomainSpec, y: &SyntheticDomainSpec, stft: &StftParams) -> Result<Self> {
        let make = |spec: &SyntheticDomainSpec| {
            (0..spec.num_utterances)
                .map(|i| compute_spectrogram(&synthesize_utterance(spec, i)?, stft.window_s, stft.hop_s))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Corpus { x: make(x)?, y: make(y)? })
    }

    pub fn domain(&self, d: Domain) -> &[Spectrogram] {
        match d {
            Domain::X => &self.x,
            Domain::Y => &self.y,
        }
    }

    /// Per-bin statistics fitted jointly over both domains, so normalized
    /// values stay comparable across domains.
    pub fn fit_shared_stats(&self) -> Result<NormStats> {
        fit_normalizer(self.x.iter().chain(&self.y))
    }

    pub fn normalize(&self, stats: &NormStats) -> Result<Dataset> {
        let norm = |v: &[Spectrogram]| v.iter().map(|s| apply_normalizer(s, stats, false)).collect::<Result<Vec<_>>>();
        Ok(Dataset {
            x: norm(&self.x)?,
            y: norm(&self.y)?,
        })
    }
}

/// Normalized spectrograms ready for batch sampling.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Vec<Spectrogram>,
    pub y: Vec<Spectrogram>,
}

impl Dataset {
    pub fn domain(&self, d: Domain) -> &[Spectrogram] {
        match d {
            Domain::X => &self.x,
            Domain::Y => &self.y,
        }
    }

    pub fn sample_batch(&self, domain: Domain, batch_size: usize, crop_frames: usize, rng: &mut impl Rng) -> Result<Array4<f32>> {
        sample_batch(self.domain(domain), batch_size, crop_frames, rng)
    }
}

/// `crop_frames` contiguous frames starting at `start`, wrapping to the
/// beginning when the utterance is shorter than the crop.
pub fn crop_wrapped(spec: &Spectrogram, start: usize, crop_frames: usize) -> Array4<f32> {
    let (frames, bins) = spec.mag.dim();
    Array4::from_shape_fn((1, 1, bins, crop_frames), |(_, _, f, t)| spec.mag[[(start + t) % frames, f]])
}

/// One centred crop per spectrogram, for evaluation sets that must not
/// depend on a seed.
pub fn fixed_crops(specs: &[Spectrogram], crop_frames: usize) -> Result<Array4<f32>> {
    ensure!(!specs.is_empty(), InvalidArgument, "no spectrograms to crop");
    let bins = specs[0].bins();
    let mut out = Array4::zeros((specs.len(), 1, bins, crop_frames));
    for (i, spec) in specs.iter().enumerate() {
        ensure!(spec.bins() == bins, Shape, "mixed bin counts");
        let start = spec.frames().saturating_sub(crop_frames) / 2;
        out.slice_mut(s![i..i + 1, .., .., ..]).assign(&crop_wrapped(spec, start, crop_frames));
    }
    Ok(out)
}

/// Draws `batch_size` normalized crops: utterance uniform, start uniform over
/// valid positions (0 for short utterances, which are wrap-padded).
pub fn sample_batch(specs: &[Spectrogram], batch_size: usize, crop_frames: usize, rng: &mut impl Rng) -> Result<Array4<f32>> {
    ensure!(!specs.is_empty(), InvalidArgument, "no utterances for this domain");
    ensure!(batch_size >= 1 && crop_frames >= 1, InvalidArgument, "batch size and crop must be >= 1");
    let bins = specs[0].bins();
    let mut out = Array4::zeros((batch_size, 1, bins, crop_frames));
    for i in 0..batch_size {
        let spec = &specs[rng.gen_range(0..specs.len())];
        ensure!(spec.normalized, NormalizationFlag, "batches are drawn from normalized spectrograms");
        ensure!(spec.bins() == bins, Shape, "mixed bin counts in dataset");
        let start = if spec.frames() > crop_frames { rng.gen_range(0..=spec.frames() - crop_frames) } else { 0 };
        out.slice_mut(s![i..i + 1, .., .., ..]).assign(&crop_wrapped(spec, start, crop_frames));
    }
    Ok(out)
}
