//! Binary spectrogram cache:
//!
//! ```text
//! "MDCG" | version u8 | frames u32 | bins u32 | mag f32[frames*bins]
//!        | has_phase u8 | phase f32[frames*bins] (if has_phase)
//! ```
//!
//! All integers and floats are little-endian, arrays row-major. Only
//! unnormalized magnitudes are cached; window and hop are supplied by the
//! reader.

use std::path::Path;

use ndarray::Array2;

use super::{Spectrogram, StftParams};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, ByteReader};

pub const CACHE_MAGIC: &[u8; 4] = b"MDCG";
pub const CACHE_VERSION: u8 = 1;

pub(crate) fn encode(s: &Spectrogram) -> Result<Vec<u8>> {
    if s.normalized {
        return Err(Error::NormalizationFlag(
            "only unnormalized spectrograms can be cached".into(),
        ));
    }
    let n = s.mag.len();
    let mut out = Vec::with_capacity(14 + 8 * n);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&(s.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(s.bins() as u32).to_le_bytes());
    for v in s.mag.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &s.phase {
        Some(p) => {
            out.push(1);
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8], stft: &StftParams, path: &Path) -> Result<Spectrogram> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::format(path, "not a spectrogram cache (bad magic)"));
    }
    let version = r.u8()?;
    if version != CACHE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported cache version {version}, expected {CACHE_VERSION}"),
        ));
    }
    let frames = r.u32()? as usize;
    let bins = r.u32()? as usize;
    let mag = Array2::from_shape_vec((frames, bins), r.f32_vec(frames * bins)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let phase = match r.u8()? {
        0 => None,
        1 => Some(
            Array2::from_shape_vec((frames, bins), r.f32_vec(frames * bins)?)
                .map_err(|e| Error::format(path, e.to_string()))?,
        ),
        other => return Err(Error::format(path, format!("bad has_phase flag {other}"))),
    };
    r.finish()?;
    let s = Spectrogram {
        mag,
        phase,
        frame_hop_s: stft.hop_s,
        window_s: stft.window_s,
        normalized: false,
    };
    s.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(s)
}

pub fn write_spectrogram_cache(path: &Path, s: &Spectrogram) -> Result<()> {
    write_atomic(path, &encode(s)?)
}

pub fn read_spectrogram_cache(path: &Path, stft: &StftParams) -> Result<Spectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, stft, path)
}
