use std::io::Cursor;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const REQUIRED_SAMPLE_RATE: u32 = 16_000;

/// Reads a mono 16-bit PCM WAV at 16 kHz. Anything else is rejected; there
/// is no resampling.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|msg| Error::UnsupportedAudio(format!("{}: {msg}", path.display())))
}

pub(crate) fn decode_wav(bytes: &[u8]) -> std::result::Result<Waveform, String> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format!("expected mono, found {} channels", spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format!(
            "expected 16-bit PCM, found {:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        ));
    }
    if spec.sample_rate != REQUIRED_SAMPLE_RATE {
        return Err(format!(
            "expected {REQUIRED_SAMPLE_RATE} Hz, found {} Hz (resampling is not supported)",
            spec.sample_rate
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| e.to_string())
}

pub(crate) fn encode_wav(w: &Waveform) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
        for &s in &w.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

/// Writes 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    write_atomic(path, &encode_wav(w))
}
