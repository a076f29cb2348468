//! Mono WAV read/write (PCM16 or IEEE float32, little-endian).
//!
//! Resampling is out of scope: callers reject inputs whose sample rate does
//! not match their configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Waveform;

fn wav_err(path: &Path, reason: impl ToString) -> Error {
    Error::Wav { path: path.display().to_string(), reason: reason.to_string() }
}

/// Reads a mono WAV file. Stereo or exotic encodings are rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, got {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(wav_err(path, format!("unsupported encoding {fmt:?}/{bits} bits")));
        }
    };
    let w = Waveform::new(samples, spec.sample_rate);
    if !w.is_finite() {
        return Err(wav_err(path, "non-finite samples"));
    }
    Ok(w)
}

/// Writes `w` as mono IEEE float32.
pub fn write_wav_f32(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &w.samples {
        writer.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Writes `w` as mono PCM16, clipping to [-1, 1).
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
