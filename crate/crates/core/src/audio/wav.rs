use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono RIFF/WAV file into `[-1, 1)` samples.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_error(path, e))?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes samples as 16-bit PCM mono, clipping to the representable range.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| hound_error(path, e))?;
    for &s in &wave.samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(|e| hound_error(path, e))?;
    }
    w.finalize().map_err(|e| hound_error(path, e))
}

fn hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}
