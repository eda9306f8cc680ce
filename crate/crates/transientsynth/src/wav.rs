//! 16-bit mono PCM WAV at the synthesizer's sample rate.

use std::path::Path;

use transientsynth_core::SAMPLE_RATE;

use crate::error::{Error, Result};

fn spec() -> hound::WavSpec {
    hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
}

/// Amplitude in `[-1, 1]` to a 16-bit sample, clamping out-of-range input.
pub fn to_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn from_i16(s: i16) -> f64 {
    (f64::from(s) / 32767.0).max(-1.0)
}

pub fn write(path: &Path, samples: &[f64]) -> Result<()> {
    let wrap = |source| Error::Wav { path: path.to_owned(), source };
    let mut w = hound::WavWriter::create(path, spec()).map_err(wrap)?;
    for &x in samples {
        w.write_sample(to_i16(x)).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

pub fn read(path: &Path) -> Result<Vec<f64>> {
    let wrap = |source| Error::Wav { path: path.to_owned(), source };
    let r = hound::WavReader::open(path).map_err(wrap)?;
    let s = r.spec();
    if s != spec() {
        return Err(wrap(hound::Error::Unsupported));
    }
    r.into_samples::<i16>().map(|v| v.map(from_i16).map_err(wrap)).collect()
}
