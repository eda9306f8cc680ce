//! Mu-law companding and the control normalizations.
//!
//! Audio travels through the network as one of 256 mu-law codes. Musical
//! controls are squeezed into `[0, 1]`: pitch linearly over one octave of
//! semitones starting at E4, volume exponentially over a 40 dB range.

use crate::error::{Error, Result};

/// Companding constant.
pub const MU: f64 = 255.0;
/// Number of quantization levels.
pub const LEVELS: usize = 256;
/// Fundamental of E4, the bottom of the pitch range.
pub const BASE_FREQ_HZ: f64 = 329.628;
/// Semitone steps spanned by the pitch parameter.
pub const PITCH_STEPS: usize = 12;
/// Dynamic range covered by the volume parameter.
pub const VOLUME_RANGE_DB: f64 = 40.0;

/// One of the 256 mu-law levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MuLawCode(pub u8);

impl MuLawCode {
    /// Code of digital silence.
    pub const SILENCE: MuLawCode = MuLawCode(128);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Value fed to the network's audio input.
    #[inline]
    pub fn normalized(self) -> f64 {
        f64::from(self.0) / 255.0
    }
}

impl From<u8> for MuLawCode {
    fn from(v: u8) -> Self {
        MuLawCode(v)
    }
}

/// The four values the network sees at every sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlFrame {
    /// Previous sample's code divided by 255.
    pub audio_in: f64,
    pub pitch: f64,
    pub volume: f64,
    pub instrument: f64,
}

impl ControlFrame {
    pub fn new(prev: MuLawCode, pitch: f64, volume: f64, instrument: f64) -> Self {
        ControlFrame { audio_in: prev.normalized(), pitch, volume, instrument }
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 4] {
        [self.audio_in, self.pitch, self.volume, self.instrument]
    }
}

#[inline]
fn compress(x: f64) -> f64 {
    let mag = libm::log1p(MU * x.abs()) / libm::log1p(MU);
    if x < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Quantizes an amplitude in `[-1, 1]`; values outside are clamped.
pub fn mulaw_encode(x: f64) -> MuLawCode {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    let scaled = libm::floor((compress(x) + 1.0) * 0.5 * LEVELS as f64);
    MuLawCode(scaled.clamp(0.0, 255.0) as u8)
}

/// Reconstructs the amplitude at the center of a code's bin.
pub fn mulaw_decode(c: MuLawCode) -> f64 {
    let y = (f64::from(c.0) + 0.5) / LEVELS as f64 * 2.0 - 1.0;
    let mag = (libm::pow(1.0 + MU, y.abs()) - 1.0) / MU;
    if y < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Pitch parameter of a semitone above E4.
pub fn pitch_param(semitone_index: usize) -> Result<f64> {
    if semitone_index > PITCH_STEPS {
        return Err(Error::PitchIndex(semitone_index));
    }
    Ok(semitone_index as f64 / PITCH_STEPS as f64)
}

/// Fundamental frequency addressed by a pitch parameter.
pub fn param_to_freq(p: f64) -> f64 {
    BASE_FREQ_HZ * libm::exp2(p)
}

/// Linear gain of a volume parameter. Zero is exact silence.
pub fn volume_to_gain(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let v = v.min(1.0);
    libm::pow(10.0, -VOLUME_RANGE_DB * (1.0 - v) / 20.0)
}
