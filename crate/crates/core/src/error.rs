use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Semitone index outside the trained octave.
    PitchIndex(usize),
    /// A partial would alias at the requested pitch.
    AboveNyquist { harmonic: u32, freq_hz: f64 },
    /// Two inputs that must line up do not.
    LengthMismatch { expected: usize, found: usize },
    /// Parameter vector does not fit the network layout.
    Shape { expected: usize, found: usize },
    /// A forward or backward pass produced NaN or infinity.
    NonFinite { context: &'static str, layer: usize, step: usize },
    /// The configuration is unusable.
    Config(&'static str),
    /// Analysis window too short for the estimator.
    WindowTooShort { needed: usize, found: usize },
    /// Control schedule events are out of order or out of range.
    Schedule(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::PitchIndex(i) => write!(f, "pitch index {i} outside 0..=12"),
            Error::AboveNyquist { harmonic, freq_hz } => {
                write!(f, "harmonic {harmonic} at {freq_hz:.1} Hz is at or above Nyquist")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::Shape { expected, found } => {
                write!(f, "parameter count mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite { context, layer, step } => {
                write!(f, "non-finite value in {context} (layer {layer}, step {step})")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::WindowTooShort { needed, found } => {
                write!(f, "analysis window too short: need {needed} samples, got {found}")
            }
            Error::Schedule(msg) => write!(f, "invalid control schedule: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
