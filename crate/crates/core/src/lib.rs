//! Pure numerical core of a conditioned recurrent audio synthesizer.
//!
//! A stacked GRU network predicts the next mu-law audio code from the
//! previous one plus three control values (pitch, volume, instrument).
//! This crate holds everything that does not touch an operating system:
//! the codec and control normalizations, the synthetic training
//! instruments, the network and its exact reverse-mode gradients, the
//! optimizer, autoregressive generation and the hidden-unit analyses.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! the live server live in the `transientsynth` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
pub mod error;
pub mod generate;
mod linalg;
pub mod nn;
pub mod probe;
pub mod synth;
pub mod tone;
pub mod train;

pub use codec::{ControlFrame, MuLawCode};
pub use error::Error;
pub use nn::{HiddenState, NetConfig, NetworkParams};

/// Audio rate the whole system runs at.
pub const SAMPLE_RATE: u32 = 16_000;
