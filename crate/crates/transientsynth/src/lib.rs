//! File formats, training driver, live streaming and the command-line
//! front end around [`transientsynth_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod score;
pub mod server;
pub mod stream;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
pub use transientsynth_core as core;

use std::time::Instant;

use transientsynth_core::generate::{Controls, Generator};
use transientsynth_core::NetworkParams;

/// Log level comes from `TRANSIENTSYNTH_LOG` (e.g. `info`, `debug`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("TRANSIENTSYNTH_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub steps: usize,
    pub seconds: f64,
}

impl BenchResult {
    pub fn steps_per_second(&self) -> f64 {
        self.steps as f64 / self.seconds
    }

    pub fn real_time_factor(&self) -> f64 {
        self.steps_per_second() / f64::from(transientsynth_core::SAMPLE_RATE)
    }
}

/// Times `steps` single-threaded generation steps at a held note.
pub fn bench(params: &NetworkParams, steps: usize) -> Result<BenchResult> {
    let mut g = Generator::primed(params.config(), 0);
    let c = Controls::new(0.5, 0.7, 0.0);
    // warm caches and branch predictors
    for _ in 0..1000.min(steps) {
        g.step(params, c)?;
    }
    let start = Instant::now();
    for _ in 0..steps {
        g.step(params, c)?;
    }
    Ok(BenchResult { steps, seconds: start.elapsed().as_secs_f64() })
}
