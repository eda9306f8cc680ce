//! JSON run configuration shared by the subcommands. Every field is
//! optional; missing fields take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use transientsynth_core::synth::{GridSpec, InstrumentSpec, SegmentTiming};
use transientsynth_core::train::TrainConfig;
use transientsynth_core::NetConfig;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub n_layers: usize,
    pub hidden: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = NetConfig::default();
        NetSection { n_layers: d.n_layers, hidden: d.hidden }
    }
}

impl NetSection {
    pub fn to_config(&self) -> NetConfig {
        NetConfig { n_layers: self.n_layers, hidden: self.hidden, ..NetConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub bptt_window: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub gradient_clip: f64,
    pub lr_decay: f64,
    /// Worker threads for per-sequence gradients; 1 runs inline.
    pub threads: usize,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            bptt_window: d.bptt_window,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            seed: d.seed,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            gradient_clip: d.gradient_clip,
            lr_decay: d.lr_decay,
            threads: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            bptt_window: self.bptt_window,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed: self.seed,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            gradient_clip: self.gradient_clip,
            lr_decay: self.lr_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_pitches: usize,
    pub n_volumes: usize,
    pub v_max: f64,
    pub lead_silence: f64,
    pub steady: f64,
    pub tail_silence: f64,
    pub partial_step_fraction: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            n_pitches: g.n_pitches,
            n_volumes: g.n_volumes,
            v_max: g.v_max,
            lead_silence: g.timing.lead_silence,
            steady: g.timing.steady,
            tail_silence: g.timing.tail_silence,
            partial_step_fraction: None,
        }
    }
}

impl GridSection {
    pub fn to_spec(&self) -> GridSpec {
        GridSpec {
            instruments: InstrumentSpec::defaults().into(),
            n_pitches: self.n_pitches,
            n_volumes: self.n_volumes,
            v_max: self.v_max,
            timing: SegmentTiming { lead_silence: self.lead_silence, steady: self.steady, tail_silence: self.tail_silence },
            sample_rate: transientsynth_core::SAMPLE_RATE,
            partial_step_fraction: self.partial_step_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetSection,
    pub train: TrainSection,
    pub grid: GridSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_owned(), source })
    }

    /// Settings for the reduced overfit grid: both instruments, three
    /// pitches, three volumes and short segments.
    pub fn reduced() -> Self {
        RunConfig {
            net: NetSection::default(),
            train: TrainSection { learning_rate: 1e-3, bptt_window: 200, max_epochs: 420, lr_decay: 0.996, seed: 1, ..TrainSection::default() },
            grid: GridSection { n_pitches: 3, n_volumes: 3, lead_silence: 0.02, steady: 0.1, tail_silence: 0.03, ..GridSection::default() },
        }
    }
}
