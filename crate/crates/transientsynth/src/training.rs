//! Training driver: dataset in, checkpoints and a CSV loss log out.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use transientsynth_core::train::{EpochReport, Executor, SequenceRef, Sequential, Trainer};
use transientsynth_core::{NetConfig, NetworkParams};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use transientsynth_core::synth::TrainingSequence;

/// Splits work across scoped OS threads. Each item is processed by exactly
/// one thread; results are reduced by the caller in item order, so output
/// does not depend on the thread count.
#[derive(Debug, Clone, Copy)]
pub struct Threads(pub usize);

impl Executor for Threads {
    fn for_each_mut<T: Send>(&self, items: &mut [T], f: &(dyn Fn(&mut T) + Sync)) {
        let n = self.0.max(1).min(items.len());
        if n <= 1 {
            items.iter_mut().for_each(f);
            return;
        }
        let chunk = items.len().div_ceil(n);
        std::thread::scope(|s| {
            for part in items.chunks_mut(chunk) {
                s.spawn(move || part.iter_mut().for_each(f));
            }
        });
    }
}

/// Where a training run writes its outputs.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub params: NetworkParams,
    pub epochs: Vec<EpochReport>,
    pub seconds: f64,
}

struct LossLog {
    file: Option<(File, PathBuf)>,
}

impl LossLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(LossLog { file: None }) };
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
        if fresh {
            writeln!(f, "epoch,step,mean_loss,wall_time").at(path)?;
        }
        Ok(LossLog { file: Some((f, path.to_owned())) })
    }

    fn record(&mut self, r: &EpochReport, wall: f64) -> Result<()> {
        if let Some((f, path)) = &mut self.file {
            writeln!(f, "{},{},{},{:.3}", r.epoch, r.step, r.mean_loss, wall).at(path.as_path())?;
        }
        Ok(())
    }
}

/// Trains from freshly initialized parameters on in-memory sequences.
pub fn train_sequences(
    config: &RunConfig,
    sequences: &[TrainingSequence],
    outputs: Option<&TrainOutputs>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainSummary> {
    let net: NetConfig = config.net.to_config();
    net.validate()?;
    let tc = config.train.to_config();
    let init = NetworkParams::init(net, tc.seed);
    let refs: Vec<SequenceRef<'_>> = sequences.iter().map(|s| SequenceRef { frames: &s.frames, targets: &s.targets }).collect();
    if config.train.threads > 1 {
        let t = Trainer::with_executor(tc, init, Threads(config.train.threads))?;
        run(t, &refs, config, outputs, &mut on_epoch)
    } else {
        let t = Trainer::with_executor(tc, init, Sequential)?;
        run(t, &refs, config, outputs, &mut on_epoch)
    }
}

fn run<E: Executor>(
    mut trainer: Trainer<E>,
    refs: &[SequenceRef<'_>],
    config: &RunConfig,
    outputs: Option<&TrainOutputs>,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainSummary> {
    let mut log = LossLog::open(outputs.and_then(|o| o.log.as_deref()))?;
    let start = Instant::now();
    let mut epochs = Vec::new();
    let every = config.train.checkpoint_every;
    while (trainer.state.epoch as usize) < trainer.config.max_epochs {
        let epoch = trainer.state.epoch as usize + 1;
        let report = trainer.run_epoch(refs).map_err(|source| Error::Divergence { epoch, source })?;
        let wall = start.elapsed().as_secs_f64();
        log.record(&report, wall)?;
        log::info!("epoch {} step {} loss {:.4} ({wall:.1}s)", report.epoch, report.step, report.mean_loss);
        on_epoch(&report);
        epochs.push(report);
        if let Some(o) = outputs {
            if every > 0 && epoch % every == 0 {
                checkpoint::save(&trainer.state.params, &o.checkpoint)?;
            }
        }
    }
    let params = trainer.into_state().params;
    if let Some(o) = outputs {
        checkpoint::save(&params, &o.checkpoint)?;
    }
    Ok(TrainSummary { params, epochs, seconds: start.elapsed().as_secs_f64() })
}

/// Loads a dataset directory and trains on it.
pub fn train_dir(config: &RunConfig, data_dir: &Path, outputs: &TrainOutputs) -> Result<TrainSummary> {
    let data = crate::dataset::load(data_dir)?;
    if data.manifest.grid != config.grid {
        log::warn!("dataset grid differs from the run config; training on the dataset as built");
    }
    train_sequences(config, &data.sequences, Some(outputs), |_| {})
}
