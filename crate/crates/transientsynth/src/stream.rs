//! Real-time generation: a loop that owns the generator, reads the latest
//! controls without blocking and pushes fixed-size PCM blocks into a
//! bounded queue.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{SyncSender, TrySendError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use transientsynth_core::generate::{ControlSchedule, Controls, Generator};
use transientsynth_core::nn::NetworkParams;
use transientsynth_core::SAMPLE_RATE;

use crate::error::Result;
use crate::wav::to_i16;

pub const BLOCK: usize = 128;

/// Latest-wins control hand-off. The writer overwrites; the generation loop
/// reads whatever is current at each sample boundary.
#[derive(Debug)]
pub struct ControlCell {
    pitch: AtomicU64,
    volume: AtomicU64,
    instrument: AtomicU64,
    pub probe: AtomicBool,
}

impl ControlCell {
    pub fn new(initial: Controls) -> Self {
        ControlCell {
            pitch: AtomicU64::new(initial.pitch.to_bits()),
            volume: AtomicU64::new(initial.volume.to_bits()),
            instrument: AtomicU64::new(initial.instrument.to_bits()),
            probe: AtomicBool::new(false),
        }
    }

    pub fn set(&self, c: Controls) {
        self.pitch.store(c.pitch.to_bits(), Ordering::Relaxed);
        self.volume.store(c.volume.to_bits(), Ordering::Relaxed);
        self.instrument.store(c.instrument.to_bits(), Ordering::Relaxed);
    }

    pub fn get(&self) -> Controls {
        Controls {
            pitch: f64::from_bits(self.pitch.load(Ordering::Relaxed)),
            volume: f64::from_bits(self.volume.load(Ordering::Relaxed)),
            instrument: f64::from_bits(self.instrument.load(Ordering::Relaxed)),
        }
    }
}

/// Where a block's controls come from.
#[derive(Debug, Clone)]
pub enum ControlSource {
    Live(Arc<ControlCell>),
    /// Fixed schedule sampled at the generator's sample clock.
    Script(ControlSchedule),
}

/// One block of audio plus, when probing, the last layer's activations at
/// the block's final sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: u64,
    pub pcm: [i16; BLOCK],
    pub activations: Option<Vec<f32>>,
}

impl Block {
    /// 256 bytes of little-endian 16-bit PCM.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pcm.iter().flat_map(|s| s.to_le_bytes()).collect()
    }
}

/// Counters shared with whoever reports on the stream.
#[derive(Debug, Default)]
pub struct StreamStats {
    pub blocks: AtomicU64,
    pub dropped: AtomicU64,
    pub underruns: AtomicU64,
}

/// Produces blocks from a generator.
pub struct BlockSource {
    params: Arc<NetworkParams>,
    gen: Generator,
    source: ControlSource,
    script_cache: Vec<Controls>,
    index: u64,
}

impl BlockSource {
    pub fn new(params: Arc<NetworkParams>, prime_seed: u64, source: ControlSource) -> Self {
        let gen = Generator::primed(params.config(), prime_seed);
        BlockSource { params, gen, source, script_cache: Vec::new(), index: 0 }
    }

    fn controls_at(&mut self, sample: u64) -> Controls {
        match &self.source {
            ControlSource::Live(cell) => cell.get().clamped(),
            ControlSource::Script(s) => {
                let i = sample as usize;
                if i >= self.script_cache.len() {
                    // extend in one-second steps
                    let n = (i + 1).max(self.script_cache.len() + SAMPLE_RATE as usize);
                    self.script_cache = s.sample(n, SAMPLE_RATE);
                }
                self.script_cache[i]
            }
        }
    }

    pub fn next_block(&mut self, capture: bool) -> Result<Block> {
        let mut pcm = [0i16; BLOCK];
        for s in pcm.iter_mut() {
            let c = self.controls_at(self.gen.state.sample_clock);
            let code = self.gen.step(&self.params, c)?;
            *s = to_i16(transientsynth_core::codec::mulaw_decode(code));
        }
        let activations = capture.then(|| {
            let h = self.gen.state.hidden.layer(self.gen.state.hidden.n_layers() - 1);
            h.iter().map(|&v| v as f32).collect()
        });
        let b = Block { index: self.index, pcm, activations };
        self.index += 1;
        Ok(b)
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }
}

/// Stream settings.
#[derive(Debug, Clone, Copy)]
pub struct StreamOptions {
    /// Sleep so blocks leave at the audio rate; off for tests and benches.
    pub paced: bool,
    /// Stop after this many blocks.
    pub max_blocks: Option<u64>,
    /// Attach activations to every `probe_every`th block while probing.
    pub probe_every: u64,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions { paced: true, max_blocks: None, probe_every: 8 }
    }
}

pub fn block_duration() -> Duration {
    Duration::from_secs_f64(BLOCK as f64 / f64::from(SAMPLE_RATE))
}

/// Runs until `stop` is set, the outlet closes or `max_blocks` is reached.
///
/// When paced and the queue is full the block is dropped and counted; a
/// block finished after its deadline counts as an underrun. Unpaced
/// streams block on a full queue instead so that no audio is lost.
pub fn run(
    mut source: BlockSource,
    probe: Option<&AtomicBool>,
    outlet: SyncSender<Block>,
    stop: &AtomicBool,
    stats: &StreamStats,
    opts: StreamOptions,
) -> Result<()> {
    let period = block_duration();
    let mut deadline = Instant::now() + period;
    while !stop.load(Ordering::Relaxed) {
        if opts.max_blocks.is_some_and(|m| stats.blocks.load(Ordering::Relaxed) >= m) {
            break;
        }
        let probing = probe.is_some_and(|p| p.load(Ordering::Relaxed));
        let capture = probing && (source.index + 1) % opts.probe_every.max(1) == 0;
        let block = source.next_block(capture)?;
        stats.blocks.fetch_add(1, Ordering::Relaxed);
        if opts.paced {
            let now = Instant::now();
            if now > deadline {
                stats.underruns.fetch_add(1, Ordering::Relaxed);
                // resynchronize instead of bursting to catch up
                deadline = now;
            } else {
                std::thread::sleep(deadline - now);
            }
            deadline += period;
            match outlet.try_send(block) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => {
                    stats.dropped.fetch_add(1, Ordering::Relaxed);
                }
                Err(TrySendError::Disconnected(_)) => break,
            }
        } else if outlet.send(block).is_err() {
            break;
        }
    }
    Ok(())
}
