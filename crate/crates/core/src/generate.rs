//! Closed-loop generation: the network plays as an instrument.
//!
//! Each emitted code is fed back as the next step's audio input while
//! pitch, volume and instrument arrive from outside, either as a
//! [`ControlSchedule`] rendered offline or sample by sample from a live
//! controller.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{mulaw_decode, ControlFrame, MuLawCode};
use crate::error::{Error, Result};
use crate::nn::{Evaluator, HiddenState, NetConfig, NetworkParams};
use crate::probe::HiddenTrace;
use crate::synth::{ControlTracks, SYNTH_EVEN_PARAM, SYNTH_ODD_PARAM};

/// Pitch, volume and instrument for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub pitch: f64,
    pub volume: f64,
    pub instrument: f64,
}

impl Controls {
    pub const SILENT: Controls = Controls { pitch: 0.5, volume: 0.0, instrument: 0.0 };

    pub fn new(pitch: f64, volume: f64, instrument: f64) -> Self {
        Controls { pitch, volume, instrument }
    }

    /// Copy with every value forced into `[0, 1]`; NaN becomes 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Controls { pitch: c(self.pitch), volume: c(self.volume), instrument: c(self.instrument) }
    }

    pub fn in_range(&self) -> bool {
        [self.pitch, self.volume, self.instrument].iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Recurrent state plus the last emitted code.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    pub hidden: HiddenState,
    pub last_code: MuLawCode,
    pub sample_clock: u64,
}

/// Zero hidden state and a single uniformly drawn audio code.
pub fn prime(config: &NetConfig, seed: u64) -> GeneratorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GeneratorState { hidden: HiddenState::zeros(config), last_code: MuLawCode(rng.random()), sample_clock: 0 }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// How a code is picked from the logits.
#[derive(Debug, Clone)]
pub enum Emission {
    Argmax,
    /// Draw from `softmax(logits / temperature)`. Experimental.
    Sample {
        temperature: f64,
        rng: ChaCha8Rng,
    },
}

impl Emission {
    pub fn sampling(temperature: f64, seed: u64) -> Self {
        Emission::Sample { temperature, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn pick(&mut self, logits: &[f64]) -> usize {
        match self {
            Emission::Argmax => argmax(logits),
            Emission::Sample { temperature, rng } => {
                let t = temperature.max(1e-6);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|l| libm::exp((l - max) / t)).sum();
                let mut u = rng.random::<f64>() * total;
                for (i, l) in logits.iter().enumerate() {
                    u -= libm::exp((l - max) / t);
                    if u <= 0.0 {
                        return i;
                    }
                }
                logits.len() - 1
            }
        }
    }
}

/// A generation loop's state and scratch buffers.
#[derive(Debug, Clone)]
pub struct Generator {
    pub state: GeneratorState,
    evaluator: Evaluator,
    emission: Emission,
}

impl Generator {
    pub fn new(config: &NetConfig, state: GeneratorState) -> Self {
        Generator { state, evaluator: Evaluator::new(config), emission: Emission::Argmax }
    }

    pub fn primed(config: &NetConfig, seed: u64) -> Self {
        Self::new(config, prime(config, seed))
    }

    pub fn with_emission(mut self, emission: Emission) -> Self {
        self.emission = emission;
        self
    }

    /// Runs one step and returns the emitted code.
    pub fn step(&mut self, params: &NetworkParams, controls: Controls) -> Result<MuLawCode> {
        let frame = ControlFrame::new(self.state.last_code, controls.pitch, controls.volume, controls.instrument);
        let logits = self.evaluator.step(params, &frame, &mut self.state.hidden)?;
        let code = MuLawCode(self.emission.pick(logits) as u8);
        self.state.last_code = code;
        self.state.sample_clock += 1;
        Ok(code)
    }

    /// Activations of every layer after the latest step.
    pub fn activations(&self) -> &[f64] {
        self.state.hidden.as_slice()
    }
}

/// Control change taking effect at `time` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEvent {
    pub time: f64,
    pub controls: Controls,
}

/// Time-ordered control changes with hold-last semantics. Before the
/// first event the first event's values apply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlSchedule {
    events: Vec<ControlEvent>,
}

impl ControlSchedule {
    pub fn new(events: Vec<ControlEvent>) -> Result<Self> {
        if events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::Schedule("event times must be non-decreasing"));
        }
        if events.iter().any(|e| !e.time.is_finite() || !e.controls.in_range()) {
            return Err(Error::Schedule("event values must lie in [0, 1]"));
        }
        Ok(ControlSchedule { events })
    }

    pub fn constant(controls: Controls) -> Self {
        ControlSchedule { events: alloc::vec![ControlEvent { time: 0.0, controls }] }
    }

    pub fn events(&self) -> &[ControlEvent] {
        &self.events
    }

    /// Appends one event per sample moving volume linearly between two values.
    fn push_ramp(&mut self, start: f64, duration: f64, from: f64, to: f64, pitch: f64, instrument: f64, sample_rate: u32) {
        let n = crate::synth::samples_for(duration, sample_rate);
        let sr = f64::from(sample_rate);
        for i in 0..n {
            let v = from + (to - from) * i as f64 / n as f64;
            self.events.push(ControlEvent { time: start + i as f64 / sr, controls: Controls::new(pitch, v, instrument) });
        }
    }

    fn push(&mut self, time: f64, controls: Controls) {
        self.events.push(ControlEvent { time, controls });
    }

    /// Per-sample controls for `n` samples starting at time zero.
    pub fn sample(&self, n: usize, sample_rate: u32) -> Vec<Controls> {
        let sr = f64::from(sample_rate);
        let mut out = Vec::with_capacity(n);
        let mut idx = 0;
        let mut current = self.events.first().map_or(Controls::SILENT, |e| e.controls);
        for i in 0..n {
            // tolerate float rounding of event times given in seconds
            let t = i as f64 / sr + 1e-9;
            while idx < self.events.len() && self.events[idx].time <= t {
                current = self.events[idx].controls;
                idx += 1;
            }
            out.push(current);
        }
        out
    }
}

/// Named experiment setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Even instrument, pitch 0.5, volume ramps 0 -> 0.7 -> 0 over 400 ms each.
    Fig3a,
    /// Even instrument, pitch 0.5, volume steps 0 -> 0.7 -> 0.
    Fig3b,
    /// Odd instrument, pitch 0.5, volume steps 0 -> 0.7 -> 0.
    Fig3c,
    /// Even instrument, pitch 0.5, volume steps 0 -> 0.8 -> 0.
    Fig7,
    /// Even instrument, pitch 0.5, 2 s rise 0 -> 0.7 then 2 s fall.
    Sweep,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Fig3a, Preset::Fig3b, Preset::Fig3c, Preset::Fig7, Preset::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3a => "fig3a",
            Preset::Fig3b => "fig3b",
            Preset::Fig3c => "fig3c",
            Preset::Fig7 => "fig7",
            Preset::Sweep => "sweep",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Schedule, total duration in seconds and the volume edges (times of steps).
    pub fn build(self, sample_rate: u32) -> PresetSetup {
        let pitch = 0.5;
        let mut s = ControlSchedule::default();
        let silent = |inst| Controls::new(pitch, 0.0, inst);
        match self {
            Preset::Fig3a => {
                let inst = SYNTH_EVEN_PARAM;
                s.push(0.0, silent(inst));
                s.push_ramp(0.1, 0.4, 0.0, 0.7, pitch, inst, sample_rate);
                s.push(0.5, Controls::new(pitch, 0.7, inst));
                s.push_ramp(0.8, 0.4, 0.7, 0.0, pitch, inst, sample_rate);
                s.push(1.2, silent(inst));
                PresetSetup { schedule: s, duration: 1.4, edges: Vec::new(), instrument: inst }
            }
            Preset::Fig3b | Preset::Fig3c | Preset::Fig7 => {
                let (inst, level) = match self {
                    Preset::Fig3b => (SYNTH_EVEN_PARAM, 0.7),
                    Preset::Fig3c => (SYNTH_ODD_PARAM, 0.7),
                    _ => (SYNTH_EVEN_PARAM, 0.8),
                };
                s.push(0.0, silent(inst));
                s.push(0.1, Controls::new(pitch, level, inst));
                s.push(0.5, silent(inst));
                PresetSetup { schedule: s, duration: 0.9, edges: alloc::vec![0.1, 0.5], instrument: inst }
            }
            Preset::Sweep => {
                let inst = SYNTH_EVEN_PARAM;
                s.push_ramp(0.0, 2.0, 0.0, 0.7, pitch, inst, sample_rate);
                s.push_ramp(2.0, 2.0, 0.7, 0.0, pitch, inst, sample_rate);
                s.push(4.0, silent(inst));
                PresetSetup { schedule: s, duration: 4.0, edges: Vec::new(), instrument: inst }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetSetup {
    pub schedule: ControlSchedule,
    pub duration: f64,
    /// Times of sudden volume changes, in seconds.
    pub edges: Vec<f64>,
    pub instrument: f64,
}

/// Output of [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub codes: Vec<MuLawCode>,
    /// Bin-center amplitudes of `codes`.
    pub audio: Vec<f64>,
    pub controls: Vec<Controls>,
    pub trace: Option<HiddenTrace>,
}

/// Plays `schedule` for `duration` seconds from a primed generator.
pub fn render(
    params: &NetworkParams,
    schedule: &ControlSchedule,
    duration: f64,
    prime_seed: u64,
    capture: bool,
    sample_rate: u32,
) -> Result<Rendering> {
    let n = crate::synth::samples_for(duration, sample_rate);
    let controls = schedule.sample(n, sample_rate);
    let mut gen = Generator::primed(params.config(), prime_seed);
    render_with(params, &mut gen, controls, capture)
}

/// Drives an existing generator through per-sample `controls`.
pub fn render_with(params: &NetworkParams, gen: &mut Generator, controls: Vec<Controls>, capture: bool) -> Result<Rendering> {
    let cfg = params.config();
    let n = controls.len();
    let mut codes = Vec::with_capacity(n);
    let mut acts = if capture { Vec::with_capacity(n * cfg.n_layers * cfg.hidden) } else { Vec::new() };
    for c in &controls {
        codes.push(gen.step(params, *c)?);
        if capture {
            acts.extend_from_slice(gen.activations());
        }
    }
    let audio = codes.iter().map(|&c| mulaw_decode(c)).collect();
    let trace = capture.then(|| {
        let tracks = ControlTracks {
            pitch: controls.iter().map(|c| c.pitch).collect(),
            volume: controls.iter().map(|c| c.volume).collect(),
            instrument: controls.iter().map(|c| c.instrument).collect(),
        };
        HiddenTrace::new(cfg.n_layers, cfg.hidden, acts, tracks)
    });
    Ok(Rendering { codes, audio, controls, trace })
}

/// Human-readable name of an instrument parameter value.
pub fn instrument_label(param: f64) -> String {
    if param == SYNTH_EVEN_PARAM {
        "SynthEven".into()
    } else if param == SYNTH_ODD_PARAM {
        "SynthOdd".into()
    } else {
        alloc::format!("mix{param:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn tiny() -> NetConfig {
        NetConfig { n_layers: 2, hidden: 3, in_dim: 4, out_dim: 256 }
    }

    #[test]
    fn priming() {
        let cfg = tiny();
        assert_eq!(prime(&cfg, 5), prime(&cfg, 5));
        assert!(prime(&cfg, 5).hidden.as_slice().iter().all(|&v| v == 0.0));
        let codes: BTreeSet<u8> = (0..100).map(|s| prime(&cfg, s).last_code.0).collect();
        assert!(codes.len() >= 50, "{}", codes.len());
    }

    #[test]
    fn argmax_ties_go_low() {
        let mut l = vec![0.0; 256];
        l[42] = 3.0;
        assert_eq!(argmax(&l), 42);
        let mut t = vec![0.0; 256];
        t[3] = 1.0;
        t[7] = 1.0;
        assert_eq!(argmax(&t), 3);
    }

    #[test]
    fn forced_emission_feeds_back() {
        // output bias alone decides the emission
        let cfg = tiny();
        let mut p = NetworkParams::zeros(cfg);
        let off = cfg.output_b();
        p.as_mut_slice()[off + 42] = 5.0;
        let mut g = Generator::primed(&cfg, 1);
        assert_eq!(g.step(&p, Controls::new(0.5, 0.7, 0.0)).unwrap(), MuLawCode(42));
        assert_eq!(g.state.last_code, MuLawCode(42));
        assert_eq!(g.state.sample_clock, 1);
        // next frame's audio input is 42/255: with an input weight on audio only
        // the first layer sees exactly that value
        let frame = ControlFrame::new(g.state.last_code, 0.5, 0.7, 0.0);
        assert_eq!(frame.audio_in, 42.0 / 255.0);
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = tiny();
        let p = NetworkParams::init(cfg, 3);
        let st = prime(&cfg, 9);
        let mut a = Generator::new(&cfg, st.clone());
        let mut b = Generator::new(&cfg, st);
        for _ in 0..50 {
            let c = Controls::new(0.5, 0.6, 1.0);
            assert_eq!(a.step(&p, c).unwrap(), b.step(&p, c).unwrap());
        }
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn schedule_hold_last() {
        let s = ControlSchedule::new(vec![
            ControlEvent { time: 0.0, controls: Controls::new(0.5, 0.0, 0.0) },
            ControlEvent { time: 0.001, controls: Controls::new(0.5, 0.7, 0.0) },
            ControlEvent { time: 0.002, controls: Controls::new(0.25, 0.0, 1.0) },
        ])
        .unwrap();
        let c = s.sample(48, 16_000);
        assert_eq!(c[15].volume, 0.0);
        assert_eq!(c[16].volume, 0.7);
        assert_eq!(c[31].volume, 0.7);
        assert_eq!(c[32], Controls::new(0.25, 0.0, 1.0));
        assert_eq!(c[47], Controls::new(0.25, 0.0, 1.0));
        assert!(ControlSchedule::new(vec![
            ControlEvent { time: 1.0, controls: Controls::SILENT },
            ControlEvent { time: 0.5, controls: Controls::SILENT },
        ])
        .is_err());
        assert!(ControlSchedule::new(vec![ControlEvent { time: 0.0, controls: Controls::new(0.5, 1.5, 0.0) }]).is_err());
    }

    #[test]
    fn presets() {
        let fig7 = Preset::Fig7.build(16_000);
        let c = fig7.schedule.sample(14_400, 16_000);
        assert_eq!(c[0].volume, 0.0);
        assert_eq!(c[1600].volume, 0.8);
        assert_eq!(c[7999].volume, 0.8);
        assert_eq!(c[8000].volume, 0.0);
        assert!(c.iter().all(|x| x.pitch == 0.5 && x.instrument == SYNTH_EVEN_PARAM));

        let fig3a = Preset::Fig3a.build(16_000);
        let c = fig3a.schedule.sample(22_400, 16_000);
        assert_eq!(c[1600].volume, 0.0);
        assert!((c[1600 + 3200].volume - 0.35).abs() < 1e-12);
        assert_eq!(c[8000].volume, 0.7);
        // monotone rise over 400 ms
        assert!(c[1600..8000].windows(2).all(|w| w[1].volume >= w[0].volume));
        assert_eq!(Preset::parse("fig3c"), Some(Preset::Fig3c));
        assert_eq!(Preset::parse("nope"), None);
        assert_eq!(Preset::Fig3c.build(16_000).instrument, SYNTH_ODD_PARAM);
    }

    #[test]
    fn render_lengths_and_capture() {
        let cfg = tiny();
        let p = NetworkParams::init(cfg, 2);
        let s = ControlSchedule::constant(Controls::new(0.5, 0.7, 0.0));
        let empty = render(&p, &s, 0.0, 1, true, 16_000).unwrap();
        assert!(empty.audio.is_empty());
        let r = render(&p, &s, 0.01, 1, true, 16_000).unwrap();
        assert_eq!(r.audio.len(), 160);
        let tr = r.trace.unwrap();
        assert_eq!(tr.len(), 160);
        assert_eq!(tr.unit(1, 2).len(), 160);
        let again = render(&p, &s, 0.01, 1, false, 16_000).unwrap();
        assert_eq!(again.codes, r.codes);
        assert!(again.trace.is_none());
    }

    #[test]
    fn sampling_mode_is_seeded() {
        let cfg = tiny();
        let p = NetworkParams::init(cfg, 2);
        let run = || {
            let mut g = Generator::primed(&cfg, 1).with_emission(Emission::sampling(1.0, 4));
            (0..64).map(|_| g.step(&p, Controls::new(0.5, 0.7, 0.0)).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
