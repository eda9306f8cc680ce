//! Synthetic training instruments and teacher-forcing sequences.
//!
//! Each instrument is a fixed set of harmonic partials whose loudness
//! follows a constant-slope envelope in the volume-parameter domain: a
//! step of the volume control produces a linear ramp of that control's
//! value, which is then mapped through [`volume_to_gain`]. The network is
//! conditioned on the step itself, so it must learn the ramp.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::codec::{mulaw_encode, param_to_freq, pitch_param, volume_to_gain, ControlFrame, MuLawCode, PITCH_STEPS};
use crate::error::{Error, Result};

/// Instrument parameter of the even-harmonic instrument.
pub const SYNTH_EVEN_PARAM: f64 = 0.0;
/// Instrument parameter of the odd-harmonic instrument.
pub const SYNTH_ODD_PARAM: f64 = 1.0;

/// Harmonic recipe plus transient slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSpec {
    pub name: String,
    /// `(harmonic number, amplitude)`.
    pub partials: Vec<(u32, f64)>,
    /// Volume units per second while rising.
    pub attack_slope: f64,
    /// Volume units per second while falling (magnitude).
    pub decay_slope: f64,
    /// Value of the instrument control for this instrument.
    pub param: f64,
}

impl InstrumentSpec {
    /// Harmonics 2, 4, 6, 8 with `1/k` amplitudes; symmetric 10 units/s transients.
    pub fn synth_even() -> Self {
        InstrumentSpec {
            name: "SynthEven".into(),
            partials: [2u32, 4, 6, 8].iter().map(|&k| (k, 1.0 / f64::from(k))).collect(),
            attack_slope: 10.0,
            decay_slope: 10.0,
            param: SYNTH_EVEN_PARAM,
        }
    }

    /// Harmonics 1, 3, 5, 7 with `1/k` amplitudes; 100 units/s attack, 5 units/s decay.
    pub fn synth_odd() -> Self {
        InstrumentSpec {
            name: "SynthOdd".into(),
            partials: [1u32, 3, 5, 7].iter().map(|&k| (k, 1.0 / f64::from(k))).collect(),
            attack_slope: 100.0,
            decay_slope: 5.0,
            param: SYNTH_ODD_PARAM,
        }
    }

    /// The two training instruments, in instrument-parameter order.
    pub fn defaults() -> [InstrumentSpec; 2] {
        [Self::synth_even(), Self::synth_odd()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.partials.is_empty() {
            return Err(Error::Config("instrument needs at least one partial"));
        }
        for (i, &(k, a)) in self.partials.iter().enumerate() {
            if k == 0 || !(a > 0.0) {
                return Err(Error::Config("partials need a positive harmonic number and amplitude"));
            }
            if self.partials[..i].iter().any(|&(other, _)| other == k) {
                return Err(Error::Config("duplicate harmonic number"));
            }
        }
        if !(self.attack_slope > 0.0 && self.decay_slope > 0.0) {
            return Err(Error::Config("transient slopes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.param) {
            return Err(Error::Config("instrument parameter must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Greatest common divisor of the harmonic numbers: the waveform
    /// repeats `period_divisor` times per fundamental period.
    pub fn period_divisor(&self) -> u32 {
        fn gcd(a: u32, b: u32) -> u32 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        self.partials.iter().fold(0, |g, &(k, _)| gcd(g, k)).max(1)
    }

    fn amplitude_sum(&self) -> f64 {
        self.partials.iter().map(|p| p.1).sum()
    }
}

/// One note: a volume step up at `onset` and back down at `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub pitch_index: usize,
    pub volume_target: f64,
    pub onset: f64,
    pub offset: f64,
    /// Volume before the onset and after the offset; zero unless the
    /// partial-step training option is used.
    pub base_volume: f64,
}

impl NoteEvent {
    pub fn validate(&self) -> Result<()> {
        if self.pitch_index > PITCH_STEPS {
            return Err(Error::PitchIndex(self.pitch_index));
        }
        if !(self.onset < self.offset) || self.onset < 0.0 {
            return Err(Error::Config("note onset must precede offset"));
        }
        if !(self.volume_target > 0.0 && self.volume_target <= 1.0) {
            return Err(Error::Config("volume target must lie in (0, 1]"));
        }
        if !(0.0..self.volume_target).contains(&self.base_volume) {
            return Err(Error::Config("base volume must lie in [0, target)"));
        }
        Ok(())
    }

    /// Envelope value reached when the note is released.
    pub fn volume_at_offset(&self, spec: &InstrumentSpec) -> f64 {
        let rise = self.base_volume + spec.attack_slope * (self.offset - self.onset);
        rise.min(self.volume_target)
    }
}

/// Volume-parameter envelope of `event` at time `t` seconds.
pub fn envelope(spec: &InstrumentSpec, event: &NoteEvent, t: f64) -> f64 {
    if t < event.onset {
        event.base_volume
    } else if t < event.offset {
        (event.base_volume + spec.attack_slope * (t - event.onset)).min(event.volume_target)
    } else {
        let v = event.volume_at_offset(spec) - spec.decay_slope * (t - event.offset);
        v.max(event.base_volume)
    }
}

/// Renders `duration` seconds of `spec` playing `event` at pitch parameter `pitch`.
pub fn render_tone(spec: &InstrumentSpec, pitch: f64, event: &NoteEvent, duration: f64, sample_rate: u32) -> Result<Vec<f64>> {
    spec.validate()?;
    let f0 = param_to_freq(pitch);
    let nyquist = f64::from(sample_rate) / 2.0;
    for &(k, _) in &spec.partials {
        let f = f64::from(k) * f0;
        if f >= nyquist {
            return Err(Error::AboveNyquist { harmonic: k, freq_hz: f });
        }
    }
    let norm = spec.amplitude_sum();
    let n = samples_for(duration, sample_rate);
    let sr = f64::from(sample_rate);
    let out = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let gain = volume_to_gain(envelope(spec, event, t));
            if gain == 0.0 {
                return 0.0;
            }
            let wave: f64 = spec.partials.iter().map(|&(k, a)| a * libm::sin(2.0 * PI * f64::from(k) * f0 * t)).sum();
            gain * wave / norm
        })
        .collect();
    Ok(out)
}

/// Per-sample conditioning values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlTracks {
    pub pitch: Vec<f64>,
    pub volume: Vec<f64>,
    pub instrument: Vec<f64>,
}

impl ControlTracks {
    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }
}

/// Step-shaped volume track plus constant pitch and instrument tracks.
pub fn conditioning_tracks(event: &NoteEvent, pitch: f64, instrument: f64, duration: f64, sample_rate: u32) -> ControlTracks {
    let n = samples_for(duration, sample_rate);
    let sr = f64::from(sample_rate);
    let volume = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            if t >= event.onset && t < event.offset {
                event.volume_target
            } else {
                event.base_volume
            }
        })
        .collect();
    ControlTracks { pitch: vec![pitch; n], volume, instrument: vec![instrument; n] }
}

pub(crate) fn samples_for(duration: f64, sample_rate: u32) -> usize {
    if !(duration > 0.0) {
        return 0;
    }
    libm::round(duration * f64::from(sample_rate)) as usize
}

/// Teacher-forcing pairs: `targets[t]` is the code of the sample after `frames[t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSequence {
    pub frames: Vec<ControlFrame>,
    pub targets: Vec<MuLawCode>,
}

impl TrainingSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pairs each sample's code and controls with the next sample's code.
pub fn frames_from_audio(audio: &[f64], tracks: &ControlTracks) -> Result<TrainingSequence> {
    for len in [tracks.pitch.len(), tracks.volume.len(), tracks.instrument.len()] {
        if len != audio.len() {
            return Err(Error::LengthMismatch { expected: audio.len(), found: len });
        }
    }
    if audio.len() < 2 {
        return Err(Error::LengthMismatch { expected: 2, found: audio.len() });
    }
    let codes: Vec<MuLawCode> = audio.iter().map(|&x| mulaw_encode(x)).collect();
    let frames = (0..audio.len() - 1).map(|t| ControlFrame::new(codes[t], tracks.pitch[t], tracks.volume[t], tracks.instrument[t])).collect();
    Ok(TrainingSequence { frames, targets: codes[1..].to_vec() })
}

/// Durations of the segments around a note, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTiming {
    pub lead_silence: f64,
    pub steady: f64,
    pub tail_silence: f64,
}

impl Default for SegmentTiming {
    fn default() -> Self {
        SegmentTiming { lead_silence: 0.1, steady: 0.25, tail_silence: 0.1 }
    }
}

/// Shape of a training grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub instruments: Vec<InstrumentSpec>,
    pub n_pitches: usize,
    pub n_volumes: usize,
    /// Loudest volume level; levels are `v_max * (i + 1) / n_volumes`.
    pub v_max: f64,
    pub timing: SegmentTiming,
    pub sample_rate: u32,
    /// When set, every note also rises from and falls back to this
    /// fraction of its target instead of silence.
    pub partial_step_fraction: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            instruments: InstrumentSpec::defaults().into(),
            n_pitches: PITCH_STEPS + 1,
            n_volumes: 25,
            v_max: 0.7,
            timing: SegmentTiming::default(),
            sample_rate: crate::SAMPLE_RATE,
            partial_step_fraction: None,
        }
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceDescriptor {
    pub instrument: usize,
    pub pitch_index: usize,
    pub volume_index: usize,
    pub volume: f64,
    pub base_volume: f64,
}

/// A rendered grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSequence {
    pub descriptor: SequenceDescriptor,
    pub event: NoteEvent,
    pub audio: Vec<f64>,
    pub tracks: ControlTracks,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() || self.n_pitches == 0 || self.n_volumes == 0 {
            return Err(Error::Config("grid dimensions must be positive"));
        }
        if self.n_pitches > PITCH_STEPS + 1 {
            return Err(Error::Config("at most 13 pitches"));
        }
        if !(self.v_max > 0.0 && self.v_max <= 1.0) {
            return Err(Error::Config("v_max must lie in (0, 1]"));
        }
        if let Some(f) = self.partial_step_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config("partial step fraction must lie in (0, 1)"));
            }
        }
        self.instruments.iter().try_for_each(InstrumentSpec::validate)
    }

    /// Semitone indices used, spread evenly over the octave.
    pub fn pitch_indices(&self) -> Vec<usize> {
        if self.n_pitches == 1 {
            return vec![PITCH_STEPS / 2];
        }
        (0..self.n_pitches).map(|i| (i * PITCH_STEPS + (self.n_pitches - 1) / 2) / (self.n_pitches - 1)).collect()
    }

    pub fn volume_levels(&self) -> Vec<f64> {
        (0..self.n_volumes).map(|i| self.v_max * (i + 1) as f64 / self.n_volumes as f64).collect()
    }

    /// Every grid cell, instrument-major, then pitch, then volume.
    pub fn descriptors(&self) -> Vec<SequenceDescriptor> {
        let pitches = self.pitch_indices();
        let volumes = self.volume_levels();
        let mut out = Vec::with_capacity(self.instruments.len() * pitches.len() * volumes.len());
        for instrument in 0..self.instruments.len() {
            for &pitch_index in &pitches {
                for (volume_index, &volume) in volumes.iter().enumerate() {
                    let base_volume = self.partial_step_fraction.map_or(0.0, |f| f * volume);
                    out.push(SequenceDescriptor { instrument, pitch_index, volume_index, volume, base_volume });
                }
            }
        }
        out
    }

    /// Note timing for a cell: silence, attack, steady state, decay, silence.
    pub fn note_layout(&self, d: &SequenceDescriptor) -> (NoteEvent, f64) {
        let spec = &self.instruments[d.instrument];
        let step = d.volume - d.base_volume;
        let onset = self.timing.lead_silence;
        let offset = onset + step / spec.attack_slope + self.timing.steady;
        let duration = offset + step / spec.decay_slope + self.timing.tail_silence;
        let event = NoteEvent { pitch_index: d.pitch_index, volume_target: d.volume, onset, offset, base_volume: d.base_volume };
        (event, duration)
    }

    pub fn render(&self, d: &SequenceDescriptor) -> Result<RenderedSequence> {
        let spec = &self.instruments[d.instrument];
        let pitch = pitch_param(d.pitch_index)?;
        let (event, duration) = self.note_layout(d);
        event.validate()?;
        let audio = render_tone(spec, pitch, &event, duration, self.sample_rate)?;
        let tracks = conditioning_tracks(&event, pitch, spec.param, duration, self.sample_rate);
        Ok(RenderedSequence { descriptor: *d, event, audio, tracks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(target: f64) -> NoteEvent {
        NoteEvent { pitch_index: 6, volume_target: target, onset: 0.1, offset: 0.5, base_volume: 0.0 }
    }

    /// Samples after `from` (inclusive) whose envelope lies strictly between levels.
    fn ramp_samples(spec: &InstrumentSpec, ev: &NoteEvent, from: f64, falling: bool) -> usize {
        let start = libm::round(from * 16_000.0) as usize;
        (start..start + 20_000)
            .take_while(|&n| {
                let v = envelope(spec, ev, n as f64 / 16_000.0);
                if falling {
                    v > 0.0
                } else {
                    v < ev.volume_target
                }
            })
            .count()
    }

    #[test]
    fn attack_durations() {
        let even = InstrumentSpec::synth_even();
        let odd = InstrumentSpec::synth_odd();
        let ev = event(0.7);
        assert!(ramp_samples(&even, &ev, ev.onset, false).abs_diff(1120) <= 1);
        assert!(ramp_samples(&odd, &ev, ev.onset, false).abs_diff(112) <= 1);
        assert!(ramp_samples(&odd, &ev, ev.offset, true).abs_diff(2240) <= 1);
        assert!(ramp_samples(&even, &ev, ev.offset, true).abs_diff(1120) <= 1);
        assert_eq!(envelope(&even, &ev, 0.05), 0.0);
        assert_eq!(envelope(&even, &ev, 0.3), 0.7);
    }

    #[test]
    fn period_divisor_of_partial_sets() {
        assert_eq!(InstrumentSpec::synth_even().period_divisor(), 2);
        assert_eq!(InstrumentSpec::synth_odd().period_divisor(), 1);
    }

    #[test]
    fn zero_gain_is_silent() {
        let spec = InstrumentSpec::synth_odd();
        let ev = NoteEvent { volume_target: 0.5, ..event(0.5) };
        let audio = render_tone(&spec, 0.5, &ev, 0.05, 16_000).unwrap();
        assert!(audio.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn aliasing_partials_rejected() {
        let mut spec = InstrumentSpec::synth_odd();
        spec.partials.push((13, 0.1));
        let err = render_tone(&spec, 1.0, &event(0.5), 0.6, 16_000).unwrap_err();
        assert!(matches!(err, Error::AboveNyquist { harmonic: 13, .. }));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = InstrumentSpec::synth_even();
        spec.partials.push((4, 0.3));
        assert!(spec.validate().is_err());
        let mut spec = InstrumentSpec::synth_even();
        spec.decay_slope = 0.0;
        assert!(spec.validate().is_err());
        assert!(NoteEvent { onset: 0.5, offset: 0.5, ..event(0.5) }.validate().is_err());
    }

    #[test]
    fn volume_track_is_a_step() {
        let ev = event(0.7);
        let tr = conditioning_tracks(&ev, 0.5, 0.0, 0.8, 16_000);
        assert_eq!(tr.volume[1599], 0.0);
        assert_eq!(tr.volume[1600], 0.7);
        assert_eq!(tr.volume[7999], 0.7);
        assert_eq!(tr.volume[8000], 0.0);
        let jumps = tr.volume.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(jumps, 2);
        assert!(tr.pitch.iter().all(|&p| p == 0.5));
        assert!(tr.instrument.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn frames_pairing() {
        let tr = ControlTracks { pitch: vec![0.5; 5], volume: vec![0.0; 5], instrument: vec![1.0; 5] };
        let seq = frames_from_audio(&[0.0; 5], &tr).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq.frames.iter().all(|f| f.audio_in == 128.0 / 255.0));
        assert!(seq.targets.iter().all(|&c| c == MuLawCode(128)));
        assert!(frames_from_audio(&[0.0; 4], &tr).is_err());
        let short = ControlTracks { pitch: vec![0.5], volume: vec![0.0], instrument: vec![1.0] };
        assert!(frames_from_audio(&[0.0], &short).is_err());
    }

    #[test]
    fn grid_shapes() {
        let g = GridSpec::default();
        assert_eq!(g.descriptors().len(), 650);
        assert_eq!(g.pitch_indices(), (0..13).collect::<Vec<_>>());
        let v = g.volume_levels();
        assert!((v[0] - 0.028).abs() < 1e-12 && (v[24] - 0.7).abs() < 1e-12);
        let small = GridSpec { n_pitches: 2, n_volumes: 3, ..GridSpec::default() };
        assert_eq!(small.descriptors().len(), 12);
        assert_eq!(small.pitch_indices(), vec![0, 12]);
        let three = GridSpec { n_pitches: 3, ..GridSpec::default() };
        assert_eq!(three.pitch_indices(), vec![0, 6, 12]);
    }

    #[test]
    fn rendered_cells_start_and_end_silent() {
        let g = GridSpec { n_pitches: 2, n_volumes: 3, ..GridSpec::default() };
        for d in g.descriptors() {
            let r = g.render(&d).unwrap();
            assert_eq!(r.tracks.volume[0], 0.0);
            assert_eq!(*r.tracks.volume.last().unwrap(), 0.0);
            assert_eq!(r.audio[0], 0.0);
            assert_eq!(*r.audio.last().unwrap(), 0.0);
            assert!(r.audio.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn partial_step_option() {
        let g = GridSpec { n_pitches: 1, n_volumes: 2, partial_step_fraction: Some(0.5), ..GridSpec::default() };
        let d = g.descriptors()[1];
        assert!((d.base_volume - 0.35).abs() < 1e-12);
        let r = g.render(&d).unwrap();
        assert_eq!(r.tracks.volume[0], 0.35);
        assert!(r.audio.iter().any(|&x| x != 0.0));
    }
}
