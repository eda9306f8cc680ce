//! Hidden-unit analyses over captured activation traces.
//!
//! Everything here is a pure function of a trace except the `*_report`
//! helpers, which render from the network first.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::param_to_freq;
use crate::error::{Error, Result};
use crate::generate::{render_with, Controls, Generator};
use crate::nn::NetworkParams;
use crate::synth::{samples_for, ControlTracks};

/// Shortest window [`unit_stats`] accepts.
pub const MIN_STATS_WINDOW: usize = 200;
/// Largest lag searched for a first autocorrelation peak.
pub const MAX_PERIOD_LAG: usize = 512;
/// Samples used for the coarse period search; refinement uses the whole window.
const COARSE_SPAN: usize = 4096;
/// Amplitude below which a unit counts as not oscillating.
pub const OSC_THRESHOLD: f64 = 0.01;
/// Short window and hop used for reaction times.
pub const SHORT_WINDOW: usize = 64;
pub const SHORT_HOP: usize = 16;

/// Activations of every unit at every generated sample, with the controls
/// that were applied.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    n_layers: usize,
    hidden: usize,
    /// Step-major: `data[t * n_layers * hidden + l * hidden + u]`.
    data: Vec<f64>,
    controls: ControlTracks,
}

impl HiddenTrace {
    pub fn new(n_layers: usize, hidden: usize, data: Vec<f64>, controls: ControlTracks) -> Self {
        let width = n_layers * hidden;
        assert!(width == 0 || data.len() % width == 0, "ragged trace");
        assert!(width == 0 || controls.len() == data.len() / width, "controls misaligned");
        HiddenTrace { n_layers, hidden, data, controls }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn controls(&self) -> &ControlTracks {
        &self.controls
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// All activations at step `t`.
    pub fn step(&self, t: usize) -> &[f64] {
        let w = self.n_layers * self.hidden;
        &self.data[t * w..(t + 1) * w]
    }

    /// Time series of one unit (zero-based layer and unit).
    pub fn unit(&self, layer: usize, unit: usize) -> Vec<f64> {
        let w = self.n_layers * self.hidden;
        let off = layer * self.hidden + unit;
        (0..self.len()).map(|t| self.data[t * w + off]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitStats {
    pub dc_offset: f64,
    pub osc_amplitude: f64,
    pub period: Option<f64>,
}

/// Lazily evaluated unbiased autocorrelation of a mean-removed signal.
struct Autocorr<'a> {
    x: &'a [f64],
}

impl Autocorr<'_> {
    fn at(&self, k: usize) -> f64 {
        let n = self.x.len() - k;
        crate::linalg::dot(&self.x[..n], &self.x[k..]) / n as f64
    }
}

/// Vertex offset in `[-0.5, 0.5]` of the parabola through three points.
fn parabolic(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

fn estimate_period(x: &[f64]) -> Option<f64> {
    let full = Autocorr { x };
    let ac = Autocorr { x: &x[..x.len().min(COARSE_SPAN)] };
    let r0 = ac.at(0);
    if r0 <= 1e-24 {
        return None;
    }
    let limit = (ac.x.len() / 2).min(MAX_PERIOD_LAG);
    let thr = 0.5 * r0;
    // skip the central lobe, then take the first local maximum above threshold
    let mut k = 1;
    while k < limit && ac.at(k) >= thr {
        k += 1;
    }
    let mut prev = ac.at(k);
    let mut cur = if k < limit { ac.at(k + 1) } else { return None };
    k += 1;
    let mut found = None;
    while k < limit {
        let next = ac.at(k + 1);
        if cur > thr && cur >= prev && cur >= next {
            found = Some(k as f64 + parabolic(prev, cur, next));
            break;
        }
        prev = cur;
        cur = next;
        k += 1;
    }
    let mut period = found?;
    // refine on the peaks at multiples of the period
    let (ac, half) = (full, x.len() / 2);
    let thr = 0.5 * ac.at(0);
    let mut m = 2usize;
    loop {
        let guess = libm::round(m as f64 * period) as usize;
        if guess + 3 > half {
            break;
        }
        // stay within half a period so a neighbouring multiple can't win
        let radius = (libm::floor(period / 2.0) as usize).clamp(1, 2);
        let lo = guess.saturating_sub(radius).max(2);
        let (best, _) = (lo..=guess + radius).map(|j| (j, ac.at(j))).fold((lo, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let (a, b, c) = (ac.at(best - 1), ac.at(best), ac.at(best + 1));
        if b <= thr || b < a || b < c {
            break;
        }
        let refined = (best as f64 + parabolic(a, b, c)) / m as f64;
        if (refined - period).abs() > 0.5 {
            break;
        }
        period = refined;
        m *= 2;
    }
    Some(period)
}

/// Catmull-Rom interpolation; linear interpolation flattens the peaks of
/// short periods by about 1 %.
fn cubic_at(x: &[f64], pos: f64) -> f64 {
    let i = pos as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let f = pos - i as f64;
    let (xm, x0, x1) = (x[i.saturating_sub(1)], x[i], x[i + 1]);
    let x2 = x[(i + 2).min(x.len() - 1)];
    x0 + 0.5 * f * (x1 - xm + f * (2.0 * xm - 5.0 * x0 + 4.0 * x1 - x2 + f * (3.0 * (x0 - x1) + x2 - xm)))
}

/// One period of `x` averaged over all whole cycles, on a grid of `m` phases.
fn cycle_average(x: &[f64], period: f64) -> Option<Vec<f64>> {
    let cycles = libm::floor((x.len() - 1) as f64 / period) as usize;
    if cycles < 2 {
        return None;
    }
    let m = (libm::ceil(4.0 * period) as usize).max(8);
    let mut avg = vec![0.0; m];
    for j in 0..cycles {
        let base = j as f64 * period;
        for (i, a) in avg.iter_mut().enumerate() {
            *a += cubic_at(x, base + i as f64 * period / m as f64);
        }
    }
    avg.iter_mut().for_each(|a| *a /= cycles as f64);
    Some(avg)
}

/// Extreme of a periodic sequence refined by a parabola through its neighbors.
fn circular_extreme(v: &[f64], max: bool) -> f64 {
    let n = v.len();
    let sign = if max { 1.0 } else { -1.0 };
    let (i, _) = v.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &x)| if sign * x > a.1 { (i, sign * x) } else { a });
    let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
    let d = parabolic(a, b, c);
    b - 0.25 * (a - c) * d
}

/// DC offset, oscillation amplitude and period of one unit's window.
///
/// The amplitude is half the peak-to-peak span. When a period is found it
/// is measured on the cycle-averaged waveform, which keeps it stable on
/// noisy traces; otherwise on the raw window.
pub fn unit_stats(window: &[f64]) -> Result<UnitStats> {
    if window.len() < MIN_STATS_WINDOW {
        return Err(Error::WindowTooShort { needed: MIN_STATS_WINDOW, found: window.len() });
    }
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let x: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let period = estimate_period(&x);
    if let Some(avg) = period.and_then(|p| cycle_average(&x, p)) {
        let dc = mean + avg.iter().sum::<f64>() / avg.len() as f64;
        let amp = 0.5 * (circular_extreme(&avg, true) - circular_extreme(&avg, false));
        return Ok(UnitStats { dc_offset: dc, osc_amplitude: amp.max(0.0), period });
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(UnitStats { dc_offset: mean, osc_amplitude: 0.5 * (hi - lo), period })
}

/// Half peak-to-peak of an arbitrary-length window, for slices too short
/// for [`unit_stats`].
fn raw_amplitude(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    0.5 * (hi - lo)
}

fn amplitude(x: &[f64]) -> f64 {
    match unit_stats(x) {
        Ok(s) => s.osc_amplitude,
        Err(_) => raw_amplitude(x),
    }
}

/// Steady tone used by [`pitch_locking_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockingSpec {
    pub instrument: f64,
    /// Harmonic gcd of the instrument: the waveform repeats this many times
    /// per fundamental period.
    pub period_divisor: u32,
    pub volume: f64,
    pub settle: f64,
    pub duration: f64,
    pub prime_seed: u64,
    pub sample_rate: u32,
}

impl Default for LockingSpec {
    fn default() -> Self {
        LockingSpec { instrument: 0.0, period_divisor: 1, volume: 0.7, settle: 0.1, duration: 0.4, prime_seed: 0, sample_rate: crate::SAMPLE_RATE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockRow {
    pub pitch_index: usize,
    pub layer: usize,
    pub unit: usize,
    pub stats: UnitStats,
    pub expected_period: f64,
}

impl LockRow {
    pub fn oscillating(&self) -> bool {
        self.stats.osc_amplitude >= OSC_THRESHOLD
    }

    pub fn locked(&self) -> bool {
        self.stats.period.is_some_and(|p| (p - self.expected_period).abs() <= 0.1 * self.expected_period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockingReport {
    pub spec: LockingSpec,
    pub rows: Vec<LockRow>,
}

impl LockingReport {
    /// Fraction of oscillating units on `layer` locked at `pitch_index`,
    /// or `None` when no unit oscillates.
    pub fn lock_fraction(&self, pitch_index: usize, layer: usize) -> Option<f64> {
        let osc: Vec<&LockRow> = self.rows.iter().filter(|r| r.pitch_index == pitch_index && r.layer == layer && r.oscillating()).collect();
        if osc.is_empty() {
            return None;
        }
        Some(osc.iter().filter(|r| r.locked()).count() as f64 / osc.len() as f64)
    }

    pub fn pitches(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.rows.iter().map(|r| r.pitch_index).collect();
        p.dedup();
        p
    }
}

/// Period of the driven waveform in samples.
pub fn expected_period(pitch_index: usize, divisor: u32, sample_rate: u32) -> Result<f64> {
    let f = param_to_freq(crate::codec::pitch_param(pitch_index)?);
    Ok(f64::from(sample_rate) / (f * f64::from(divisor.max(1))))
}

/// Renders a steady tone per pitch and measures every unit's period.
pub fn pitch_locking_report(params: &NetworkParams, pitch_indices: &[usize], spec: &LockingSpec) -> Result<LockingReport> {
    let cfg = *params.config();
    let settle = samples_for(spec.settle, spec.sample_rate);
    let total = settle + samples_for(spec.duration, spec.sample_rate);
    let mut rows = Vec::new();
    for &pi in pitch_indices {
        let expected = expected_period(pi, spec.period_divisor, spec.sample_rate)?;
        let pitch = crate::codec::pitch_param(pi)?;
        let controls = vec![Controls::new(pitch, spec.volume, spec.instrument); total];
        let mut gen = Generator::primed(&cfg, spec.prime_seed);
        let trace = render_with(params, &mut gen, controls, true)?.trace.expect("captured");
        for layer in 0..cfg.n_layers {
            for unit in 0..cfg.hidden {
                let series = trace.unit(layer, unit);
                let stats = unit_stats(&series[settle..])?;
                rows.push(LockRow { pitch_index: pi, layer, unit, stats, expected_period: expected });
            }
        }
    }
    Ok(LockingReport { spec: *spec, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectivityClass {
    Silent,
    Low,
    Mid,
    High,
    Broad,
}

impl SelectivityClass {
    pub fn name(self) -> &'static str {
        match self {
            SelectivityClass::Silent => "silent",
            SelectivityClass::Low => "low",
            SelectivityClass::Mid => "mid",
            SelectivityClass::High => "high",
            SelectivityClass::Broad => "broad",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityProfile {
    pub layer: usize,
    pub unit: usize,
    pub direction: SweepDirection,
    /// Oscillation amplitude per volume bin, lowest volume first.
    pub amplitudes: Vec<f64>,
    pub peak_bin: usize,
    /// Full width at half maximum, in bins.
    pub bandwidth: f64,
    /// Amplitude-weighted mean bin position scaled to `[0, 1]`.
    pub centroid: f64,
    pub class: SelectivityClass,
}

/// Amplitude per volume bin of one unit. Samples are assigned to
/// `n_bins` equal-width bins over `[lo, hi]` and each bin's samples, kept
/// in time order, are measured as one window.
pub fn amplitude_profile(series: &[f64], volume: &[f64], n_bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (&a, &v) in series.iter().zip(volume) {
        if v < lo || v > hi || width <= 0.0 {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        bins[b].push(a);
    }
    bins.iter().map(|b| amplitude(b)).collect()
}

/// Peak bin, FWHM in bins (linearly interpolated at the half-max crossings)
/// and centroid of a profile.
pub fn profile_shape(amplitudes: &[f64]) -> (usize, f64, f64) {
    let n = amplitudes.len();
    let (peak, &max) = amplitudes.iter().enumerate().fold((0, &f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if n == 0 || max <= 0.0 {
        return (0, 0.0, 0.5);
    }
    let half = 0.5 * max;
    let mut left = 0.0;
    let mut i = peak;
    while i > 0 && amplitudes[i - 1] >= half {
        i -= 1;
    }
    if i > 0 {
        let (a, b) = (amplitudes[i - 1], amplitudes[i]);
        left = (i - 1) as f64 + (half - a) / (b - a);
    } else {
        left -= 0.5;
    }
    let mut j = peak;
    while j + 1 < n && amplitudes[j + 1] >= half {
        j += 1;
    }
    let right = if j + 1 < n {
        let (a, b) = (amplitudes[j], amplitudes[j + 1]);
        j as f64 + (a - half) / (a - b)
    } else {
        n as f64 - 0.5
    };
    let total: f64 = amplitudes.iter().sum();
    let centroid = amplitudes.iter().enumerate().map(|(i, a)| i as f64 * a).sum::<f64>() / total / (n - 1).max(1) as f64;
    (peak, right - left, centroid)
}

fn classify(amplitudes: &[f64], bandwidth: f64, centroid: f64) -> SelectivityClass {
    let max = amplitudes.iter().copied().fold(0.0, f64::max);
    if max < OSC_THRESHOLD {
        SelectivityClass::Silent
    } else if bandwidth >= 0.6 * amplitudes.len() as f64 {
        SelectivityClass::Broad
    } else if centroid < 1.0 / 3.0 {
        SelectivityClass::Low
    } else if centroid < 2.0 / 3.0 {
        SelectivityClass::Mid
    } else {
        SelectivityClass::High
    }
}

pub fn profile(layer: usize, unit: usize, direction: SweepDirection, amplitudes: Vec<f64>) -> SelectivityProfile {
    let (peak_bin, bandwidth, centroid) = profile_shape(&amplitudes);
    let class = classify(&amplitudes, bandwidth, centroid);
    SelectivityProfile { layer, unit, direction, amplitudes, peak_bin, bandwidth, centroid, class }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub up_duration: f64,
    pub down_duration: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub pitch: f64,
    pub instrument: f64,
    pub n_bins: usize,
    pub prime_seed: u64,
    pub sample_rate: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            up_duration: 2.0,
            down_duration: 2.0,
            v_lo: 0.0,
            v_hi: 0.7,
            pitch: 0.5,
            instrument: 0.0,
            n_bins: 20,
            prime_seed: 0,
            sample_rate: crate::SAMPLE_RATE,
        }
    }
}

impl SweepSpec {
    pub fn controls(&self) -> (Vec<Controls>, usize) {
        let up = samples_for(self.up_duration, self.sample_rate);
        let down = samples_for(self.down_duration, self.sample_rate);
        let span = self.v_hi - self.v_lo;
        let mut c = Vec::with_capacity(up + down);
        for i in 0..up {
            let v = self.v_lo + span * i as f64 / (up.max(2) - 1) as f64;
            c.push(Controls::new(self.pitch, v, self.instrument));
        }
        for i in 0..down {
            let v = self.v_hi - span * i as f64 / (down.max(2) - 1) as f64;
            c.push(Controls::new(self.pitch, v, self.instrument));
        }
        (c, up)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityReport {
    pub spec: SweepSpec,
    pub profiles: Vec<SelectivityProfile>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / libm::sqrt(sxx * syy))
}

/// RMS difference of two profiles relative to the RMS of their mean.
pub fn relative_rms_difference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    let diff = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n);
    let level = libm::sqrt(a.iter().zip(b).map(|(x, y)| 0.25 * (x + y) * (x + y)).sum::<f64>() / n);
    if level < 1e-12 {
        0.0
    } else {
        diff / level
    }
}

impl SelectivityReport {
    pub fn get(&self, layer: usize, unit: usize, direction: SweepDirection) -> Option<&SelectivityProfile> {
        self.profiles.iter().find(|p| p.layer == layer && p.unit == unit && p.direction == direction)
    }

    /// Fraction of oscillating units on `layer` whose up-sweep amplitude
    /// correlates positively with volume.
    pub fn positive_correlation_fraction(&self, layer: usize) -> Option<f64> {
        let centers: Vec<f64> = (0..self.spec.n_bins).map(|b| b as f64).collect();
        let mut pos = 0;
        let mut total = 0;
        for p in self.profiles.iter().filter(|p| p.layer == layer && p.direction == SweepDirection::Up) {
            if p.class == SelectivityClass::Silent {
                continue;
            }
            if let Some(r) = pearson(&centers, &p.amplitudes) {
                total += 1;
                if r > 0.0 {
                    pos += 1;
                }
            }
        }
        (total > 0).then(|| pos as f64 / total as f64)
    }

    /// Per-unit up-versus-down relative RMS difference on `layer`.
    pub fn direction_differences(&self, layer: usize) -> Vec<(usize, f64)> {
        self.profiles
            .iter()
            .filter(|p| p.layer == layer && p.direction == SweepDirection::Up && p.class != SelectivityClass::Silent)
            .filter_map(|up| {
                let down = self.get(layer, up.unit, SweepDirection::Down)?;
                Some((up.unit, relative_rms_difference(&up.amplitudes, &down.amplitudes)))
            })
            .collect()
    }

    /// Up-sweep class counts on `layer`, in `[silent, low, mid, high, broad]` order.
    pub fn class_counts(&self, layer: usize) -> [usize; 5] {
        let mut c = [0; 5];
        for p in self.profiles.iter().filter(|p| p.layer == layer && p.direction == SweepDirection::Up) {
            c[p.class as usize] += 1;
        }
        c
    }
}

/// Amplitude-per-volume profiles of every unit for an up and a down sweep
/// rendered back to back.
pub fn selectivity_profiles(params: &NetworkParams, spec: &SweepSpec) -> Result<SelectivityReport> {
    let cfg = *params.config();
    let (controls, split) = spec.controls();
    let mut gen = Generator::primed(&cfg, spec.prime_seed);
    let trace = render_with(params, &mut gen, controls, true)?.trace.expect("captured");
    Ok(selectivity_from_trace(&trace, split, spec))
}

/// Profiles from an existing trace whose first `split` samples are the
/// up sweep.
pub fn selectivity_from_trace(trace: &HiddenTrace, split: usize, spec: &SweepSpec) -> SelectivityReport {
    let volume = &trace.controls().volume;
    let mut profiles = Vec::new();
    for layer in 0..trace.n_layers() {
        for unit in 0..trace.hidden() {
            let s = trace.unit(layer, unit);
            for (dir, range) in [(SweepDirection::Up, 0..split), (SweepDirection::Down, split..s.len())] {
                let amps = amplitude_profile(&s[range.clone()], &volume[range], spec.n_bins, spec.v_lo, spec.v_hi);
                profiles.push(profile(layer, unit, dir, amps));
            }
        }
    }
    SelectivityReport { spec: *spec, profiles }
}

/// Short-window oscillation level: `(center sample, amplitude)` per hop,
/// with amplitude `sqrt(2) * rms` of the mean-removed window.
pub fn short_window_levels(series: &[f64]) -> Vec<(f64, f64)> {
    if series.len() < SHORT_WINDOW {
        return Vec::new();
    }
    (0..=(series.len() - SHORT_WINDOW) / SHORT_HOP)
        .map(|j| {
            let w = &series[j * SHORT_HOP..j * SHORT_HOP + SHORT_WINDOW];
            let mean = w.iter().sum::<f64>() / SHORT_WINDOW as f64;
            let ms = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / SHORT_WINDOW as f64;
            ((j * SHORT_HOP) as f64 + 0.5 * (SHORT_WINDOW - 1) as f64, libm::sqrt(2.0 * ms))
        })
        .collect()
}

/// Smallest eventual amplitude change counted as a reaction.
pub const MIN_REACTION_CHANGE: f64 = 0.01;

/// Samples from `edge` until the unit's short-window level has covered
/// half of its eventual change, or `None` if it barely changes.
///
/// The level before the edge is averaged over the 256 samples preceding
/// it; the eventual level over the second half of `[edge, end)`. Progress
/// is measured in mean-square terms, which places the crossing of an
/// abrupt amplitude step at the step itself regardless of the two levels.
pub fn reaction_time(series: &[f64], edge: usize, end: usize) -> Option<f64> {
    let levels = short_window_levels(&series[..end.min(series.len())]);
    let w = SHORT_WINDOW as f64;
    let mean_sq = |sel: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = levels.iter().filter(|(c, _)| sel(*c)).map(|(_, a)| a * a).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let e = edge as f64;
    let pre = mean_sq(&|c| c + w / 2.0 <= e && c - w / 2.0 >= e - 256.0)?;
    let settle = e + 0.5 * (end as f64 - e);
    let post = mean_sq(&|c| c - w / 2.0 >= settle)?;
    if (libm::sqrt(post) - libm::sqrt(pre)).abs() < MIN_REACTION_CHANGE {
        return None;
    }
    let change = post - pre;
    let mut prev: Option<(f64, f64)> = None;
    for &(c, a) in levels.iter().filter(|(c, _)| c + w / 2.0 > e) {
        let frac = (a * a - pre) / change;
        if frac > 0.5 {
            let t = match prev {
                Some((pc, pf)) if frac > pf => pc + (0.5 - pf) / (frac - pf) * (c - pc),
                _ => c,
            };
            return Some((t - e).max(0.0));
        }
        prev = Some((c, frac));
    }
    None
}

/// Reaction times of every unit to each parameter edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientMap {
    pub edges: Vec<usize>,
    /// Indexed `[layer * hidden + unit][edge]`.
    pub reactions: Vec<Vec<Option<f64>>>,
    pub n_layers: usize,
    pub hidden: usize,
}

/// A reaction within one short window counts as immediate.
pub const IMMEDIATE_SAMPLES: f64 = SHORT_WINDOW as f64;

impl TransientMap {
    pub fn from_trace(trace: &HiddenTrace, edges: &[usize]) -> Self {
        let mut reactions = Vec::with_capacity(trace.n_layers() * trace.hidden());
        for layer in 0..trace.n_layers() {
            for unit in 0..trace.hidden() {
                let s = trace.unit(layer, unit);
                let r = edges.iter().enumerate().map(|(i, &e)| reaction_time(&s, e, edges.get(i + 1).copied().unwrap_or(s.len()))).collect();
                reactions.push(r);
            }
        }
        TransientMap { edges: edges.to_vec(), reactions, n_layers: trace.n_layers(), hidden: trace.hidden() }
    }

    pub fn reaction(&self, layer: usize, unit: usize, edge: usize) -> Option<f64> {
        self.reactions[layer * self.hidden + unit][edge]
    }

    /// Units on `layer` reacting to `edge` within [`IMMEDIATE_SAMPLES`].
    pub fn immediate_count(&self, layer: usize, edge: usize) -> usize {
        (0..self.hidden).filter(|&u| self.reaction(layer, u, edge).is_some_and(|t| t <= IMMEDIATE_SAMPLES)).count()
    }
}

/// Renders the onset/offset preset and maps every unit's reaction times.
pub fn transient_response_map(params: &NetworkParams, prime_seed: u64, sample_rate: u32) -> Result<(HiddenTrace, TransientMap)> {
    let setup = crate::generate::Preset::Fig7.build(sample_rate);
    let r = crate::generate::render(params, &setup.schedule, setup.duration, prime_seed, true, sample_rate)?;
    let trace = r.trace.expect("captured");
    let edges: Vec<usize> = setup.edges.iter().map(|&t| samples_for(t, sample_rate)).collect();
    let map = TransientMap::from_trace(&trace, &edges);
    Ok((trace, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn sine(n: usize, amp: f64, dc: f64, freq: f64) -> Vec<f64> {
        (0..n).map(|i| amp * libm::sin(2.0 * PI * freq * i as f64 / 16_000.0) + dc).collect()
    }

    #[test]
    fn clean_sine_stats() {
        for n in [200, 1000, 16_000] {
            let s = unit_stats(&sine(n, 0.3, 0.1, 466.16)).unwrap();
            assert!((s.osc_amplitude - 0.3).abs() <= 0.003, "{n}: {s:?}");
            assert!((s.dc_offset - 0.1).abs() <= 0.001, "{n}: {s:?}");
            assert!((s.period.unwrap() - 16_000.0 / 466.16).abs() <= 0.5, "{n}: {s:?}");
        }
    }

    fn gaussian_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (u1, u2): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
                sigma * libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
            })
            .collect()
    }

    #[test]
    fn noisy_sine_stats() {
        // 20 dB below the sine's power of 0.3^2 / 2
        let sigma = libm::sqrt(0.045 / 100.0);
        for seed in 0..5 {
            let noise = gaussian_noise(16_000, sigma, seed);
            let x: Vec<f64> = sine(16_000, 0.3, 0.1, 466.16).iter().zip(&noise).map(|(a, b)| a + b).collect();
            let s = unit_stats(&x).unwrap();
            assert!((s.osc_amplitude - 0.3).abs() <= 0.003, "{s:?}");
            assert!((s.dc_offset - 0.1).abs() <= 0.001, "{s:?}");
            assert!((s.period.unwrap() - 16_000.0 / 466.16).abs() <= 0.5, "{s:?}");
        }
    }

    #[test]
    fn capture_matches_forward() {
        use crate::codec::ControlFrame;
        use crate::nn::{forward, HiddenState, NetConfig};
        let cfg = NetConfig { n_layers: 3, hidden: 5, in_dim: 4, out_dim: 256 };
        let p = NetworkParams::init(cfg, 8);
        let controls: Vec<Controls> = (0..300).map(|i| Controls::new(0.5, if i < 100 { 0.0 } else { 0.7 }, 1.0)).collect();
        let mut g = Generator::primed(&cfg, 4);
        let first = g.state.last_code;
        let r = render_with(&p, &mut g, controls.clone(), true).unwrap();
        let trace = r.trace.unwrap();
        let mut state = HiddenState::zeros(&cfg);
        let mut prev = first;
        for (t, c) in controls.iter().enumerate() {
            let out = forward(&p, &ControlFrame::new(prev, c.pitch, c.volume, c.instrument), &state, false).unwrap();
            state = out.state;
            assert_eq!(state.as_slice(), trace.step(t));
            prev = r.codes[t];
        }
    }

    #[test]
    fn constant_and_short() {
        let s = unit_stats(&[0.4; 300]).unwrap();
        assert_eq!(s.osc_amplitude, 0.0);
        assert_eq!(s.period, None);
        assert!((s.dc_offset - 0.4).abs() < 1e-12);
        assert!(matches!(unit_stats(&[0.0; 199]), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn saturated_two_sample_alternation() {
        // a unit pinned near -1 that flips by ~1e-7 every sample
        let x: Vec<f64> = (0..6400).map(|i| if i % 2 == 0 { -0.99999991 } else { -0.99999997 }).collect();
        let s = unit_stats(&x).unwrap();
        assert!((s.period.unwrap() - 2.0).abs() < 1e-6, "{s:?}");
        assert!((s.osc_amplitude - 3e-8).abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn short_period_amplitude() {
        // interpolation error grows quickly below ~8 samples per period
        for (freq, tol) in [(932.3, 0.005), (1318.5, 0.005), (2637.0, 0.01)] {
            let s = unit_stats(&sine(6400, 0.5, 0.0, freq)).unwrap();
            assert!((s.period.unwrap() - 16_000.0 / freq).abs() < 0.05, "{freq}: {s:?}");
            assert!((s.osc_amplitude - 0.5).abs() <= tol, "{freq}: {s:?}");
        }
    }

    #[test]
    fn period_bounds() {
        // period is searched only up to half the window
        let s = unit_stats(&sine(200, 0.3, 0.0, 50.0)).unwrap();
        assert!(s.period.is_none_or(|p| (2.0..=100.0).contains(&p)));
    }

    #[test]
    fn gaussian_bump_profile() {
        let n = 32_000;
        let v0 = 0.3675; // center of bin 10 of 20 over [0, 0.7]
        let sigma = 0.07;
        let vol: Vec<f64> = (0..n).map(|i| 0.7 * i as f64 / (n - 1) as f64).collect();
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let a = libm::exp(-(vol[i] - v0).powi(2) / (2.0 * sigma * sigma));
                0.5 * a * libm::sin(2.0 * PI * i as f64 / 34.3)
            })
            .collect();
        let amps = amplitude_profile(&s, &vol, 20, 0.0, 0.7);
        let p = profile(0, 0, SweepDirection::Up, amps);
        assert_eq!(p.peak_bin, 10);
        let fwhm_bins = 2.0 * (2.0 * libm::log(2.0)).sqrt() * sigma / 0.035;
        assert!((p.bandwidth - fwhm_bins).abs() <= 1.0, "{} vs {fwhm_bins}", p.bandwidth);
        assert_eq!(p.class, SelectivityClass::Mid);
    }

    #[test]
    fn reaction_fixture() {
        let n = 8000;
        let switch = 3000;
        let s: Vec<f64> = (0..n).map(|i| if i >= switch { 0.4 * libm::sin(2.0 * PI * i as f64 / 34.3) } else { 0.0 }).collect();
        let t = reaction_time(&s, switch, n).unwrap();
        assert!(t <= 16.0, "{t}");
        assert_eq!(reaction_time(&[0.0; 4000], 1000, 4000), None);
    }

    #[test]
    fn class_rules() {
        let flat = vec![0.2; 20];
        assert_eq!(profile(0, 0, SweepDirection::Up, flat).class, SelectivityClass::Broad);
        assert_eq!(profile(0, 0, SweepDirection::Up, vec![0.001; 20]).class, SelectivityClass::Silent);
        let mut low = vec![0.0; 20];
        low[1] = 0.3;
        low[2] = 0.2;
        assert_eq!(profile(0, 0, SweepDirection::Up, low).class, SelectivityClass::Low);
        let mut high = vec![0.0; 20];
        high[19] = 0.3;
        let p = profile(0, 0, SweepDirection::Up, high);
        assert_eq!((p.class, p.peak_bin), (SelectivityClass::High, 19));
    }

    #[test]
    fn expected_periods() {
        assert!((expected_period(6, 1, 16_000).unwrap() - 34.32).abs() < 0.01);
        assert!((expected_period(0, 1, 16_000).unwrap() - 48.54).abs() < 0.01);
        assert!((expected_period(6, 2, 16_000).unwrap() - 17.16).abs() < 0.01);
    }
}
