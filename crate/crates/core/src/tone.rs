//! Measurements on generated audio: fundamental frequency, steady-state
//! level and step-response timing.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::MuLawCode;
use crate::error::Result;
use crate::generate::{render, ControlEvent, ControlSchedule, Controls};
use crate::nn::NetworkParams;
use crate::probe::{short_window_levels, unit_stats};
use crate::synth::samples_for;

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

/// Fundamental frequency from the first autocorrelation peak, if any.
pub fn fundamental_hz(audio: &[f64], sample_rate: u32) -> Option<f64> {
    let s = unit_stats(audio).ok()?;
    s.period.map(|p| f64::from(sample_rate) / p)
}

/// Longest run of consecutive codes pinned at 0 or 255.
pub fn longest_saturated_run(codes: &[MuLawCode]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut last = None;
    for c in codes {
        if c.0 == 0 || c.0 == 255 {
            run = if last == Some(c.0) { run + 1 } else { 1 };
            last = Some(c.0);
            best = best.max(run);
        } else {
            run = 0;
            last = None;
        }
    }
    best
}

/// Audio of a held note after `settle` seconds of silence then `settle`
/// seconds of settling; `measure` seconds are returned.
pub fn steady_tone(params: &NetworkParams, controls: Controls, settle: f64, measure: f64, prime_seed: u64, sample_rate: u32) -> Result<Vec<f64>> {
    let lead = 0.02;
    let schedule = ControlSchedule::new(vec![
        ControlEvent { time: 0.0, controls: Controls { volume: 0.0, ..controls } },
        ControlEvent { time: lead, controls },
    ])?;
    let skip = samples_for(lead + settle, sample_rate);
    let r = render(params, &schedule, lead + settle + measure, prime_seed, false, sample_rate)?;
    Ok(r.audio[skip.min(r.audio.len())..].to_vec())
}

/// Timing of a note switched on and off abruptly, in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    /// Steady short-window amplitude while the note is held.
    pub level: f64,
    /// 10 % to 90 % of `level` after the onset.
    pub rise: Option<f64>,
    /// 90 % to 10 % of `level` after the offset.
    pub fall: Option<f64>,
    /// Short-window amplitude envelope: `(center sample, amplitude)`.
    pub envelope: Vec<(f64, f64)>,
}

/// Durations of the segments in [`step_response`].
pub const STEP_LEAD: f64 = 0.05;
pub const STEP_HOLD: f64 = 0.3;
pub const STEP_TAIL: f64 = 0.3;

fn crossing(env: &[(f64, f64)], from: f64, to: f64, above: bool, thr: f64) -> Option<f64> {
    env.iter().filter(|(c, _)| *c >= from && *c < to).find(|(_, a)| if above { *a >= thr } else { *a <= thr }).map(|(c, _)| *c)
}

pub fn step_response(params: &NetworkParams, pitch: f64, instrument: f64, volume: f64, prime_seed: u64, sample_rate: u32) -> Result<StepResponse> {
    let schedule = ControlSchedule::new(vec![
        ControlEvent { time: 0.0, controls: Controls::new(pitch, 0.0, instrument) },
        ControlEvent { time: STEP_LEAD, controls: Controls::new(pitch, volume, instrument) },
        ControlEvent { time: STEP_LEAD + STEP_HOLD, controls: Controls::new(pitch, 0.0, instrument) },
    ])?;
    let r = render(params, &schedule, STEP_LEAD + STEP_HOLD + STEP_TAIL, prime_seed, false, sample_rate)?;
    let env = short_window_levels(&r.audio);
    let on = samples_for(STEP_LEAD, sample_rate) as f64;
    let off = samples_for(STEP_LEAD + STEP_HOLD, sample_rate) as f64;
    let end = r.audio.len() as f64;
    // steady level over the second half of the hold
    let held: Vec<f64> = env.iter().filter(|(c, _)| *c - 32.0 >= 0.5 * (on + off) && *c + 32.0 <= off).map(|(_, a)| *a).collect();
    let level = if held.is_empty() { 0.0 } else { held.iter().sum::<f64>() / held.len() as f64 };
    if level <= 0.0 {
        return Ok(StepResponse { level, rise: None, fall: None, envelope: env });
    }
    let rise = match (crossing(&env, on, off, true, 0.1 * level), crossing(&env, on, off, true, 0.9 * level)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let fall = match (crossing(&env, off, end, false, 0.9 * level), crossing(&env, off, end, false, 0.1 * level)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(StepResponse { level, rise, fall, envelope: env })
}
