//! Control score text files: one `time_sec pitch volume instrument` event
//! per line, `#` starts a comment.

use std::path::Path;

use transientsynth_core::generate::{ControlEvent, ControlSchedule, Controls};

use crate::error::{Error, IoContext, Result};

pub fn parse(text: &str, path: &Path) -> Result<ControlSchedule> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| err(i + 1, format!("not a number: {f:?}")))?;
        }
        if v[0] < 0.0 || !v[0].is_finite() {
            return Err(err(i + 1, "time must be a non-negative number".into()));
        }
        if let Some(prev) = events.last().map(|e: &ControlEvent| e.time) {
            if v[0] < prev {
                return Err(err(i + 1, format!("time {} precedes the previous event at {prev}", v[0])));
            }
        }
        let controls = Controls::new(v[1], v[2], v[3]);
        if !controls.in_range() {
            return Err(err(i + 1, "pitch, volume and instrument must lie in [0, 1]".into()));
        }
        events.push(ControlEvent { time: v[0], controls });
    }
    Ok(ControlSchedule::new(events)?)
}

pub fn load(path: &Path) -> Result<ControlSchedule> {
    parse(&std::fs::read_to_string(path).at(path)?, path)
}

/// Time of the last event, or zero for an empty score.
pub fn last_event_time(schedule: &ControlSchedule) -> f64 {
    schedule.events().last().map_or(0.0, |e| e.time)
}
