//! CSV and PNG output for traces and probe results. Numbers are written
//! in Rust's shortest round-trip form, so CSVs are exact and byte-stable.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use transientsynth_core::probe::{HiddenTrace, LockingReport, SelectivityReport, SweepDirection, TransientMap, UnitStats};

use crate::error::{Error, IoContext, Result};

pub const TRACE_HEADER: &str = "layer,unit,sample_index,activation";
pub const STATS_HEADER: &str = "layer,unit,dc,amplitude,period";

/// Long-format trace: one row per (layer, unit, sample), layers and units 1-based.
pub fn trace_csv(trace: &HiddenTrace) -> String {
    let mut s = String::with_capacity(24 * trace.as_slice().len() + 64);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for l in 0..trace.n_layers() {
        for u in 0..trace.hidden() {
            for (t, v) in trace.unit(l, u).iter().enumerate() {
                let _ = writeln!(s, "{},{},{t},{v}", l + 1, u + 1);
            }
        }
    }
    s
}

/// Rows of a trace CSV: `(layer, unit, sample_index, activation)`.
pub fn parse_trace_csv(text: &str, path: &Path) -> Result<Vec<(usize, usize, usize, f64)>> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(TRACE_HEADER) {
        return Err(err(1, format!("expected header {TRACE_HEADER}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err(i + 1, format!("expected 4 columns, found {}", f.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| err(i + 1, format!("bad integer {s:?}")));
        let v = f[3].trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad number {:?}", f[3])))?;
        rows.push((int(f[0])?, int(f[1])?, int(f[2])?, v));
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |p| p.to_string())
}

/// `layer,unit,dc,amplitude,period` with an empty period when none was found.
pub fn stats_csv(rows: &[(usize, usize, UnitStats)]) -> String {
    let mut s = format!("{STATS_HEADER}\n");
    for (l, u, st) in rows {
        let _ = writeln!(s, "{},{},{},{},{}", l + 1, u + 1, st.dc_offset, st.osc_amplitude, opt(st.period));
    }
    s
}

pub fn locking_csv(report: &LockingReport) -> String {
    let mut s = String::from("pitch_index,layer,unit,dc,amplitude,period,expected_period,oscillating,locked\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.pitch_index,
            r.layer + 1,
            r.unit + 1,
            r.stats.dc_offset,
            r.stats.osc_amplitude,
            opt(r.stats.period),
            r.expected_period,
            r.oscillating(),
            r.locked()
        );
    }
    s
}

fn dir_name(d: SweepDirection) -> &'static str {
    match d {
        SweepDirection::Up => "up",
        SweepDirection::Down => "down",
    }
}

/// Per-bin amplitudes in long format.
pub fn profiles_csv(report: &SelectivityReport) -> String {
    let spec = &report.spec;
    let width = (spec.v_hi - spec.v_lo) / spec.n_bins as f64;
    let mut s = String::from("layer,unit,direction,bin,volume,amplitude\n");
    for p in &report.profiles {
        for (b, a) in p.amplitudes.iter().enumerate() {
            let v = spec.v_lo + (b as f64 + 0.5) * width;
            let _ = writeln!(s, "{},{},{},{b},{v},{a}", p.layer + 1, p.unit + 1, dir_name(p.direction));
        }
    }
    s
}

pub fn profile_summary_csv(report: &SelectivityReport) -> String {
    let mut s = String::from("layer,unit,direction,peak_bin,bandwidth,centroid,class\n");
    for p in &report.profiles {
        let _ =
            writeln!(s, "{},{},{},{},{},{},{}", p.layer + 1, p.unit + 1, dir_name(p.direction), p.peak_bin, p.bandwidth, p.centroid, p.class.name());
    }
    s
}

/// `layer,unit,edge,edge_sample,reaction_samples` with an empty reaction for none.
pub fn reactions_csv(map: &TransientMap) -> String {
    let mut s = String::from("layer,unit,edge,edge_sample,reaction_samples\n");
    for l in 0..map.n_layers {
        for u in 0..map.hidden {
            for (e, &edge) in map.edges.iter().enumerate() {
                let _ = writeln!(s, "{},{},{e},{edge},{}", l + 1, u + 1, opt(map.reaction(l, u, e)));
            }
        }
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).at(path)
}

/// Blue-white-red for `v` in `[-1, 1]`.
fn diverging(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if v >= 0.0 {
        [255, fade(v), fade(v)]
    } else {
        [fade(-v), fade(-v), 255]
    }
}

/// RGB image of `rows x cols` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub rgb: Vec<u8>,
}

/// One row per unit (layer-major), one column per `decimation` samples
/// (block mean), diverging colors, with the volume track drawn in black
/// across the full height.
pub fn heatmap(trace: &HiddenTrace, decimation: usize) -> Heatmap {
    let dec = decimation.max(1);
    let rows = trace.n_layers() * trace.hidden();
    let cols = trace.len() / dec;
    let mut rgb = vec![0u8; rows * cols * 3];
    let width = rows;
    for c in 0..cols {
        let mut acc = vec![0.0; width];
        for t in c * dec..(c + 1) * dec {
            for (a, v) in acc.iter_mut().zip(trace.step(t)) {
                *a += v;
            }
        }
        for (r, a) in acc.iter().enumerate() {
            let px = diverging(a / dec as f64);
            rgb[(r * cols + c) * 3..(r * cols + c) * 3 + 3].copy_from_slice(&px);
        }
        if rows > 0 {
            let v = trace.controls().volume[c * dec].clamp(0.0, 1.0);
            let r = ((1.0 - v) * (rows - 1) as f64).round() as usize;
            rgb[(r * cols + c) * 3..(r * cols + c) * 3 + 3].copy_from_slice(&[0, 0, 0]);
        }
    }
    Heatmap { rows, cols, rgb }
}

pub fn write_png(path: &Path, map: &Heatmap) -> Result<()> {
    let wrap = |source| Error::Png { path: path.to_owned(), source };
    let file = File::create(path).at(path)?;
    let empty = map.rows == 0 || map.cols == 0;
    // an empty map becomes a single white pixel
    let (w, h) = if empty { (1, 1) } else { (map.cols as u32, map.rows as u32) };
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(wrap)?;
    if empty {
        w.write_image_data(&[255, 255, 255]).map_err(wrap)
    } else {
        w.write_image_data(&map.rgb).map_err(wrap)
    }
}
