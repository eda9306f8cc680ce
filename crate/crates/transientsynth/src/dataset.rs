//! On-disk training grid: `manifest.json`, one WAV per cell and a matching
//! `.tracks.csv` with columns `sample_index,pitch,volume,instrument`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transientsynth_core::synth::{frames_from_audio, ControlTracks, InstrumentSpec, TrainingSequence};

use crate::config::GridSection;
use crate::error::{Error, IoContext, Result};
use crate::wav;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentEntry {
    pub name: String,
    pub partials: Vec<(u32, f64)>,
    pub attack_slope: f64,
    pub decay_slope: f64,
    pub param: f64,
}

impl From<&InstrumentSpec> for InstrumentEntry {
    fn from(s: &InstrumentSpec) -> Self {
        InstrumentEntry {
            name: s.name.clone(),
            partials: s.partials.clone(),
            attack_slope: s.attack_slope,
            decay_slope: s.decay_slope,
            param: s.param,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub audio: String,
    pub tracks: String,
    pub instrument: usize,
    pub pitch_index: usize,
    pub volume_index: usize,
    pub volume: f64,
    pub base_volume: f64,
    pub onset: f64,
    pub offset: f64,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub sample_rate: u32,
    pub grid: GridSection,
    pub instruments: Vec<InstrumentEntry>,
    pub sequences: Vec<SequenceEntry>,
}

fn file_stem(instrument: &str, pitch: usize, volume: usize) -> String {
    format!("seq_{}_{pitch:02}_{volume:02}", instrument.to_lowercase())
}

pub fn tracks_csv(tracks: &ControlTracks) -> String {
    let mut s = String::from("sample_index,pitch,volume,instrument\n");
    for i in 0..tracks.len() {
        let _ = writeln!(s, "{i},{},{},{}", tracks.pitch[i], tracks.volume[i], tracks.instrument[i]);
    }
    s
}

pub fn parse_tracks_csv(text: &str, path: &Path) -> Result<ControlTracks> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "sample_index,pitch,volume,instrument" => {}
        _ => return Err(err(1, "missing header sample_index,pitch,volume,instrument".into())),
    }
    let mut t = ControlTracks { pitch: Vec::new(), volume: Vec::new(), instrument: Vec::new() };
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err(i + 1, format!("expected 4 columns, found {}", f.len())));
        }
        let idx: usize = f[0].trim().parse().map_err(|_| err(i + 1, format!("bad sample index {:?}", f[0])))?;
        if idx != t.len() {
            return Err(err(i + 1, format!("sample index {idx} out of order")));
        }
        let mut v = [0.0; 3];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = s.trim().parse().map_err(|_| err(i + 1, format!("not a number: {s:?}")))?;
        }
        t.pitch.push(v[0]);
        t.volume.push(v[1]);
        t.instrument.push(v[2]);
    }
    Ok(t)
}

/// Renders every grid cell into `out_dir` and writes the manifest.
pub fn build(grid: &GridSection, out_dir: &Path) -> Result<Manifest> {
    let spec = grid.to_spec();
    spec.validate()?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut sequences = Vec::new();
    for d in spec.descriptors() {
        let r = spec.render(&d)?;
        let inst = &spec.instruments[d.instrument];
        let stem = file_stem(&inst.name, d.pitch_index, d.volume_index);
        let audio = format!("{stem}.wav");
        let tracks = format!("{stem}.tracks.csv");
        wav::write(&out_dir.join(&audio), &r.audio)?;
        let tpath = out_dir.join(&tracks);
        fs::write(&tpath, tracks_csv(&r.tracks)).at(&tpath)?;
        log::debug!("wrote {audio} ({} samples)", r.audio.len());
        sequences.push(SequenceEntry {
            audio,
            tracks,
            instrument: d.instrument,
            pitch_index: d.pitch_index,
            volume_index: d.volume_index,
            volume: d.volume,
            base_volume: d.base_volume,
            onset: r.event.onset,
            offset: r.event.offset,
            length: r.audio.len(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        sample_rate: spec.sample_rate,
        grid: grid.clone(),
        instruments: spec.instruments.iter().map(InstrumentEntry::from).collect(),
        sequences,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json { path: path.clone(), source })?;
    fs::write(&path, json).at(&path)?;
    Ok(manifest)
}

/// A loaded dataset ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub sequences: Vec<TrainingSequence>,
}

impl Manifest {
    /// Checks that the sequences cover the declared grid exactly once.
    pub fn check_grid(&self) -> Result<()> {
        let spec = self.grid.to_spec();
        let mismatch = |m: String| Err(Error::DatasetMismatch(m));
        if self.format != MANIFEST_FORMAT {
            return mismatch(format!("manifest format {} unsupported", self.format));
        }
        if self.sample_rate != transientsynth_core::SAMPLE_RATE {
            return mismatch(format!("sample rate {} Hz", self.sample_rate));
        }
        let want = self.instruments.len() * spec.n_pitches * spec.n_volumes;
        if self.sequences.len() != want {
            return mismatch(format!("{} sequences listed, grid needs {want}", self.sequences.len()));
        }
        let pitches: BTreeSet<usize> = spec.pitch_indices().into_iter().collect();
        let mut seen = BTreeSet::new();
        for s in &self.sequences {
            if s.instrument >= self.instruments.len() || !pitches.contains(&s.pitch_index) || s.volume_index >= spec.n_volumes {
                return mismatch(format!("{} lies outside the grid", s.audio));
            }
            if !seen.insert((s.instrument, s.pitch_index, s.volume_index)) {
                return mismatch(format!("{} duplicates a grid cell", s.audio));
            }
        }
        Ok(())
    }
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
    manifest.check_grid()?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for s in &manifest.sequences {
        let audio = wav::read(&dir.join(&s.audio))?;
        let tpath = dir.join(&s.tracks);
        let tracks = parse_tracks_csv(&fs::read_to_string(&tpath).at(&tpath)?, &tpath)?;
        if audio.len() != s.length || tracks.len() != s.length {
            return Err(Error::DatasetMismatch(format!("{}: manifest length {}, audio {}, tracks {}", s.audio, s.length, audio.len(), tracks.len())));
        }
        sequences.push(frames_from_audio(&audio, &tracks)?);
    }
    Ok(Dataset { dir: dir.to_owned(), manifest, sequences })
}
