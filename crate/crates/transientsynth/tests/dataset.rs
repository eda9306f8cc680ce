use std::fs;

use transientsynth::config::{GridSection, RunConfig};
use transientsynth::core::synth::ControlTracks;
use transientsynth::dataset::{self, parse_tracks_csv, tracks_csv, Manifest, MANIFEST_FILE};
use transientsynth::Error;

fn small_grid() -> GridSection {
    GridSection { n_pitches: 2, n_volumes: 3, lead_silence: 0.01, steady: 0.02, tail_silence: 0.01, ..GridSection::default() }
}

#[test]
fn build_writes_one_cell_per_instrument_pitch_volume() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build(&small_grid(), dir.path()).unwrap();
    assert_eq!(m.sequences.len(), 2 * 2 * 3);
    assert!(dir.path().join(MANIFEST_FILE).exists());
    for s in &m.sequences {
        assert!(dir.path().join(&s.audio).exists());
        assert!(dir.path().join(&s.tracks).exists());
        assert!(s.onset < s.offset);
    }
    let pitches: std::collections::BTreeSet<usize> = m.sequences.iter().map(|s| s.pitch_index).collect();
    assert_eq!(pitches.into_iter().collect::<Vec<_>>(), vec![0, 12]);
}

#[test]
fn built_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build(&small_grid(), dir.path()).unwrap();
    let d = dataset::load(dir.path()).unwrap();
    assert_eq!(d.manifest, m);
    assert_eq!(d.sequences.len(), m.sequences.len());
    for (seq, e) in d.sequences.iter().zip(&m.sequences) {
        // one frame per (previous sample, next sample) pair
        assert_eq!(seq.frames.len(), e.length - 1);
    }
}

#[test]
fn build_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = dataset::build(&small_grid(), a.path()).unwrap();
    dataset::build(&small_grid(), b.path()).unwrap();
    for s in &m.sequences {
        assert_eq!(fs::read(a.path().join(&s.audio)).unwrap(), fs::read(b.path().join(&s.audio)).unwrap());
    }
}

#[test]
fn missing_or_duplicated_cells_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build(&small_grid(), dir.path()).unwrap();

    let mut short: Manifest = m.clone();
    short.sequences.pop();
    assert!(matches!(short.check_grid(), Err(Error::DatasetMismatch(_))));

    let mut dup = m.clone();
    let first = dup.sequences[0].clone();
    *dup.sequences.last_mut().unwrap() = first;
    assert!(matches!(dup.check_grid(), Err(Error::DatasetMismatch(_))));

    let mut wrong = m.clone();
    wrong.grid.n_volumes = 4;
    assert!(matches!(wrong.check_grid(), Err(Error::DatasetMismatch(_))));

    // a manifest edited on disk is caught at load time
    fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&short).unwrap()).unwrap();
    assert!(matches!(dataset::load(dir.path()), Err(Error::DatasetMismatch(_))));
}

#[test]
fn truncated_audio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build(&small_grid(), dir.path()).unwrap();
    let s = &m.sequences[3];
    let path = dir.path().join(&s.audio);
    let audio = transientsynth::wav::read(&path).unwrap();
    transientsynth::wav::write(&path, &audio[..audio.len() - 10]).unwrap();
    assert!(matches!(dataset::load(dir.path()), Err(Error::DatasetMismatch(_))));
}

#[test]
fn tracks_csv_round_trip() {
    let t = ControlTracks { pitch: vec![0.5, 0.25], volume: vec![0.0, 0.7], instrument: vec![1.0, 1.0] };
    let text = tracks_csv(&t);
    assert!(text.starts_with("sample_index,pitch,volume,instrument\n"));
    let back = parse_tracks_csv(&text, "t.csv".as_ref()).unwrap();
    assert_eq!(back.pitch, t.pitch);
    assert_eq!(back.volume, t.volume);
    assert_eq!(back.instrument, t.instrument);

    assert!(parse_tracks_csv("pitch,volume\n", "t.csv".as_ref()).is_err());
    let err = parse_tracks_csv("sample_index,pitch,volume,instrument\n1,0,0,0\n", "t.csv".as_ref()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
}

#[test]
fn config_files_fill_missing_fields_and_reject_unknown_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"train": {"max_epochs": 3}, "grid": {"n_pitches": 2}}"#).unwrap();
    let c = RunConfig::load(&path).unwrap();
    assert_eq!(c.train.max_epochs, 3);
    assert_eq!(c.grid.n_pitches, 2);
    assert_eq!(c.net, RunConfig::default().net);

    fs::write(&path, r#"{"train": {"epochs": 3}}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Json { .. })));
}
