use proptest::prelude::*;
use transientsynth_core::generate::{render, ControlEvent, ControlSchedule, Controls, Preset};
use transientsynth_core::probe::{
    pitch_locking_report, selectivity_profiles, transient_response_map, LockingSpec, SelectivityClass, SweepDirection, SweepSpec,
};
use transientsynth_core::synth::{frames_from_audio, GridSpec, SegmentTiming};
use transientsynth_core::train::{SequenceRef, TrainConfig, Trainer};
use transientsynth_core::{NetConfig, NetworkParams, SAMPLE_RATE};

fn small() -> NetConfig {
    NetConfig { n_layers: 2, hidden: 8, ..NetConfig::default() }
}

#[test]
fn training_on_a_rendered_grid_lowers_the_loss() {
    let grid = GridSpec {
        n_pitches: 1,
        n_volumes: 1,
        timing: SegmentTiming { lead_silence: 0.005, steady: 0.02, tail_silence: 0.005 },
        ..GridSpec::default()
    };
    let seqs: Vec<_> = grid
        .descriptors()
        .iter()
        .map(|d| {
            let r = grid.render(d).unwrap();
            frames_from_audio(&r.audio, &r.tracks).unwrap()
        })
        .collect();
    let refs: Vec<_> = seqs.iter().map(|s| SequenceRef { frames: &s.frames, targets: &s.targets }).collect();
    let tc = TrainConfig { learning_rate: 3e-3, bptt_window: 64, max_epochs: 30, seed: 2, ..TrainConfig::default() };
    let mut t = Trainer::new(tc, NetworkParams::init(small(), 2)).unwrap();
    let mut losses = Vec::new();
    t.fit(&refs, |r| losses.push(r.mean_loss)).unwrap();
    assert_eq!(losses.len(), 30);
    let best_late = losses[25..].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best_late < 0.9 * losses[0], "{losses:?}");
    assert!(losses.iter().all(|l| l.is_finite()));
}

#[test]
fn renders_repeat_exactly_and_differ_by_seed() {
    let p = NetworkParams::init(NetConfig::default(), 8);
    let setup = Preset::Fig3a.build(SAMPLE_RATE);
    let a = render(&p, &setup.schedule, 0.2, 1, false, SAMPLE_RATE).unwrap();
    let b = render(&p, &setup.schedule, 0.2, 1, false, SAMPLE_RATE).unwrap();
    assert_eq!(a.codes, b.codes);
    assert_eq!(a.audio.len(), 3200);
    let empty = render(&p, &setup.schedule, 0.0, 1, false, SAMPLE_RATE).unwrap();
    assert!(empty.audio.is_empty());
}

#[test]
fn analyses_run_on_untrained_params() {
    let p = NetworkParams::init(NetConfig::default(), 4);
    let spec = LockingSpec { settle: 0.02, duration: 0.05, ..LockingSpec::default() };
    let rep = pitch_locking_report(&p, &[0, 6], &spec).unwrap();
    assert_eq!(rep.rows.len(), 2 * 160);
    assert_eq!(rep.pitches(), vec![0, 6]);

    let sweep = SweepSpec { up_duration: 0.2, down_duration: 0.2, ..SweepSpec::default() };
    let sel = selectivity_profiles(&p, &sweep).unwrap();
    let top = sel.get(3, 0, SweepDirection::Down).unwrap();
    assert_eq!(top.amplitudes.len(), sweep.n_bins);
    assert_eq!(sel.class_counts(3).iter().sum::<usize>(), 40);
    assert!(sel.profiles.iter().all(|p| p.class != SelectivityClass::Broad || p.bandwidth >= 0.6 * sweep.n_bins as f64));

    let (trace, map) = transient_response_map(&p, 0, SAMPLE_RATE).unwrap();
    assert_eq!(trace.len(), (Preset::Fig7.build(SAMPLE_RATE).duration * SAMPLE_RATE as f64).round() as usize);
    assert_eq!(map.edges.len(), 2);
    assert_eq!(map.reactions.len(), 160);
}

proptest! {
    #[test]
    fn schedule_sampling_holds_the_last_event(
        times in prop::collection::vec(0.0f64..0.05, 1..6),
        vols in prop::collection::vec(0.0f64..=1.0, 6),
    ) {
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let events: Vec<ControlEvent> = times
            .iter()
            .zip(&vols)
            .map(|(&t, &v)| ControlEvent { time: t, controls: Controls::new(0.5, v, 0.0) })
            .collect();
        let s = ControlSchedule::new(events.clone()).unwrap();
        let n = 1000;
        let c = s.sample(n, SAMPLE_RATE);
        prop_assert_eq!(c.len(), n);
        for (i, ci) in c.iter().enumerate() {
            let t = i as f64 / SAMPLE_RATE as f64;
            // last event at or before t, else the first event
            let want = events.iter().rev().find(|e| e.time <= t + 1e-9).unwrap_or(&events[0]);
            prop_assert_eq!(ci.volume, want.controls.volume);
        }
    }

    #[test]
    fn clamped_controls_are_in_range(p in -2.0f64..3.0, v in -2.0f64..3.0, i in -2.0f64..3.0) {
        let c = Controls { pitch: p, volume: v, instrument: i }.clamped();
        prop_assert!(c.in_range());
    }
}
