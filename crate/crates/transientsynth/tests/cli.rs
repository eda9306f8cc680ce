use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transientsynth")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = cli(&[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&cli(&["--help"])), 0);
    assert_eq!(code(&cli(&["--version"])), 0);
    assert_eq!(code(&cli(&["render", "--help"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["render", "--checkpoint", "m.ckpt", "--out", "a.wav", "--preset", "fig9"])), 1);
    // neither --preset nor --score
    assert_eq!(code(&cli(&["render", "--checkpoint", "m.ckpt", "--out", "a.wav"])), 1);
    assert_eq!(code(&cli(&["render", "--checkpoint", "m.ckpt", "--out", "a.wav", "--preset", "fig7", "--score", "s.txt"])), 1);
}

#[test]
fn runtime_failures_exit_2() {
    let o = cli(&["render", "--checkpoint", "/nonexistent/m.ckpt", "--out", "/tmp/never.wav", "--preset", "fig7"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert_eq!(code(&cli(&["--config", s(&bad), "bench", "--steps", "10"])), 2);
}

#[test]
fn bench_reports_throughput() {
    let o = cli(&["bench", "--steps", "2000"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("steps/s"));
}

#[test]
fn build_train_render_probe_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("run.json");
    fs::write(
        &config,
        r#"{"net": {"n_layers": 2, "hidden": 4},
            "train": {"max_epochs": 2, "bptt_window": 64, "seed": 3},
            "grid": {"n_pitches": 2, "n_volumes": 2, "lead_silence": 0.005, "steady": 0.01, "tail_silence": 0.005}}"#,
    )
    .unwrap();
    let data = d.join("data");
    let o = cli(&["--config", s(&config), "dataset", "build", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let train = |out: &Path| {
        let o = cli(&["--config", s(&config), "train", "--data", s(&data), "--out", s(out), "--log", s(&d.join("loss.csv"))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let ckpt = d.join("a.ckpt");
    let first = train(&ckpt);
    assert_eq!(first, train(&d.join("b.ckpt")), "training is not deterministic");
    let log = fs::read_to_string(d.join("loss.csv")).unwrap();
    assert!(log.starts_with("epoch,step,mean_loss,wall_time\n"));
    assert_eq!(log.lines().count(), 1 + 2 * 2);

    let render = |name: &str| {
        let wav = d.join(name);
        let o = cli(&[
            "render",
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&wav),
            "--preset",
            "fig7",
            "--seed",
            "4",
            "--trace",
            s(&d.join("t.csv")),
            "--heatmap",
            s(&d.join("h.png")),
            "--duration",
            "0.05",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(&wav).unwrap()
    };
    let a = render("a.wav");
    assert_eq!(a, render("b.wav"));
    assert_eq!(transientsynth::wav::read(&d.join("a.wav")).unwrap().len(), 800);
    let trace = fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 8 * 800);

    let score = d.join("s.score");
    fs::write(&score, "0 0.5 0 1\n0.01 0.5 0.7 1\n").unwrap();
    let o = cli(&["render", "--checkpoint", s(&ckpt), "--out", s(&d.join("s.wav")), "--score", s(&score)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(transientsynth::wav::read(&d.join("s.wav")).unwrap().len(), 8160);

    let probe = d.join("probe");
    let o = cli(&["probe", "--checkpoint", s(&ckpt), "--out", s(&probe), "--pitches", "0,12"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["locking_syntheven.csv", "locking_synthodd.csv", "profiles.csv", "profile_summary.csv", "reactions.csv", "fig7_heatmap.png"] {
        assert!(probe.join(f).exists(), "{f} missing");
    }

    let o = cli(&["bench", "--checkpoint", s(&ckpt), "--steps", "500"]);
    assert_eq!(code(&o), 0);
}
