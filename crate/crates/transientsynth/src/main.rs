use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use transientsynth::config::RunConfig;
use transientsynth::core::generate::{self, Preset};
use transientsynth::core::probe::{self, LockingSpec, SweepSpec};
use transientsynth::core::synth::InstrumentSpec;
use transientsynth::core::{NetworkParams, SAMPLE_RATE};
use transientsynth::training::TrainOutputs;
use transientsynth::{checkpoint, dataset, export, score, server, wav, Result};

/// Conditioned GRU sample synthesizer: build data, train, render, probe and play.
#[derive(Debug, Parser)]
#[command(name = "transientsynth", version, arg_required_else_help = true)]
struct Cli {
    /// JSON run configuration (network, training and grid settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Render a preset or control score to a WAV file.
    Render(RenderArgs),
    /// Run the hidden-unit analyses and write CSV/PNG results.
    Probe(ProbeArgs),
    /// Serve live play over WebSocket.
    Serve(ServeArgs),
    /// Measure single-threaded generation throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Render the training grid to a directory.
    Build {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Append per-epoch losses to this CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// fig3a | fig3b | fig3c | fig7 | sweep
    #[arg(long, conflicts_with = "score", required_unless_present = "score",
          value_parser = ["fig3a", "fig3b", "fig3c", "fig7", "sweep"])]
    preset: Option<String>,
    /// Control score: lines of `time_sec pitch volume instrument`.
    #[arg(long)]
    score: Option<PathBuf>,
    /// Seconds to render (defaults to the preset length, or 0.5 s past the last score event).
    #[arg(long)]
    duration: Option<f64>,
    /// Seed of the single random priming sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every hidden unit's activations as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write a units x time heatmap PNG.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    decimation: usize,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Semitone indices for the pitch-locking report.
    #[arg(long, value_delimiter = ',', default_value = "0,6,12")]
    pitches: Vec<usize>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialized network otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 64_000)]
    steps: usize,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Dataset { action: DatasetCommand::Build { out } } => {
            let m = dataset::build(&config.grid, &out)?;
            println!("wrote {} sequences to {}", m.sequences.len(), out.display());
        }
        Command::Train(a) => {
            let mut config = config;
            if let Some(s) = a.seed {
                config.train.seed = s;
            }
            if let Some(e) = a.epochs {
                config.train.max_epochs = e;
            }
            if let Some(t) = a.threads {
                config.train.threads = t;
            }
            let outputs = TrainOutputs { checkpoint: a.out.clone(), log: a.log };
            let s = transientsynth::training::train_dir(&config, &a.data, &outputs)?;
            let last = s.epochs.last().map_or(f64::NAN, |r| r.mean_loss);
            println!("trained {} epochs in {:.1}s, final loss {last:.4}; wrote {}", s.epochs.len(), s.seconds, a.out.display());
        }
        Command::Render(a) => {
            let params = checkpoint::load(&a.checkpoint)?;
            let (schedule, default_len) = match (&a.preset, &a.score) {
                (Some(name), _) => {
                    let p = Preset::parse(name).expect("clap restricts preset names");
                    let setup = p.build(SAMPLE_RATE);
                    (setup.schedule, setup.duration)
                }
                (None, Some(path)) => {
                    let s = score::load(path)?;
                    let len = score::last_event_time(&s) + 0.5;
                    (s, len)
                }
                (None, None) => unreachable!("clap requires one of --preset/--score"),
            };
            let duration = a.duration.unwrap_or(default_len);
            let capture = a.trace.is_some() || a.heatmap.is_some();
            let r = generate::render(&params, &schedule, duration, a.seed, capture, SAMPLE_RATE)?;
            wav::write(&a.out, &r.audio)?;
            if let Some(trace) = &r.trace {
                if let Some(p) = &a.trace {
                    export::write_text(p, &export::trace_csv(trace))?;
                }
                if let Some(p) = &a.heatmap {
                    export::write_png(p, &export::heatmap(trace, a.decimation))?;
                }
            }
            println!("rendered {} samples to {}", r.audio.len(), a.out.display());
        }
        Command::Probe(a) => probe_all(&checkpoint::load(&a.checkpoint)?, &a)?,
        Command::Serve(a) => {
            let params = Arc::new(checkpoint::load(&a.checkpoint)?);
            let addr = format!("{}:{}", a.host, a.port);
            let listener = std::net::TcpListener::bind(&addr).map_err(|source| transientsynth::Error::Io { path: addr.clone().into(), source })?;
            println!("serving on ws://{addr}");
            let opts = server::ServeOptions { prime_seed: a.seed, ..Default::default() };
            server::serve(listener, params, opts, Arc::new(AtomicBool::new(false)))?;
        }
        Command::Bench(a) => {
            let params = match &a.checkpoint {
                Some(p) => checkpoint::load(p)?,
                None => NetworkParams::init(config.net.to_config(), 0),
            };
            let b = transientsynth::bench(&params, a.steps)?;
            println!("{:.0} steps/s (real-time factor {:.2}) over {} steps", b.steps_per_second(), b.real_time_factor(), b.steps);
        }
    }
    Ok(())
}

fn probe_all(params: &NetworkParams, a: &ProbeArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|source| transientsynth::Error::Io { path: a.out.clone(), source })?;
    let n_layers = params.config().n_layers;
    for spec in InstrumentSpec::defaults() {
        let lspec = LockingSpec { instrument: spec.param, period_divisor: spec.period_divisor(), prime_seed: a.seed, ..LockingSpec::default() };
        let report = probe::pitch_locking_report(params, &a.pitches, &lspec)?;
        export::write_text(&a.out.join(format!("locking_{}.csv", spec.name.to_lowercase())), &export::locking_csv(&report))?;
        for &p in &a.pitches {
            let fr: Vec<String> = (0..n_layers).map(|l| report.lock_fraction(p, l).map_or("-".into(), |f| format!("{:.0}%", 100.0 * f))).collect();
            println!("{} pitch {p}: locked fraction per layer {}", spec.name, fr.join(" "));
        }
    }
    let sweep = SweepSpec { prime_seed: a.seed, ..SweepSpec::default() };
    let sel = probe::selectivity_profiles(params, &sweep)?;
    export::write_text(&a.out.join("profiles.csv"), &export::profiles_csv(&sel))?;
    export::write_text(&a.out.join("profile_summary.csv"), &export::profile_summary_csv(&sel))?;
    let top = n_layers - 1;
    let c = sel.class_counts(top);
    println!("layer {n_layers} classes: silent {} low {} mid {} high {} broad {}", c[0], c[1], c[2], c[3], c[4]);
    if let Some(f) = sel.positive_correlation_fraction(0) {
        println!("layer 1 units with amplitude rising with volume: {:.0}%", 100.0 * f);
    }
    let (trace, map) = probe::transient_response_map(params, a.seed, SAMPLE_RATE)?;
    export::write_text(&a.out.join("reactions.csv"), &export::reactions_csv(&map))?;
    export::write_png(&a.out.join("fig7_heatmap.png"), &export::heatmap(&trace, 16))?;
    for l in 0..n_layers {
        println!("layer {} immediate responders: onset {} offset {}", l + 1, map.immediate_count(l, 0), map.immediate_count(l, 1));
    }
    println!("wrote probe results to {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    transientsynth::init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
