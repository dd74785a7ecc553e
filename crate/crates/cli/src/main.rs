//! Command-line front end for the event-camera surveillance pipeline.
//!
//! Three subcommands cover the experiment loop:
//!
//! * `synth`  - generate a labeled synthetic scene set (event files plus
//!   ground-truth track annotations, split into train/ and test/).
//! * `run`    - frames -> region proposals -> dataset -> training ->
//!   held-out evaluation; writes metrics, model and history files.
//! * `cost`   - emit the per-architecture compute/memory table as CSV.
//!
//! Every subcommand accepts a TOML config file; individual command-line
//! flags override single keys. Unknown config keys are rejected. Exit codes:
//! 0 success, 1 invalid usage or configuration, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use evscope_core::cost::{cost_report, CostConfig};
use evscope_core::dataset::Scene;
use evscope_core::formats::{
    read_annotations_file, read_events_binary_file, write_annotations_file,
    write_events_binary_file, EVENT_BINARY_MAGIC,
};
use evscope_core::metrics::write_metrics_json;
use evscope_core::nn::{build_architecture, write_history_csv, write_model, ArchLabel};
use evscope_core::pipeline::{run_on_dataset, RunConfig};
use evscope_core::scene::{scene_set, synthesize_scene, SceneSetParams};
use evscope_core::{
    ClassLabel, Error, Representation, RpSource, DATASET_FORMAT_VERSION, MODEL_FORMAT_VERSION,
};

fn version_string() -> String {
    format!(
        "{} (model format v{MODEL_FORMAT_VERSION}, dataset format v{DATASET_FORMAT_VERSION}, \
         event binary {})",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(EVENT_BINARY_MAGIC),
    )
}

#[derive(Parser)]
#[command(
    name = "evscope",
    version = version_string(),
    about = "Event-camera traffic surveillance pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled scene set.
    Synth(SynthArgs),
    /// Train on the scene set and evaluate on its held-out test scenes.
    Run(RunArgs),
    /// Report FLOPs and memory for the candidate architectures as CSV.
    Cost(CostArgs),
}

/// An error tagged with the pipeline stage it came from.
struct Failure {
    stage: &'static str,
    error: Error,
}

impl Failure {
    fn exit_code(&self) -> u8 {
        if self.error.is_validation() {
            1
        } else {
            2
        }
    }
}

trait WithStage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> WithStage<T> for evscope_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => synth(args),
        Command::Run(args) => run(args),
        Command::Cost(args) => cost(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error [{}]: {}", failure.stage, failure.error);
            ExitCode::from(failure.exit_code())
        }
    }
}

/// Reads and parses a TOML config file, rejecting unknown keys.
fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .stage("config")?;
    toml::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
        .stage("config")
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    seed: u64,
    train_scenes: usize,
    test_scenes: usize,
    tracks_per_class: usize,
    duration_us: u64,
    edge_event_rate: f64,
    noise_rate: f64,
    /// Classes to include; scenes drop objects of any other class.
    classes: Vec<ClassLabel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            train_scenes: 4,
            test_scenes: 1,
            tracks_per_class: 2,
            duration_us: 2_500_000,
            edge_event_rate: 200.0,
            noise_rate: 0.05,
            classes: ClassLabel::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// TOML config file; flags below override individual keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; train/ and test/ subdirectories are created.
    #[arg(long, default_value = "scenes")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    test_scenes: Option<usize>,
    #[arg(long)]
    tracks_per_class: Option<usize>,
    #[arg(long)]
    duration_us: Option<u64>,
    #[arg(long)]
    edge_event_rate: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => load_toml::<SynthConfig>(path)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.train_scenes {
        cfg.train_scenes = v;
    }
    if let Some(v) = args.test_scenes {
        cfg.test_scenes = v;
    }
    if let Some(v) = args.tracks_per_class {
        cfg.tracks_per_class = v;
    }
    if let Some(v) = args.duration_us {
        cfg.duration_us = v;
    }
    if let Some(v) = args.edge_event_rate {
        cfg.edge_event_rate = v;
    }
    if let Some(v) = args.noise_rate {
        cfg.noise_rate = v;
    }
    if cfg.train_scenes == 0 {
        return Err(Error::validation("train_scenes must be at least 1")).stage("config");
    }
    if cfg.classes.is_empty() {
        return Err(Error::validation("classes must not be empty")).stage("config");
    }

    let params = SceneSetParams {
        seed: cfg.seed,
        scene_count: cfg.train_scenes + cfg.test_scenes,
        tracks_per_class: cfg.tracks_per_class,
        duration: cfg.duration_us,
        edge_event_rate: cfg.edge_event_rate,
        noise_rate: cfg.noise_rate,
        ..SceneSetParams::default()
    };

    for (i, mut scene_cfg) in scene_set(&params).into_iter().enumerate() {
        scene_cfg.objects.retain(|o| cfg.classes.contains(&o.class));
        let (stream, tracks) = synthesize_scene(&scene_cfg).stage("synthesis")?;
        let (subdir, index) = if i < cfg.train_scenes {
            ("train", i)
        } else {
            ("test", i - cfg.train_scenes)
        };
        let dir = args.out.join(subdir);
        fs::create_dir_all(&dir).map_err(Error::from).stage("write")?;
        let stem = format!("scene_{index:03}");
        write_events_binary_file(&dir.join(format!("{stem}.evb")), &stream).stage("write")?;
        write_annotations_file(&dir.join(format!("{stem}.tracks.json")), &tracks)
            .stage("write")?;
    }
    println!(
        "wrote {} train and {} test scenes under {}",
        cfg.train_scenes,
        cfg.test_scenes,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run

fn parse_arch(s: &str) -> Result<ArchLabel, String> {
    ArchLabel::from_name(s).map_err(|_| {
        let labels: Vec<&str> = ArchLabel::ALL.iter().map(|l| l.name()).collect();
        format!("unknown architecture {s:?}; valid labels: {}", labels.join(", "))
    })
}

fn parse_rp(s: &str) -> Result<RpSource, String> {
    RpSource::from_name(s).map_err(|e| e.to_string())
}

fn parse_repr(s: &str) -> Result<Representation, String> {
    Representation::from_name(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file (same shape as the run configuration); flags
    /// override individual keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene directory produced by `synth` (holds train/ and test/).
    #[arg(long)]
    data: PathBuf,
    /// Region proposal source.
    #[arg(long, value_parser = parse_rp)]
    rp: Option<RpSource>,
    /// Frame representation fed to the classifier.
    #[arg(long, value_parser = parse_repr)]
    repr: Option<Representation>,
    /// Architecture label.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<ArchLabel>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Gradient worker threads (0 = all cores). Results do not depend on
    /// this.
    #[arg(long)]
    threads: Option<usize>,
    /// Run every stage single-threaded for reproducibility checks.
    #[arg(long)]
    strict_deterministic: bool,
    /// Output directory for metrics.json, model.json, model.bin,
    /// history.csv.
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
}

/// Loads every `*.evb` scene (with its `.tracks.json` sibling) in a
/// directory, sorted by file name.
fn read_scene_dir(dir: &Path) -> evscope_core::Result<Vec<Scene>> {
    let mut event_files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| {
        Error::validation(format!("cannot read scene directory {}: {e}", dir.display()))
    })? {
        let path = entry?.path();
        if path.extension().is_some_and(|ext| ext == "evb") {
            event_files.push(path);
        }
    }
    event_files.sort();
    let mut scenes = Vec::with_capacity(event_files.len());
    for path in event_files {
        let stream = read_events_binary_file(&path)?;
        let tracks = read_annotations_file(&path.with_extension("tracks.json"))?;
        scenes.push(Scene { stream, tracks });
    }
    Ok(scenes)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => load_toml::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.rp {
        cfg.dataset.rp_source = v;
    }
    if let Some(v) = args.repr {
        cfg.dataset.representation = v;
    }
    if let Some(v) = args.arch {
        cfg.arch = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.threads {
        cfg.train.threads = v;
    }
    if args.strict_deterministic {
        cfg.strict_deterministic = true;
    }

    let train_scenes = read_scene_dir(&args.data.join("train")).stage("load")?;
    let test_scenes = read_scene_dir(&args.data.join("test")).stage("load")?;
    let split = evscope_core::dataset::build_dataset(&train_scenes, &test_scenes, &cfg.dataset)
        .stage("dataset")?;
    let outcome = run_on_dataset(&split, &cfg).stage("train")?;

    fs::create_dir_all(&args.out).map_err(Error::from).stage("write")?;
    write_metrics_json(&args.out.join("metrics.json"), &outcome.metrics).stage("write")?;
    write_model(
        &outcome.network,
        &args.out.join("model.json"),
        &args.out.join("model.bin"),
    )
    .stage("write")?;
    write_history_csv(&args.out.join("history.csv"), &outcome.history).stage("write")?;

    println!(
        "{:.2}/{:.2} (per-sample/per-track balanced accuracy, %)",
        outcome.metrics.per_sample_balanced, outcome.metrics.per_track_balanced
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// cost

#[derive(Debug, Clone, Copy)]
enum CostArch {
    All,
    One(ArchLabel),
}

fn parse_cost_arch(s: &str) -> Result<CostArch, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(CostArch::All);
    }
    parse_arch(s).map(CostArch::One)
}

#[derive(Args)]
struct CostArgs {
    /// Square tile side for the tiled-execution memory model.
    #[arg(long, default_value_t = 21)]
    tile: usize,
    /// One architecture label, or "all" for the full table.
    #[arg(long, default_value = "all", value_parser = parse_cost_arch)]
    arch: CostArch,
    /// Input channels of the classifier trunk (2 with polarity, 1 without).
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cost(args: CostArgs) -> Result<(), Failure> {
    let labels: Vec<ArchLabel> = match args.arch {
        CostArch::All => ArchLabel::ALL.to_vec(),
        CostArch::One(label) => vec![label],
    };
    let cfg = CostConfig {
        tile: args.tile,
        ..CostConfig::default()
    };

    let mut csv = String::from(
        "label,flops,param_bytes,act_layerwise,total_layerwise,act_tiled,total_tiled\n",
    );
    for label in labels {
        let net = build_architecture(label, args.channels).stage("cost")?;
        let report = cost_report(&net, &cfg).stage("cost")?;
        let opt = |v: Option<u64>| v.map(|n| n.to_string()).unwrap_or_default();
        if report.act_bytes_tiled.is_none() {
            eprintln!(
                "note: {label} cannot run tiled at tile {} (the window shrinks to nothing \
                 mid-trunk); tiled columns left empty",
                args.tile
            );
        }
        csv.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            report.flops,
            report.param_bytes,
            report.act_bytes_layerwise,
            report.total_bytes_layerwise,
            opt(report.act_bytes_tiled),
            opt(report.total_bytes_tiled),
        ));
    }
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(Error::from).stage("write")?,
        None => print!("{csv}"),
    }
    Ok(())
}
