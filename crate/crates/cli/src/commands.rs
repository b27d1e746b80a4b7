use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use trajlift::io::{read_json, read_sequence, write_json, TracksRecord};
use trajlift::moteval::{evaluate, DEFAULT_THRESHOLDS};
use trajlift::synthgen::{self, GroundTruthRecord, ScenarioConfig};

use crate::config::{ConfigError, PipelineConfig};
use crate::pipeline::{self, Event, InstanceOutcome, MeasuredRecord, SmoothedRecord};
use crate::plot::plot_trajectories;

pub const MEASURED_DIR: &str = "measured";
pub const SMOOTHED_DIR: &str = "smoothed";
pub const TRACKS_FILE: &str = "tracks.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const PLOT_FILE: &str = "trajectories.svg";
pub const CONFIG_FILE: &str = "config.json";
pub const TIMESTAMPS_FILE: &str = "timestamps.json";

/// Failure of a subcommand, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<trajlift::io::IoError> for CliError {
    fn from(e: trajlift::io::IoError) -> Self {
        CliError::Data(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "trajlift",
    version,
    about = "Lift 2D instance masks to smoothed 3D object trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sequence with ground truth from a scenario file.
    Generate(GenerateArgs),
    /// Lift, cluster, register and smooth every instance of a sequence.
    Run(RunArgs),
    /// Lift, cluster and register only; writes measured trajectories.
    Register(RunArgs),
    /// Smooth the measured trajectories of an earlier `register` output.
    Smooth(SmoothArgs),
    /// Score predicted tracks against ground-truth tracks.
    Eval(EvalArgs),
    /// Draw the smoothed trajectories of a run as an SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Range gate for the emitted ground-truth tracks, in meters.
    #[arg(long, default_value_t = 80.0)]
    pub max_range: f64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pipeline configuration file (JSON); missing fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set register.iterations=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for per-instance stages; 0 uses every processor.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        Ok(PipelineConfig::load(self.config.as_deref(), &self.overrides)?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .context("cannot start worker pool")
            .map_err(CliError::Data)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Sequence directory (calibration.json plus frames/).
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    /// Output directory of an earlier `register` call.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth tracks file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted tracks file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Matching thresholds in meters, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    /// Where to write the CSV report; it is always printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Output directory of `run` or `smooth`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth record to draw underneath.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Run(a) => run(&a),
        Command::Register(a) => register(&a),
        Command::Smooth(a) => smooth(&a),
        Command::Eval(a) => eval(&a),
        Command::Plot(a) => plot(&a),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let scenario = synthgen::generate(&config).map_err(|e| CliError::Config(e.to_string()))?;
    synthgen::emit(&scenario, &args.out, args.max_range)?;
    log::info!("wrote {} frames to {}", scenario.frames.len(), args.out.display());
    Ok(())
}

fn instance_file(dir: &Path, sub: &str, id: u32) -> PathBuf {
    dir.join(sub).join(format!("{id:06}.json"))
}

fn write_events(path: &Path, events: &[Event]) -> anyhow::Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&trajlift::io::to_canonical_json(e, false)?);
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

fn write_measured(out: &Path, outcomes: &[InstanceOutcome]) -> Result<(), CliError> {
    for o in outcomes {
        if let Some(m) = &o.measured {
            write_json(&instance_file(out, MEASURED_DIR, m.id), m, true)?;
        }
    }
    Ok(())
}

fn write_smoothed(out: &Path, timestamps: &[f64], outcomes: &[InstanceOutcome]) -> Result<(), CliError> {
    let smoothed: Vec<SmoothedRecord> = outcomes.iter().filter_map(|o| o.smoothed.clone()).collect();
    for s in &smoothed {
        write_json(&instance_file(out, SMOOTHED_DIR, s.id), s, true)?;
    }
    let refs: Vec<&SmoothedRecord> = smoothed.iter().collect();
    let tracks = TracksRecord {
        frames: pipeline::predicted_tracks(timestamps, &refs),
    };
    write_json(&out.join(TRACKS_FILE), &tracks, true)?;
    let summary = pipeline::summarize(timestamps.len(), outcomes);
    write_json(&out.join(SUMMARY_FILE), &summary, true)?;
    plot_trajectories(&out.join(PLOT_FILE), &smoothed, None)?;
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let config = args.pipeline.load()?;
    let pool = args.pipeline.pool()?;
    let sequence = read_sequence(&args.sequence)?;
    let timestamps = sequence.timestamps();
    let output = pool.install(|| pipeline::run(&sequence, &config));

    write_json(&args.out.join(CONFIG_FILE), &config, true)?;
    write_json(&args.out.join(TIMESTAMPS_FILE), &timestamps, false)?;
    write_measured(&args.out, &output.outcomes)?;
    write_smoothed(&args.out, &timestamps, &output.outcomes)?;
    write_events(&args.out.join(EVENTS_FILE), &output.events)?;
    let s = &output.summary;
    log::info!(
        "{} instances, {} smoothed, {} static, {} failed, {} measurements rejected",
        s.instances,
        s.smoothed,
        s.static_count,
        s.failed.len(),
        s.rejected_measurements
    );
    Ok(())
}

pub fn register(args: &RunArgs) -> Result<(), CliError> {
    let config = args.pipeline.load()?;
    let pool = args.pipeline.pool()?;
    let sequence = read_sequence(&args.sequence)?;
    let (outcomes, events) = pool.install(|| pipeline::register_sequence(&sequence, &config));

    write_json(&args.out.join(CONFIG_FILE), &config, true)?;
    write_json(&args.out.join(TIMESTAMPS_FILE), &sequence.timestamps(), false)?;
    write_measured(&args.out, &outcomes)?;
    write_events(&args.out.join(EVENTS_FILE), &events)?;
    Ok(())
}

fn read_measured(dir: &Path) -> anyhow::Result<Vec<MeasuredRecord>> {
    let measured = dir.join(MEASURED_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&measured)
        .with_context(|| format!("cannot list {}", measured.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths.iter().map(|p| Ok(read_json(p)?)).collect()
}

pub fn smooth(args: &SmoothArgs) -> Result<(), CliError> {
    let config = args.pipeline.load()?;
    let pool = args.pipeline.pool()?;
    let timestamps: Vec<f64> = read_json(&args.input.join(TIMESTAMPS_FILE))?;
    let mut outcomes: Vec<InstanceOutcome> = read_measured(&args.input)?
        .into_iter()
        .map(|m| InstanceOutcome {
            id: trajlift::InstanceId(m.id),
            label: m.label.clone(),
            observations: m.measurements.len() + m.failures.len(),
            measured: Some(m),
            smoothed: None,
            error: None,
        })
        .collect();
    let events = pool.install(|| pipeline::smooth_outcomes(&mut outcomes, &config));

    write_json(&args.out.join(CONFIG_FILE), &config, true)?;
    write_json(&args.out.join(TIMESTAMPS_FILE), &timestamps, false)?;
    write_smoothed(&args.out, &timestamps, &outcomes)?;
    write_events(&args.out.join(EVENTS_FILE), &events)?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.thresholds.is_empty() || args.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(CliError::Config("thresholds: must be positive".into()));
    }
    let gt: TracksRecord = read_json(&args.gt)?;
    let pred: TracksRecord = read_json(&args.pred)?;
    let report = evaluate(&gt.frames, &pred.frames, &args.thresholds).map_err(anyhow::Error::from)?;
    let csv = report.to_csv();
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).context("cannot create report directory")?;
        }
        fs::write(out, &csv).with_context(|| format!("cannot write {}", out.display()))?;
    }
    std::io::stdout()
        .write_all(csv.as_bytes())
        .context("cannot write to stdout")?;
    Ok(())
}

pub fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let dir = args.run.join(SMOOTHED_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .context("cannot list smoothed trajectories")?;
    paths.sort();
    let smoothed = paths
        .iter()
        .map(|p| read_json::<SmoothedRecord>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Option<GroundTruthRecord> = args.ground_truth.as_deref().map(read_json).transpose()?;
    plot_trajectories(&args.out, &smoothed, truth.as_ref())?;
    Ok(())
}
