//! The `neckcare` command line.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O or configuration failure.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use crate::acoustic::{self, MatchedFilter, SampleBuffer};
use crate::alerts::{self, AlertEvent, AlertPolicy, AlertState};
use crate::config::RunSettings;
use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::eval::{self, BenchmarkConfig, Modality, SplitSpec};
use crate::features::{self, FeatureVector, WindowSpec};
use crate::forest::{self, RandomForestModel, TrainConfig};
use crate::fusion::{self, FusedRecord};
use crate::imu;
use crate::posture::PostureLabel;
use crate::simulator::{self, AcousticSceneConfig, SceneCondition};
use crate::wav;

#[derive(Debug, Parser)]
#[command(
    name = "neckcare",
    version,
    about = "Posture sensing from earbud IMU and acoustic ranging"
)]
pub struct Cli {
    /// Seed for every stochastic step [default: 42, or `seed` from --config]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Scenario file with `key = value` settings
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset (fused CSVs and manifest)
    Simulate(SimulateArgs),
    /// Estimate the loopback latency from a contact recording
    Calibrate(CalibrateArgs),
    /// Range a stereo recording, or run the distance benchmark grid
    Range(RangeArgs),
    /// Merge an IMU CSV and a ranging log into a fused CSV
    Fuse(FuseArgs),
    /// Extract windowed features from fused CSVs
    Extract(ExtractArgs),
    /// Train a random forest
    Train(TrainArgs),
    /// Predict postures with a trained model
    Predict(PredictArgs),
    /// Participant-level evaluation of the modality ablations
    Evaluate(EvaluateArgs),
    /// Replay a fused CSV through prediction and alerts
    Monitor(MonitorArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of virtual participants, at least 2 [default: 15, or participants]
    #[arg(long)]
    pub participants: Option<u32>,
    /// Recordings per participant and posture [default: 1, or sessions_per_posture]
    #[arg(long)]
    pub sessions: Option<u32>,
    /// Seconds each posture is held [default: 180, or session_s]
    #[arg(long)]
    pub session_s: Option<f64>,
    /// Acoustic condition: silence, pink_noise, pop_music, movement [default: silence, or scene.condition]
    #[arg(long)]
    pub condition: Option<String>,
    /// Also write raw IMU CSVs and ranging logs under raw/
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Contact recording (WAV, first channel used); simulated if omitted
    #[arg(long, value_name = "WAV")]
    pub input: Option<PathBuf>,
    /// Pipeline delay of the simulated contact recording, seconds [default: 512 samples, or pipeline_delay_s]
    #[arg(long)]
    pub pipeline_delay_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    /// Two-channel WAV holding consecutive chirp frames
    #[arg(long, value_name = "WAV", required_unless_present = "benchmark")]
    pub input: Option<PathBuf>,
    /// Frame length in seconds; 0 treats the file as one frame [default: 0.5, or chirp_period_s]
    #[arg(long)]
    pub frame_s: Option<f64>,
    /// Loopback latency in seconds [default: ranging.loopback_latency_s from --config]
    #[arg(long)]
    pub latency_s: Option<f64>,
    /// Run the 0.25/0.50/1.00 m by four-condition benchmark grid instead
    #[arg(long)]
    pub benchmark: bool,
    /// Estimates per benchmark cell
    #[arg(long, default_value_t = 100)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// IMU CSV (timestamp,yaw,pitch,roll,x,y,z)
    #[arg(long, value_name = "CSV")]
    pub imu: PathBuf,
    /// Ranging log CSV
    #[arg(long, value_name = "CSV")]
    pub ranging: PathBuf,
    /// Label every fused record with this posture
    #[arg(long)]
    pub label: Option<PostureLabel>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Fused CSV, or a dataset directory with manifest.csv
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Participant id stored with features of a single fused CSV
    #[arg(long, default_value_t = 0)]
    pub participant: u32,
}

#[derive(Debug, Args, Clone)]
pub struct ForestArgs {
    /// Trees in the forest [default: 100, or train.n_trees]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Features tried per split [default: floor(sqrt(k)) of the modality's k features]
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Minimum samples per leaf [default: 1]
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    /// Maximum tree depth [default: unlimited]
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Grow every tree on the full training set
    #[arg(long)]
    pub no_bootstrap: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (manifest.csv) to train on its train participants
    #[arg(
        long,
        value_name = "DIR",
        conflicts_with = "features",
        required_unless_present = "features"
    )]
    pub dataset: Option<PathBuf>,
    /// Feature CSV; every labelled row is used
    #[arg(long, value_name = "CSV")]
    pub features: Option<PathBuf>,
    /// Feature set: imu, audio or fused
    #[arg(long, default_value = "fused")]
    pub modality: Modality,
    /// Participant split TRAIN/TEST; the lowest TRAIN ids train
    #[arg(long, default_value = "10/5")]
    pub split: String,
    /// Shuffle participants with this seed instead of taking the lowest ids
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Model file [default: <out>/model.ncrf]
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Feature CSV or fused CSV
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory with manifest.csv
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// imu, audio, fused or all
    #[arg(long, default_value = "all")]
    pub modality: String,
    /// Participant split TRAIN/TEST; the lowest TRAIN ids train
    #[arg(long, default_value = "10/5")]
    pub split: String,
    /// Shuffle participants with this seed instead of taking the lowest ids
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Also time single-window predictions of each model
    #[arg(long)]
    pub benchmark: bool,
    /// Timed predictions per model in the latency benchmark
    #[arg(long, default_value_t = 20_000)]
    pub benchmark_predictions: usize,
    /// Exit with code 1 if any modality's window accuracy is lower
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    /// Exit with code 1 if the mean predict latency (microseconds) is higher
    #[arg(long)]
    pub max_latency_us: Option<f64>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Fused CSV to replay
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
    /// Replay speed relative to real time; 0 replays without pausing
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Input(_) | Error::NoDetection { .. } | Error::State(_) => 1,
        Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Wav(_) | Error::Model(_) => 2,
    }
}

fn settings(cli: &Cli) -> Result<RunSettings> {
    let mut s = match &cli.config {
        Some(p) => RunSettings::from_file(p)?,
        None => RunSettings::default(),
    };
    if let Some(seed) = cli.seed {
        s.dataset.seed = seed;
        s.train.seed = seed;
    }
    Ok(s)
}

/// Runs one parsed command line, writing human-readable progress to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let s = settings(cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, s, a, out),
        Command::Calibrate(a) => calibrate(cli, &s, a, out),
        Command::Range(a) => range(cli, &s, a, out),
        Command::Fuse(a) => fuse(cli, &s, a, out),
        Command::Extract(a) => extract(cli, &s, a, out),
        Command::Train(a) => train(cli, &s, a, out),
        Command::Predict(a) => predict(cli, &s, a, out),
        Command::Evaluate(a) => evaluate(cli, &s, a, out),
        Command::Monitor(a) => monitor(cli, &s, a, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn simulate(cli: &Cli, mut s: RunSettings, a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let d = &mut s.dataset;
    d.participants = a.participants.unwrap_or(d.participants);
    d.sessions_per_posture = a.sessions.unwrap_or(d.sessions_per_posture);
    d.session_s = a.session_s.unwrap_or(d.session_s);
    if let Some(c) = &a.condition {
        let condition: SceneCondition = c.parse()?;
        if condition != d.scene.condition {
            d.scene = AcousticSceneConfig::for_condition(condition);
        }
    }
    d.write_raw |= a.raw;
    let entries = simulator::synth_dataset(d, &cli.out)?;
    say(
        out,
        format!(
            "wrote {} recordings for {} participants to {}",
            entries.len(),
            d.participants,
            cli.out.display()
        ),
    )
}

fn calibrate(cli: &Cli, s: &RunSettings, a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let template = acoustic::generate_chirp(&s.dataset.chirp)?;
    let recording = match &a.input {
        Some(p) => wav::read_wav(p, 2)?.swap_remove(0),
        None => simulator::synth_contact(&template, a.pipeline_delay_s.unwrap_or(s.dataset.pipeline_delay_s))?,
    };
    let latency = acoustic::calibrate_loopback(&recording, &template)?;
    let path = cli.out.join("calibration.conf");
    csvfmt::write_lines(
        &path,
        "# loopback calibration",
        [format!("ranging.loopback_latency_s = {latency:.9}")],
    )?;
    say(
        out,
        format!(
            "loopback latency {:.6} ms ({:.2} samples); wrote {}",
            latency * 1e3,
            latency * template.sample_rate_hz,
            path.display()
        ),
    )
}

fn range(cli: &Cli, s: &RunSettings, a: &RangeArgs, out: &mut dyn Write) -> Result<()> {
    if a.benchmark {
        let cfg = BenchmarkConfig {
            n: a.n,
            seed: s.dataset.seed,
            chirp: s.dataset.chirp,
            ranging: s.dataset.ranging,
            pipeline_delay_s: s.dataset.pipeline_delay_s,
            chirp_period_s: s.dataset.chirp_period_s,
            ..BenchmarkConfig::default()
        };
        let cells = eval::distance_benchmark(&cfg)?;
        eval::write_benchmark(&cells, &cli.out)?;
        for c in &cells {
            say(
                out,
                format!(
                    "{:.2} m {:<10} detected {:>3}/{} mean abs error {:.3} mm std {:.3} mm",
                    c.distance_m,
                    c.condition.as_str(),
                    c.detected,
                    c.n,
                    c.mean_abs_error_m * 1e3,
                    c.std_m * 1e3
                ),
            )?;
        }
        return say(out, format!("wrote {}", cli.out.join("distance_errors.csv").display()));
    }

    let input = a.input.as_ref().expect("clap requires --input without --benchmark");
    let channels = wav::read_wav(input, 2)?;
    if channels.len() != 2 {
        return Err(Error::Input(format!("{} must have two channels", input.display())));
    }
    let template = acoustic::generate_chirp(&s.dataset.chirp)?;
    let fs = channels[0].sample_rate_hz;
    if fs != template.sample_rate_hz {
        return Err(Error::Input(format!(
            "recording is {fs} Hz but the chirp is {} Hz",
            template.sample_rate_hz
        )));
    }
    let cfg = acoustic::RangingConfig {
        loopback_latency_s: a.latency_s.unwrap_or(s.dataset.ranging.loopback_latency_s),
        ..s.dataset.ranging
    };
    let total = channels[0].len();
    let frame_s = a.frame_s.unwrap_or(s.dataset.chirp_period_s);
    let frame = if frame_s > 0.0 {
        (frame_s * fs).round() as usize
    } else {
        total
    };
    if frame < template.len() {
        return Err(Error::Config(format!(
            "frame of {frame} samples is shorter than the chirp"
        )));
    }
    let filter = MatchedFilter::new(&template, frame)?;
    let mut estimates = Vec::new();
    let mut missed = 0;
    for (k, start) in (0..total).step_by(frame).enumerate() {
        if start + frame > total {
            break;
        }
        let cut = |c: &SampleBuffer| SampleBuffer {
            samples: c.samples[start..start + frame].to_vec(),
            sample_rate_hz: fs,
        };
        let t = k as f64 * frame as f64 / fs;
        match acoustic::range_dual_with(&filter, &cut(&channels[0]), &cut(&channels[1]), &cfg, t) {
            Ok(e) => estimates.push(e),
            Err(Error::NoDetection { .. }) => missed += 1,
            Err(e) => return Err(e),
        }
    }
    let path = cli.out.join("ranging.csv");
    acoustic::write_ranging_log(&estimates, &path)?;
    if let Some(e) = estimates.first() {
        say(
            out,
            format!(
                "first frame: distance1 {:.4} m distance2 {:.4} m",
                e.distance1_m, e.distance2_m
            ),
        )?;
    }
    say(
        out,
        format!(
            "{} estimates, {missed} frames without a chirp; wrote {}",
            estimates.len(),
            path.display()
        ),
    )
}

fn fuse(cli: &Cli, s: &RunSettings, a: &FuseArgs, out: &mut dyn Write) -> Result<()> {
    let series = imu::load_imu_csv(&a.imu)?;
    if let Err(e) = series.check_rate() {
        log::warn!("{e}");
    }
    let trace = imu::kinematics(&series, s.dataset.smoothing_window, s.dataset.reset_period_s)?;
    let estimates = acoustic::read_ranging_log(&a.ranging)?;
    let mut records = fusion::merge(&trace, &estimates, s.dataset.max_staleness_s)?;
    if let Some(l) = a.label {
        fusion::with_label(&mut records, l);
    }
    let path = cli.out.join("fused.csv");
    fusion::write_fused_csv(&records, &path)?;
    say(
        out,
        format!(
            "{} fused records from {} IMU samples; wrote {}",
            records.len(),
            series.len(),
            path.display()
        ),
    )
}

/// Features of a dataset directory or a single fused CSV.
fn load_features(input: &Path, participant: u32, window: &WindowSpec) -> Result<Vec<FeatureVector>> {
    if input.is_dir() {
        let ds = eval::load_dataset(input)?;
        Ok(eval::extract_windows(&ds, window)?
            .into_iter()
            .flat_map(|s| s.windows)
            .collect())
    } else {
        features::extract_session(&fusion::read_fused_csv(input)?, window, participant)
    }
}

fn extract(cli: &Cli, s: &RunSettings, a: &ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let vectors = load_features(&a.input, a.participant, &s.window)?;
    let path = cli.out.join("features.csv");
    features::write_feature_csv(&vectors, &path)?;
    say(out, format!("{} windows; wrote {}", vectors.len(), path.display()))
}

fn forest_config(s: &RunSettings, f: &ForestArgs, modality: Modality) -> TrainConfig {
    let mut base = s.train.clone();
    if let Some(n) = f.trees {
        base.n_trees = n;
    }
    if let Some(n) = f.min_samples_leaf {
        base.min_samples_leaf = n;
    }
    if f.max_depth.is_some() {
        base.max_depth = f.max_depth;
    }
    if f.no_bootstrap {
        base.bootstrap = false;
    }
    modality.train_config(&base, f.max_features.or(s.max_features))
}

fn split_for(participants: &BTreeSet<u32>, split: &str, split_seed: Option<u64>) -> Result<SplitSpec> {
    let (n_train, n_test) = SplitSpec::parse_counts(split)?;
    match split_seed {
        Some(seed) => SplitSpec::random(participants, n_train, n_test, seed),
        None => SplitSpec::lowest(participants, n_train, n_test),
    }
}

fn train(cli: &Cli, s: &RunSettings, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = forest_config(s, &a.forest, a.modality);
    let vectors: Vec<FeatureVector> = match (&a.dataset, &a.features) {
        (Some(dir), _) => {
            let ds = eval::load_dataset(dir)?;
            let split = split_for(&ds.participants(), &a.split, a.split_seed)?;
            eval::extract_windows(&ds, &s.window)?
                .into_iter()
                .filter(|w| split.train.contains(&w.participant))
                .flat_map(|w| w.windows)
                .collect()
        }
        (None, Some(csv)) => features::read_feature_csv(csv)?
            .into_iter()
            .filter(|v| v.label.is_some())
            .collect(),
        (None, None) => unreachable!("clap requires --dataset or --features"),
    };
    let model = forest::train(&vectors, &cfg)?;
    let path = a.model.clone().unwrap_or_else(|| cli.out.join("model.ncrf"));
    model.save(&path)?;
    say(
        out,
        format!(
            "trained {} trees on {} windows ({} features); wrote {}",
            model.trees.len(),
            vectors.len(),
            a.modality,
            path.display()
        ),
    )
}

fn is_feature_csv(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().map(str::trim) == Some(features::feature_csv_header().as_str()))
}

pub const PREDICTIONS_HEADER: &str = "window,participant,label,predicted,confidence";

fn predict(cli: &Cli, s: &RunSettings, a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = RandomForestModel::load(&a.model)?;
    let vectors = if is_feature_csv(&a.input)? {
        features::read_feature_csv(&a.input)?
    } else {
        load_features(&a.input, 0, &s.window)?
    };
    let mut rows = Vec::with_capacity(vectors.len());
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let p = model.predict(v)?;
        let conf = p.probabilities[p.label.index()];
        rows.push(format!(
            "{i},{},{},{},{}",
            v.participant_id,
            v.label.map(|l| l.as_str()).unwrap_or(""),
            p.label,
            fmt_f64(conf)
        ));
        if let Some(l) = v.label {
            truth.push(l);
            predicted.push(p.label);
        }
    }
    let path = cli.out.join("predictions.csv");
    csvfmt::write_lines(&path, PREDICTIONS_HEADER, rows)?;
    if !truth.is_empty() {
        let m = eval::compute_metrics(&truth, &predicted)?;
        say(
            out,
            format!("accuracy {:.4} over {} labelled windows", m.accuracy, truth.len()),
        )?;
    }
    say(out, format!("{} predictions; wrote {}", vectors.len(), path.display()))
}

pub const LATENCY_HEADER: &str = "modality,predictions,mean_us";

fn evaluate(cli: &Cli, s: &RunSettings, a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let modalities: Vec<Modality> = if a.modality.eq_ignore_ascii_case("all") {
        Modality::ALL.to_vec()
    } else {
        a.modality.split(',').map(str::parse).collect::<Result<Vec<_>>>()?
    };
    let ds = eval::load_dataset(&a.dataset)?;
    let split = split_for(&ds.participants(), &a.split, a.split_seed)?;
    let windows = eval::extract_windows(&ds, &s.window)?;
    let results = modalities
        .iter()
        .map(|&m| eval::run_ablation(&windows, &split, m, &forest_config(s, &a.forest, m)))
        .collect::<Result<Vec<_>>>()?;
    eval::write_reports(&results, &cli.out)?;
    for r in &results {
        let c = r.channel_importances();
        say(
            out,
            format!(
                "{:<5} accuracy {:.4} macro-F1 {:.4} recording accuracy {:.4} importance pitch {:.3} displacement {:.3} distance1 {:.3} distance2 {:.3}",
                r.modality.as_str(),
                r.metrics.accuracy,
                r.metrics.macro_f1,
                r.session_metrics.accuracy,
                c[0],
                c[1],
                c[2],
                c[3]
            ),
        )?;
    }

    let mut failures = Vec::new();
    if let Some(min) = a.min_accuracy {
        for r in results.iter().filter(|r| r.metrics.accuracy < min) {
            failures.push(format!("{} accuracy {:.4} below {min}", r.modality, r.metrics.accuracy));
        }
    }
    if a.benchmark {
        let test: Vec<FeatureVector> = windows
            .iter()
            .filter(|w| split.test.contains(&w.participant))
            .flat_map(|w| w.windows.iter().cloned())
            .collect();
        let mut rows = Vec::new();
        for r in &results {
            let lat = eval::measure_latency(&r.model, &test, a.benchmark_predictions)?;
            say(
                out,
                format!(
                    "{:<5} mean predict latency {:.2} us over {} predictions",
                    r.modality.as_str(),
                    lat.mean_us,
                    lat.predictions
                ),
            )?;
            rows.push(format!("{},{},{}", r.modality, lat.predictions, fmt_f64(lat.mean_us)));
            if let Some(max) = a.max_latency_us {
                if lat.mean_us > max {
                    failures.push(format!("{} latency {:.2} us above {max}", r.modality, lat.mean_us));
                }
            }
        }
        // wall-clock numbers differ run to run; kept apart from the deterministic reports
        csvfmt::write_lines(&cli.out.join("latency.csv"), LATENCY_HEADER, rows)?;
    }
    say(out, format!("wrote reports to {}", cli.out.display()))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(failures.join("; ")))
    }
}

/// One window-level prediction emitted while monitoring.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorPrediction {
    pub window_end_s: f64,
    pub label: PostureLabel,
    pub confidence: f64,
}

/// Streams records through windowed prediction and the alert state machine.
///
/// A prediction is made each time a window closes (`window.length_s` of data,
/// advancing by `window.hop_s`); every record after the first prediction
/// steps the alert state with the latest predicted posture.
pub struct Monitor<'a> {
    model: &'a RandomForestModel,
    policy: AlertPolicy,
    window: WindowSpec,
    buffer: Vec<FusedRecord>,
    next_end_s: Option<f64>,
    latest: Option<PostureLabel>,
    state: AlertState,
}

impl<'a> Monitor<'a> {
    pub fn new(model: &'a RandomForestModel, policy: AlertPolicy, window: WindowSpec) -> Result<Self> {
        policy.validate()?;
        window.validate()?;
        Ok(Self {
            model,
            policy,
            window,
            buffer: Vec::new(),
            next_end_s: None,
            latest: None,
            state: AlertState::new(),
        })
    }

    pub fn push(&mut self, r: &FusedRecord) -> Result<(Option<MonitorPrediction>, Vec<AlertEvent>)> {
        const EPS: f64 = 1e-9;
        let end = *self.next_end_s.get_or_insert(r.timestamp_s + self.window.length_s);
        let mut prediction = None;
        if r.timestamp_s >= end - EPS {
            let start = end - self.window.length_s;
            self.buffer.retain(|b| b.timestamp_s >= start - EPS);
            if let Some(fv) = features::extract_window(&self.buffer, self.window.rate_hz) {
                let p = self.model.predict(&fv)?;
                self.latest = Some(p.label);
                prediction = Some(MonitorPrediction {
                    window_end_s: end,
                    label: p.label,
                    confidence: p.probabilities[p.label.index()],
                });
            }
            // skip windows that a gap left empty
            let mut next = end + self.window.hop_s;
            while r.timestamp_s >= next - EPS {
                next += self.window.hop_s;
            }
            self.next_end_s = Some(next);
        }
        self.buffer.push(*r);
        let mut events = Vec::new();
        if let Some(label) = self.latest {
            let (next, ev) = self.state.step(&self.policy, r, label, r.timestamp_s)?;
            self.state = next;
            events = ev;
        }
        Ok((prediction, events))
    }
}

fn monitor(cli: &Cli, s: &RunSettings, a: &MonitorArgs, out: &mut dyn Write) -> Result<()> {
    if !(a.speed >= 0.0) || !a.speed.is_finite() {
        return Err(Error::Config(format!(
            "speed must be a nonnegative number, got {}",
            a.speed
        )));
    }
    let model = RandomForestModel::load(&a.model)?;
    let records = fusion::read_fused_csv(&a.input)?;
    let mut mon = Monitor::new(&model, s.policy.clone(), s.window)?;
    let mut all_events = Vec::new();
    let wall = Instant::now();
    let t0 = records.first().map(|r| r.timestamp_s).unwrap_or(0.0);
    for r in &records {
        if a.speed > 0.0 {
            let due = Duration::from_secs_f64((r.timestamp_s - t0).max(0.0) / a.speed);
            if let Some(wait) = due.checked_sub(wall.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let (pred, events) = mon.push(r)?;
        if let Some(p) = pred {
            say(
                out,
                format!(
                    "t={:.2} predicted={} confidence={:.2}",
                    p.window_end_s, p.label, p.confidence
                ),
            )?;
        }
        for e in events {
            say(out, e.to_string())?;
            all_events.push(e);
        }
    }
    let path = cli.out.join("alerts.csv");
    alerts::write_alert_csv(&all_events, &path)?;
    say(out, format!("{} alerts; wrote {}", all_events.len(), path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), 1);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 2);
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["neckcare", "simulate", "--seed", "7", "--out", "d", "-vv"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.out, PathBuf::from("d"));
        assert_eq!(cli.verbose, 2);
        assert!(matches!(
            cli.command,
            Command::Simulate(SimulateArgs { participants: None, .. })
        ));
    }

    #[test]
    fn one_participant_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let cli = Cli::try_parse_from(["neckcare", "simulate", "--participants", "1", "--out", out]).unwrap();
        let err = run(&cli, &mut Vec::new()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("participants"));
    }
}
