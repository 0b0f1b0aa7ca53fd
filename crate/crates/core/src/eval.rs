//! Participant-level evaluation: splits, modality ablations, metrics,
//! importance rankings and the ranging benchmark grid.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::acoustic::{self, calibrate_loopback, ChirpSpec, MatchedFilter, RangingConfig};
use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector, WindowSpec, N_CHANNELS, N_FEATURES, N_STATS};
use crate::forest::{self, RandomForestModel, TrainConfig, N_CLASSES};
use crate::fusion::{self, FusedRecord};
use crate::posture::PostureLabel;
use crate::rng::{child_seed, rng_for};
use crate::simulator::{
    self, capture_len_for, AcousticSceneConfig, CaptureSynth, ManifestEntry, ParticipantModel, PostureProfile,
    SceneCondition,
};
use crate::svg::BarChart;

#[derive(Debug, Clone)]
pub struct Session {
    pub entry: ManifestEntry,
    pub records: Vec<FusedRecord>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub sessions: Vec<Session>,
}

impl Dataset {
    pub fn participants(&self) -> BTreeSet<u32> {
        self.sessions.iter().map(|s| s.entry.participant).collect()
    }
}

/// Reads `manifest.csv` and every fused recording it lists.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = simulator::read_manifest(&dir.join(simulator::MANIFEST_FILE))?;
    let sessions = manifest
        .into_par_iter()
        .map(|entry| {
            let records = fusion::read_fused_csv(&dir.join(&entry.path))?;
            Ok(Session { entry, records })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        sessions,
    })
}

/// Windowed features of one recording.
#[derive(Debug, Clone)]
pub struct SessionWindows {
    pub participant: u32,
    pub label: PostureLabel,
    pub session: u32,
    pub windows: Vec<FeatureVector>,
}

pub fn extract_windows(dataset: &Dataset, spec: &WindowSpec) -> Result<Vec<SessionWindows>> {
    dataset
        .sessions
        .par_iter()
        .map(|s| {
            Ok(SessionWindows {
                participant: s.entry.participant,
                label: s.entry.posture,
                session: s.entry.session,
                windows: features::extract_session(&s.records, spec, s.entry.participant)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

impl SplitSpec {
    pub fn new(train: BTreeSet<u32>, test: BTreeSet<u32>) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("train and test participant sets must be nonempty".into()));
        }
        if let Some(p) = train.intersection(&test).next() {
            return Err(Error::Config(format!("participant {p} is in both train and test")));
        }
        Ok(Self { train, test })
    }

    /// Lowest `n_train` ids train, the next `n_test` test.
    pub fn lowest(participants: &BTreeSet<u32>, n_train: usize, n_test: usize) -> Result<Self> {
        Self::check_counts(participants, n_train, n_test)?;
        let ids: Vec<u32> = participants.iter().copied().collect();
        Self::new(
            ids[..n_train].iter().copied().collect(),
            ids[n_train..n_train + n_test].iter().copied().collect(),
        )
    }

    /// Seeded random partition of the participants.
    pub fn random(participants: &BTreeSet<u32>, n_train: usize, n_test: usize, seed: u64) -> Result<Self> {
        Self::check_counts(participants, n_train, n_test)?;
        let mut ids: Vec<u32> = participants.iter().copied().collect();
        ids.shuffle(&mut rng_for(seed, &[0x5b11]));
        Self::new(
            ids[..n_train].iter().copied().collect(),
            ids[n_train..n_train + n_test].iter().copied().collect(),
        )
    }

    fn check_counts(participants: &BTreeSet<u32>, n_train: usize, n_test: usize) -> Result<()> {
        if n_train + n_test > participants.len() {
            return Err(Error::Config(format!(
                "split {n_train}/{n_test} needs {} participants, dataset has {}",
                n_train + n_test,
                participants.len()
            )));
        }
        Ok(())
    }

    /// Parses `"10/5"`.
    pub fn parse_counts(s: &str) -> Result<(usize, usize)> {
        let bad = || Error::Config(format!("split must look like TRAIN/TEST, got '{s}'"));
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        Ok((
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    ImuOnly,
    AudioOnly,
    Fused,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::ImuOnly, Modality::AudioOnly, Modality::Fused];

    /// Feature indices: pitch+displacement, distance1+distance2, or all.
    pub fn features(self) -> Vec<usize> {
        let channels = match self {
            Modality::ImuOnly => 0..2,
            Modality::AudioOnly => 2..4,
            Modality::Fused => 0..N_CHANNELS,
        };
        channels.flat_map(|c| c * N_STATS..(c + 1) * N_STATS).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::ImuOnly => "imu",
            Modality::AudioOnly => "audio",
            Modality::Fused => "fused",
        }
    }

    /// `base` restricted to this modality; `max_features` defaults to floor(sqrt(k)).
    pub fn train_config(self, base: &TrainConfig, max_features: Option<usize>) -> TrainConfig {
        let subset = self.features();
        TrainConfig {
            max_features: max_features.unwrap_or_else(|| forest::default_max_features(subset.len())),
            feature_subset: Some(subset),
            ..base.clone()
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "imu" | "imu_only" | "imuonly" => Ok(Modality::ImuOnly),
            "audio" | "audio_only" | "audioonly" => Ok(Modality::AudioOnly),
            "fused" | "both" => Ok(Modality::Fused),
            other => Err(Error::Config(format!("unknown modality '{other}' (imu, audio, fused)"))),
        }
    }
}

/// Standard classification metrics over the five postures.
///
/// Precision, recall or F1 with a zero denominator are reported as 0 and
/// their `*_undefined` flag is set. Macro-F1 averages over the classes that
/// occur in the truth or the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
    pub accuracy: f64,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    pub precision_undefined: [bool; N_CLASSES],
    pub recall_undefined: [bool; N_CLASSES],
    pub f1_undefined: [bool; N_CLASSES],
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn support(&self, class: usize) -> u64 {
        self.confusion[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

#[allow(clippy::needless_range_loop)]
pub fn compute_metrics(truth: &[PostureLabel], predicted: &[PostureLabel]) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Input("no labels to score".into()));
    }
    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let mut r = MetricsReport {
        confusion,
        accuracy: 0.0,
        precision: [0.0; N_CLASSES],
        recall: [0.0; N_CLASSES],
        f1: [0.0; N_CLASSES],
        precision_undefined: [false; N_CLASSES],
        recall_undefined: [false; N_CLASSES],
        f1_undefined: [false; N_CLASSES],
        macro_f1: 0.0,
    };
    let trace: u64 = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    r.accuracy = trace as f64 / truth.len() as f64;
    let mut present = 0;
    let mut f1_sum = 0.0;
    for c in 0..N_CLASSES {
        let tp = confusion[c][c];
        let predicted_c: u64 = (0..N_CLASSES).map(|t| confusion[t][c]).sum();
        let actual_c: u64 = confusion[c].iter().sum();
        (r.precision[c], r.precision_undefined[c]) = ratio(tp, predicted_c);
        (r.recall[c], r.recall_undefined[c]) = ratio(tp, actual_c);
        let (p, rc) = (r.precision[c], r.recall[c]);
        if p + rc > 0.0 {
            r.f1[c] = 2.0 * p * rc / (p + rc);
        } else {
            r.f1_undefined[c] = true;
        }
        if predicted_c + actual_c > 0 {
            present += 1;
            f1_sum += r.f1[c];
        }
    }
    r.macro_f1 = f1_sum / present as f64;
    Ok(r)
}

/// One trained and scored modality.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub modality: Modality,
    pub metrics: MetricsReport,
    /// Majority vote over each test recording's windows.
    pub session_metrics: MetricsReport,
    pub model: RandomForestModel,
    pub n_train_windows: usize,
    pub n_test_windows: usize,
}

impl AblationResult {
    pub fn channel_importances(&self) -> [f64; N_CHANNELS] {
        channel_importances(self.model.importances())
    }
}

/// Sums per-feature importances by channel.
pub fn channel_importances(importances: &[f64]) -> [f64; N_CHANNELS] {
    let mut out = [0.0; N_CHANNELS];
    for (i, v) in importances.iter().enumerate().take(N_FEATURES) {
        out[i / N_STATS] += v;
    }
    out
}

fn majority(labels: &[PostureLabel]) -> Option<PostureLabel> {
    let mut counts = [0usize; N_CLASSES];
    labels.iter().for_each(|l| counts[l.index()] += 1);
    let best = (0..N_CLASSES).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    (counts[best] > 0).then(|| PostureLabel::from_index(best).expect("class index"))
}

/// Train on the split's train participants with `modality`'s features only and score on the test participants.
pub fn run_ablation(
    sessions: &[SessionWindows],
    split: &SplitSpec,
    modality: Modality,
    cfg: &TrainConfig,
) -> Result<AblationResult> {
    let present: BTreeSet<u32> = sessions.iter().map(|s| s.participant).collect();
    if let Some(p) = split.train.union(&split.test).find(|p| !present.contains(p)) {
        return Err(Error::Config(format!("split participant {p} is not in the dataset")));
    }
    let cfg = TrainConfig {
        feature_subset: Some(modality.features()),
        ..cfg.clone()
    };
    let train: Vec<FeatureVector> = sessions
        .iter()
        .filter(|s| split.train.contains(&s.participant))
        .flat_map(|s| s.windows.iter().cloned())
        .collect();
    let test: Vec<&SessionWindows> = sessions
        .iter()
        .filter(|s| split.test.contains(&s.participant))
        .collect();
    let n_test: usize = test.iter().map(|s| s.windows.len()).sum();
    if n_test == 0 {
        return Err(Error::Config("test split has no windows".into()));
    }
    let model = forest::train(&train, &cfg)?;

    let mut truth = Vec::with_capacity(n_test);
    let mut predicted = Vec::with_capacity(n_test);
    let mut session_truth = Vec::new();
    let mut session_pred = Vec::new();
    for s in &test {
        let mut preds = Vec::with_capacity(s.windows.len());
        for w in &s.windows {
            let p = model.predict(w)?.label;
            truth.push(w.label.unwrap_or(s.label));
            predicted.push(p);
            preds.push(p);
        }
        if let Some(m) = majority(&preds) {
            session_truth.push(s.label);
            session_pred.push(m);
        }
    }
    Ok(AblationResult {
        modality,
        metrics: compute_metrics(&truth, &predicted)?,
        session_metrics: compute_metrics(&session_truth, &session_pred)?,
        model,
        n_train_windows: train.len(),
        n_test_windows: n_test,
    })
}

/// All requested modalities; cells run in parallel.
pub fn run_ablations(
    sessions: &[SessionWindows],
    split: &SplitSpec,
    modalities: &[Modality],
    base: &TrainConfig,
    max_features: Option<usize>,
) -> Result<Vec<AblationResult>> {
    modalities
        .par_iter()
        .map(|&m| run_ablation(sessions, split, m, &m.train_config(base, max_features)))
        .collect()
}

pub const METRICS_HEADER: &str = "modality,scope,metric,value";
pub const CONFUSION_HEADER: &str = "modality,true,predicted,count";
pub const IMPORTANCES_HEADER: &str = "modality,kind,name,importance";

pub fn write_metrics_csv(results: &[AblationResult], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for r in results {
        let m = &r.metrics;
        let mut push = |scope: &str, metric: &str, v: String| rows.push(format!("{},{scope},{metric},{v}", r.modality));
        push("overall", "accuracy", fmt_f64(m.accuracy));
        push("overall", "macro_f1", fmt_f64(m.macro_f1));
        push("overall", "session_accuracy", fmt_f64(r.session_metrics.accuracy));
        push("overall", "train_windows", r.n_train_windows.to_string());
        push("overall", "test_windows", r.n_test_windows.to_string());
        for l in PostureLabel::ALL {
            let c = l.index();
            let flag = |b: bool| u8::from(b).to_string();
            push(l.as_str(), "precision", fmt_f64(m.precision[c]));
            push(l.as_str(), "recall", fmt_f64(m.recall[c]));
            push(l.as_str(), "f1", fmt_f64(m.f1[c]));
            push(l.as_str(), "support", m.support(c).to_string());
            push(l.as_str(), "precision_undefined", flag(m.precision_undefined[c]));
            push(l.as_str(), "recall_undefined", flag(m.recall_undefined[c]));
            push(l.as_str(), "f1_undefined", flag(m.f1_undefined[c]));
        }
    }
    csvfmt::write_lines(path, METRICS_HEADER, rows)
}

pub fn write_confusion_csv(results: &[AblationResult], path: &Path) -> Result<()> {
    let rows = results.iter().flat_map(|r| {
        PostureLabel::ALL.into_iter().flat_map(move |t| {
            PostureLabel::ALL
                .into_iter()
                .map(move |p| format!("{},{t},{p},{}", r.modality, r.metrics.confusion[t.index()][p.index()]))
        })
    });
    csvfmt::write_lines(path, CONFUSION_HEADER, rows)
}

pub fn write_importances_csv(results: &[AblationResult], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for r in results {
        for (name, v) in features::CHANNEL_NAMES.iter().zip(r.channel_importances()) {
            rows.push(format!("{},channel,{name},{}", r.modality, fmt_f64(v)));
        }
        for (i, v) in r.model.importances().iter().enumerate() {
            rows.push(format!(
                "{},feature,{},{}",
                r.modality,
                features::feature_name(i),
                fmt_f64(*v)
            ));
        }
    }
    csvfmt::write_lines(path, IMPORTANCES_HEADER, rows)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `metrics.csv`, `confusion.csv`, `importances.csv` and `accuracy.svg` under `dir`.
pub fn write_reports(results: &[AblationResult], dir: &Path) -> Result<()> {
    write_metrics_csv(results, &dir.join("metrics.csv"))?;
    write_confusion_csv(results, &dir.join("confusion.csv"))?;
    write_importances_csv(results, &dir.join("importances.csv"))?;
    let chart = BarChart {
        title: "Posture classification by modality".into(),
        y_label: "accuracy".into(),
        categories: results.iter().map(|r| r.modality.to_string()).collect(),
        series: vec![
            ("windows".into(), results.iter().map(|r| r.metrics.accuracy).collect()),
            (
                "recordings".into(),
                results.iter().map(|r| r.session_metrics.accuracy).collect(),
            ),
        ],
        y_max: Some(1.0),
    };
    write_text(&dir.join("accuracy.svg"), &chart.render())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub distances_m: Vec<f64>,
    pub conditions: Vec<SceneCondition>,
    pub n: usize,
    pub seed: u64,
    pub chirp: ChirpSpec,
    pub ranging: RangingConfig,
    pub pipeline_delay_s: f64,
    pub chirp_period_s: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            distances_m: vec![0.25, 0.50, 1.00],
            conditions: SceneCondition::ALL.to_vec(),
            n: 100,
            seed: 42,
            chirp: ChirpSpec::default(),
            ranging: RangingConfig::default(),
            pipeline_delay_s: 512.0 / 48_000.0,
            chirp_period_s: 0.5,
        }
    }
}

/// Error statistics of one (distance, condition) cell, pooled over both microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCell {
    pub distance_m: f64,
    pub condition: SceneCondition,
    pub n: usize,
    pub detected: usize,
    pub mean_estimate_m: f64,
    /// Against the instantaneous ground truth.
    pub mean_abs_error_m: f64,
    pub std_m: f64,
}

/// Static head at each distance, `n` chirps per condition, through calibration and dual ranging.
pub fn distance_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkCell>> {
    if cfg.n == 0 {
        return Err(Error::Config("benchmark needs at least one chirp per cell".into()));
    }
    let template = acoustic::generate_chirp(&cfg.chirp)?;
    let len = capture_len_for(&template, cfg.pipeline_delay_s);
    let synth = CaptureSynth::new(&template, len)?;
    let filter = MatchedFilter::new(&template, len)?;
    let ranging = RangingConfig {
        loopback_latency_s: calibrate_loopback(&synth.contact(cfg.pipeline_delay_s), &template)?,
        ..cfg.ranging
    };
    let cells: Vec<(usize, f64, SceneCondition)> = cfg
        .distances_m
        .iter()
        .flat_map(|&d| cfg.conditions.iter().map(move |&c| (d, c)))
        .enumerate()
        .map(|(i, (d, c))| (i, d, c))
        .collect();
    cells
        .par_iter()
        .map(|&(i, d, condition)| {
            let profile = PostureProfile {
                label: PostureLabel::Neutral,
                pitch_mean_deg: 0.0,
                pitch_jitter_deg: 0.0,
                displacement_amp_m: 0.0,
                screen_distance_m: d,
                distance_jitter_m: 0.0,
            };
            let participant = ParticipantModel {
                id: 0,
                neutral_pitch_offset_deg: 0.0,
                mic_offsets_m: (0.0, 0.0),
                movement_scale: 1.0,
                rng_seed: child_seed(cfg.seed, &[0xbe7c, i as u64]),
            };
            let scene = AcousticSceneConfig::for_condition(condition);
            let mut estimates = Vec::with_capacity(2 * cfg.n);
            let mut errors = Vec::with_capacity(2 * cfg.n);
            let mut detected = 0;
            for k in 0..cfg.n {
                let t = k as f64 * cfg.chirp_period_s;
                let cap = synth.capture(
                    &profile,
                    &participant,
                    &scene,
                    cfg.pipeline_delay_s,
                    cfg.ranging.speed_of_sound_mps,
                    t,
                );
                match acoustic::range_dual_with(&filter, &cap.mic1, &cap.mic2, &ranging, t) {
                    Ok(e) => {
                        detected += 1;
                        for (est, truth) in [
                            (e.distance1_m, cap.true_distances_m.0),
                            (e.distance2_m, cap.true_distances_m.1),
                        ] {
                            estimates.push(est);
                            errors.push((est - truth).abs());
                        }
                    }
                    Err(Error::NoDetection { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            let (mean, std) = mean_std(&estimates);
            Ok(BenchmarkCell {
                distance_m: d,
                condition,
                n: cfg.n,
                detected,
                mean_estimate_m: mean,
                mean_abs_error_m: mean_std(&errors).0,
                std_m: std,
            })
        })
        .collect()
}

/// Mean and population standard deviation; NaN for an empty slice.
fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const DISTANCE_ERRORS_HEADER: &str = "distance_m,condition,n,detected,mean_estimate_m,mean_abs_error_m,std_m";

/// `distance_errors.csv` plus error and spread charts (millimetres).
pub fn write_benchmark(cells: &[BenchmarkCell], dir: &Path) -> Result<()> {
    csvfmt::write_lines(
        &dir.join("distance_errors.csv"),
        DISTANCE_ERRORS_HEADER,
        cells.iter().map(|c| {
            format!(
                "{},{},{},{},{},{},{}",
                fmt_f64(c.distance_m),
                c.condition,
                c.n,
                c.detected,
                fmt_f64(c.mean_estimate_m),
                fmt_f64(c.mean_abs_error_m),
                fmt_f64(c.std_m)
            )
        }),
    )?;
    let mut distances: Vec<f64> = Vec::new();
    let mut conditions: Vec<SceneCondition> = Vec::new();
    for c in cells {
        if !distances.contains(&c.distance_m) {
            distances.push(c.distance_m);
        }
        if !conditions.contains(&c.condition) {
            conditions.push(c.condition);
        }
    }
    let chart = |title: &str, y_label: &str, f: fn(&BenchmarkCell) -> f64| BarChart {
        title: title.into(),
        y_label: y_label.into(),
        categories: distances.iter().map(|d| format!("{d:.2} m")).collect(),
        series: conditions
            .iter()
            .map(|&cond| {
                let v = distances
                    .iter()
                    .map(|&d| {
                        cells
                            .iter()
                            .find(|c| c.distance_m == d && c.condition == cond)
                            .map(|c| 1000.0 * f(c))
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                (cond.to_string(), v)
            })
            .collect(),
        y_max: None,
    };
    write_text(
        &dir.join("distance_errors.svg"),
        &chart(
            "Ranging error by distance and condition",
            "mean absolute error (mm)",
            |c| c.mean_abs_error_m,
        )
        .render(),
    )?;
    write_text(
        &dir.join("distance_std.svg"),
        &chart(
            "Ranging spread by distance and condition",
            "standard deviation (mm)",
            |c| c.std_m,
        )
        .render(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub predictions: usize,
    pub mean_us: f64,
}

/// Mean wall time of single-window predictions, cycling through `vectors` until `predictions` calls were timed.
pub fn measure_latency(
    model: &RandomForestModel,
    vectors: &[FeatureVector],
    predictions: usize,
) -> Result<LatencyReport> {
    if vectors.is_empty() || predictions == 0 {
        return Err(Error::Input("latency benchmark needs feature vectors".into()));
    }
    // warm caches
    for v in vectors.iter().take(100) {
        std::hint::black_box(model.predict(v)?);
    }
    let start = Instant::now();
    for v in vectors.iter().cycle().take(predictions) {
        std::hint::black_box(model.predict(std::hint::black_box(v))?);
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(LatencyReport {
        predictions,
        mean_us: 1e6 * elapsed / predictions as f64,
    })
}
