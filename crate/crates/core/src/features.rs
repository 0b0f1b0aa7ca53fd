//! Windowed feature extraction over the fused channels.
//!
//! Each window yields 32 values, channel-major:
//!
//! | index   | channel      |
//! |---------|--------------|
//! | 0..8    | pitch        |
//! | 8..16   | displacement |
//! | 16..24  | distance1    |
//! | 24..32  | distance2    |
//!
//! and within a channel: mean, std (population), min, max, peak frequency,
//! mean frequency, skewness, excess kurtosis. Spectral features use the
//! magnitude spectrum of the mean-removed, untapered window; the DC bin is
//! excluded.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::fusion::FusedRecord;
use crate::posture::PostureLabel;

pub const N_CHANNELS: usize = 4;
pub const N_STATS: usize = 8;
pub const N_FEATURES: usize = N_CHANNELS * N_STATS;

pub const CHANNEL_NAMES: [&str; N_CHANNELS] = ["pitch", "displacement", "distance1", "distance2"];
pub const STAT_NAMES: [&str; N_STATS] = [
    "mean",
    "std",
    "min",
    "max",
    "peak_freq",
    "mean_freq",
    "skewness",
    "kurtosis",
];

/// Minimum samples per window.
pub const MIN_WINDOW_SAMPLES: usize = 16;

const VARIANCE_FLOOR: f64 = 1e-12;
const MAGNITUDE_FLOOR: f64 = 1e-12;
const PEAK_TIE_REL: f64 = 1e-9;

pub fn feature_index(channel: usize, stat: usize) -> usize {
    channel * N_STATS + stat
}

pub fn feature_name(i: usize) -> String {
    format!("{}_{}", CHANNEL_NAMES[i / N_STATS], STAT_NAMES[i % N_STATS])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length_s: f64,
    pub hop_s: f64,
    pub rate_hz: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_s: 2.0,
            hop_s: 1.0,
            rate_hz: 50.0,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0 && self.hop_s > 0.0 && self.rate_hz > 0.0) {
            return Err(Error::Config("window length, hop and rate must be positive".into()));
        }
        if self.hop_s > self.length_s {
            return Err(Error::Config(format!(
                "hop {} s exceeds window length {} s",
                self.hop_s, self.length_s
            )));
        }
        if self.length_s * self.rate_hz < MIN_WINDOW_SAMPLES as f64 {
            return Err(Error::Config(format!(
                "window of {} s holds fewer than {MIN_WINDOW_SAMPLES} samples",
                self.length_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
    pub label: Option<PostureLabel>,
    pub participant_id: u32,
}

/// Statistics of one channel, in [`STAT_NAMES`] order.
pub fn channel_stats(x: &[f64], rate_hz: f64) -> [f64; N_STATS] {
    let fft = FftPlanner::new().plan_fft_forward(x.len());
    channel_stats_with(x, rate_hz, &*fft)
}

fn channel_stats_with(x: &[f64], rate_hz: f64, fft: &dyn Fft<f64>) -> [f64; N_STATS] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 < VARIANCE_FLOOR {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    // a flat channel has no spectrum; rounding noise would otherwise pick a bin
    let (peak_freq, mean_freq) = if m2 < VARIANCE_FLOOR {
        (0.0, 0.0)
    } else {
        spectral(x, mean, rate_hz, fft)
    };
    [mean, m2.sqrt(), lo, hi, peak_freq, mean_freq, skew, kurt]
}

fn spectral(x: &[f64], mean: f64, rate_hz: f64, fft: &dyn Fft<f64>) -> (f64, f64) {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    fft.process(&mut buf);
    let bin_hz = rate_hz / n as f64;
    let mags: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    if mags.iter().all(|&m| m < MAGNITUDE_FLOOR) {
        return (0.0, 0.0);
    }
    // near-ties (flat spectra of impulses) go to the lowest frequency
    let top = mags[1..].iter().cloned().fold(0.0, f64::max);
    let peak_bin = (1..mags.len())
        .find(|&k| mags[k] >= top * (1.0 - PEAK_TIE_REL))
        .unwrap_or(1);
    let total: f64 = mags[1..].iter().sum();
    let mean_freq = if total < MAGNITUDE_FLOOR {
        0.0
    } else {
        mags.iter()
            .enumerate()
            .skip(1)
            .map(|(k, m)| k as f64 * bin_hz * m)
            .sum::<f64>()
            / total
    };
    if mags.len() < 2 {
        return (0.0, mean_freq);
    }
    (peak_bin as f64 * bin_hz, mean_freq)
}

/// Majority label, ties going to the earlier class.
fn majority_label(records: &[FusedRecord]) -> Option<PostureLabel> {
    let mut counts = [0usize; 5];
    for r in records {
        if let Some(l) = r.label {
            counts[l.index()] += 1;
        }
    }
    let best = (0..5).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    (counts[best] > 0).then(|| PostureLabel::ALL[best])
}

fn is_dense(records: &[FusedRecord], rate_hz: f64) -> bool {
    let max_gap = 3.0 / rate_hz + 1e-9;
    records.len() >= MIN_WINDOW_SAMPLES
        && records
            .windows(2)
            .all(|w| w[1].timestamp_s - w[0].timestamp_s <= max_gap)
}

/// Features of one window, or `None` when the window is too sparse to use.
pub fn extract_window(records: &[FusedRecord], rate_hz: f64) -> Option<FeatureVector> {
    let fft = FftPlanner::new().plan_fft_forward(records.len().max(1));
    extract_window_with(records, rate_hz, 0, &fft)
}

fn extract_window_with(
    records: &[FusedRecord],
    rate_hz: f64,
    participant_id: u32,
    fft: &Arc<dyn Fft<f64>>,
) -> Option<FeatureVector> {
    if !is_dense(records, rate_hz) {
        return None;
    }
    let mut values = [0.0; N_FEATURES];
    let mut column = vec![0.0; records.len()];
    for ch in 0..N_CHANNELS {
        for (c, r) in column.iter_mut().zip(records) {
            *c = r.channels()[ch];
        }
        let stats = channel_stats_with(&column, rate_hz, &**fft);
        values[ch * N_STATS..(ch + 1) * N_STATS].copy_from_slice(&stats);
    }
    Some(FeatureVector {
        values,
        label: majority_label(records),
        participant_id,
    })
}

/// Sliding-window features over one session. Windows that are too sparse are skipped.
pub fn extract_session(records: &[FusedRecord], spec: &WindowSpec, participant_id: u32) -> Result<Vec<FeatureVector>> {
    spec.validate()?;
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Ok(Vec::new());
    };
    let eps = 1e-9;
    let t0 = first.timestamp_s;
    let span = last.timestamp_s - t0 + 1.0 / spec.rate_hz;
    if span + eps < spec.length_s {
        return Ok(Vec::new());
    }
    let count = ((span - spec.length_s) / spec.hop_s + eps).floor() as usize + 1;

    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(count);
    let mut lo = 0;
    for k in 0..count {
        let start = t0 + k as f64 * spec.hop_s;
        let end = start + spec.length_s;
        while lo < records.len() && records[lo].timestamp_s < start - eps {
            lo += 1;
        }
        let hi = lo + records[lo..].iter().take_while(|r| r.timestamp_s < end - eps).count();
        let window = &records[lo..hi];
        if window.is_empty() {
            continue;
        }
        let fft = planner.plan_fft_forward(window.len());
        if let Some(fv) = extract_window_with(window, spec.rate_hz, participant_id, &fft) {
            out.push(fv);
        }
    }
    Ok(out)
}

pub fn feature_csv_header() -> String {
    let mut h = String::from("participant,label");
    for i in 0..N_FEATURES {
        h.push_str(&format!(",f{i:02}"));
    }
    h
}

pub fn write_feature_csv(vectors: &[FeatureVector], path: &Path) -> Result<()> {
    csvfmt::write_lines(
        path,
        &feature_csv_header(),
        vectors.iter().map(|v| {
            let mut row = format!("{},{}", v.participant_id, v.label.map(|l| l.as_str()).unwrap_or(""));
            for x in v.values {
                row.push(',');
                row.push_str(&fmt_f64(x));
            }
            row
        }),
    )
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    csvfmt::read_rows(path, &feature_csv_header())?
        .into_iter()
        .map(|(line, f)| {
            let participant_id = f[0]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("invalid participant '{}'", f[0])))?;
            let label = if f[1].is_empty() {
                None
            } else {
                Some(
                    f[1].parse()
                        .map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
                )
            };
            let mut values = [0.0; N_FEATURES];
            for (i, v) in values.iter_mut().enumerate() {
                *v = csvfmt::parse_f64(path, line, &f[i + 2], "feature")?;
            }
            Ok(FeatureVector {
                values,
                label,
                participant_id,
            })
        })
        .collect()
}
