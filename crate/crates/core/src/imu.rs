//! Head-tracker stream processing: smoothing, pitch pass-through and
//! drift-reset x-axis displacement.
//!
//! Double integration of a consumer-grade accelerometer drifts within
//! seconds, so displacement is only meaningful inside short windows. Each
//! window has its mean acceleration removed (which also removes the static
//! gravity projection on x), is integrated twice with the trapezoid rule
//! starting from rest at the origin, and the next window starts from zero
//! again.

use std::path::Path;

use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp_s: f64,
    pub yaw_deg: f64,
    /// Flexion is negative.
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl ImuSample {
    fn channels(&self) -> [f64; 6] {
        [self.yaw_deg, self.pitch_deg, self.roll_deg, self.ax, self.ay, self.az]
    }

    fn with_channels(timestamp_s: f64, c: [f64; 6]) -> Self {
        Self {
            timestamp_s,
            yaw_deg: c[0],
            pitch_deg: c[1],
            roll_deg: c[2],
            ax: c[3],
            ay: c[4],
            az: c[5],
        }
    }
}

pub const NOMINAL_RATE_HZ: f64 = 50.0;

/// Time-ordered head-tracker samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSeries {
    samples: Vec<ImuSample>,
    pub nominal_rate_hz: f64,
}

impl ImuSeries {
    /// Checks ordering and angle ranges. The sampling-rate check is separate
    /// ([`ImuSeries::check_rate`]) because short or gappy recordings are still
    /// processable.
    pub fn new(samples: Vec<ImuSample>, nominal_rate_hz: f64) -> Result<Self> {
        if !(nominal_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "nominal rate {nominal_rate_hz} must be positive"
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].timestamp_s > w[0].timestamp_s) {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at sample {} ({} after {})",
                    i + 1,
                    w[1].timestamp_s,
                    w[0].timestamp_s
                )));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.channels().iter().any(|v| !v.is_finite()) || !s.timestamp_s.is_finite() {
                return Err(Error::Validation(format!("non-finite value at sample {i}")));
            }
            if !(-90.0..=90.0).contains(&s.pitch_deg)
                || !(-180.0..=180.0).contains(&s.yaw_deg)
                || !(-180.0..=180.0).contains(&s.roll_deg)
            {
                return Err(Error::Validation(format!("angle out of range at sample {i}")));
            }
        }
        Ok(Self {
            samples,
            nominal_rate_hz,
        })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn median_interval_s(&self) -> Option<f64> {
        let mut dts: Vec<f64> = self
            .samples
            .windows(2)
            .map(|w| w[1].timestamp_s - w[0].timestamp_s)
            .collect();
        if dts.is_empty() {
            return None;
        }
        dts.sort_by(f64::total_cmp);
        Some(dts[dts.len() / 2])
    }

    /// Median sample interval must be within 20% of the nominal period.
    pub fn check_rate(&self) -> Result<()> {
        let nominal = 1.0 / self.nominal_rate_hz;
        match self.median_interval_s() {
            Some(dt) if (dt - nominal).abs() > 0.2 * nominal => Err(Error::Validation(format!(
                "median interval {dt:.4} s is not within 20% of {nominal:.4} s"
            ))),
            _ => Ok(()),
        }
    }
}

/// Filtered pitch and drift-reset displacement on the IMU clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KinematicTrace {
    pub timestamps_s: Vec<f64>,
    pub pitch_deg: Vec<f64>,
    pub displacement_x_m: Vec<f64>,
}

impl KinematicTrace {
    pub fn len(&self) -> usize {
        self.timestamps_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_s.is_empty()
    }
}

/// Centered moving average over an odd window, applied per channel. Near the
/// ends the window shrinks symmetrically.
pub fn smooth(series: &ImuSeries, window_samples: usize) -> Result<ImuSeries> {
    let n = series.len();
    if window_samples == 0 || window_samples.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "smoothing window must be odd and positive, got {window_samples}"
        )));
    }
    if window_samples > n.max(1) {
        return Err(Error::Config(format!(
            "smoothing window {window_samples} exceeds series length {n}"
        )));
    }
    let half = window_samples / 2;
    let raw: Vec<[f64; 6]> = series.samples.iter().map(ImuSample::channels).collect();
    let samples = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &raw[i - h..=i + h];
            let mut acc = [0.0; 6];
            for c in span {
                for (a, v) in acc.iter_mut().zip(c) {
                    *a += v;
                }
            }
            let k = span.len() as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            ImuSample::with_channels(series.samples[i].timestamp_s, acc)
        })
        .collect();
    Ok(ImuSeries {
        samples,
        nominal_rate_hz: series.nominal_rate_hz,
    })
}

/// Index of the reset window containing `t`. Boundaries sit at integer
/// multiples of the period on the absolute clock.
fn reset_window(t: f64, period: f64) -> i64 {
    (t / period + 1e-9).floor() as i64
}

/// Drift-reset double integration of `ax`; pitch is copied through.
pub fn integrate_displacement(series: &ImuSeries, reset_period_s: f64) -> Result<KinematicTrace> {
    if !(reset_period_s > 0.0 && reset_period_s.is_finite()) {
        return Err(Error::Config(format!(
            "reset period must be positive, got {reset_period_s}"
        )));
    }
    let s = &series.samples;
    let mut trace = KinematicTrace {
        timestamps_s: s.iter().map(|x| x.timestamp_s).collect(),
        pitch_deg: s.iter().map(|x| x.pitch_deg).collect(),
        displacement_x_m: vec![0.0; s.len()],
    };
    let gap_limit = 3.0 / series.nominal_rate_hz;

    let mut start = 0;
    while start < s.len() {
        let w = reset_window(s[start].timestamp_s, reset_period_s);
        let end = start
            + s[start..]
                .iter()
                .take_while(|x| reset_window(x.timestamp_s, reset_period_s) == w)
                .count();
        let seg = &s[start..end];
        let bias = seg.iter().map(|x| x.ax).sum::<f64>() / seg.len() as f64;
        let (mut v, mut x) = (0.0, 0.0);
        for k in 1..seg.len() {
            let dt = seg[k].timestamp_s - seg[k - 1].timestamp_s;
            if dt > gap_limit {
                log::warn!(
                    "IMU gap of {dt:.3} s at t = {:.3} s (more than 3 sample periods)",
                    seg[k].timestamp_s
                );
            }
            let v_next = v + 0.5 * ((seg[k - 1].ax - bias) + (seg[k].ax - bias)) * dt;
            x += 0.5 * (v + v_next) * dt;
            v = v_next;
            trace.displacement_x_m[start + k] = x;
        }
        start = end;
    }
    Ok(trace)
}

/// Smooth, then integrate.
pub fn kinematics(series: &ImuSeries, window_samples: usize, reset_period_s: f64) -> Result<KinematicTrace> {
    if series.is_empty() {
        return Ok(KinematicTrace::default());
    }
    let window = window_samples.min(if series.len() % 2 == 1 {
        series.len()
    } else {
        series.len() - 1
    });
    integrate_displacement(&smooth(series, window)?, reset_period_s)
}

pub const IMU_CSV_HEADER: &str = "timestamp,yaw,pitch,roll,x,y,z";

pub fn write_imu_csv(series: &ImuSeries, path: &Path) -> Result<()> {
    csvfmt::write_lines(
        path,
        IMU_CSV_HEADER,
        series.samples.iter().map(|s| {
            let mut row = fmt_f64(s.timestamp_s);
            for v in s.channels() {
                row.push(',');
                row.push_str(&fmt_f64(v));
            }
            row
        }),
    )
}

pub fn load_imu_csv(path: &Path) -> Result<ImuSeries> {
    let rows = csvfmt::read_rows(path, IMU_CSV_HEADER)?;
    let names = ["timestamp", "yaw", "pitch", "roll", "x", "y", "z"];
    let mut samples = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        let mut v = [0.0; 7];
        for (i, name) in names.iter().enumerate() {
            v[i] = csvfmt::parse_f64(path, line, &f[i], name)?;
        }
        if let Some(prev) = samples.last().map(|p: &ImuSample| p.timestamp_s) {
            if !(v[0] > prev) {
                return Err(Error::Validation(format!(
                    "{}:{line}: timestamp {} does not increase",
                    path.display(),
                    v[0]
                )));
            }
        }
        samples.push(ImuSample::with_channels(v[0], [v[1], v[2], v[3], v[4], v[5], v[6]]));
    }
    ImuSeries::new(samples, NOMINAL_RATE_HZ)
}
