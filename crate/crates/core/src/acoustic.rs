//! Acoustic time-of-flight ranging.
//!
//! A speaker next to the screen emits a linear chirp, two ear-worn
//! microphones record it, and the arrival time is found by matched filtering
//! the recording against the emitted template. The envelope of the analytic
//! correlation is used for peak picking: the raw correlation of an 18-24 kHz
//! chirp oscillates at the carrier (about 2.3 samples per cycle at 48 kHz), so
//! its magnitude has many near-equal neighbours around the true lag, while the
//! envelope has a single smooth lobe that can be refined to a fraction of a
//! sample.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};

/// Uniformly sampled mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Input(format!("{what} buffer is empty")));
        }
        Ok(())
    }
}

/// Linear frequency sweep parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpSpec {
    pub f_start_hz: f64,
    pub f_end_hz: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub amplitude: f64,
    /// Raised-cosine fade length at each end, as a fraction of the duration.
    pub taper_fraction: f64,
}

impl Default for ChirpSpec {
    /// 18 kHz to 23.9 kHz over 50 ms at 48 kHz. The sweep stops short of the
    /// 24 kHz Nyquist edge.
    fn default() -> Self {
        Self {
            f_start_hz: 18_000.0,
            f_end_hz: 23_900.0,
            duration_s: 0.05,
            sample_rate_hz: 48_000.0,
            amplitude: 0.8,
            taper_fraction: 0.1,
        }
    }
}

impl ChirpSpec {
    pub fn new(f_start_hz: f64, f_end_hz: f64, duration_s: f64, sample_rate_hz: f64, amplitude: f64) -> Self {
        Self {
            f_start_hz,
            f_end_hz,
            duration_s,
            sample_rate_hz,
            amplitude,
            ..Self::default()
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("invalid chirp: {m}")));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample rate {} must be positive", self.sample_rate_hz));
        }
        if !(self.f_start_hz > 0.0 && self.f_start_hz < self.f_end_hz) {
            return bad(format!(
                "need 0 < f_start < f_end, got {} .. {}",
                self.f_start_hz, self.f_end_hz
            ));
        }
        if self.f_end_hz > self.sample_rate_hz / 2.0 {
            return bad(format!(
                "f_end {} exceeds Nyquist {}",
                self.f_end_hz,
                self.sample_rate_hz / 2.0
            ));
        }
        if !(self.duration_s > 0.0) || self.duration_s * self.sample_rate_hz < 8.0 {
            return bad(format!("duration {} s gives fewer than 8 samples", self.duration_s));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return bad(format!("amplitude {} outside (0, 1]", self.amplitude));
        }
        if !(0.0..=0.5).contains(&self.taper_fraction) {
            return bad(format!("taper fraction {} outside [0, 0.5]", self.taper_fraction));
        }
        Ok(())
    }
}

/// Synthesize a tapered linear chirp whose peak magnitude equals `spec.amplitude`.
pub fn generate_chirp(spec: &ChirpSpec) -> Result<SampleBuffer> {
    spec.validate()?;
    let n = spec.num_samples();
    let fs = spec.sample_rate_hz;
    let sweep_rate = (spec.f_end_hz - spec.f_start_hz) / spec.duration_s;
    let taper_len = (spec.taper_fraction * n as f64).round() as usize;

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = 2.0 * std::f64::consts::PI * (spec.f_start_hz * t + 0.5 * sweep_rate * t * t);
            phase.sin() * taper_gain(i, n, taper_len)
        })
        .collect();

    let peak = samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        let scale = spec.amplitude / peak;
        samples.iter_mut().for_each(|x| *x *= scale);
    }
    SampleBuffer::new(samples, fs)
}

fn taper_gain(i: usize, n: usize, taper_len: usize) -> f64 {
    if taper_len == 0 {
        return 1.0;
    }
    let edge = i.min(n - 1 - i);
    if edge >= taper_len {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * edge as f64 / taper_len as f64).cos())
    }
}

/// Sizes at or below this many multiply-adds use the direct sum.
const DIRECT_WORK_LIMIT: usize = 1 << 16;

/// Full linear cross-correlation. Output index `j` holds lag `j - (template.len() - 1)`,
/// i.e. `out[j] = sum_n recorded[n + lag] * template[n]`.
pub fn cross_correlate(recorded: &SampleBuffer, template: &SampleBuffer) -> Result<SampleBuffer> {
    check_pair(recorded, template)?;
    let work = recorded.len().saturating_mul(template.len());
    let out = if work <= DIRECT_WORK_LIMIT {
        correlate_direct(&recorded.samples, &template.samples)
    } else {
        correlate_fft(&recorded.samples, &template.samples)
    };
    SampleBuffer::new(out, recorded.sample_rate_hz)
}

fn check_pair(recorded: &SampleBuffer, template: &SampleBuffer) -> Result<()> {
    recorded.ensure_nonempty("recorded")?;
    template.ensure_nonempty("template")?;
    if recorded.sample_rate_hz != template.sample_rate_hz {
        return Err(Error::Config(format!(
            "sample rates differ: recorded {} Hz, template {} Hz",
            recorded.sample_rate_hz, template.sample_rate_hz
        )));
    }
    Ok(())
}

/// Direct O(N·M) correlation, same layout as [`cross_correlate`].
pub fn correlate_direct(recorded: &[f64], template: &[f64]) -> Vec<f64> {
    let n = recorded.len();
    let m = template.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    (0..n + m - 1)
        .map(|j| {
            let lag = j as isize - (m as isize - 1);
            let lo = (-lag).max(0) as usize;
            let hi = m.min((n as isize - lag).max(0) as usize);
            (lo..hi)
                .map(|k| recorded[(k as isize + lag) as usize] * template[k])
                .sum()
        })
        .collect()
}

/// Transform-based correlation, same layout as [`cross_correlate`].
pub fn correlate_fft(recorded: &[f64], template: &[f64]) -> Vec<f64> {
    if recorded.is_empty() || template.is_empty() {
        return Vec::new();
    }
    let filter = MatchedFilterPlan::new(template, recorded.len());
    let circ = filter.correlate(recorded, false);
    filter
        .linear_layout(&circ, recorded.len())
        .iter()
        .map(|c| c.re)
        .collect()
}

/// Precomputed template spectrum for repeated correlations of equal-length recordings.
struct MatchedFilterPlan {
    fft_len: usize,
    template_len: usize,
    template_energy: f64,
    template_spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl MatchedFilterPlan {
    fn new(template: &[f64], recorded_len: usize) -> Self {
        let fft_len = (recorded_len + template.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut spectrum: Vec<Complex<f64>> = template
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(fft_len)
            .collect();
        forward.process(&mut spectrum);
        spectrum.iter_mut().for_each(|c| *c = c.conj());
        Self {
            fft_len,
            template_len: template.len(),
            template_energy: template.iter().map(|x| x * x).sum(),
            template_spectrum: spectrum,
            forward,
            inverse,
        }
    }

    /// Circular correlation (lag k at index k, negative lags wrapped). With
    /// `analytic` the negative-frequency half is suppressed so the result's
    /// real part is the correlation and its modulus the envelope.
    fn correlate(&self, recorded: &[f64], analytic: bool) -> Vec<Complex<f64>> {
        let l = self.fft_len;
        let mut buf: Vec<Complex<f64>> = recorded
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(l)
            .collect();
        self.forward.process(&mut buf);
        for (b, t) in buf.iter_mut().zip(&self.template_spectrum) {
            *b *= t;
        }
        if analytic {
            let half = l / 2;
            for (k, b) in buf.iter_mut().enumerate() {
                if k == 0 || k == half {
                    continue;
                }
                if k < half {
                    *b *= 2.0;
                } else {
                    *b = Complex::new(0.0, 0.0);
                }
            }
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / l as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    fn linear_layout(&self, circ: &[Complex<f64>], recorded_len: usize) -> Vec<Complex<f64>> {
        let m = self.template_len;
        (0..recorded_len + m - 1)
            .map(|j| {
                let lag = j as isize - (m as isize - 1);
                circ[lag.rem_euclid(self.fft_len as isize) as usize]
            })
            .collect()
    }
}

/// Speed of sound and system latency for converting arrival lags to distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingConfig {
    pub speed_of_sound_mps: f64,
    pub loopback_latency_s: f64,
    /// Minimum normalized correlation peak (fraction of the best possible
    /// match) for a chirp to count as detected.
    pub peak_min_prominence: f64,
}

impl Default for RangingConfig {
    fn default() -> Self {
        Self {
            speed_of_sound_mps: 343.0,
            loopback_latency_s: 0.0,
            peak_min_prominence: 0.3,
        }
    }
}

impl RangingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(300.0..=400.0).contains(&self.speed_of_sound_mps) {
            return Err(Error::Config(format!(
                "speed of sound {} m/s outside [300, 400]",
                self.speed_of_sound_mps
            )));
        }
        if !(self.loopback_latency_s >= 0.0 && self.loopback_latency_s.is_finite()) {
            return Err(Error::Config(format!(
                "loopback latency {} s must be nonnegative",
                self.loopback_latency_s
            )));
        }
        if !(self.peak_min_prominence >= 0.0) {
            return Err(Error::Config("peak prominence must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Result of matched filtering one recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofEstimate {
    /// Latency-corrected time of flight (may be negative before clamping).
    pub tof_s: f64,
    /// Arrival lag before latency correction.
    pub raw_tof_s: f64,
    /// Refined arrival lag in samples.
    pub lag_samples: f64,
    pub quality: f64,
}

/// Matched filter bound to one template and one recording length.
///
/// Reuses the template spectrum across calls; [`estimate_tof`] builds one per call.
pub struct MatchedFilter {
    template: SampleBuffer,
    plan: MatchedFilterPlan,
    recorded_len: usize,
}

impl MatchedFilter {
    pub fn new(template: &SampleBuffer, recorded_len: usize) -> Result<Self> {
        template.ensure_nonempty("template")?;
        if recorded_len == 0 {
            return Err(Error::Input("recorded buffer is empty".into()));
        }
        Ok(Self {
            template: template.clone(),
            plan: MatchedFilterPlan::new(&template.samples, recorded_len),
            recorded_len,
        })
    }

    pub fn template(&self) -> &SampleBuffer {
        &self.template
    }

    pub fn estimate_tof(&self, recorded: &SampleBuffer, cfg: &RangingConfig) -> Result<TofEstimate> {
        check_pair(recorded, &self.template)?;
        if recorded.len() != self.recorded_len {
            return Err(Error::Input(format!(
                "matched filter planned for {} samples, got {}",
                self.recorded_len,
                recorded.len()
            )));
        }
        let circ = self.plan.correlate(&recorded.samples, true);
        let l = self.plan.fft_len;
        let env = |lag: isize| circ[lag.rem_euclid(l as isize) as usize].norm();

        // physical lags only: the chirp cannot arrive before it is emitted
        let n = recorded.len();
        let (mut best_lag, mut best) = (0usize, f64::NEG_INFINITY);
        for lag in 0..n {
            let e = env(lag as isize);
            if e > best {
                best = e;
                best_lag = lag;
            }
        }
        if !(best > 0.0) {
            return Err(Error::NoDetection {
                quality: 0.0,
                threshold: cfg.peak_min_prominence,
            });
        }
        // earliest local maximum within 90% of the global peak
        let peak_lag = (0..n)
            .find(|&lag| {
                let e = env(lag as isize);
                e >= 0.9 * best && e >= env(lag as isize - 1) && e >= env(lag as isize + 1)
            })
            .unwrap_or(best_lag);

        let y0 = env(peak_lag as isize);
        let ym = env(peak_lag as isize - 1);
        let yp = env(peak_lag as isize + 1);
        let refined = peak_lag as f64 + parabolic_offset(ym, y0, yp);

        let m = self.plan.template_len;
        let seg_end = (peak_lag + m).min(n);
        let seg_energy: f64 = recorded.samples[peak_lag..seg_end].iter().map(|x| x * x).sum();
        let denom = (self.plan.template_energy * seg_energy).sqrt();
        let quality = if denom > 0.0 { (y0 / denom).clamp(0.0, 1.0) } else { 0.0 };
        if quality < cfg.peak_min_prominence {
            return Err(Error::NoDetection {
                quality,
                threshold: cfg.peak_min_prominence,
            });
        }

        let raw_tof_s = refined / recorded.sample_rate_hz;
        Ok(TofEstimate {
            tof_s: raw_tof_s - cfg.loopback_latency_s,
            raw_tof_s,
            lag_samples: refined,
            quality,
        })
    }
}

/// Vertex offset of the parabola through three equally spaced points, in [-0.5, 0.5].
pub fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < f64::EPSILON * y0.abs().max(1e-300) || denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
}

/// Time of flight of `template` within `recorded`, corrected by the loopback latency.
pub fn estimate_tof(recorded: &SampleBuffer, template: &SampleBuffer, cfg: &RangingConfig) -> Result<TofEstimate> {
    check_pair(recorded, template)?;
    MatchedFilter::new(template, recorded.len())?.estimate_tof(recorded, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub meters: f64,
    /// Set when a negative corrected time of flight was clamped to zero,
    /// which points at stale loopback calibration.
    pub clamped: bool,
}

pub fn tof_to_distance(tof_s: f64, cfg: &RangingConfig) -> Distance {
    let d = tof_s * cfg.speed_of_sound_mps;
    if d < 0.0 {
        Distance {
            meters: 0.0,
            clamped: true,
        }
    } else {
        Distance {
            meters: d,
            clamped: false,
        }
    }
}

/// Loopback latency from a recording taken with the microphones at the speaker.
pub fn calibrate_loopback(recorded_at_contact: &SampleBuffer, template: &SampleBuffer) -> Result<f64> {
    let cfg = RangingConfig {
        loopback_latency_s: 0.0,
        ..RangingConfig::default()
    };
    Ok(estimate_tof(recorded_at_contact, template, &cfg)?.raw_tof_s)
}

/// Distances from one chirp to both microphones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub timestamp_s: f64,
    pub distance1_m: f64,
    pub distance2_m: f64,
    /// Uncorrected (latency included) distances, as logged.
    pub raw_distance1_m: f64,
    pub raw_distance2_m: f64,
    pub correlation_quality: f64,
    pub clamped: bool,
}

/// Range both channels of one capture. A missed detection on either channel
/// makes the whole slot missing.
pub fn range_dual(
    mic1: &SampleBuffer,
    mic2: &SampleBuffer,
    template: &SampleBuffer,
    cfg: &RangingConfig,
    timestamp_s: f64,
) -> Result<DistanceEstimate> {
    if mic1.len() != mic2.len() || mic1.sample_rate_hz != mic2.sample_rate_hz {
        return Err(Error::Input(
            "microphone buffers must cover the same capture interval".into(),
        ));
    }
    let filter = MatchedFilter::new(template, mic1.len())?;
    range_dual_with(&filter, mic1, mic2, cfg, timestamp_s)
}

pub fn range_dual_with(
    filter: &MatchedFilter,
    mic1: &SampleBuffer,
    mic2: &SampleBuffer,
    cfg: &RangingConfig,
    timestamp_s: f64,
) -> Result<DistanceEstimate> {
    let a = filter.estimate_tof(mic1, cfg)?;
    let b = filter.estimate_tof(mic2, cfg)?;
    let d1 = tof_to_distance(a.tof_s, cfg);
    let d2 = tof_to_distance(b.tof_s, cfg);
    Ok(DistanceEstimate {
        timestamp_s,
        distance1_m: d1.meters,
        distance2_m: d2.meters,
        raw_distance1_m: a.raw_tof_s * cfg.speed_of_sound_mps,
        raw_distance2_m: b.raw_tof_s * cfg.speed_of_sound_mps,
        correlation_quality: a.quality.min(b.quality),
        clamped: d1.clamped || d2.clamped,
    })
}

pub const RANGING_LOG_HEADER: &str = "timestamp,raw_distance1,raw_distance2,corrected_distance1,corrected_distance2";

pub fn write_ranging_log(estimates: &[DistanceEstimate], path: &Path) -> Result<()> {
    csvfmt::write_lines(
        path,
        RANGING_LOG_HEADER,
        estimates.iter().map(|e| {
            format!(
                "{},{},{},{},{}",
                fmt_f64(e.timestamp_s),
                fmt_f64(e.raw_distance1_m),
                fmt_f64(e.raw_distance2_m),
                fmt_f64(e.distance1_m),
                fmt_f64(e.distance2_m)
            )
        }),
    )
}

/// Read a ranging log back. The file carries no quality column, so quality is 1.
pub fn read_ranging_log(path: &Path) -> Result<Vec<DistanceEstimate>> {
    csvfmt::read_rows(path, RANGING_LOG_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize, name: &str| csvfmt::parse_f64(path, line, &f[i], name);
            let d1 = num(3, "corrected_distance1")?;
            let d2 = num(4, "corrected_distance2")?;
            if d1 < 0.0 || d2 < 0.0 {
                return Err(Error::parse(path, line, "negative corrected distance"));
            }
            Ok(DistanceEstimate {
                timestamp_s: num(0, "timestamp")?,
                raw_distance1_m: num(1, "raw_distance1")?,
                raw_distance2_m: num(2, "raw_distance2")?,
                distance1_m: d1,
                distance2_m: d2,
                correlation_quality: 1.0,
                clamped: false,
            })
        })
        .collect()
}
