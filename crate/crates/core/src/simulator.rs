//! Seeded virtual participants and acoustic scenes.
//!
//! Stands in for the head tracker, the speaker/microphone rig and the study
//! participants. Every output is a pure function of its configuration and
//! seed; parallel generation derives an independent child seed per unit, so
//! serial and parallel runs write identical bytes.
//!
//! The per-posture magnitudes below are simulator constants. They preserve the
//! qualitative relations between postures (bend depth ordering, hunching
//! closest to the screen with the most head travel), not measured values.
//!
//! | posture      | pitch (deg) | jitter | head travel (m) | screen (m) |
//! |--------------|-------------|--------|-----------------|------------|
//! | neutral      | -2          | 1.5    | 0.010           | 0.60       |
//! | forward head | -10         | 1.5    | 0.030           | 0.45       |
//! | slight bend  | -25         | 2.0    | 0.020           | 0.50       |
//! | severe bend  | -50         | 2.0    | 0.030           | 0.40       |
//! | hunch        | -45         | 2.0    | 0.080           | 0.35       |
//!
//! Pitch follows the tracker convention used throughout the crate: flexion
//! (looking down) is negative.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::acoustic::{
    self, calibrate_loopback, ChirpSpec, DistanceEstimate, MatchedFilter, RangingConfig, SampleBuffer,
};
use crate::csvfmt;
use crate::error::{Error, Result};
use crate::fusion::{self, FusedRecord};
use crate::imu::{self, ImuSample, ImuSeries, NOMINAL_RATE_HZ};
use crate::posture::PostureLabel;
use crate::rng::{child_seed, rng_for};

const GRAVITY: f64 = 9.81;
/// Length of the posture transition at the start of every session.
pub const TRANSITION_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostureProfile {
    pub label: PostureLabel,
    pub pitch_mean_deg: f64,
    pub pitch_jitter_deg: f64,
    /// Amplitude of forward/backward head travel while holding the posture.
    pub displacement_amp_m: f64,
    pub screen_distance_m: f64,
    pub distance_jitter_m: f64,
}

impl PostureProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.screen_distance_m > 0.1 && self.screen_distance_m < 1.5) {
            return Err(Error::Config(format!(
                "{}: screen distance {} outside (0.1, 1.5) m",
                self.label, self.screen_distance_m
            )));
        }
        if self.pitch_jitter_deg < 0.0 || self.distance_jitter_m < 0.0 || self.displacement_amp_m < 0.0 {
            return Err(Error::Config(format!("{}: jitters must be nonnegative", self.label)));
        }
        if !(-90.0..=90.0).contains(&self.pitch_mean_deg) {
            return Err(Error::Config(format!("{}: pitch outside [-90, 90]", self.label)));
        }
        Ok(())
    }
}

pub fn default_profiles() -> BTreeMap<PostureLabel, PostureProfile> {
    use PostureLabel::*;
    let p = |label, pitch_mean_deg, pitch_jitter_deg, displacement_amp_m, screen_distance_m| PostureProfile {
        label,
        pitch_mean_deg,
        pitch_jitter_deg,
        displacement_amp_m,
        screen_distance_m,
        distance_jitter_m: 0.02,
    };
    [
        p(Neutral, -2.0, 1.5, 0.010, 0.60),
        p(ForwardHead, -10.0, 1.5, 0.030, 0.45),
        p(SlightBend, -25.0, 2.0, 0.020, 0.50),
        p(SevereBend, -50.0, 2.0, 0.030, 0.40),
        p(Hunch, -45.0, 2.0, 0.080, 0.35),
    ]
    .into_iter()
    .map(|p| (p.label, p))
    .collect()
}

/// Inter-participant variability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantModel {
    pub id: u32,
    pub neutral_pitch_offset_deg: f64,
    pub mic_offsets_m: (f64, f64),
    pub movement_scale: f64,
    pub rng_seed: u64,
}

/// Spread of the participant population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationConfig {
    pub pitch_offset_std_deg: f64,
    /// Common screen-distance offset is drawn from ±this (both microphones).
    pub distance_offset_max_m: f64,
    /// Extra per-microphone offset, ±this.
    pub mic_spread_m: f64,
    pub movement_scale_min: f64,
    pub movement_scale_max: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            pitch_offset_std_deg: 2.5,
            distance_offset_max_m: 0.04,
            mic_spread_m: 0.005,
            movement_scale_min: 0.7,
            movement_scale_max: 1.3,
        }
    }
}

impl ParticipantModel {
    pub fn sample(id: u32, root_seed: u64, pop: &PopulationConfig) -> Self {
        let seed = child_seed(root_seed, &[u64::from(id)]);
        let mut rng = rng_for(seed, &[0]);
        let z: f64 = StandardNormal.sample(&mut rng);
        let common = pop.distance_offset_max_m * (2.0 * rng.random::<f64>() - 1.0);
        let mut mic = || (common + pop.mic_spread_m * (2.0 * rng.random::<f64>() - 1.0)).clamp(-0.05, 0.05);
        let mic_offsets_m = (mic(), mic());
        let lo = pop.movement_scale_min;
        let hi = pop.movement_scale_max.max(lo);
        Self {
            id,
            neutral_pitch_offset_deg: (z * pop.pitch_offset_std_deg).clamp(-10.0, 10.0),
            mic_offsets_m,
            movement_scale: lo + (hi - lo) * rng.random::<f64>(),
            rng_seed: seed,
        }
    }

    /// Same person, different randomness (one session of one posture).
    pub fn for_session(&self, label: PostureLabel, session: u32) -> Self {
        Self {
            rng_seed: child_seed(self.rng_seed, &[label.index() as u64 + 1, u64::from(session)]),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneCondition {
    Silence,
    PinkNoise75,
    PopMusic82,
    SilenceWithMovement,
}

impl SceneCondition {
    pub const ALL: [SceneCondition; 4] = [
        SceneCondition::Silence,
        SceneCondition::PinkNoise75,
        SceneCondition::PopMusic82,
        SceneCondition::SilenceWithMovement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneCondition::Silence => "silence",
            SceneCondition::PinkNoise75 => "pink_noise",
            SceneCondition::PopMusic82 => "pop_music",
            SceneCondition::SilenceWithMovement => "movement",
        }
    }

    pub fn is_static(self) -> bool {
        self != SceneCondition::SilenceWithMovement
    }
}

impl fmt::Display for SceneCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "silence" => Ok(SceneCondition::Silence),
            "pink_noise" | "pinknoise75" | "pink" => Ok(SceneCondition::PinkNoise75),
            "pop_music" | "popmusic82" | "music" => Ok(SceneCondition::PopMusic82),
            "movement" | "silencewithmovement" | "silence_with_movement" => Ok(SceneCondition::SilenceWithMovement),
            other => Err(Error::Config(format!("unknown scene condition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticSceneConfig {
    pub condition: SceneCondition,
    /// Received-chirp to noise power ratio. `-inf` means noise only.
    pub snr_db: f64,
    pub n_reflections: usize,
    pub reflection_atten: f64,
    pub movement_amp_m: f64,
    pub movement_freq_hz: f64,
}

impl AcousticSceneConfig {
    /// Defaults per condition. Sound levels map to SNR relative to the
    /// received chirp: pink noise 6 dB, music 0 dB, quiet room 40 dB.
    pub fn for_condition(condition: SceneCondition) -> Self {
        let snr_db = match condition {
            SceneCondition::Silence | SceneCondition::SilenceWithMovement => 40.0,
            SceneCondition::PinkNoise75 => 6.0,
            SceneCondition::PopMusic82 => 0.0,
        };
        Self {
            condition,
            snr_db,
            n_reflections: 2,
            reflection_atten: 0.3,
            movement_amp_m: if condition == SceneCondition::SilenceWithMovement {
                0.02
            } else {
                0.0
            },
            movement_freq_hz: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.reflection_atten) {
            return Err(Error::Config(format!(
                "reflection attenuation {} outside [0, 1)",
                self.reflection_atten
            )));
        }
        if !(self.movement_amp_m >= 0.0) || !(self.movement_freq_hz >= 0.0) {
            return Err(Error::Config(
                "movement amplitude and frequency must be nonnegative".into(),
            ));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("SNR is NaN".into()));
        }
        Ok(())
    }
}

impl Default for AcousticSceneConfig {
    fn default() -> Self {
        Self::for_condition(SceneCondition::Silence)
    }
}

/// Slow, band-limited wander: a few sinusoids with seeded frequencies and phases.
#[derive(Debug, Clone)]
struct Wander {
    parts: Vec<(f64, f64, f64)>, // (amplitude, frequency Hz, phase)
}

impl Wander {
    /// `std` is the standard deviation of the sum.
    fn new(rng: &mut ChaCha8Rng, std: f64, f_lo: f64, f_hi: f64, count: usize) -> Self {
        let amp = std * (2.0 / count as f64).sqrt();
        let parts = (0..count)
            .map(|_| {
                let f = f_lo + (f_hi - f_lo) * rng.random::<f64>();
                (amp, f, 2.0 * PI * rng.random::<f64>())
            })
            .collect();
        Self { parts }
    }

    fn value(&self, t: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin())
            .sum()
    }

    fn second_derivative(&self, t: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(a, f, p)| {
                let w = 2.0 * PI * f;
                -a * w * w * (2.0 * PI * f * t + p).sin()
            })
            .sum()
    }
}

/// Head motion shared by the IMU and acoustic synthesis of one session.
struct MotionModel {
    pitch_start: f64,
    pitch_target: f64,
    pitch_wander: Wander,
    yaw: f64,
    yaw_wander: Wander,
    roll_wander: Wander,
    travel_m: f64,
    sway: Wander,
    distance_wander: Wander,
}

impl MotionModel {
    fn new(profile: &PostureProfile, participant: &ParticipantModel) -> Self {
        let mut rng = rng_for(participant.rng_seed, &[1]);
        let offset = participant.neutral_pitch_offset_deg;
        let travel = profile.displacement_amp_m * participant.movement_scale;
        Self {
            pitch_start: offset,
            pitch_target: profile.pitch_mean_deg + offset,
            pitch_wander: Wander::new(&mut rng, profile.pitch_jitter_deg, 0.05, 0.6, 4),
            yaw: 10.0 * (2.0 * rng.random::<f64>() - 1.0),
            yaw_wander: Wander::new(&mut rng, 2.0, 0.02, 0.3, 3),
            roll_wander: Wander::new(&mut rng, 1.0, 0.02, 0.3, 3),
            travel_m: travel,
            sway: Wander::new(&mut rng, travel / 2.0_f64.sqrt(), 0.2, 0.8, 3),
            distance_wander: Wander::new(&mut rng, profile.distance_jitter_m, 0.005, 0.05, 3),
        }
    }

    fn ramp(t: f64) -> f64 {
        if t >= TRANSITION_S {
            1.0
        } else {
            0.5 * (1.0 - (PI * t / TRANSITION_S).cos())
        }
    }

    fn pitch(&self, t: f64) -> f64 {
        let r = Self::ramp(t);
        (self.pitch_start + (self.pitch_target - self.pitch_start) * r + r * self.pitch_wander.value(t))
            .clamp(-90.0, 90.0)
    }

    /// Forward head position: ramp into the posture plus sway.
    fn x(&self, t: f64) -> f64 {
        self.travel_m * Self::ramp(t) + Self::ramp(t) * self.sway.value(t)
    }

    fn ax(&self, t: f64) -> f64 {
        // d2/dt2 of travel*r(t) + r(t)*s(t)
        let (r, r1, r2) = if t >= TRANSITION_S {
            (1.0, 0.0, 0.0)
        } else {
            let w = PI / TRANSITION_S;
            (Self::ramp(t), 0.5 * w * (w * t).sin(), 0.5 * w * w * (w * t).cos())
        };
        let s = self.sway.value(t);
        let s1: f64 = self
            .sway
            .parts
            .iter()
            .map(|&(a, f, p)| a * 2.0 * PI * f * (2.0 * PI * f * t + p).cos())
            .sum();
        self.travel_m * r2 + r2 * s + 2.0 * r1 * s1 + r * self.sway.second_derivative(t)
    }
}

/// 50 Hz head-tracker series for one posture session.
pub fn synth_imu(profile: &PostureProfile, participant: &ParticipantModel, duration_s: f64) -> Result<ImuSeries> {
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("duration {duration_s} must be positive")));
    }
    profile.validate()?;
    let motion = MotionModel::new(profile, participant);
    let mut rng = rng_for(participant.rng_seed, &[2]);
    let n = (duration_s * NOMINAL_RATE_HZ).round() as usize;
    let accel_noise = 0.02;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / NOMINAL_RATE_HZ;
            let pitch = motion.pitch(t);
            let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
            ImuSample {
                timestamp_s: t,
                yaw_deg: (motion.yaw + motion.yaw_wander.value(t)).clamp(-180.0, 180.0),
                pitch_deg: pitch,
                roll_deg: motion.roll_wander.value(t).clamp(-180.0, 180.0),
                ax: motion.ax(t) + accel_noise * gauss(),
                ay: accel_noise * gauss(),
                az: -GRAVITY * pitch.to_radians().cos() + accel_noise * gauss(),
            }
        })
        .collect();
    ImuSeries::new(samples, NOMINAL_RATE_HZ)
}

/// Additive noise shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Music,
}

impl NoiseKind {
    fn for_condition(c: SceneCondition) -> Self {
        match c {
            SceneCondition::Silence | SceneCondition::SilenceWithMovement => NoiseKind::White,
            SceneCondition::PinkNoise75 => NoiseKind::Pink,
            SceneCondition::PopMusic82 => NoiseKind::Music,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn normalize_unit_power(v: &mut [f64]) {
    let p = v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64;
    if p > 0.0 {
        let s = 1.0 / p.sqrt();
        v.iter_mut().for_each(|x| *x *= s);
    }
}

fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = gaussian(rng, n).into_iter().map(|x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k);
        *b = if f == 0 {
            Complex::new(0.0, 0.0)
        } else {
            *b / (f as f64).sqrt()
        };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    normalize_unit_power(&mut out);
    out
}

/// Tonal chords with a beat envelope, a pink bed and decaying broadband
/// percussion hits.
fn music(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    const NOTES: [f64; 8] = [110.0, 146.8, 196.0, 220.0, 261.6, 329.6, 392.0, 440.0];
    let chord: Vec<(f64, f64)> = (0..3)
        .map(|_| (NOTES[rng.random_range(0..NOTES.len())], 2.0 * PI * rng.random::<f64>()))
        .collect();
    let beat_phase = 2.0 * PI * rng.random::<f64>();
    let mut out = pink(rng, n);
    out.iter_mut().for_each(|x| *x *= 0.3);
    for (i, x) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let env = 1.0 + 0.6 * (2.0 * PI * 2.0 * t + beat_phase).sin();
        let tone: f64 = chord
            .iter()
            .flat_map(|&(f0, ph)| (1..=6).map(move |h| (2.0 * PI * f0 * h as f64 * t + ph * h as f64).sin() / h as f64))
            .sum();
        *x += env * tone;
    }
    let hits = rng.random_range(1..=3);
    for _ in 0..hits {
        let start = rng.random_range(0..n);
        let decay = 0.004 * fs;
        for (j, o) in out[start..].iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut *rng);
            *o += 0.8 * g * (-(j as f64) / decay).exp();
        }
    }
    normalize_unit_power(&mut out);
    out
}

/// Unit-power noise of the given shape.
pub fn make_noise(kind: NoiseKind, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    match kind {
        NoiseKind::White => {
            let mut v = gaussian(rng, n);
            normalize_unit_power(&mut v);
            v
        }
        NoiseKind::Pink => pink(rng, n),
        NoiseKind::Music => music(rng, n, fs),
    }
}

/// Extra samples captured after the template; covers the pipeline delay,
/// the farthest screen distance and the reflections.
pub const DEFAULT_CAPTURE_MARGIN: usize = 2048;

/// Delays a template by arbitrary (fractional) amounts through the frequency
/// domain, which is exact for the band-limited, tapered chirp.
pub struct CaptureSynth {
    template: SampleBuffer,
    capture_len: usize,
    fft_len: usize,
    spectrum: Vec<Complex<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    template_power: f64,
}

/// Two-microphone recording of one chirp.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub mic1: SampleBuffer,
    pub mic2: SampleBuffer,
    /// Instantaneous acoustic path lengths at the capture time.
    pub true_distances_m: (f64, f64),
}

/// One propagation path: delay in seconds and linear gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path1 {
    pub delay_s: f64,
    pub gain: f64,
}

impl CaptureSynth {
    pub fn new(template: &SampleBuffer, capture_len: usize) -> Result<Self> {
        if template.is_empty() {
            return Err(Error::Input("template is empty".into()));
        }
        let capture_len = capture_len.max(template.len());
        let fft_len = (capture_len + template.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let mut spectrum: Vec<Complex<f64>> = template
            .samples
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(fft_len)
            .collect();
        planner.plan_fft_forward(fft_len).process(&mut spectrum);
        Ok(Self {
            template: template.clone(),
            capture_len,
            fft_len,
            spectrum,
            inverse: planner.plan_fft_inverse(fft_len),
            template_power: template.energy() / template.len() as f64,
        })
    }

    pub fn capture_len(&self) -> usize {
        self.capture_len
    }

    pub fn template(&self) -> &SampleBuffer {
        &self.template
    }

    /// Sum of delayed, scaled template copies (noise-free).
    pub fn render(&self, paths: &[Path1]) -> SampleBuffer {
        self.render_pair(paths, &[]).0
    }

    /// Two independent renders for the price of one inverse FFT: the real
    /// spectra are packed as `Y1 + i*Y2`.
    pub fn render_pair(&self, paths1: &[Path1], paths2: &[Path1]) -> (SampleBuffer, SampleBuffer) {
        let l = self.fft_len;
        let half = l / 2;
        let fs = self.template.sample_rate_hz;
        let h1 = self.transfer(paths1);
        let h2 = self.transfer(paths2);
        let i = Complex::new(0.0, 1.0);
        let mut buf = vec![Complex::new(0.0, 0.0); l];
        for k in 0..=half {
            let mut y1 = self.spectrum[k] * h1[k];
            let mut y2 = self.spectrum[k] * h2[k];
            if k == 0 || k == half {
                y1 = Complex::new(y1.re, 0.0);
                y2 = Complex::new(y2.re, 0.0);
            }
            buf[k] = y1 + i * y2;
            if k != 0 && k != half {
                buf[l - k] = y1.conj() + i * y2.conj();
            }
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / l as f64;
        let take = |f: fn(&Complex<f64>) -> f64| SampleBuffer {
            samples: buf[..self.capture_len].iter().map(|c| f(c) * scale).collect(),
            sample_rate_hz: fs,
        };
        (take(|c| c.re), take(|c| c.im))
    }

    /// Frequency response of a set of paths at bins `0..=L/2`.
    fn transfer(&self, paths: &[Path1]) -> Vec<Complex<f64>> {
        const ANCHOR: usize = 256;
        let l = self.fft_len;
        let fs = self.template.sample_rate_hz;
        let mut h = vec![Complex::new(0.0, 0.0); l / 2 + 1];
        for p in paths {
            let w = -2.0 * PI * p.delay_s * fs / l as f64;
            let step = Complex::from_polar(1.0, w);
            let mut phasor = Complex::new(0.0, 0.0);
            for (k, hk) in h.iter_mut().enumerate() {
                // re-anchor to keep the recurrence from drifting
                if k % ANCHOR == 0 {
                    phasor = Complex::from_polar(p.gain, w * k as f64);
                }
                *hk += phasor;
                phasor *= step;
            }
        }
        h
    }

    /// Paths plus additive noise at `snr_db` relative to the direct path's
    /// received power. `snr_db = -inf` drops the chirp entirely.
    pub fn render_noisy(&self, paths: &[Path1], noise: NoiseKind, snr_db: f64, rng: &mut ChaCha8Rng) -> SampleBuffer {
        let mut out = if snr_db == f64::NEG_INFINITY {
            SampleBuffer {
                samples: vec![0.0; self.capture_len],
                sample_rate_hz: self.template.sample_rate_hz,
            }
        } else {
            self.render(paths)
        };
        self.add_noise(
            &mut out,
            paths.first().map(|p| p.gain).unwrap_or(1.0),
            noise,
            snr_db,
            rng,
        );
        out
    }

    fn add_noise(&self, out: &mut SampleBuffer, direct_gain: f64, noise: NoiseKind, snr_db: f64, rng: &mut ChaCha8Rng) {
        if snr_db == f64::INFINITY {
            return;
        }
        let signal_power = self.template_power * direct_gain * direct_gain;
        let noise_std = if snr_db == f64::NEG_INFINITY {
            signal_power.sqrt().max(1e-3)
        } else {
            (signal_power / 10f64.powf(snr_db / 10.0)).sqrt()
        };
        let n = make_noise(noise, self.capture_len, out.sample_rate_hz, rng);
        for (x, v) in out.samples.iter_mut().zip(n) {
            *x += noise_std * v;
        }
    }
}

/// Gain of the direct path; spherical spreading referenced to 0.25 m.
fn spreading_gain(d: f64) -> f64 {
    (0.25 / d.max(0.05)).min(5.0)
}

/// Static reflector geometry of a session: extra path lengths in metres.
fn reflector_paths(scene: &AcousticSceneConfig, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[3]);
    (0..scene.n_reflections)
        .map(|_| 0.3 + 0.7 * rng.random::<f64>())
        .collect()
}

/// Ground-truth microphone distances at time `t`.
pub fn true_distances(
    profile: &PostureProfile,
    participant: &ParticipantModel,
    scene: &AcousticSceneConfig,
    t: f64,
) -> (f64, f64) {
    let motion = MotionModel::new(profile, participant);
    true_distances_with(&motion, profile, participant, scene, t)
}

fn true_distances_with(
    motion: &MotionModel,
    profile: &PostureProfile,
    participant: &ParticipantModel,
    scene: &AcousticSceneConfig,
    t: f64,
) -> (f64, f64) {
    let mut base = profile.screen_distance_m + motion.distance_wander.value(t) - (motion.x(t) - motion.travel_m);
    if scene.condition == SceneCondition::SilenceWithMovement {
        let phase = 2.0 * PI * (participant.rng_seed % 1000) as f64 / 1000.0;
        base += scene.movement_amp_m * (2.0 * PI * scene.movement_freq_hz * t + phase).sin();
    }
    (
        (base + participant.mic_offsets_m.0).max(0.0),
        (base + participant.mic_offsets_m.1).max(0.0),
    )
}

fn capture_paths(
    distance_m: f64,
    reflections: &[f64],
    scene: &AcousticSceneConfig,
    pipeline_delay_s: f64,
    c: f64,
) -> Vec<Path1> {
    let g = spreading_gain(distance_m);
    std::iter::once(Path1 {
        delay_s: pipeline_delay_s + distance_m / c,
        gain: g,
    })
    .chain(reflections.iter().map(|&extra| {
        let d = distance_m + extra;
        Path1 {
            delay_s: pipeline_delay_s + d / c,
            gain: scene.reflection_atten * spreading_gain(d),
        }
    }))
    .collect()
}

impl CaptureSynth {
    /// One chirp as heard by both microphones at session time `timestamp_s`.
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        &self,
        profile: &PostureProfile,
        participant: &ParticipantModel,
        scene: &AcousticSceneConfig,
        pipeline_delay_s: f64,
        speed_of_sound_mps: f64,
        timestamp_s: f64,
    ) -> Capture {
        let motion = MotionModel::new(profile, participant);
        let reflections = reflector_paths(scene, participant.rng_seed);
        self.capture_with(
            &motion,
            &reflections,
            profile,
            participant,
            scene,
            pipeline_delay_s,
            speed_of_sound_mps,
            timestamp_s,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn capture_with(
        &self,
        motion: &MotionModel,
        reflections: &[f64],
        profile: &PostureProfile,
        participant: &ParticipantModel,
        scene: &AcousticSceneConfig,
        pipeline_delay_s: f64,
        speed_of_sound_mps: f64,
        timestamp_s: f64,
    ) -> Capture {
        let (d1, d2) = true_distances_with(motion, profile, participant, scene, timestamp_s);
        let mut rng = rng_for(participant.rng_seed, &[4, (timestamp_s * 1000.0).round() as u64]);
        let noise = NoiseKind::for_condition(scene.condition);
        let paths1 = capture_paths(d1, reflections, scene, pipeline_delay_s, speed_of_sound_mps);
        let paths2 = capture_paths(d2, reflections, scene, pipeline_delay_s, speed_of_sound_mps);
        let (mut mic1, mut mic2) = if scene.snr_db == f64::NEG_INFINITY {
            let silent = SampleBuffer {
                samples: vec![0.0; self.capture_len],
                sample_rate_hz: self.template.sample_rate_hz,
            };
            (silent.clone(), silent)
        } else {
            self.render_pair(&paths1, &paths2)
        };
        self.add_noise(&mut mic1, paths1[0].gain, noise, scene.snr_db, &mut rng);
        self.add_noise(&mut mic2, paths2[0].gain, noise, scene.snr_db, &mut rng);
        Capture {
            mic1,
            mic2,
            true_distances_m: (d1, d2),
        }
    }

    /// Microphones held against the speaker: only the pipeline delay remains.
    pub fn contact(&self, pipeline_delay_s: f64) -> SampleBuffer {
        self.render(&[Path1 {
            delay_s: pipeline_delay_s,
            gain: 1.0,
        }])
    }
}

/// Capture length needed for a pipeline delay plus the farthest path.
pub fn capture_len_for(template: &SampleBuffer, pipeline_delay_s: f64) -> usize {
    let delay = (pipeline_delay_s * template.sample_rate_hz).ceil() as usize;
    template.len() + DEFAULT_CAPTURE_MARGIN.max(delay + 512)
}

/// One-shot convenience around [`CaptureSynth::capture`].
pub fn synth_capture(
    profile: &PostureProfile,
    participant: &ParticipantModel,
    scene: &AcousticSceneConfig,
    template: &SampleBuffer,
    pipeline_delay_s: f64,
    timestamp_s: f64,
) -> Result<Capture> {
    scene.validate()?;
    let synth = CaptureSynth::new(template, capture_len_for(template, pipeline_delay_s))?;
    Ok(synth.capture(profile, participant, scene, pipeline_delay_s, 343.0, timestamp_s))
}

/// Contact recording for loopback calibration.
pub fn synth_contact(template: &SampleBuffer, pipeline_delay_s: f64) -> Result<SampleBuffer> {
    let synth = CaptureSynth::new(template, capture_len_for(template, pipeline_delay_s))?;
    Ok(synth.contact(pipeline_delay_s))
}

/// Everything that determines a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub participants: u32,
    pub sessions_per_posture: u32,
    pub seed: u64,
    pub session_s: f64,
    pub chirp_period_s: f64,
    pub pipeline_delay_s: f64,
    pub chirp: ChirpSpec,
    pub ranging: RangingConfig,
    pub scene: AcousticSceneConfig,
    pub population: PopulationConfig,
    pub profiles: BTreeMap<PostureLabel, PostureProfile>,
    pub smoothing_window: usize,
    pub reset_period_s: f64,
    pub max_staleness_s: f64,
    /// Also write the raw IMU CSV and ranging log of every session.
    pub write_raw: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            participants: 15,
            sessions_per_posture: 1,
            seed: 42,
            session_s: 180.0,
            chirp_period_s: 0.5,
            pipeline_delay_s: 512.0 / 48_000.0,
            chirp: ChirpSpec::default(),
            ranging: RangingConfig::default(),
            scene: AcousticSceneConfig::default(),
            population: PopulationConfig::default(),
            profiles: default_profiles(),
            smoothing_window: 5,
            reset_period_s: 2.0,
            max_staleness_s: fusion::DEFAULT_MAX_STALENESS_S,
            write_raw: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.participants < 2 {
            return Err(Error::Config(format!(
                "need at least 2 participants for a participant-level split, got {}",
                self.participants
            )));
        }
        if self.sessions_per_posture == 0 {
            return Err(Error::Config("sessions_per_posture must be at least 1".into()));
        }
        if !(self.session_s > TRANSITION_S) {
            return Err(Error::Config(format!("session must be longer than {TRANSITION_S} s")));
        }
        if !(self.chirp_period_s > 0.0) || !(self.pipeline_delay_s >= 0.0) {
            return Err(Error::Config(
                "chirp period must be positive, pipeline delay nonnegative".into(),
            ));
        }
        if self.smoothing_window.is_multiple_of(2) {
            return Err(Error::Config("smoothing window must be odd".into()));
        }
        self.chirp.validate()?;
        self.ranging.validate()?;
        self.scene.validate()?;
        for label in PostureLabel::ALL {
            self.profiles
                .get(&label)
                .ok_or_else(|| Error::Config(format!("missing profile for {label}")))?
                .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub participant: u32,
    pub posture: PostureLabel,
    pub session: u32,
    /// Relative to the dataset directory.
    pub path: PathBuf,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "participant,posture,session,path,seed";

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    csvfmt::write_lines(
        path,
        MANIFEST_HEADER,
        entries.iter().map(|e| {
            format!(
                "{},{},{},{},{}",
                e.participant,
                e.posture,
                e.session,
                e.path.to_string_lossy().replace('\\', "/"),
                e.seed
            )
        }),
    )
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    csvfmt::read_rows(path, MANIFEST_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let int = |i: usize, name: &str| -> Result<u64> {
                f[i].parse()
                    .map_err(|_| Error::parse(path, line, format!("invalid {name} '{}'", f[i])))
            };
            Ok(ManifestEntry {
                participant: int(0, "participant")? as u32,
                posture: f[1]
                    .parse()
                    .map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
                session: int(2, "session")? as u32,
                path: PathBuf::from(&f[3]),
                seed: int(4, "seed")?,
            })
        })
        .collect()
}

/// Output of the full sensing pipeline for one session.
#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub imu: ImuSeries,
    pub estimates: Vec<DistanceEstimate>,
    pub missed_chirps: usize,
    pub records: Vec<FusedRecord>,
}

/// Runs one posture session through simulation, ranging, IMU processing and fusion.
pub struct SessionRunner {
    cfg: DatasetConfig,
    synth: CaptureSynth,
    filter: MatchedFilter,
    ranging: RangingConfig,
}

impl SessionRunner {
    /// Builds the template and calibrates the loopback latency on a contact recording.
    pub fn new(cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        let template = acoustic::generate_chirp(&cfg.chirp)?;
        let len = capture_len_for(&template, cfg.pipeline_delay_s);
        let synth = CaptureSynth::new(&template, len)?;
        let latency = calibrate_loopback(&synth.contact(cfg.pipeline_delay_s), &template)?;
        let ranging = RangingConfig {
            loopback_latency_s: latency,
            ..cfg.ranging
        };
        Ok(Self {
            cfg: cfg.clone(),
            filter: MatchedFilter::new(&template, len)?,
            synth,
            ranging,
        })
    }

    pub fn ranging(&self) -> &RangingConfig {
        &self.ranging
    }

    pub fn run(&self, participant: &ParticipantModel, label: PostureLabel, session: u32) -> Result<SessionOutput> {
        let cfg = &self.cfg;
        let profile = cfg.profiles[&label];
        let p = participant.for_session(label, session);
        let imu_series = synth_imu(&profile, &p, cfg.session_s)?;

        let motion = MotionModel::new(&profile, &p);
        let reflections = reflector_paths(&cfg.scene, p.rng_seed);
        let n_chirps = (cfg.session_s / cfg.chirp_period_s - 1e-9).floor() as usize + 1;
        let mut estimates = Vec::with_capacity(n_chirps);
        let mut missed = 0;
        for k in 0..n_chirps {
            let t = k as f64 * cfg.chirp_period_s;
            let cap = self.synth.capture_with(
                &motion,
                &reflections,
                &profile,
                &p,
                &cfg.scene,
                cfg.pipeline_delay_s,
                cfg.ranging.speed_of_sound_mps,
                t,
            );
            match acoustic::range_dual_with(&self.filter, &cap.mic1, &cap.mic2, &self.ranging, t) {
                Ok(e) => estimates.push(e),
                Err(Error::NoDetection { .. }) => missed += 1,
                Err(e) => return Err(e),
            }
        }

        let trace = imu::kinematics(&imu_series, cfg.smoothing_window, cfg.reset_period_s)?;
        let mut records = fusion::merge(&trace, &estimates, cfg.max_staleness_s)?;
        fusion::with_label(&mut records, label);
        Ok(SessionOutput {
            imu: imu_series,
            estimates,
            missed_chirps: missed,
            records,
        })
    }
}

/// Generate the labelled dataset under `out_dir`: one fused CSV per
/// participant × posture × session plus `manifest.csv`.
pub fn synth_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let runner = SessionRunner::new(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let units: Vec<(u32, PostureLabel, u32)> = (1..=cfg.participants)
        .flat_map(|p| {
            PostureLabel::ALL
                .into_iter()
                .flat_map(move |l| (0..cfg.sessions_per_posture).map(move |s| (p, l, s)))
        })
        .collect();

    let entries = units
        .par_iter()
        .map(|&(pid, label, session)| {
            let participant = ParticipantModel::sample(pid, cfg.seed, &cfg.population);
            let out = runner.run(&participant, label, session)?;
            let stem = format!("p{pid:02}_{label}_s{session}");
            let rel = PathBuf::from(format!("{stem}.csv"));
            fusion::write_fused_csv(&out.records, &out_dir.join(&rel))?;
            if cfg.write_raw {
                let raw = out_dir.join("raw");
                imu::write_imu_csv(&out.imu, &raw.join(format!("{stem}_imu.csv")))?;
                acoustic::write_ranging_log(&out.estimates, &raw.join(format!("{stem}_ranging.csv")))?;
            }
            if out.missed_chirps > 0 {
                log::debug!("{stem}: {} chirps not detected", out.missed_chirps);
            }
            Ok(ManifestEntry {
                participant: pid,
                posture: label,
                session,
                path: rel,
                seed: participant.for_session(label, session).rng_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    write_manifest(&entries, &out_dir.join(MANIFEST_FILE))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::{generate_chirp, range_dual};
    use approx::assert_abs_diff_eq;

    fn participant() -> ParticipantModel {
        ParticipantModel {
            id: 1,
            neutral_pitch_offset_deg: 0.0,
            mic_offsets_m: (0.0, 0.0),
            movement_scale: 1.0,
            rng_seed: 99,
        }
    }

    fn static_profile(d: f64) -> PostureProfile {
        PostureProfile {
            label: PostureLabel::Neutral,
            pitch_mean_deg: -2.0,
            pitch_jitter_deg: 0.0,
            displacement_amp_m: 0.0,
            screen_distance_m: d,
            distance_jitter_m: 0.0,
        }
    }

    #[test]
    fn default_profile_orderings() {
        use PostureLabel::*;
        let p = default_profiles();
        let pitch = |l| p[&l].pitch_mean_deg;
        assert!(pitch(SevereBend) < pitch(SlightBend));
        assert!(pitch(SlightBend) < pitch(ForwardHead));
        assert!(pitch(ForwardHead) < pitch(Neutral));
        let hunch = p[&Hunch].displacement_amp_m;
        assert!(p.values().all(|q| q.label == Hunch || q.displacement_amp_m < hunch));
        let closest = p
            .values()
            .min_by(|a, b| a.screen_distance_m.total_cmp(&b.screen_distance_m))
            .unwrap();
        assert_eq!(closest.label, Hunch);
        for q in p.values() {
            q.validate().unwrap();
            assert!(q.screen_distance_m > 0.1 && q.screen_distance_m < 1.5);
        }
    }

    #[test]
    fn imu_length_and_determinism() {
        let prof = default_profiles()[&PostureLabel::SlightBend];
        let a = synth_imu(&prof, &participant(), 180.0).unwrap();
        assert_eq!(a.len(), 9000);
        let b = synth_imu(&prof, &participant(), 180.0).unwrap();
        assert_eq!(a, b);
        a.check_rate().unwrap();
    }

    #[test]
    fn zero_jitter_pitch_is_exact_after_transition() {
        let mut prof = default_profiles()[&PostureLabel::SevereBend];
        prof.pitch_jitter_deg = 0.0;
        let s = synth_imu(&prof, &participant(), 10.0).unwrap();
        for x in s.samples().iter().filter(|x| x.timestamp_s >= TRANSITION_S) {
            assert_eq!(x.pitch_deg, prof.pitch_mean_deg);
        }
    }

    #[test]
    fn fractional_delay_matches_closed_form() {
        // delaying by an integer through the FFT path reproduces a shifted copy
        let t = generate_chirp(&ChirpSpec::default()).unwrap();
        let synth = CaptureSynth::new(&t, 4000).unwrap();
        let out = synth.render(&[Path1 {
            delay_s: 37.0 / 48_000.0,
            gain: 0.5,
        }]);
        for i in 0..t.len() {
            assert_abs_diff_eq!(out.samples[i + 37], 0.5 * t.samples[i], epsilon = 1e-9);
        }
        assert!(out.samples[..37].iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn static_silence_recovers_quarter_metre() {
        let t = generate_chirp(&ChirpSpec::default()).unwrap();
        let delay = 512.0 / 48_000.0;
        let latency = calibrate_loopback(&synth_contact(&t, delay).unwrap(), &t).unwrap();
        assert_abs_diff_eq!(latency, delay, epsilon = 1e-9);
        let cfg = RangingConfig {
            loopback_latency_s: latency,
            ..RangingConfig::default()
        };
        let scene = AcousticSceneConfig::for_condition(SceneCondition::Silence);
        let cap = synth_capture(&static_profile(0.25), &participant(), &scene, &t, delay, 1.0).unwrap();
        assert_eq!(cap.true_distances_m, (0.25, 0.25));
        let est = range_dual(&cap.mic1, &cap.mic2, &t, &cfg, 1.0).unwrap();
        assert_abs_diff_eq!(est.distance1_m, 0.25, epsilon = 0.002);
        assert_abs_diff_eq!(est.distance2_m, 0.25, epsilon = 0.002);
    }

    #[test]
    fn noise_only_is_not_detected() {
        let t = generate_chirp(&ChirpSpec::default()).unwrap();
        let scene = AcousticSceneConfig {
            snr_db: f64::NEG_INFINITY,
            ..AcousticSceneConfig::for_condition(SceneCondition::Silence)
        };
        let cap = synth_capture(&static_profile(0.5), &participant(), &scene, &t, 0.0, 0.0).unwrap();
        assert!(matches!(
            range_dual(&cap.mic1, &cap.mic2, &t, &RangingConfig::default(), 0.0),
            Err(Error::NoDetection { .. })
        ));
    }

    #[test]
    fn noise_shapes_have_unit_power_and_differ() {
        let mut rng = rng_for(1, &[]);
        for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Music] {
            let v = make_noise(kind, 4096, 48_000.0, &mut rng);
            let p = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-9);
        }
        // pink noise: low band dominates
        let v = make_noise(NoiseKind::Pink, 8192, 48_000.0, &mut rng);
        let diff_power = v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(diff_power < 0.5, "{diff_power}");
    }

    #[test]
    fn participants_are_seeded() {
        let pop = PopulationConfig::default();
        let a = ParticipantModel::sample(3, 42, &pop);
        assert_eq!(a, ParticipantModel::sample(3, 42, &pop));
        assert_ne!(a, ParticipantModel::sample(4, 42, &pop));
        assert!(a.mic_offsets_m.0.abs() <= 0.05 && a.mic_offsets_m.1.abs() <= 0.05);
        assert_ne!(
            a.for_session(PostureLabel::Hunch, 0).rng_seed,
            a.for_session(PostureLabel::Hunch, 1).rng_seed
        );
    }

    #[test]
    fn session_runner_produces_fused_records() {
        let cfg = DatasetConfig {
            session_s: 12.0,
            ..DatasetConfig::default()
        };
        let runner = SessionRunner::new(&cfg).unwrap();
        let p = ParticipantModel::sample(1, 42, &cfg.population);
        let out = runner.run(&p, PostureLabel::Hunch, 0).unwrap();
        assert_eq!(out.estimates.len() + out.missed_chirps, 24);
        assert_eq!(out.records.len(), 600);
        assert!(out.records.iter().all(|r| r.label == Some(PostureLabel::Hunch)));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let e = vec![ManifestEntry {
            participant: 3,
            posture: PostureLabel::ForwardHead,
            session: 1,
            path: PathBuf::from("p03_forward_head_s1.csv"),
            seed: 12345,
        }];
        write_manifest(&e, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "participant,posture,session,path,seed\n3,forward_head,1,p03_forward_head_s1.csv,12345\n"
        );
        assert_eq!(read_manifest(&p).unwrap(), e);
    }

    #[test]
    fn one_participant_is_rejected() {
        let cfg = DatasetConfig {
            participants: 1,
            ..DatasetConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
