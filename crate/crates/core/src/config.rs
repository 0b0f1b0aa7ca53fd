//! Flat `key = value` scenario files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and duplicate keys are errors. Every key is optional and
//! falls back to the documented default.
//!
//! ```text
//! # dataset
//! participants = 15                 # virtual participants (>= 2)
//! sessions_per_posture = 1
//! seed = 42                         # also seeds training
//! session_s = 180                   # hold time per posture
//! chirp_period_s = 0.5
//! pipeline_delay_s = 0.0106667      # speaker-to-mic pipeline latency
//! write_raw = false                 # also write raw IMU CSV and ranging log
//!
//! chirp.f_start_hz = 18000          chirp.f_end_hz = 23900
//! chirp.duration_s = 0.05           chirp.sample_rate_hz = 48000
//! chirp.amplitude = 0.8             chirp.taper_fraction = 0.1
//!
//! ranging.speed_of_sound_mps = 343  ranging.peak_min_prominence = 0.3
//! ranging.loopback_latency_s = 0    # replaced by calibration when simulating
//!
//! scene.condition = silence         # silence | pink_noise | pop_music | movement
//! scene.snr_db = 40                 # default depends on the condition
//! scene.n_reflections = 2           scene.reflection_atten = 0.3
//! scene.movement_amp_m = 0          scene.movement_freq_hz = 0.2
//!
//! population.pitch_offset_std_deg = 2.5
//! population.distance_offset_max_m = 0.04
//! population.mic_spread_m = 0.005
//! population.movement_scale_min = 0.7
//! population.movement_scale_max = 1.3
//!
//! profile.<posture>.pitch_mean_deg      # posture: neutral, forward_head,
//! profile.<posture>.pitch_jitter_deg    #   slight_bend, severe_bend, hunch
//! profile.<posture>.displacement_amp_m
//! profile.<posture>.screen_distance_m
//! profile.<posture>.distance_jitter_m
//!
//! imu.smoothing_window = 5          imu.reset_period_s = 2
//! fusion.max_staleness_s = 0.75
//! window.length_s = 2               window.hop_s = 1       window.rate_hz = 50
//!
//! train.n_trees = 100               train.max_features = auto   # floor(sqrt(k))
//! train.min_samples_leaf = 1        train.max_depth = none
//! train.bootstrap = true
//!
//! alerts.threshold.<posture> = 120  # seconds, or none
//! alerts.min_screen_distance_m = 0.4
//! alerts.distance_threshold_s = 60
//! alerts.cooldown_s = 300           alerts.debounce_s = 2
//! ```
//!
//! (The block above shows several keys per line for brevity; the file
//! itself takes one per line.)

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::alerts::AlertPolicy;
use crate::error::{Error, Result};
use crate::features::WindowSpec;
use crate::forest::TrainConfig;
use crate::posture::PostureLabel;
use crate::simulator::{AcousticSceneConfig, DatasetConfig};

/// Parsed key/value pairs with their source lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line, format!("expected 'key = value', got '{content}'")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(Error::parse(path, line, "empty key"));
            }
            if let Some((first, _)) = entries.insert(k.clone(), (line, v)) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("duplicate key '{k}' (first on line {first})"),
                ));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = &self.entries[key];
        v.parse()
            .map_err(|_| Error::parse(&self.path, *line, format!("invalid value '{v}' for '{key}'")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let (_, v) = &self.entries[key];
        if matches!(v.to_ascii_lowercase().as_str(), "none" | "auto") {
            Ok(None)
        } else {
            self.value(key).map(Some)
        }
    }
}

/// Every configurable setting of the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSettings {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    /// `None`: floor(sqrt(k)) of the active feature subset.
    pub max_features: Option<usize>,
    pub window: WindowSpec,
    pub policy: AlertPolicy,
}

impl RunSettings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut s = Self::default();
        s.apply(&KeyValues::load(path)?)?;
        Ok(s)
    }

    /// Overrides fields named in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        // the condition picks scene defaults that the other scene keys refine
        if kv.entries.contains_key("scene.condition") {
            let cond = kv.value("scene.condition")?;
            self.dataset.scene = AcousticSceneConfig::for_condition(cond);
        }
        for key in kv.keys() {
            self.apply_one(kv, key)?;
        }
        self.dataset.validate()?;
        self.window.validate()?;
        self.policy.validate()?;
        Ok(())
    }

    fn apply_one(&mut self, kv: &KeyValues, key: &str) -> Result<()> {
        let d = &mut self.dataset;
        match key {
            "participants" => d.participants = kv.value(key)?,
            "sessions_per_posture" => d.sessions_per_posture = kv.value(key)?,
            "seed" => {
                d.seed = kv.value(key)?;
                self.train.seed = d.seed;
            }
            "session_s" => d.session_s = kv.value(key)?,
            "chirp_period_s" => d.chirp_period_s = kv.value(key)?,
            "pipeline_delay_s" => d.pipeline_delay_s = kv.value(key)?,
            "write_raw" => d.write_raw = kv.value(key)?,

            "chirp.f_start_hz" => d.chirp.f_start_hz = kv.value(key)?,
            "chirp.f_end_hz" => d.chirp.f_end_hz = kv.value(key)?,
            "chirp.duration_s" => d.chirp.duration_s = kv.value(key)?,
            "chirp.sample_rate_hz" => d.chirp.sample_rate_hz = kv.value(key)?,
            "chirp.amplitude" => d.chirp.amplitude = kv.value(key)?,
            "chirp.taper_fraction" => d.chirp.taper_fraction = kv.value(key)?,

            "ranging.speed_of_sound_mps" => d.ranging.speed_of_sound_mps = kv.value(key)?,
            "ranging.loopback_latency_s" => d.ranging.loopback_latency_s = kv.value(key)?,
            "ranging.peak_min_prominence" => d.ranging.peak_min_prominence = kv.value(key)?,

            "scene.condition" => {}
            "scene.snr_db" => d.scene.snr_db = kv.value(key)?,
            "scene.n_reflections" => d.scene.n_reflections = kv.value(key)?,
            "scene.reflection_atten" => d.scene.reflection_atten = kv.value(key)?,
            "scene.movement_amp_m" => d.scene.movement_amp_m = kv.value(key)?,
            "scene.movement_freq_hz" => d.scene.movement_freq_hz = kv.value(key)?,

            "population.pitch_offset_std_deg" => d.population.pitch_offset_std_deg = kv.value(key)?,
            "population.distance_offset_max_m" => d.population.distance_offset_max_m = kv.value(key)?,
            "population.mic_spread_m" => d.population.mic_spread_m = kv.value(key)?,
            "population.movement_scale_min" => d.population.movement_scale_min = kv.value(key)?,
            "population.movement_scale_max" => d.population.movement_scale_max = kv.value(key)?,

            "imu.smoothing_window" => d.smoothing_window = kv.value(key)?,
            "imu.reset_period_s" => d.reset_period_s = kv.value(key)?,
            "fusion.max_staleness_s" => d.max_staleness_s = kv.value(key)?,

            "window.length_s" => self.window.length_s = kv.value(key)?,
            "window.hop_s" => self.window.hop_s = kv.value(key)?,
            "window.rate_hz" => self.window.rate_hz = kv.value(key)?,

            "train.n_trees" => self.train.n_trees = kv.value(key)?,
            "train.max_features" => self.max_features = kv.optional(key)?,
            "train.min_samples_leaf" => self.train.min_samples_leaf = kv.value(key)?,
            "train.max_depth" => self.train.max_depth = kv.optional(key)?,
            "train.bootstrap" => self.train.bootstrap = kv.value(key)?,

            "alerts.min_screen_distance_m" => self.policy.min_screen_distance_m = kv.value(key)?,
            "alerts.distance_threshold_s" => self.policy.distance_threshold_s = kv.value(key)?,
            "alerts.cooldown_s" => self.policy.cooldown_s = kv.value(key)?,
            "alerts.debounce_s" => self.policy.debounce_s = kv.value(key)?,

            _ => {
                if let Some(rest) = key.strip_prefix("alerts.threshold.") {
                    let label = self.label(kv, key, rest)?;
                    self.policy.posture_thresholds_s[label.index()] = kv.optional(key)?;
                } else if let Some(rest) = key.strip_prefix("profile.") {
                    let (name, field) = rest.split_once('.').unwrap_or((rest, ""));
                    let label = self.label(kv, key, name)?;
                    let p = self
                        .dataset
                        .profiles
                        .get_mut(&label)
                        .expect("profiles cover every posture");
                    match field {
                        "pitch_mean_deg" => p.pitch_mean_deg = kv.value(key)?,
                        "pitch_jitter_deg" => p.pitch_jitter_deg = kv.value(key)?,
                        "displacement_amp_m" => p.displacement_amp_m = kv.value(key)?,
                        "screen_distance_m" => p.screen_distance_m = kv.value(key)?,
                        "distance_jitter_m" => p.distance_jitter_m = kv.value(key)?,
                        _ => return Err(unknown(kv, key)),
                    }
                } else {
                    return Err(unknown(kv, key));
                }
            }
        }
        Ok(())
    }

    fn label(&self, kv: &KeyValues, key: &str, name: &str) -> Result<PostureLabel> {
        name.parse().map_err(|_| unknown(kv, key))
    }
}

fn unknown(kv: &KeyValues, key: &str) -> Error {
    Error::parse(&kv.path, kv.entries[key].0, format!("unknown key '{key}'"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::SceneCondition;

    fn apply(text: &str) -> Result<RunSettings> {
        let mut s = RunSettings::default();
        s.apply(&KeyValues::parse(text, Path::new("test.conf"))?)?;
        Ok(s)
    }

    #[test]
    fn defaults_survive_empty_file() {
        assert_eq!(apply("# nothing\n\n").unwrap(), RunSettings::default());
    }

    #[test]
    fn overrides_apply() {
        let s = apply(
            "participants = 6\nseed = 7 # both seeds\nscene.condition = pink_noise\nscene.n_reflections = 0\n\
             profile.hunch.screen_distance_m = 0.3\nalerts.threshold.neutral = 600\nalerts.threshold.hunch = none\n\
             train.max_features = 3\ntrain.max_depth = 8\n",
        )
        .unwrap();
        assert_eq!(s.dataset.participants, 6);
        assert_eq!((s.dataset.seed, s.train.seed), (7, 7));
        assert_eq!(s.dataset.scene.condition, SceneCondition::PinkNoise75);
        assert_eq!(s.dataset.scene.snr_db, 6.0);
        assert_eq!(s.dataset.scene.n_reflections, 0);
        assert_eq!(s.dataset.profiles[&PostureLabel::Hunch].screen_distance_m, 0.3);
        assert_eq!(s.policy.posture_thresholds_s[0], Some(600.0));
        assert_eq!(s.policy.posture_thresholds_s[4], None);
        assert_eq!(s.max_features, Some(3));
        assert_eq!(s.train.max_depth, Some(8));
    }

    #[test]
    fn errors_name_the_line() {
        let msg = |t: &str| apply(t).unwrap_err().to_string();
        assert!(msg("seed = 1\nbogus = 2\n").contains("test.conf:2:"));
        assert!(msg("seed = x\n").contains("invalid value"));
        assert!(msg("seed = 1\nseed = 2\n").contains("duplicate"));
        assert!(msg("no equals sign\n").contains("test.conf:1:"));
        assert!(msg("profile.slouch.pitch_mean_deg = 1\n").contains("unknown key"));
        assert!(matches!(apply("participants = 1\n"), Err(Error::Config(_))));
    }
}
