//! Zero-order-hold merge of the 50 Hz kinematic trace with the ~2 Hz ranging stream.

use std::path::Path;

use crate::acoustic::DistanceEstimate;
use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::imu::KinematicTrace;
use crate::posture::PostureLabel;

pub const DEFAULT_MAX_STALENESS_S: f64 = 0.75;

const TIME_EPS: f64 = 1e-9;

/// One fused row: `[timestamp, pitch, displacement, distance1, distance2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedRecord {
    pub timestamp_s: f64,
    pub pitch_deg: f64,
    pub displacement_x_m: f64,
    pub distance1_m: f64,
    pub distance2_m: f64,
    pub label: Option<PostureLabel>,
}

impl FusedRecord {
    /// The four feature channels in canonical order.
    pub fn channels(&self) -> [f64; 4] {
        [
            self.pitch_deg,
            self.displacement_x_m,
            self.distance1_m,
            self.distance2_m,
        ]
    }
}

/// One record per kinematic sample that has a fresh enough distance estimate.
///
/// Distances are held from the latest estimate at or before the sample, as
/// long as it is no older than `max_staleness_s`. Samples before the first
/// estimate, or in a gap longer than the staleness bound, are dropped.
pub fn merge(trace: &KinematicTrace, estimates: &[DistanceEstimate], max_staleness_s: f64) -> Result<Vec<FusedRecord>> {
    if !(max_staleness_s >= 0.0) {
        return Err(Error::Config(format!(
            "staleness bound must be nonnegative, got {max_staleness_s}"
        )));
    }
    if estimates.windows(2).any(|w| w[1].timestamp_s < w[0].timestamp_s) {
        return Err(Error::Input("distance estimates are not time-ordered".into()));
    }
    let mut out = Vec::with_capacity(trace.len());
    let mut next = 0;
    let mut held: Option<&DistanceEstimate> = None;
    for i in 0..trace.len() {
        let t = trace.timestamps_s[i];
        while next < estimates.len() && estimates[next].timestamp_s <= t + TIME_EPS {
            held = Some(&estimates[next]);
            next += 1;
        }
        let Some(est) = held else { continue };
        if t - est.timestamp_s > max_staleness_s + TIME_EPS {
            continue;
        }
        out.push(FusedRecord {
            timestamp_s: t,
            pitch_deg: trace.pitch_deg[i],
            displacement_x_m: trace.displacement_x_m[i],
            distance1_m: est.distance1_m,
            distance2_m: est.distance2_m,
            label: None,
        });
    }
    Ok(out)
}

pub fn with_label(records: &mut [FusedRecord], label: PostureLabel) {
    records.iter_mut().for_each(|r| r.label = Some(label));
}

pub const FUSED_CSV_HEADER: &str = "timestamp,pitch,displacement,distance1,distance2,label";

pub fn fused_row(r: &FusedRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        fmt_f64(r.timestamp_s),
        fmt_f64(r.pitch_deg),
        fmt_f64(r.displacement_x_m),
        fmt_f64(r.distance1_m),
        fmt_f64(r.distance2_m),
        r.label.map(|l| l.as_str()).unwrap_or("")
    )
}

pub fn write_fused_csv(records: &[FusedRecord], path: &Path) -> Result<()> {
    csvfmt::write_lines(path, FUSED_CSV_HEADER, records.iter().map(fused_row))
}

pub fn read_fused_csv(path: &Path) -> Result<Vec<FusedRecord>> {
    csvfmt::read_rows(path, FUSED_CSV_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize, name: &str| csvfmt::parse_f64(path, line, &f[i], name);
            let d1 = num(3, "distance1")?;
            let d2 = num(4, "distance2")?;
            if d1 < 0.0 || d2 < 0.0 {
                return Err(Error::parse(path, line, "negative distance"));
            }
            let label = if f[5].is_empty() {
                None
            } else {
                Some(
                    f[5].parse::<PostureLabel>()
                        .map_err(|e| Error::parse(path, line, e.to_string()))?,
                )
            };
            Ok(FusedRecord {
                timestamp_s: num(0, "timestamp")?,
                pitch_deg: num(1, "pitch")?,
                displacement_x_m: num(2, "displacement")?,
                distance1_m: d1,
                distance2_m: d2,
                label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(n: usize) -> KinematicTrace {
        KinematicTrace {
            timestamps_s: (0..n).map(|i| i as f64 / 50.0).collect(),
            pitch_deg: (0..n).map(|i| -(i as f64) * 0.1).collect(),
            displacement_x_m: vec![0.0; n],
        }
    }

    fn est(t: f64, d: f64) -> DistanceEstimate {
        DistanceEstimate {
            timestamp_s: t,
            distance1_m: d,
            distance2_m: d + 0.01,
            raw_distance1_m: d,
            raw_distance2_m: d + 0.01,
            correlation_quality: 1.0,
            clamped: false,
        }
    }

    #[test]
    fn each_chirp_serves_25_records() {
        let tr = trace(500);
        let ests: Vec<_> = (0..20).map(|k| est(k as f64 * 0.5, 0.4 + 0.001 * k as f64)).collect();
        let out = merge(&tr, &ests, DEFAULT_MAX_STALENESS_S).unwrap();
        assert_eq!(out.len(), 500);
        for e in &ests {
            let n = out.iter().filter(|r| r.distance1_m == e.distance1_m).count();
            assert_eq!(n, 25);
        }
    }

    #[test]
    fn staleness_bound_drops_records() {
        let out = merge(&trace(200), &[est(0.0, 0.5)], 0.75).unwrap();
        assert_eq!(out.len(), 38); // t = 0.00 .. 0.74
        assert!(out.iter().all(|r| r.timestamp_s <= 0.75));
        assert_eq!(out.last().unwrap().timestamp_s, 0.74);
    }

    #[test]
    fn leading_samples_dropped_and_values_copied() {
        let tr = trace(100);
        let out = merge(&tr, &[est(0.4, 0.333)], 10.0).unwrap();
        assert_eq!(out[0].timestamp_s, 0.4);
        assert_eq!(out[0].distance1_m, 0.333);
        assert_eq!(out[0].distance2_m, 0.333 + 0.01);
        assert_eq!(out[0].pitch_deg, tr.pitch_deg[20]);
    }

    #[test]
    fn empty_trace_gives_empty_output() {
        assert!(merge(&KinematicTrace::default(), &[est(0.0, 1.0)], 0.75)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn fused_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fused.csv");
        let mut recs = merge(&trace(10), &[est(0.0, 0.45)], 1.0).unwrap();
        with_label(&mut recs[..5], PostureLabel::Hunch);
        write_fused_csv(&recs, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), FUSED_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "0.000000,0.000000,0.000000,0.450000,0.460000,hunch"
        );
        assert!(text.lines().last().unwrap().ends_with(','));
        let back = read_fused_csv(&p).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!(back[4].label, Some(PostureLabel::Hunch));
        assert_eq!(back[5].label, None);
    }

    proptest! {
        #[test]
        fn merge_respects_staleness_and_subsequence(
            times in prop::collection::vec(0.0f64..10.0, 0..30),
            staleness in 0.0f64..2.0,
        ) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            let ests: Vec<_> = times.iter().enumerate().map(|(i, &t)| est(t, i as f64)).collect();
            let tr = trace(500);
            let out = merge(&tr, &ests, staleness).unwrap();
            let mut j = 0;
            for r in &out {
                while tr.timestamps_s[j] != r.timestamp_s { j += 1; }
                // the held estimate is the latest one at or before the sample
                let idx = r.distance1_m as usize;
                prop_assert!(ests[idx].timestamp_s <= r.timestamp_s + 1e-9);
                prop_assert!(r.timestamp_s - ests[idx].timestamp_s <= staleness + 1e-9);
            }
            prop_assert_eq!(out.clone(), merge(&tr, &ests, staleness).unwrap());
        }
    }
}
