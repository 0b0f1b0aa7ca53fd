use neckcare::features::{channel_stats, extract_session, extract_window, WindowSpec, N_STATS};
use neckcare::fusion::FusedRecord;
use neckcare::PostureLabel;
use proptest::prelude::*;

const RATE: f64 = 50.0;
const MEAN: usize = 0;
const STD: usize = 1;
const MIN: usize = 2;
const MAX: usize = 3;
const PEAK: usize = 4;
const MEAN_FREQ: usize = 5;
const SKEW: usize = 6;
const KURT: usize = 7;

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 16..200).prop_filter("needs spread", |x| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64 > 1e-3
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn records(n: usize, f: impl Fn(usize) -> [f64; 4]) -> Vec<FusedRecord> {
    (0..n)
        .map(|i| {
            let [p, d, a, b] = f(i);
            FusedRecord {
                timestamp_s: i as f64 / RATE,
                pitch_deg: p,
                displacement_x_m: d,
                distance1_m: a,
                distance2_m: b,
                label: Some(PostureLabel::SlightBend),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn offset_moves_location_only(x in signal(), c in -100.0f64..100.0) {
        let a = channel_stats(&x, RATE);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = channel_stats(&shifted, RATE);
        for k in [MEAN, MIN, MAX] {
            prop_assert!(close(b[k], a[k] + c, 1e-9), "stat {}", k);
        }
        for k in [STD, SKEW, KURT, MEAN_FREQ] {
            prop_assert!(close(b[k], a[k], 1e-6), "stat {}: {} vs {}", k, a[k], b[k]);
        }
        prop_assert_eq!(a[PEAK], b[PEAK]);
    }

    #[test]
    fn scaling_is_covariant(x in signal(), s in 0.01f64..100.0, flip in any::<bool>()) {
        let s = if flip { -s } else { s };
        let a = channel_stats(&x, RATE);
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        let b = channel_stats(&scaled, RATE);
        prop_assert!(close(b[MEAN], a[MEAN] * s, 1e-9));
        prop_assert!(close(b[STD], a[STD] * s.abs(), 1e-9));
        let (lo, hi) = if s > 0.0 { (a[MIN] * s, a[MAX] * s) } else { (a[MAX] * s, a[MIN] * s) };
        prop_assert!(close(b[MIN], lo, 1e-12) && close(b[MAX], hi, 1e-12));
        prop_assert!(close(b[SKEW], a[SKEW] * s.signum(), 1e-6));
        prop_assert!(close(b[KURT], a[KURT], 1e-6));
        prop_assert!(close(b[MEAN_FREQ], a[MEAN_FREQ], 1e-9));
        prop_assert_eq!(a[PEAK], b[PEAK]);
    }

    #[test]
    fn moments_match_their_definitions(x in signal()) {
        let s = channel_stats(&x, RATE);
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let central = |p: i32| x.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
        let sd = central(2).sqrt();
        prop_assert!(close(s[MEAN], m, 1e-12));
        prop_assert!(close(s[STD], sd, 1e-9));
        prop_assert!(close(s[SKEW], central(3) / sd.powi(3), 1e-9));
        prop_assert!(close(s[KURT], central(4) / sd.powi(4) - 3.0, 1e-9));
        prop_assert!(s[MIN] <= s[MEAN] && s[MEAN] <= s[MAX]);
        prop_assert!(s[PEAK] > 0.0 && s[PEAK] <= RATE / 2.0);
        prop_assert!(s[MEAN_FREQ] >= 0.0 && s[MEAN_FREQ] <= RATE / 2.0);
    }

    #[test]
    fn channels_are_independent(x in prop::collection::vec(-1.0f64..1.0, 100), y in prop::collection::vec(-1.0f64..1.0, 100)) {
        let base = records(100, |i| [x[i], 0.01 * x[i], 0.5, 0.5 + y[i]]);
        let changed = records(100, |i| [x[i], 0.01 * x[i], 0.5 + y[i], 0.5 + y[i]]);
        let a = extract_window(&base, RATE).unwrap().values;
        let b = extract_window(&changed, RATE).unwrap().values;
        prop_assert_eq!(&a[..2 * N_STATS], &b[..2 * N_STATS]);
        prop_assert_eq!(&a[3 * N_STATS..], &b[3 * N_STATS..]);
        prop_assert_eq!(&b[2 * N_STATS..3 * N_STATS], &b[3 * N_STATS..]);
    }
}

#[test]
fn sine_peak_lands_on_its_frequency() {
    // 2.5 Hz over a 2 s window at 50 Hz sits exactly on bin 5
    let x: Vec<f64> = (0..100)
        .map(|i| (2.0 * std::f64::consts::PI * 2.5 * i as f64 / RATE).sin())
        .collect();
    let s = channel_stats(&x, RATE);
    assert_eq!(s[PEAK], 2.5);
    assert!((s[MEAN_FREQ] - 2.5).abs() < 1e-6);
}

#[test]
fn session_windows_follow_length_and_hop() {
    let recs = records(50 * 60, |i| [(i as f64 * 0.1).sin(), 0.0, 0.5, 0.52]);
    let spec = WindowSpec::default();
    let w = extract_session(&recs, &spec, 7).unwrap();
    // 60 s, 2 s windows, 1 s hop
    assert_eq!(w.len(), 59);
    assert!(w
        .iter()
        .all(|f| f.participant_id == 7 && f.label == Some(PostureLabel::SlightBend)));
}
