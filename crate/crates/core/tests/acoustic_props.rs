use neckcare::acoustic::{
    calibrate_loopback, correlate_direct, correlate_fft, estimate_tof, generate_chirp, range_dual, ChirpSpec,
    RangingConfig, SampleBuffer,
};
use neckcare::rng::rng_for;
use neckcare::simulator::{capture_len_for, CaptureSynth, NoiseKind, Path1};
use neckcare::Error;
use proptest::prelude::*;
use rand::Rng;

const FS: f64 = 48_000.0;
const C: f64 = 343.0;

fn template() -> SampleBuffer {
    generate_chirp(&ChirpSpec::default()).unwrap()
}

fn synth(len: usize) -> CaptureSynth {
    let t = template();
    CaptureSynth::new(&t, t.len() + len).unwrap()
}

fn no_latency() -> RangingConfig {
    RangingConfig::default()
}

#[test]
fn autocorrelation_peaks_at_zero_lag_and_is_symmetric() {
    let t = template();
    let r = correlate_fft(&t.samples, &t.samples);
    let mid = t.len() - 1;
    let best = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
    assert_eq!(best, mid);
    for k in 1..200 {
        assert!((r[mid - k] - r[mid + k]).abs() < 1e-9 * r[mid]);
    }
}

#[test]
fn swapping_microphones_swaps_distances() {
    let s = synth(2048);
    let t = template();
    let (a, b) = s.render_pair(
        &[Path1 {
            delay_s: 0.3 / C,
            gain: 0.8,
        }],
        &[Path1 {
            delay_s: 0.5 / C,
            gain: 0.5,
        }],
    );
    let cfg = no_latency();
    let fwd = range_dual(&a, &b, &t, &cfg, 0.0).unwrap();
    let rev = range_dual(&b, &a, &t, &cfg, 0.0).unwrap();
    assert_eq!(fwd.distance1_m, rev.distance2_m);
    assert_eq!(fwd.distance2_m, rev.distance1_m);
}

#[test]
fn silence_is_not_a_detection() {
    let t = template();
    let rec = SampleBuffer::silence(t.len() + 2048, FS).unwrap();
    match estimate_tof(&rec, &t, &no_latency()) {
        Err(Error::NoDetection { .. }) => {}
        other => panic!("expected no detection, got {other:?}"),
    }
}

#[test]
fn calibration_cancels_pipeline_latency() {
    let t = template();
    for delay_samples in [0.0, 37.25, 512.0, 1500.5] {
        let pipeline = delay_samples / FS;
        let s = CaptureSynth::new(&t, capture_len_for(&t, pipeline)).unwrap();
        let latency = calibrate_loopback(&s.contact(pipeline), &t).unwrap();
        let cfg = RangingConfig {
            loopback_latency_s: latency,
            ..no_latency()
        };
        for d in [0.2, 0.45, 0.8] {
            let rec = s.render(&[Path1 {
                delay_s: pipeline + d / C,
                gain: 0.6,
            }]);
            let est = estimate_tof(&rec, &t, &cfg).unwrap();
            let got = est.tof_s * C;
            assert!((got - d).abs() < 1e-3, "pipeline {delay_samples} d {d}: got {got}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn injected_delay_is_recovered(delay in 0.0f64..3000.0, snr in 10.0f64..30.0, seed in any::<u64>(), pink in any::<bool>()) {
        let s = synth(3100);
        let mut rng = rng_for(seed, &[]);
        let kind = if pink { NoiseKind::Pink } else { NoiseKind::White };
        let rec = s.render_noisy(&[Path1 { delay_s: delay / FS, gain: 1.0 }], kind, snr, &mut rng);
        let est = estimate_tof(&rec, &template(), &no_latency()).unwrap();
        prop_assert!((est.lag_samples - delay).abs() <= 0.5, "delay {} got {}", delay, est.lag_samples);
    }

    #[test]
    fn estimate_is_monotone_in_delay(a in 0.0f64..2000.0, gap in 0.6f64..400.0) {
        let s = synth(2500);
        let t = template();
        let cfg = no_latency();
        let near = estimate_tof(&s.render(&[Path1 { delay_s: a / FS, gain: 1.0 }]), &t, &cfg).unwrap();
        let far = estimate_tof(&s.render(&[Path1 { delay_s: (a + gap) / FS, gain: 1.0 }]), &t, &cfg).unwrap();
        prop_assert!(far.tof_s > near.tof_s);
    }

    #[test]
    fn gain_does_not_move_the_peak(delay in 0.0f64..2000.0, gain in 0.01f64..10.0) {
        let s = synth(2100);
        let t = template();
        let cfg = no_latency();
        let unit = estimate_tof(&s.render(&[Path1 { delay_s: delay / FS, gain: 1.0 }]), &t, &cfg).unwrap();
        let scaled = estimate_tof(&s.render(&[Path1 { delay_s: delay / FS, gain }]), &t, &cfg).unwrap();
        prop_assert!((unit.lag_samples - scaled.lag_samples).abs() < 1e-6);
        prop_assert!((unit.quality - scaled.quality).abs() < 1e-9);
    }

    #[test]
    fn correlation_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, n in 1usize..300, m in 1usize..80) {
        let mut rng = rng_for(seed, &[]);
        let mut draw = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (x, y, t) = (draw(n), draw(n), draw(m));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = correlate_fft(&mix, &t);
        let (cx, cy) = (correlate_direct(&x, &t), correlate_direct(&y, &t));
        prop_assert_eq!(lhs.len(), cx.len());
        for i in 0..lhs.len() {
            let want = a * cx[i] + b * cy[i];
            prop_assert!((lhs[i] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }
}
