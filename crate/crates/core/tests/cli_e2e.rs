use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neckcare::acoustic::{generate_chirp, ChirpSpec, SampleBuffer};
use neckcare::simulator::{CaptureSynth, Path1};
use neckcare::wav::write_wav_f32;

const SUBCOMMANDS: [&str; 9] = [
    "simulate",
    "calibrate",
    "range",
    "fuse",
    "extract",
    "train",
    "predict",
    "evaluate",
    "monitor",
];

fn neckcare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neckcare"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = neckcare(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// Path of one recording, looked up in the manifest.
fn recording(dataset: &Path, participant: u32, posture: &str) -> PathBuf {
    let manifest = std::fs::read_to_string(dataset.join("manifest.csv")).unwrap();
    let row = manifest
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0].parse::<u32>().unwrap() == participant && f[1] == posture)
        .unwrap();
    dataset.join(row[3])
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--participants", "2", "--session-s", "8", "--out", s(d)]);
    }
    let fa = files(&a);
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, files(&b));
}

#[test]
fn flags_override_config_and_config_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("scenario.conf");
    std::fs::write(&conf, "participants = 3\nsession_s = 4\nscene.condition = pink_noise\n").unwrap();
    let recordings = |out: &Path| {
        std::fs::read_to_string(out.join("manifest.csv"))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", s(&conf), "--out", s(&a)]);
    assert_eq!(recordings(&a), 15);
    ok(&["simulate", "--config", s(&conf), "--participants", "2", "--out", s(&b)]);
    assert_eq!(recordings(&b), 10);
}

#[test]
fn bad_arguments_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = neckcare(&["simulate", "--participants", "1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(neckcare(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        neckcare(&["predict", "--model", "/nonexistent.ncrf", "--input", "x.csv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn train_predict_monitor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    ok(&[
        "simulate",
        "--participants",
        "4",
        "--session-s",
        "180",
        "--out",
        s(&data),
    ]);

    // a single unbootstrapped tree reproduces its own training labels
    let feats = root.join("feats");
    ok(&["extract", "--input", s(&data), "--out", s(&feats)]);
    let model = root.join("one.ncrf");
    let csv = feats.join("features.csv");
    ok(&[
        "train",
        "--features",
        s(&csv),
        "--trees",
        "1",
        "--no-bootstrap",
        "--model",
        s(&model),
    ]);
    let pred = ok(&["predict", "--model", s(&model), "--input", s(&csv), "--out", s(root)]);
    assert!(pred.contains("accuracy 1.0000"), "{pred}");
    assert!(root.join("predictions.csv").exists());

    // a held severe bend from an unseen participant triggers a posture alert
    let forest = root.join("forest.ncrf");
    ok(&[
        "train",
        "--dataset",
        s(&data),
        "--split",
        "3/1",
        "--trees",
        "30",
        "--model",
        s(&forest),
    ]);
    let severe = recording(&data, 4, "severe_bend");
    let mon_dir = root.join("monitor");
    let log = ok(&[
        "monitor",
        "--model",
        s(&forest),
        "--input",
        s(&severe),
        "--speed",
        "60",
        "--out",
        s(&mon_dir),
    ]);
    assert!(log.contains("kind=posture_persisted"), "{log}");
    let alerts = std::fs::read_to_string(mon_dir.join("alerts.csv")).unwrap();
    assert!(alerts.lines().count() >= 2);
}

#[test]
fn range_reads_a_stereo_wav() {
    let dir = tempfile::tempdir().unwrap();
    let template = generate_chirp(&ChirpSpec::default()).unwrap();
    let fs = template.sample_rate_hz;
    let frame = (0.5 * fs) as usize;
    let pipeline = 512.0 / fs;
    let synth = CaptureSynth::new(&template, frame).unwrap();
    let distances = [(0.30, 0.32), (0.45, 0.47), (0.60, 0.61)];
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (d1, d2) in distances {
        let (a, b) = synth.render_pair(
            &[Path1 {
                delay_s: pipeline + d1 / 343.0,
                gain: 0.5,
            }],
            &[Path1 {
                delay_s: pipeline + d2 / 343.0,
                gain: 0.5,
            }],
        );
        left.extend(a.samples);
        right.extend(b.samples);
    }
    let wav = dir.path().join("rec.wav");
    let channels = [
        SampleBuffer::new(left, fs).unwrap(),
        SampleBuffer::new(right, fs).unwrap(),
    ];
    write_wav_f32(&wav, &channels).unwrap();

    let contact = dir.path().join("contact.wav");
    let c = synth.contact(pipeline);
    write_wav_f32(&contact, &[c.clone(), c]).unwrap();
    let out = ok(&["calibrate", "--input", s(&contact), "--out", s(dir.path())]);
    assert!(out.contains("loopback latency"));
    let conf = dir.path().join("calibration.conf");
    assert!(std::fs::read_to_string(&conf)
        .unwrap()
        .contains("ranging.loopback_latency_s"));

    ok(&[
        "range",
        "--config",
        s(&conf),
        "--input",
        s(&wav),
        "--out",
        s(dir.path()),
    ]);
    let log = std::fs::read_to_string(dir.path().join("ranging.csv")).unwrap();
    let rows: Vec<Vec<f64>> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), distances.len());
    for (r, (d1, d2)) in rows.iter().zip(distances) {
        assert!((r[3] - d1).abs() < 1e-3 && (r[4] - d2).abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn help_matches_snapshots() {
    let snap_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    let mut stale = Vec::new();
    for cmd in std::iter::once("").chain(SUBCOMMANDS) {
        let args: Vec<&str> = [cmd, "--help"].into_iter().filter(|a| !a.is_empty()).collect();
        let help = ok(&args);
        let name = if cmd.is_empty() { "neckcare" } else { cmd };
        let path = snap_dir.join(format!("{name}.help.txt"));
        if update {
            std::fs::create_dir_all(&snap_dir).unwrap();
            std::fs::write(&path, &help).unwrap();
        } else if std::fs::read_to_string(&path).ok().as_deref() != Some(help.as_str()) {
            stale.push(name);
        }
    }
    assert!(
        stale.is_empty(),
        "help changed for {stale:?}; rerun with UPDATE_SNAPSHOTS=1"
    );
}

#[test]
fn every_flag_is_documented() {
    for cmd in SUBCOMMANDS {
        // long help puts each description on the line after its flag
        let help = ok(&[cmd, "--help"]);
        let lines: Vec<&str> = help.lines().collect();
        for (i, l) in lines.iter().enumerate() {
            let t = l.trim_start();
            if !t.starts_with('-') {
                continue;
            }
            let inline = t.split("  ").skip(1).any(|p| !p.trim().is_empty());
            let below = lines.get(i + 1).is_some_and(|n| {
                let n = n.trim_start();
                !n.is_empty() && !n.starts_with('-')
            });
            assert!(inline || below, "{cmd}: undocumented option {t}");
        }
    }
}
