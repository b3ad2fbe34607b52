use std::f64::consts::TAU;
use std::io::Write;

use odesynth::data::{
    load_ecg_csv, normalize, read_windows, simulate_dynamical_ecg, sine_samples, synth_dynamical_ecg,
    synth_sine, window, window_count, write_windows, EcgRecord, SineSpec, SourceLabel, WaveTable,
    SYNTH_ECG_RATE,
};
use odesynth::Error;
use proptest::prelude::*;

fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
    path
}

#[test]
fn two_column_csv_loads_both_channels() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = (0..500).map(|i| format!("{},{}\n", i, -(i as f64) * 0.5)).collect();
    let path = write_file(&dir, "rec.csv", &text);
    let rec = load_ecg_csv(&path, Some(360.0), SourceLabel::NormalSinus).unwrap();
    assert_eq!(rec.len(), 500);
    assert_eq!(rec.channels[1].len(), 500);
    assert_eq!(rec.channels[1][4], -2.0);
    assert_eq!(rec.sampling_rate, 360.0);
}

#[test]
fn time_column_sets_sampling_rate_and_header_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("time,lead1,lead2\n");
    for i in 0..101 {
        text.push_str(&format!("{},{},{}\n", i as f64 / 250.0, i, 2 * i));
    }
    let path = write_file(&dir, "rec.csv", &text);
    let rec = load_ecg_csv(&path, None, SourceLabel::Arrhythmia).unwrap();
    assert_eq!(rec.len(), 101);
    assert!((rec.sampling_rate - 250.0).abs() < 1e-9);
    assert_eq!(rec.channels[0][3], 3.0);
    assert_eq!(rec.channels[1][3], 6.0);
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = "1,2\n3,4\n5,6\n7,8\n9,10\n11,12\na,b\n13,14\n";
    let path = write_file(&dir, "bad.csv", text);
    match load_ecg_csv(&path, Some(1.0), SourceLabel::NormalSinus) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ragged_rows_and_missing_rate_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(&dir, "ragged.csv", "1,2\n3,4,5\n");
    assert!(matches!(
        load_ecg_csv(&path, Some(1.0), SourceLabel::NormalSinus),
        Err(Error::Parse { line: 2, .. })
    ));
    let path = write_file(&dir, "norate.csv", "1,2\n3,4\n");
    assert!(load_ecg_csv(&path, None, SourceLabel::NormalSinus).is_err());
    assert!(matches!(
        load_ecg_csv(dir.path().join("missing.csv"), Some(1.0), SourceLabel::NormalSinus),
        Err(Error::Io { .. })
    ));
}

fn record(n: usize) -> EcgRecord {
    let ch: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
    EcgRecord::new(100.0, [ch.clone(), ch], SourceLabel::Synthetic).unwrap()
}

#[test]
fn window_boundaries() {
    for stride in [1, 7, 240, 1000] {
        assert_eq!(window(&record(240), 0, 240, stride).unwrap().len(), 1);
    }
    assert_eq!(window(&record(480), 0, 240, 240).unwrap().len(), 2);
    assert!(window(&record(239), 0, 240, 1).unwrap().is_empty());
    assert!(window(&record(480), 2, 240, 1).is_err());
    assert!(window(&record(480), 0, 240, 0).is_err());
}

#[test]
fn window_count_grid() {
    let mut cases = 0;
    for n in [0, 10, 239, 240, 241, 500] {
        for (seq, stride) in [(240, 1), (240, 60), (10, 3), (1, 1), (50, 50)] {
            let rec = record(n);
            let ws = window(&rec, 1, seq, stride).unwrap();
            let expected = if n < seq { 0 } else { (n - seq) / stride + 1 };
            assert_eq!(ws.len(), expected, "n={n} seq={seq} stride={stride}");
            assert_eq!(window_count(n, seq, stride), expected);
            for w in &ws {
                assert_eq!(w.len(), seq);
                assert!(w.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            cases += 1;
        }
    }
    assert_eq!(cases, 30);
}

#[test]
fn windows_carry_offsets_and_invert() {
    let rec = record(300);
    let ws = window(&rec, 0, 100, 50).unwrap();
    for w in &ws {
        let raw = w.raw();
        for (a, b) in raw.iter().zip(&rec.channels[0][w.start..w.start + 100]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert_eq!(ws[2].start, 100);
    assert_eq!(ws[0].times()[5], 0.05);
}

#[test]
fn normalize_examples() {
    let (v, _) = normalize(&[0.0, 5.0, 10.0]).unwrap();
    assert_eq!(v, vec![0.0, 0.5, 1.0]);
    let (v, n) = normalize(&[3.0, 3.0, 3.0]).unwrap();
    assert_eq!(v, vec![0.5, 0.5, 0.5]);
    assert_eq!(n.invert(0.5), 3.0);
    assert!(normalize(&[1.0, f64::NAN]).is_err());
    assert!(normalize(&[]).is_err());
}

#[test]
fn sine_dataset_is_seeded() {
    let spec = SineSpec::default();
    let a = synth_sine(&spec, 7).unwrap();
    let b = synth_sine(&spec, 7).unwrap();
    let c = synth_sine(&spec, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 100);
    assert!(a.iter().all(|w| w.len() == 240));
}

#[test]
fn unit_amplitude_sine_spans_two() {
    let spec = SineSpec {
        count: 20,
        length: 240,
        freq_range: (1.0, 4.0),
        amp_range: (1.0, 1.0),
    };
    for w in synth_sine(&spec, 3).unwrap() {
        let span = w.norm.max - w.norm.min;
        assert!((span - 2.0).abs() < 0.01, "span {span}");
    }
}

#[test]
fn full_period_sine_has_zero_mean() {
    for (f, phase) in [(1.0, 0.3), (2.0, 1.7), (5.0, 4.0)] {
        let raw = sine_samples(240, f, 1.3, phase);
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        assert!(mean.abs() < 1e-6);
    }
}

#[test]
fn sine_spec_validation() {
    let bad = SineSpec {
        freq_range: (0.0, 1.0),
        ..SineSpec::default()
    };
    assert!(synth_sine(&bad, 1).is_err());
    let bad = SineSpec {
        count: 0,
        ..SineSpec::default()
    };
    assert!(synth_sine(&bad, 1).is_err());
}

/// Local maxima above half the global maximum, at least `gap` samples apart.
fn peaks(x: &[f64], gap: usize) -> Vec<usize> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<usize> = Vec::new();
    for i in 1..x.len() - 1 {
        if x[i] > 0.5 * max && x[i] >= x[i - 1] && x[i] > x[i + 1] {
            match out.last() {
                Some(&j) if i - j < gap => {
                    if x[i] > x[j] {
                        *out.last_mut().unwrap() = i;
                    }
                }
                _ => out.push(i),
            }
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn dynamical_ecg_beats_once_per_second_at_60_bpm() {
    let rec = synth_dynamical_ecg(10.0, 60.0, 0.0, 1).unwrap();
    assert_eq!(rec.len(), 2560);
    let p = peaks(&rec.channels[0], (0.3 * SYNTH_ECG_RATE) as usize);
    assert!(p.len() >= 8, "{} peaks", p.len());
    let gaps: Vec<f64> = p.windows(2).map(|w| (w[1] - w[0]) as f64 / SYNTH_ECG_RATE).collect();
    let interval = median(gaps);
    assert!((interval - 1.0).abs() < 0.05, "interval {interval}");
}

#[test]
fn dynamical_ecg_follows_heart_rate() {
    for bpm in [45.0, 90.0, 150.0] {
        let rec = synth_dynamical_ecg(8.0, bpm, 0.0, 1).unwrap();
        let p = peaks(&rec.channels[0], (0.2 * SYNTH_ECG_RATE) as usize);
        let gaps: Vec<f64> = p.windows(2).map(|w| (w[1] - w[0]) as f64 / SYNTH_ECG_RATE).collect();
        let expected = 60.0 / bpm;
        assert!((median(gaps) - expected).abs() < 0.05 * expected);
    }
}

#[test]
fn dynamical_ecg_limit_cycle_has_unit_radius() {
    let traj = simulate_dynamical_ecg(&WaveTable::pqrst(), 10.0, 60.0, SYNTH_ECG_RATE).unwrap();
    for (x, y) in traj.x.iter().zip(&traj.y) {
        assert!((x.hypot(*y) - 1.0).abs() < 0.05);
    }
}

#[test]
fn dynamical_ecg_autocorrelation_peaks_at_beat_period() {
    let rec = synth_dynamical_ecg(10.0, 72.0, 0.0, 3).unwrap();
    let x = &rec.channels[0];
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ac = |lag: usize| -> f64 {
        c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (c.len() - lag) as f64
    };
    let lo = (0.4 * SYNTH_ECG_RATE) as usize;
    let hi = (1.5 * SYNTH_ECG_RATE) as usize;
    let best = (lo..hi).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
    let period = best as f64 / SYNTH_ECG_RATE;
    let expected = 60.0 / 72.0;
    assert!((period - expected).abs() < 0.05 * expected, "period {period}");
}

#[test]
fn dynamical_ecg_determinism_and_noise() {
    let a = synth_dynamical_ecg(3.0, 60.0, 0.0, 5).unwrap();
    let b = synth_dynamical_ecg(3.0, 60.0, 0.0, 6).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.channels[0]), bits(&b.channels[0]));
    let n1 = synth_dynamical_ecg(3.0, 60.0, 0.05, 5).unwrap();
    let n2 = synth_dynamical_ecg(3.0, 60.0, 0.05, 5).unwrap();
    assert_eq!(n1, n2);
    assert_ne!(n1.channels[0], a.channels[0]);
    assert_ne!(n1.channels[0], n1.channels[1]);
    assert!(synth_dynamical_ecg(3.0, 20.0, 0.0, 1).is_err());
    assert!(synth_dynamical_ecg(3.0, 201.0, 0.0, 1).is_err());
    assert!(synth_dynamical_ecg(0.0, 60.0, 0.0, 1).is_err());
}

#[test]
fn wave_table_holds_five_waves() {
    let t = WaveTable::pqrst();
    let names: Vec<&str> = t.wave.iter().map(|w| w.name.as_str()).collect();
    assert_eq!(names, ["P", "Q", "R", "S", "T"]);
    assert!((t.wave[0].theta + TAU / 6.0).abs() < 1e-15);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth_sine(&SineSpec { count: 4, ..SineSpec::default() }, 2).unwrap();
    let files = write_windows(dir.path(), &ws, 2).unwrap();
    assert_eq!(files.len(), 4);
    let (back, entries) = read_windows(dir.path()).unwrap();
    assert_eq!(back, ws);
    assert!(entries.iter().all(|e| e.seed == 2));
}

proptest! {
    #[test]
    fn normalization_inverts(values in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        let (v, n) = normalize(&values).unwrap();
        prop_assume!(n.max > n.min);
        for (x, y) in v.iter().zip(&values) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((n.invert(*x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn window_count_formula(n in 0usize..600, seq in 1usize..300, stride in 1usize..100) {
        let ws = window(&record(n), 0, seq, stride).unwrap();
        let expected = if n < seq { 0 } else { (n - seq) / stride + 1 };
        prop_assert_eq!(ws.len(), expected);
    }
}
