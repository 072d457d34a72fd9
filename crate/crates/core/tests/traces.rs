use std::path::Path;

use eaclutch::dynamics::{capacity_vs_frequency, preload_from_baseline, ClutchConfig, LambdaLaw};
use eaclutch::traces::{
    estimate_preload, extract_engagement_time, extract_release_time, fit_voltage_exponent, load_trace,
    lowpass_zero_phase, read_trace, slip_percentage, Trace, DEFAULT_SAMPLE_RATE,
};
use eaclutch::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const FS: f64 = DEFAULT_SAMPLE_RATE;
const DT: f64 = 1.0 / FS;

fn sample_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_trace.csv")
}

/// Samples `force(t)` on the default grid, drive on over [t_on, t_off).
fn synth(duration: f64, t_on: f64, t_off: f64, force: impl Fn(f64) -> f64) -> Trace {
    let n = (duration * FS).round() as usize;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / FS).collect();
    let f = t.iter().map(|&x| force(x)).collect();
    let v = t.iter().map(|&x| if x >= t_on && x < t_off { 300.0 } else { 0.0 }).collect();
    Trace::new(t, f, v, Some(t_on), Some(t_off)).unwrap()
}

fn with_noise(mut tr: Trace, sigma: f64, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    for f in &mut tr.force {
        *f += n.sample(&mut rng);
    }
    tr
}

#[test]
fn csv_round_trip_and_marker_detection() {
    let tr = synth(0.05, 0.01, 0.03, |t| t);
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, false).unwrap();
    let back = read_trace(buf.as_slice()).unwrap();
    assert_eq!(back.len(), tr.len());
    assert!((back.t_on.unwrap() - 0.01).abs() <= DT);
    assert!((back.t_off.unwrap() - 0.03).abs() <= DT);
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, true).unwrap();
    let back = read_trace(buf.as_slice()).unwrap();
    assert!((back.t_on.unwrap() - tr.t_on.unwrap()).abs() < 1e-12);
}

#[test]
fn jittered_timestamps_are_rejected() {
    let mut text = String::from("t_s,force_n,voltage_v\n");
    for i in 0..1000 {
        let mut t = i as f64 / FS;
        if i == 500 {
            t += 0.1 * DT;
        }
        text += &format!("{t:.12e},0.1,0\n");
    }
    assert!(matches!(read_trace(text.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn missing_columns_are_a_format_error() {
    let text = "t_s,force_n\n0,1\n1,1\n";
    assert!(matches!(read_trace(text.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn bundled_fixture_markers_within_one_sample() {
    let tr = load_trace(sample_path()).unwrap();
    assert!((tr.t_on.unwrap() - 0.1).abs() <= DT);
    assert!((tr.t_off.unwrap() - 0.4).abs() <= DT);
}

/// Amplitude and phase of the `freq` component by least squares on sin/cos.
fn tone(t: &[f64], y: &[f64], freq: f64) -> (f64, f64) {
    let w = 2.0 * std::f64::consts::PI * freq;
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &v) in t.iter().zip(y) {
        let (s, c) = (w * x).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    ((a * a + b * b).sqrt(), b.atan2(a))
}

#[test]
fn zero_phase_lowpass_response() {
    let dc = synth(0.2, 0.05, 0.1, |_| 0.37);
    let out = lowpass_zero_phase(&dc, 250.0).unwrap();
    assert!(out.force.iter().all(|f| (f - 0.37).abs() < 1e-12));

    for (freq, check) in [(50.0, true), (450.0, false)] {
        let w = 2.0 * std::f64::consts::PI * freq;
        let tr = synth(1.0, 0.2, 0.8, |t| (w * t).sin());
        let out = lowpass_zero_phase(&tr, 250.0).unwrap();
        // central half, away from the padded ends
        let (a, b) = (tr.len() / 4, 3 * tr.len() / 4);
        let (amp, phase) = tone(&out.t[a..b], &out.force[a..b], freq);
        if check {
            assert!(amp >= 0.99, "50 Hz amplitude {amp}");
            assert!(phase.to_degrees().abs() < 0.1, "50 Hz phase {}", phase.to_degrees());
        } else {
            assert!(amp < 0.1, "450 Hz amplitude {amp}");
        }
    }
}

fn ramp_trace(delay: f64) -> Trace {
    let (t_on, t_off) = (0.05, 0.5);
    synth(1.2, t_on, t_off, move |t| {
        let on = t_on + delay;
        if t < on {
            0.1
        } else if t < t_off {
            0.1 + 25.0 * (t - on)
        } else {
            0.1
        }
    })
}

#[test]
fn planted_ramp_onset_recovered() {
    for delay in [0.0, 2.6e-6, 13e-6, 40e-6, 100e-6] {
        let est = extract_engagement_time(&ramp_trace(delay)).unwrap();
        assert!(est.qualified);
        assert!((est.time - delay).abs() <= DT, "delay {delay}: {}", est.time);
    }
}

#[test]
fn filtered_ramp_onset_within_one_sample_for_short_delays() {
    // smoothing rounds the corner, which pulls the earliest crossing forward;
    // for delays of a few samples the bias exceeds one sample
    for delay in [0.0, 2.6e-6, 13e-6, 26e-6] {
        let filtered = lowpass_zero_phase(&ramp_trace(delay), 250.0).unwrap();
        let est = extract_engagement_time(&filtered).unwrap();
        assert!((est.time - delay).abs() <= DT, "delay {delay}: {}", est.time);
    }
}

#[test]
fn noise_only_gives_zero_with_quality_flag() {
    let tr = with_noise(synth(0.2, 0.05, 0.15, |_| 0.1), 2e-3, 7);
    let est = extract_engagement_time(&tr).unwrap();
    assert_eq!(est.time, 0.0);
    assert!(!est.qualified);
}

#[test]
fn ideal_step_release_recovered_at_any_threshold() {
    let (t_on, t_off) = (0.05, 0.2);
    for delta in [0.3e-3, 1.49e-3, 4e-3] {
        let tr = synth(0.9, t_on, t_off, |t| if t < t_off + delta { 0.5 } else { 0.1 });
        for th in [0.1, 0.5, 0.9] {
            let r = extract_release_time(&tr, th).unwrap();
            assert!((r - delta).abs() <= DT, "delta {delta} threshold {th}: {r}");
        }
    }
}

#[test]
fn release_without_a_fall_is_an_error() {
    let stuck = synth(0.9, 0.05, 0.2, |_| 0.5);
    assert!(matches!(extract_release_time(&stuck, 0.9), Err(Error::NoRelease(_))));
    let noisy = with_noise(synth(0.9, 0.05, 0.2, |_| 0.5), 2e-3, 9);
    assert!(matches!(extract_release_time(&noisy, 0.9), Err(Error::NoRelease(_))));
}

#[test]
fn bundled_fixture_metrics() {
    let tr = load_trace(sample_path()).unwrap();
    let filtered = lowpass_zero_phase(&tr, 250.0).unwrap();
    let e = extract_engagement_time(&filtered).unwrap();
    assert!((e.time - 2.6e-6).abs() <= DT, "{}", e.time);
    let r90 = extract_release_time(&tr, 0.9).unwrap();
    let r10 = extract_release_time(&tr, 0.1).unwrap();
    assert!((r90 - 1.49e-3).abs() <= DT, "{r90}");
    assert!(r10 < r90);
    assert_eq!(slip_percentage(&tr).unwrap(), 0.0);
}

#[test]
fn extraction_is_offset_and_shift_invariant() {
    let tr = load_trace(sample_path()).unwrap();
    let base_e = extract_engagement_time(&tr).unwrap().time;
    let base_r = extract_release_time(&tr, 0.9).unwrap();

    let mut offset = tr.clone();
    offset.force.iter_mut().for_each(|f| *f += 0.75);
    assert!((extract_engagement_time(&offset).unwrap().time - base_e).abs() < 1e-9);
    assert!((extract_release_time(&offset, 0.9).unwrap() - base_r).abs() < 1e-9);

    let shift = 1.25;
    let shifted = Trace::new(
        tr.t.iter().map(|t| t + shift).collect(),
        tr.force.clone(),
        tr.voltage.clone(),
        tr.t_on.map(|t| t + shift),
        tr.t_off.map(|t| t + shift),
    )
    .unwrap();
    assert!((extract_engagement_time(&shifted).unwrap().time - base_e).abs() < 1e-9);
    assert!((extract_release_time(&shifted, 0.9).unwrap() - base_r).abs() < 1e-9);
}

#[test]
fn slip_detector() {
    let (t_on, t_off) = (0.05, 0.45);
    let mono = with_noise(synth(0.6, t_on, t_off, |t| 0.1 + (t - t_on).clamp(0.0, 0.3)), 1e-3, 1);
    assert_eq!(slip_percentage(&mono).unwrap(), 0.0);

    // rises to 1 N then loses half, every 50 ms
    let saw = synth(0.6, t_on, t_off, |t| {
        if t < t_on || t >= t_off {
            return 0.1;
        }
        let phase = ((t - t_on) / 0.05).fract();
        0.5 + 0.5 * phase
    });
    let s = slip_percentage(&with_noise(saw, 1e-3, 2)).unwrap();
    assert!((s - 50.0).abs() <= 1.0, "sawtooth slip {s}");

    // 2 mN steps under 2 mN noise stay below the 3σ detector
    let small = synth(0.6, t_on, t_off, |t| {
        if t < t_on || t >= t_off {
            return 0.1;
        }
        0.5 - 2e-3 * ((t - t_on) / 0.05).fract()
    });
    assert_eq!(slip_percentage(&with_noise(small, 2e-3, 3)).unwrap(), 0.0);
}

#[test]
fn preload_from_pre_voltage_baseline() {
    let cfg = ClutchConfig::default();
    let clean = synth(3.2, 3.05, 3.15, |_| 0.1);
    let exact = preload_from_baseline(0.1, &cfg).unwrap().preload;
    assert!((estimate_preload(&clean, &cfg).unwrap().preload - exact).abs() < 1e-12);

    let zero = synth(3.2, 3.05, 3.15, |_| 0.0);
    let p = estimate_preload(&zero, &cfg).unwrap();
    assert_eq!(p.preload, 0.0);
    assert!(p.clamped);

    let short = synth(1.0, 0.5, 0.6, |_| 0.1);
    assert!(matches!(estimate_preload(&short, &cfg), Err(Error::InsufficientData(_))));

    // noisy baselines: the force mean has σ/√n spread, scaled by the inverse law's gain
    let sigma = 5e-3;
    let n = 3.0 * FS;
    let gain = 1.0 / (cfg.friction.mu_d_kinetic + cfg.friction.mu_base_kinetic);
    let bound = 2.0 * sigma / n.sqrt() * gain;
    let trials = 40;
    let inside = (0..trials)
        .into_par_iter()
        .filter(|&seed| {
            let tr = with_noise(synth(3.2, 3.05, 3.15, |_| 0.1), sigma, 100 + seed);
            (estimate_preload(&tr, &cfg).unwrap().preload - exact).abs() <= bound
        })
        .count();
    assert!(inside as f64 >= 0.85 * trials as f64, "{inside} of {trials} within 2σ/√n");
}

#[test]
fn power_law_exponent() {
    let quad: Vec<(f64, f64)> = [100.0, 150.0, 200.0, 300.0].iter().map(|&v| (v, 3e-6 * v * v)).collect();
    let fit = fit_voltage_exponent(&quad).unwrap();
    assert!((fit.n - 2.0).abs() < 1e-8);
    assert!((fit.c / 3e-6 - 1.0).abs() < 1e-8);
    let lin: Vec<(f64, f64)> = [1.0, 2.0, 5.0].iter().map(|&v| (v, 0.4 * v)).collect();
    assert!((fit_voltage_exponent(&lin).unwrap().n - 1.0).abs() < 1e-8);
    assert!(matches!(fit_voltage_exponent(&[(1.0, 1.0), (2.0, -1.0), (3.0, 2.0)]), Err(Error::Domain(_))));
    assert!(fit_voltage_exponent(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
}

fn capacity_exponent(law: LambdaLaw) -> f64 {
    let volts = [125.0, 150.0, 200.0, 250.0, 300.0];
    let data: Vec<(f64, f64)> = volts
        .par_iter()
        .map(|&v| {
            let mut cfg = ClutchConfig::default();
            cfg.drive.amplitude = v;
            cfg.lambda = law;
            (v, capacity_vs_frequency(&cfg, &[1000.0]).unwrap().points[0].capacity)
        })
        .collect();
    fit_voltage_exponent(&data).unwrap().n
}

#[test]
fn model_capacity_exponent_at_one_khz() {
    let ideal = capacity_exponent(LambdaLaw::Ideal);
    assert!((1.0..=2.2).contains(&ideal), "n = {ideal}");
    // the fitted multiplier falls 2.5x over this range and flattens the curve
    // below the band; pinned so a change in the model shows up here
    let fitted = capacity_exponent(LambdaLaw::default());
    assert!((fitted - 0.685).abs() < 0.02, "n = {fitted}");
}
