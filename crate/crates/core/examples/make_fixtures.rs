//! Writes the synthetic data files shipped in `data/`.
//!
//! Every file is generated from the model with fixed seeds; none of them is a
//! measurement. Run with `cargo run --example make_fixtures -- data`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use eaclutch::contact::{gap_for_contact_force, ContactModel};
use eaclutch::dynamics::{capacity_with_lambda, lambda_ea, sci, ClutchConfig};
use eaclutch::electrostatics::capacitance_ice;
use eaclutch::polarization::{cole_cole_kappa, DielectricModel};
use eaclutch::traces::{Trace, DEFAULT_SAMPLE_RATE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Planted onset delay and 90 % release time of the sample trace.
pub const SAMPLE_ENGAGE: f64 = 2.6e-6;
pub const SAMPLE_RELEASE: f64 = 1.49e-3;

fn sample_trace() -> Trace {
    let fs = DEFAULT_SAMPLE_RATE;
    let n = (1.0 * fs) as usize;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let t_on = 3840.0 / fs;
    let t_off = 15360.0 / fs;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 2e-3).unwrap();
    let base = 0.1;
    let slope = 25.0; // N/s while the load cell stretches
    let held = 0.45;
    // release: hold, then a linear fall whose 90 % point is the planted time
    let fall_start = 1.0e-3;
    let fall_len = (SAMPLE_RELEASE - fall_start) / 0.9;
    let mut force = Vec::with_capacity(n);
    let mut voltage = Vec::with_capacity(n);
    for &ti in &t {
        let onset = t_on + SAMPLE_ENGAGE;
        let mut f = base;
        if ti > onset {
            f = (base + slope * (ti - onset)).min(held);
        }
        if ti >= t_off - 1e-12 {
            let a = ti - t_off;
            if a > fall_start {
                let s = ((a - fall_start) / fall_len).min(1.0);
                f = held - s * (held - base);
            } else {
                f = held;
            }
        }
        force.push(f + noise.sample(&mut rng));
        let on = ti >= t_on - 1e-12 && ti < t_off - 1e-12;
        let half = ((ti - t_on) * 2000.0 + 1e-9).floor() as i64;
        voltage.push(if on { if half % 2 == 0 { 300.0 } else { -300.0 } } else { 0.0 });
    }
    Trace::new(t, force, voltage, None, None).unwrap()
}

fn write_pairs(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(header).unwrap();
    for (a, b) in rows {
        w.write_record([sci(*a), sci(*b)]).unwrap();
    }
    w.flush().unwrap();
}

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let dir = Path::new(&dir);
    std::fs::create_dir_all(dir).unwrap();

    let cfg = ClutchConfig::default();
    let json = serde_json::to_string_pretty(&cfg).unwrap();
    std::fs::write(dir.join("nominal.json"), json + "\n").unwrap();

    let trace = sample_trace();
    trace.write_csv(BufWriter::new(File::create(dir.join("sample_trace.csv")).unwrap()), false).unwrap();

    // permittivity spectrum with 1 % multiplicative noise
    let diel = DielectricModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let jitter = Normal::new(1.0, 0.01).unwrap();
    let spectrum: Vec<(f64, f64)> = (0..=30)
        .map(|i| {
            let f = 10f64.powf(2.0 + i as f64 * 0.15);
            let k = cole_cole_kappa(&diel, 2.0 * std::f64::consts::PI * f).re;
            (f, k * jitter.sample(&mut rng))
        })
        .collect();
    write_pairs(&dir.join("cole_cole.csv"), ["frequency_hz", "kappa_real"], &spectrum);

    // capacitance against normal load on the nominal 2 mm substrate
    let contact = ContactModel::default();
    let g = &cfg.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c_jitter = Normal::new(1.0, 0.002).unwrap();
    let calib: Vec<(f64, f64)> = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0]
        .iter()
        .map(|&force| {
            let gap = gap_for_contact_force(force, &contact, g.overlap_length, g.substrate_width).max(0.0);
            let c = capacitance_ice(g, diel.kappa_s, gap).unwrap();
            (force, c * c_jitter.sample(&mut rng))
        })
        .collect();
    write_pairs(&dir.join("contact.csv"), ["force_n", "capacitance_f"], &calib);

    let volts: Vec<(f64, f64)> = [100.0, 150.0, 200.0, 250.0, 300.0]
        .iter()
        .map(|&v: &f64| (v, 2.1e-5 * v.powf(1.605)))
        .collect();
    write_pairs(&dir.join("capacity_vs_voltage.csv"), ["voltage_v", "capacity_n"], &volts);

    // dc capacities predicted with the default linear multiplier
    let law = cfg.lambda;
    let lambda_rows: Vec<(f64, f64)> = [150.0, 200.0, 250.0, 300.0]
        .iter()
        .map(|&v| (v, capacity_with_lambda(&cfg, v, lambda_ea(v, &law)).unwrap()))
        .collect();
    write_pairs(&dir.join("lambda.csv"), ["voltage_v", "capacity_n"], &lambda_rows);
}
