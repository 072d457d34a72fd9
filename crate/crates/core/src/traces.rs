//! Measured load-cell traces: loading, zero-phase filtering and the timing,
//! slip and preload metrics extracted from them.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{preload_from_baseline, sci, ClutchConfig, PreloadEstimate};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: f64 = 38_400.0;
pub const DEFAULT_CUTOFF: f64 = 250.0;
/// Allowed timestamp deviation from the uniform grid, relative to the timestamp.
const UNIFORMITY_TOL: f64 = 1e-6;
/// Fraction of max |V| that marks the drive as on.
const MARKER_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sample_rate: f64,
    pub t: Vec<f64>,
    pub force: Vec<f64>,
    pub voltage: Vec<f64>,
    pub t_on: Option<f64>,
    pub t_off: Option<f64>,
}

impl Trace {
    /// Validates the arrays and fills missing markers from the voltage channel.
    pub fn new(t: Vec<f64>, force: Vec<f64>, voltage: Vec<f64>, t_on: Option<f64>, t_off: Option<f64>) -> Result<Self> {
        if t.len() != force.len() || t.len() != voltage.len() {
            return Err(Error::Format(format!(
                "column lengths differ: t {}, force {}, voltage {}",
                t.len(),
                force.len(),
                voltage.len()
            )));
        }
        if t.len() < 2 {
            return Err(Error::InsufficientData("a trace needs at least two samples".into()));
        }
        if t.iter().chain(&force).chain(&voltage).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in trace".into()));
        }
        let n = t.len();
        let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::Format("time column must increase".into()));
        }
        // each timestamp must sit on the uniform grid, like a clock good to 1 ppm
        for (i, &ti) in t.iter().enumerate() {
            let expected = t[0] + i as f64 * dt;
            if (ti - expected).abs() > UNIFORMITY_TOL * ti.abs().max(dt) {
                return Err(Error::Format(format!(
                    "non-uniform sampling at row {i}: t = {ti:e}, expected {expected:e}"
                )));
            }
        }
        let mut trace = Self { sample_rate: 1.0 / dt, t, force, voltage, t_on, t_off };
        if trace.t_on.is_none() || trace.t_off.is_none() {
            let (on, off) = detect_markers(&trace.t, &trace.voltage);
            trace.t_on = trace.t_on.or(on);
            trace.t_off = trace.t_off.or(off);
        }
        for (name, m) in [("t_on", trace.t_on), ("t_off", trace.t_off)] {
            if let Some(v) = m {
                if v < trace.t[0] || v > trace.t[n - 1] {
                    return Err(Error::Format(format!("{name} = {v:e} lies outside the trace")));
                }
            }
        }
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// First sample index with t >= time.
    fn index_at(&self, time: f64) -> usize {
        let raw = ((time - self.t[0]) * self.sample_rate).ceil();
        let mut i = raw.clamp(0.0, (self.len() - 1) as f64) as usize;
        while i > 0 && self.t[i - 1] >= time {
            i -= 1;
        }
        while i + 1 < self.len() && self.t[i] < time {
            i += 1;
        }
        i
    }

    /// Writes t_s, force_n, voltage_v and, when `markers` is set, the marker columns.
    pub fn write_csv<W: Write>(&self, w: W, markers: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t_s", "force_n", "voltage_v"];
        if markers {
            header.extend(["t_on_s", "t_off_s"]);
        }
        out.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![sci(self.t[i]), sci(self.force[i]), sci(self.voltage[i])];
            if markers {
                let marker = |m: Option<f64>| if i == 0 { m.map(sci).unwrap_or_default() } else { String::new() };
                row.push(marker(self.t_on));
                row.push(marker(self.t_off));
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Drive on/off times: the first sample with |V| at or above 10 % of its peak,
/// and the first sample below it after the last such sample.
pub fn detect_markers(t: &[f64], voltage: &[f64]) -> (Option<f64>, Option<f64>) {
    let peak = voltage.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return (None, None);
    }
    let level = MARKER_FRACTION * peak;
    let on = voltage.iter().position(|v| v.abs() >= level).map(|i| t[i]);
    let off = match voltage.iter().rposition(|v| v.abs() >= level) {
        Some(i) if i + 1 < voltage.len() => Some(t[i + 1]),
        _ => None,
    };
    (on, off)
}

/// Reads a trace CSV with columns t_s, force_n, voltage_v and optional
/// t_on_s / t_off_s marker columns (first non-empty value is used).
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_trace(file).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_trace<R: Read>(reader: R) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Format(format!("missing column `{name}`")));
    let (it, iforce, iv) = (need("t_s")?, need("force_n")?, need("voltage_v")?);
    let (ion, ioff) = (col("t_on_s"), col("t_off_s"));
    let mut t = Vec::new();
    let mut force = Vec::new();
    let mut voltage = Vec::new();
    let mut t_on = None;
    let mut t_off = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize, name: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad {name} value `{raw}`", row + 1)))
        };
        t.push(num(it, "t_s")?);
        force.push(num(iforce, "force_n")?);
        voltage.push(num(iv, "voltage_v")?);
        for (slot, idx, name) in [(&mut t_on, ion, "t_on_s"), (&mut t_off, ioff, "t_off_s")] {
            if let (None, Some(i)) = (*slot, idx) {
                if rec.get(i).is_some_and(|s| !s.is_empty()) {
                    *slot = Some(num(i, name)?);
                }
            }
        }
    }
    Trace::new(t, force, voltage, t_on, t_off)
}

/// Second-order digital Butterworth low-pass (bilinear transform, prewarped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with a[0] = 1.
    pub a: [f64; 3],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 0.5 * sample_rate) {
            return Err(Error::Domain(format!(
                "cutoff {cutoff} Hz must lie in (0, {}) Hz",
                0.5 * sample_rate
            )));
        }
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k2);
        let b0 = k2 * norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - std::f64::consts::SQRT_2 * k + k2) * norm],
        })
    }

    /// Steady-state initial conditions for a unit step (transposed direct form II).
    fn zi(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        // (I - A^T) z = b[1..] - a[1..] b0
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let det = (1.0 + a1) + a2;
        let z0 = (r0 + r1) / det;
        let z1 = r1 - a2 * z0;
        [z0, z1]
    }

    fn run(&self, x: &[f64], mut z: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z[0];
                z[0] = b1 * xi - a1 * y + z[1];
                z[1] = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Forward-backward filtering with odd extension at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let pad = 9.min(n.saturating_sub(1));
        if n == 0 {
            return Vec::new();
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let zi = self.zi();
        let scaled = |v: f64| [zi[0] * v, zi[1] * v];
        let mut fwd = self.run(&ext, scaled(ext[0]));
        fwd.reverse();
        let mut back = self.run(&fwd, scaled(fwd[0]));
        back.reverse();
        back[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth low-pass on the force channel.
pub fn lowpass_zero_phase(trace: &Trace, cutoff: f64) -> Result<Trace> {
    let filter = Biquad::butterworth_lowpass(cutoff, trace.sample_rate)?;
    Ok(Trace { force: filter.filtfilt(&trace.force), ..trace.clone() })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementEstimate {
    /// Seconds after the drive is switched on; zero when rounded up or when no fit qualified.
    pub time: f64,
    /// At least one line fit had R² above the threshold.
    pub qualified: bool,
    /// The smallest crossing was negative and was rounded up to zero.
    pub rounded_up: bool,
    pub r_squared: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementOptions {
    pub baseline_window: f64,
    pub fit_start: f64,
    pub fit_end_min: f64,
    pub fit_end_max: f64,
    pub min_r_squared: f64,
}

impl Default for EngagementOptions {
    fn default() -> Self {
        Self { baseline_window: 10e-3, fit_start: 0.5e-3, fit_end_min: 2e-3, fit_end_max: 20e-3, min_r_squared: 0.8 }
    }
}

/// Back-extrapolated onset of the force rise after the drive is switched on.
pub fn extract_engagement_time(trace: &Trace) -> Result<EngagementEstimate> {
    extract_engagement_time_with(trace, &EngagementOptions::default())
}

pub fn extract_engagement_time_with(trace: &Trace, opts: &EngagementOptions) -> Result<EngagementEstimate> {
    let t_on = trace.t_on.ok_or_else(|| Error::InsufficientData("trace has no voltage-on marker".into()))?;
    let half = 0.5 * trace.dt();
    if t_on - trace.t[0] < opts.baseline_window - half {
        return Err(Error::InsufficientData(format!(
            "engagement needs {:.1} ms of data before the drive switches on",
            opts.baseline_window * 1e3
        )));
    }
    let b0 = trace.index_at(t_on - opts.baseline_window - 1e-9 * trace.dt());
    let b1 = trace.index_at(t_on);
    let baseline = mean(&trace.force[b0..b1.max(b0 + 1)]);
    let start = trace.index_at(t_on + opts.fit_start - 1e-6 * trace.dt());
    let end_lo = trace.index_at(t_on + opts.fit_end_min - 1e-6 * trace.dt());
    let end_hi_time = t_on + opts.fit_end_max + 1e-6 * trace.dt();
    if end_lo >= trace.len() || trace.t[end_lo] > end_hi_time {
        return Err(Error::InsufficientData("trace ends before the engagement fit window".into()));
    }
    // running sums in time relative to t_on for conditioning
    let (mut n, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    let mut best_negative: Option<f64> = None;
    let mut any_qualified = false;
    let mut best_r2 = f64::NAN;
    for i in start..trace.len() {
        if trace.t[i] > end_hi_time {
            break;
        }
        let x = trace.t[i] - t_on;
        let y = trace.force[i] - baseline;
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        if i < end_lo || n < 3.0 {
            continue;
        }
        let vxx = sxx - sx * sx / n;
        let vxy = sxy - sx * sy / n;
        let vyy = syy - sy * sy / n;
        if !(vxx > 0.0 && vyy > 0.0) {
            continue;
        }
        let r2 = vxy * vxy / (vxx * vyy);
        if !(r2 > opts.min_r_squared) {
            continue;
        }
        any_qualified = true;
        let slope = vxy / vxx;
        let intercept = (sy - slope * sx) / n;
        if slope == 0.0 {
            continue;
        }
        let crossing = -intercept / slope;
        if crossing > 0.0 {
            if best.is_none_or(|(c, _)| crossing < c) {
                best = Some((crossing, r2));
            }
        } else if best_negative.is_none_or(|c| crossing > c) {
            best_negative = Some(crossing);
            if best.is_none() {
                best_r2 = r2;
            }
        }
    }
    Ok(match (best, best_negative) {
        (Some((time, r2)), _) => EngagementEstimate { time, qualified: true, rounded_up: false, r_squared: r2, baseline },
        (None, Some(_)) => {
            EngagementEstimate { time: 0.0, qualified: true, rounded_up: true, r_squared: best_r2, baseline }
        }
        (None, None) => EngagementEstimate {
            time: 0.0,
            qualified: any_qualified,
            rounded_up: false,
            r_squared: f64::NAN,
            baseline,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseOptions {
    /// Fraction of the way from the force at switch-off to the final value.
    pub threshold: f64,
    /// Trailing fraction of the trace averaged for the final value.
    pub final_window: f64,
    pub min_settling: f64,
}

impl Default for ReleaseOptions {
    fn default() -> Self {
        Self { threshold: 0.9, final_window: 0.2, min_settling: 0.5 }
    }
}

/// Time after switch-off for the force to travel `threshold` of the way to its final value.
pub fn extract_release_time(trace: &Trace, threshold: f64) -> Result<f64> {
    extract_release_time_with(trace, &ReleaseOptions { threshold, ..Default::default() })
}

pub fn extract_release_time_with(trace: &Trace, opts: &ReleaseOptions) -> Result<f64> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::Domain(format!("release threshold must be in (0, 1), got {}", opts.threshold)));
    }
    if !(opts.final_window > 0.0 && opts.final_window <= 1.0) {
        return Err(Error::Domain(format!("final window must be in (0, 1], got {}", opts.final_window)));
    }
    let t_off = trace.t_off.ok_or_else(|| Error::InsufficientData("trace has no voltage-off marker".into()))?;
    let n = trace.len();
    if trace.t[n - 1] - t_off < opts.min_settling - 0.5 * trace.dt() {
        return Err(Error::InsufficientData(format!(
            "release needs {:.2} s of settling after switch-off",
            opts.min_settling
        )));
    }
    let tail = ((n as f64 * opts.final_window).round() as usize).clamp(1, n);
    let final_value = mean(&trace.force[n - tail..]);
    // force at switch-off: last sample at or before t_off
    let i_off = trace.index_at(t_off);
    let i_off = if trace.t[i_off] > t_off && i_off > 0 { i_off - 1 } else { i_off };
    let f_off = trace.force[i_off];
    let final_slice = &trace.force[n - tail..];
    let spread = (final_slice.iter().map(|f| (f - final_value).powi(2)).sum::<f64>() / tail as f64).sqrt();
    if (f_off - final_value).abs() <= 3.0 * spread || f_off == final_value {
        return Err(Error::NoRelease(format!(
            "force at switch-off {f_off:e} N is within noise of the final value {final_value:e} N"
        )));
    }
    let level = f_off - opts.threshold * (f_off - final_value);
    let falling = final_value < f_off;
    let reached = |f: f64| if falling { f <= level } else { f >= level };
    for i in i_off + 1..n {
        if reached(trace.force[i]) {
            let (a, b) = (trace.force[i - 1], trace.force[i]);
            let s = if a == b { 1.0 } else { ((a - level) / (a - b)).clamp(0.0, 1.0) };
            let t_cross = trace.t[i - 1] + s * (trace.t[i] - trace.t[i - 1]);
            return Ok((t_cross - t_off).max(0.0));
        }
    }
    Err(Error::NoRelease(format!(
        "force never reached {level:e} N after switch-off (final value {final_value:e} N)"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipOptions {
    pub noise_multiple: f64,
    pub window: f64,
    /// Peaks and drops are read from the force low-passed at this cutoff;
    /// the noise level always comes from the raw pre-voltage force.
    pub smoothing_cutoff: Option<f64>,
}

impl Default for SlipOptions {
    fn default() -> Self {
        Self { noise_multiple: 3.0, window: 5e-3, smoothing_cutoff: Some(DEFAULT_CUTOFF) }
    }
}

/// Worst percentage of force lost in a slip while the drive is on.
pub fn slip_percentage(trace: &Trace) -> Result<f64> {
    slip_percentage_with(trace, &SlipOptions::default())
}

pub fn slip_percentage_with(trace: &Trace, opts: &SlipOptions) -> Result<f64> {
    let t_on = trace.t_on.ok_or_else(|| Error::InsufficientData("trace has no voltage-on marker".into()))?;
    let i_on = trace.index_at(t_on);
    // on-segment ends before the first sample at or after switch-off
    let i_off = trace.t_off.map_or(trace.len(), |t| trace.index_at(t)).max(i_on + 1).min(trace.len());
    let pre = &trace.force[..i_on];
    let noise = if pre.len() >= 2 {
        let m = mean(pre);
        (pre.iter().map(|f| (f - m).powi(2)).sum::<f64>() / (pre.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let limit = opts.noise_multiple * noise;
    let raw = &trace.force[i_on..i_off];
    // smoothing only the on-segment keeps the release edge from leaking in
    let smoothed;
    let seg = match opts.smoothing_cutoff {
        Some(fc) => {
            smoothed = Biquad::butterworth_lowpass(fc, trace.sample_rate)?.filtfilt(raw);
            &smoothed[..]
        }
        None => raw,
    };
    let w = (opts.window * trace.sample_rate).round().max(1.0) as usize;
    // minimum over the following window, by a monotone deque scanned backwards
    let mut ahead_min = vec![f64::INFINITY; seg.len()];
    let mut dq: VecDeque<usize> = VecDeque::new();
    for i in (0..seg.len()).rev() {
        while dq.front().is_some_and(|&j| j > i + w) {
            dq.pop_front();
        }
        ahead_min[i] = dq.front().map_or(f64::INFINITY, |&j| seg[j]);
        while dq.back().is_some_and(|&j| seg[j] >= seg[i]) {
            dq.pop_back();
        }
        dq.push_back(i);
    }
    let mut worst: f64 = 0.0;
    for i in 0..seg.len() {
        let left_ok = i == 0 || seg[i] >= seg[i - 1];
        let right_ok = i + 1 == seg.len() || seg[i] >= seg[i + 1];
        if !(left_ok && right_ok) || !ahead_min[i].is_finite() || seg[i] <= 0.0 {
            continue;
        }
        let drop = seg[i] - ahead_min[i];
        if drop > limit && drop > 0.0 {
            worst = worst.max(100.0 * drop / seg[i]);
        }
    }
    Ok(worst)
}

/// Preload from the mean kinetic friction over the 3 s before the drive switches on.
pub fn estimate_preload(trace: &Trace, config: &ClutchConfig) -> Result<PreloadEstimate> {
    const WINDOW: f64 = 3.0;
    let t_on = trace.t_on.ok_or_else(|| Error::InsufficientData("trace has no voltage-on marker".into()))?;
    if t_on - trace.t[0] < WINDOW - 0.5 * trace.dt() {
        return Err(Error::InsufficientData(format!(
            "preload estimate needs 3 s before the drive switches on, trace has {:.3} s",
            t_on - trace.t[0]
        )));
    }
    let i0 = trace.index_at(t_on - WINDOW - 1e-9 * trace.dt());
    let i1 = trace.index_at(t_on);
    preload_from_baseline(mean(&trace.force[i0..i1.max(i0 + 1)]), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub n: f64,
    pub c_std: f64,
    pub n_std: f64,
    pub r_squared: f64,
}

/// F = c·Vⁿ by linear least squares on (ln V, ln F).
pub fn fit_voltage_exponent(data: &[(f64, f64)]) -> Result<PowerLawFit> {
    if data.len() < 3 {
        return Err(Error::InsufficientData(format!("power-law fit needs 3 points, got {}", data.len())));
    }
    if data.iter().any(|&(v, f)| !(v > 0.0 && f > 0.0 && v.is_finite() && f.is_finite())) {
        return Err(Error::Domain("voltages and forces must be positive".into()));
    }
    let x: Vec<f64> = data.iter().map(|d| d.0.ln()).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1.ln()).collect();
    let m = data.len() as f64;
    let (mx, my) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all voltages are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let n = sxy / sxx;
    let ln_c = my - n * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - ln_c - n * a).powi(2)).sum();
    let s2 = if data.len() > 2 { rss / (m - 2.0) } else { f64::NAN };
    let n_std = (s2 / sxx).sqrt();
    let ln_c_std = (s2 * (1.0 / m + mx * mx / sxx)).sqrt();
    let c = ln_c.exp();
    Ok(PowerLawFit {
        c,
        n,
        c_std: c * ln_c_std,
        n_std,
        r_squared: if syy > 0.0 { 1.0 - rss / syy } else { 1.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub cutoff: f64,
    /// Filter the force channel before release extraction as well.
    pub filter_release: bool,
    pub engagement: EngagementOptions,
    pub release_final_window: f64,
    pub slip: SlipOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            filter_release: false,
            engagement: EngagementOptions::default(),
            release_final_window: 0.2,
            slip: SlipOptions::default(),
        }
    }
}

/// One row of batch analysis; failed metrics are None with the reason kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub engagement_s: Option<f64>,
    pub engagement_qualified: bool,
    pub engagement_rounded_up: bool,
    pub release90_s: Option<f64>,
    pub release10_s: Option<f64>,
    pub slip_pct: Option<f64>,
    pub preload_n: Option<f64>,
    pub preload_clamped: bool,
    pub notes: Vec<String>,
}

pub fn analyze_trace(trace: &Trace, config: &ClutchConfig, opts: &AnalysisOptions) -> Result<TraceSummary> {
    let filtered = lowpass_zero_phase(trace, opts.cutoff)?;
    let mut notes = Vec::new();
    let mut keep = |what: &str, e: Error| notes.push(format!("{what}: {e}"));
    let engagement = match extract_engagement_time_with(&filtered, &opts.engagement) {
        Ok(e) => Some(e),
        Err(e) => {
            keep("engagement", e);
            None
        }
    };
    let release_src = if opts.filter_release { &filtered } else { trace };
    let release = |thr: f64| {
        let ro = ReleaseOptions { threshold: thr, final_window: opts.release_final_window, ..Default::default() };
        extract_release_time_with(release_src, &ro)
    };
    let r90 = release(0.9);
    let r10 = release(0.1);
    let release90_s = r90.map_err(|e| keep("release90", e)).ok();
    let release10_s = r10.map_err(|e| keep("release10", e)).ok();
    let slip_pct = slip_percentage_with(trace, &opts.slip).map_err(|e| keep("slip", e)).ok();
    let preload = estimate_preload(trace, config).map_err(|e| keep("preload", e)).ok();
    Ok(TraceSummary {
        engagement_s: engagement.map(|e| e.time),
        engagement_qualified: engagement.is_some_and(|e| e.qualified),
        engagement_rounded_up: engagement.is_some_and(|e| e.rounded_up),
        release90_s,
        release10_s,
        slip_pct,
        preload_n: preload.map(|p| p.preload),
        preload_clamped: preload.is_some_and(|p| p.clamped),
        notes,
    })
}

/// Loads and analyses each file independently; results keep the input order.
pub fn analyze_files(
    paths: &[std::path::PathBuf],
    config: &ClutchConfig,
    opts: &AnalysisOptions,
) -> Vec<Result<TraceSummary>> {
    paths
        .par_iter()
        .map(|p| load_trace(p).and_then(|tr| analyze_trace(&tr, config, opts)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 / fs).collect()
    }

    #[test]
    fn butterworth_dc_gain_and_cutoff() {
        let f = Biquad::butterworth_lowpass(250.0, 38_400.0).unwrap();
        let dc = f.b.iter().sum::<f64>() / f.a.iter().sum::<f64>();
        assert!((dc - 1.0).abs() < 1e-12);
        // |H| at the cutoff is 1/√2 for a Butterworth
        let w = 2.0 * std::f64::consts::PI * 250.0 / 38_400.0;
        let z = num_complex::Complex64::from_polar(1.0, -w);
        let h = (f.b[0] + f.b[1] * z + f.b[2] * z * z) / (f.a[0] + f.a[1] * z + f.a[2] * z * z);
        assert!((h.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zi_is_step_steady_state() {
        let f = Biquad::butterworth_lowpass(250.0, 38_400.0).unwrap();
        let y = f.run(&[1.0; 50], f.zi());
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn markers_from_voltage() {
        let fs = 1000.0;
        let t = grid(100, fs);
        let v: Vec<f64> = t.iter().map(|&x| if (0.0205..0.0705).contains(&x) { 300.0 } else { 0.0 }).collect();
        let (on, off) = detect_markers(&t, &v);
        assert!((on.unwrap() - 0.021).abs() < 1e-12);
        assert!((off.unwrap() - 0.071).abs() < 1e-12);
    }

    #[test]
    fn index_at_lands_on_first_sample_at_or_after() {
        let t = grid(10, 10.0);
        let tr = Trace::new(t, vec![0.0; 10], vec![0.0; 10], None, None).unwrap();
        assert_eq!(tr.index_at(0.3), 3);
        assert_eq!(tr.index_at(0.31), 4);
        assert_eq!(tr.index_at(-1.0), 0);
        assert_eq!(tr.index_at(5.0), 9);
    }
}
