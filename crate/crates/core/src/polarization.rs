//! Cole-Cole dielectric relaxation: frequency response, step response, drive
//! waveform and the transient effective permittivity under that waveform.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fit_least_squares, mittag_leffler, Bounds, Tolerance};

/// Residual below which a past drive edge is treated as fully relaxed,
/// as a fraction of (κs − κ∞).
pub const EDGE_MEMORY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DielectricModel {
    pub kappa_inf: f64,
    pub kappa_s: f64,
    /// s
    pub tau: f64,
    pub alpha: f64,
    /// kg/m³
    pub density: f64,
    /// S/m
    pub conductivity: f64,
}

impl Default for DielectricModel {
    /// P(VDF-TrFE-CFE) terpolymer film.
    fn default() -> Self {
        Self {
            kappa_inf: 4.0,
            kappa_s: 54.2,
            tau: 2.82e-6,
            alpha: 0.562,
            density: 1900.0,
            conductivity: 1e-11,
        }
    }
}

impl DielectricModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_inf >= 1.0 && self.kappa_s >= self.kappa_inf && self.kappa_s.is_finite()) {
            return Err(Error::Config(format!(
                "dielectric requires kappa_s >= kappa_inf >= 1, got kappa_s={} kappa_inf={}",
                self.kappa_s, self.kappa_inf
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("dielectric.tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("dielectric.alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.density > 0.0) {
            return Err(Error::Config(format!("dielectric.density must be positive, got {}", self.density)));
        }
        if !(self.conductivity >= 0.0) {
            return Err(Error::Config("dielectric.conductivity must be >= 0".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.kappa_s - self.kappa_inf
    }
}

/// κ(ω) = κ∞ + (κs − κ∞) / (1 + (jωτ)^α)
pub fn cole_cole_kappa(model: &DielectricModel, omega: f64) -> Complex64 {
    let wt = (omega * model.tau).max(0.0);
    let jwt_a = Complex64::from_polar(wt.powf(model.alpha), 0.5 * PI * model.alpha);
    model.kappa_inf + model.delta() / (1.0 + jwt_a)
}

/// Normalised step response R(t) = x E_{α,α+1}(−x), x = (t/τ)^α. Rises from 0 to 1.
pub fn step_fraction(alpha: f64, tau: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let x = (t / tau).powf(alpha);
    Ok((x * mittag_leffler(alpha, alpha + 1.0, -x)?).clamp(0.0, 1.0))
}

/// κ(t) after a unit field step at t = 0.
pub fn cole_cole_step_response(model: &DielectricModel, t: f64) -> Result<f64> {
    Ok(model.kappa_inf + model.delta() * step_fraction(model.alpha, model.tau, t)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColeColeFit {
    pub kappa_inf: f64,
    pub kappa_s: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Standard errors of (kappa_s, tau, alpha).
    pub std_errors: [f64; 3],
    pub residual_norm: f64,
    pub clamped: bool,
}

/// Fits Re κ(ω) to (frequency Hz, κ') pairs with κ∞ held fixed.
pub fn fit_cole_cole(data: &[(f64, f64)], kappa_inf: f64) -> Result<ColeColeFit> {
    if data.len() < 3 {
        return Err(Error::InsufficientData(format!("{} permittivity points, need >= 3", data.len())));
    }
    if data.iter().any(|&(f, k)| !(f > 0.0) || !k.is_finite()) {
        return Err(Error::Domain("frequencies must be positive and permittivities finite".into()));
    }
    let f_min = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let f_max = data.iter().map(|d| d.0).fold(0.0, f64::max);
    if f_max / f_min < 100.0 {
        return Err(Error::InsufficientData("permittivity data must span at least two decades".into()));
    }
    // fit in log-frequency so τ enters as an offset of order one
    let pts: Vec<(f64, f64)> = data.iter().map(|&(f, k)| ((2.0 * PI * f).ln(), k)).collect();
    let k_max = data.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    // initial τ from the frequency where κ' is closest to the midpoint
    let mid = 0.5 * (k_max + kappa_inf);
    let f_mid = data
        .iter()
        .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
        .map(|d| d.0)
        .expect("non-empty");
    let init = [k_max.max(kappa_inf + 1e-3) * 1.02, -(2.0 * PI * f_mid).ln(), 0.7];
    let model = |p: &[f64], ln_w: f64| {
        let m = DielectricModel { kappa_inf, kappa_s: p[0], tau: p[1].exp(), alpha: p[2], ..Default::default() };
        cole_cole_kappa(&m, ln_w.exp()).re
    };
    let bounds = Bounds(vec![(kappa_inf, f64::INFINITY), (-60.0, 20.0), (0.02, 1.0)]);
    let fit = fit_least_squares(model, &pts, &init, &bounds, &Tolerance::default())?;
    let tau = fit.params[1].exp();
    Ok(ColeColeFit {
        kappa_inf,
        kappa_s: fit.params[0],
        tau,
        alpha: fit.params[2],
        // d τ = τ d(ln τ)
        std_errors: [fit.std_errors[0], tau * fit.std_errors[1], fit.std_errors[2]],
        residual_norm: fit.residual_norm,
        clamped: fit.clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Dc,
    BipolarSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSignal {
    pub waveform: Waveform,
    /// V
    pub amplitude: f64,
    /// Hz, ignored for dc
    pub frequency: f64,
    /// s, first-order time constant toward a higher level
    pub tau_rise: f64,
    /// s, first-order time constant toward a lower level and at switch-off
    pub tau_fall: f64,
}

impl Default for DriveSignal {
    /// 300 V, 1 kHz bipolar square wave; 8.3 µs / 5.2 µs 10-90 % edges.
    fn default() -> Self {
        Self {
            waveform: Waveform::BipolarSquare,
            amplitude: 300.0,
            frequency: 1000.0,
            tau_rise: 8.3e-6 / 9f64.ln(),
            tau_fall: 5.2e-6 / 9f64.ln(),
        }
    }
}

impl DriveSignal {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config(format!("drive.amplitude must be >= 0, got {}", self.amplitude)));
        }
        if self.waveform == Waveform::BipolarSquare && !(self.frequency > 0.0) {
            return Err(Error::Config(format!(
                "drive.frequency must be positive for a bipolar square wave, got {}",
                self.frequency
            )));
        }
        if !(self.tau_rise > 0.0 && self.tau_fall > 0.0) {
            return Err(Error::Config("drive.tau_rise and drive.tau_fall must be positive".into()));
        }
        Ok(())
    }

    /// Time constant from a 10-90 % transition time.
    pub fn tau_from_10_90(t: f64) -> f64 {
        t / 9f64.ln()
    }

    fn half_period(&self) -> f64 {
        match self.waveform {
            Waveform::Dc => f64::INFINITY,
            Waveform::BipolarSquare => 0.5 / self.frequency,
        }
    }
}

/// A drive signal switched on at t = 0 and optionally off at `off_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTimeline {
    pub signal: DriveSignal,
    pub off_time: Option<f64>,
}

/// A switch of the ideal normalised level at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub t: f64,
    pub from: f64,
    pub to: f64,
}

impl DriveTimeline {
    pub fn new(signal: DriveSignal) -> Self {
        Self { signal, off_time: None }
    }

    pub fn with_off(signal: DriveSignal, off_time: f64) -> Self {
        Self { signal, off_time: Some(off_time) }
    }

    /// Ideal level in {−1, 0, +1} held on [t_k, t_{k+1}).
    pub fn level(&self, t: f64) -> f64 {
        if t < 0.0 || self.off_time.is_some_and(|off| t >= off) {
            return 0.0;
        }
        self.on_level(t)
    }

    fn on_level(&self, t: f64) -> f64 {
        match self.signal.waveform {
            Waveform::Dc => 1.0,
            Waveform::BipolarSquare => {
                let k = (t / self.signal.half_period()).floor() as i64;
                if k % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Index of the half-period containing t (t >= 0).
    fn segment(&self, t: f64) -> u64 {
        let hp = self.signal.half_period();
        if hp.is_infinite() {
            0
        } else {
            (t / hp).floor() as u64
        }
    }

    /// All edges in [0, t], oldest first.
    pub fn edges_until(&self, t: f64) -> Vec<Edge> {
        self.edges_between(0.0, t)
    }

    /// Edges with t_lo <= t_k <= t_hi, oldest first.
    pub fn edges_between(&self, t_lo: f64, t_hi: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        if t_hi < 0.0 {
            return out;
        }
        let stop = self.off_time.map_or(t_hi, |off| off.min(t_hi));
        if t_lo <= 0.0 {
            out.push(Edge { t: 0.0, from: 0.0, to: self.on_level(0.0) });
        }
        let hp = self.signal.half_period();
        if hp.is_finite() {
            let first = ((t_lo.max(0.0) / hp).ceil() as u64).max(1);
            let mut k = first;
            loop {
                let tk = k as f64 * hp;
                if tk > stop || (self.off_time == Some(tk)) {
                    break;
                }
                let to = if k % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Edge { t: tk, from: -to, to });
                k += 1;
            }
        }
        if let Some(off) = self.off_time {
            if off >= t_lo.max(0.0) && off <= t_hi {
                let from = if off == 0.0 { 0.0 } else { self.on_level_before(off) };
                out.push(Edge { t: off, from, to: 0.0 });
            }
        }
        out
    }

    /// Time of the most recent edge at or before t (t >= 0).
    pub fn last_edge_time(&self, t: f64) -> f64 {
        if let Some(off) = self.off_time {
            if t >= off {
                return off;
            }
        }
        let hp = self.signal.half_period();
        if hp.is_infinite() {
            0.0
        } else {
            (t / hp).floor() * hp
        }
    }

    fn on_level_before(&self, t: f64) -> f64 {
        match self.signal.waveform {
            Waveform::Dc => 1.0,
            Waveform::BipolarSquare => {
                let hp = self.signal.half_period();
                let k = (t / hp).ceil() as i64 - 1;
                if k % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Edge times in (t_lo, t_hi), for use as integrator stops.
    pub fn edge_times(&self, t_lo: f64, t_hi: f64) -> Vec<f64> {
        self.edges_between(t_lo, t_hi)
            .into_iter()
            .map(|e| e.t)
            .filter(|&t| t > t_lo && t < t_hi)
            .collect()
    }

    /// Filtered drive voltage (signed).
    pub fn voltage(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.off_time {
            Some(off) if t >= off => {
                let v_off = self.on_voltage(off);
                v_off * (-(t - off) / self.signal.tau_fall).exp()
            }
            _ => self.on_voltage(t),
        }
    }

    /// Voltage of the never-switched-off waveform.
    fn on_voltage(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let s = &self.signal;
        let amp = s.amplitude;
        let relax = |v0: f64, target: f64, dt: f64, tau: f64| target + (v0 - target) * (-dt / tau).exp();
        match s.waveform {
            Waveform::Dc => relax(0.0, amp, t, s.tau_rise),
            Waveform::BipolarSquare => {
                let hp = s.half_period();
                let k = self.segment(t);
                // older segments matter only through exp(-hp/τ) per half-period
                let decay = (-hp / s.tau_rise.max(s.tau_fall)).exp();
                let lookback = if decay <= 0.0 {
                    1
                } else {
                    ((-37.0 / decay.ln()).ceil() as u64).max(1)
                };
                let start = k.saturating_sub(lookback);
                let mut v = if start == 0 {
                    0.0
                } else if start % 2 == 0 {
                    -amp
                } else {
                    amp
                };
                for j in start..=k {
                    let target = if j % 2 == 0 { amp } else { -amp };
                    let tau = if j == 0 || target > v { s.tau_rise } else { s.tau_fall };
                    let t_start = j as f64 * hp;
                    let t_end = if j == k { t } else { (j + 1) as f64 * hp };
                    v = relax(v, target, t_end - t_start, tau);
                }
                v
            }
        }
    }
}

/// Tabulated residual E_α(−x) = 1 − R on a uniform ln x grid, with exact
/// slopes for cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct RelaxationKernel {
    alpha: f64,
    tau: f64,
    ln_x0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// Age beyond which an edge's residual is below the memory threshold.
    pub memory: f64,
}

const KERNEL_LN_X_MIN: f64 = -20.0;
const KERNEL_STEP: f64 = 0.02;

impl RelaxationKernel {
    pub fn new(model: &DielectricModel) -> Result<Self> {
        let alpha = model.alpha;
        let tau = model.tau;
        // age at which the residual reaches the memory threshold
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while mittag_leffler(alpha, 1.0, -hi.exp())? > EDGE_MEMORY_THRESHOLD {
            lo = hi;
            hi += 1.0;
            if hi > 60.0 {
                return Err(Error::NumericalFailure {
                    reason: "relaxation residual never falls below the memory threshold".into(),
                    partial: hi,
                });
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mittag_leffler(alpha, 1.0, -mid.exp())? > EDGE_MEMORY_THRESHOLD {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ln_x_cut = hi;
        let n = ((ln_x_cut - KERNEL_LN_X_MIN) / KERNEL_STEP).ceil() as usize + 2;
        let mut values = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        for i in 0..n {
            let x = (KERNEL_LN_X_MIN + i as f64 * KERNEL_STEP).exp();
            values.push(mittag_leffler(alpha, 1.0, -x)?);
            // dE/d ln x = −x E_{α,α}(−x) / α
            slopes.push(-x * mittag_leffler(alpha, alpha, -x)? / alpha);
        }
        let x_cut = ln_x_cut.exp();
        Ok(Self {
            alpha,
            tau,
            ln_x0: KERNEL_LN_X_MIN,
            step: KERNEL_STEP,
            values,
            slopes,
            memory: tau * x_cut.powf(1.0 / alpha),
        })
    }

    /// E_α(−(age/τ)^α)
    pub fn residual(&self, age: f64) -> f64 {
        if age <= 0.0 {
            return 1.0;
        }
        let ln_x = self.alpha * (age / self.tau).ln();
        let u = (ln_x - self.ln_x0) / self.step;
        if u < 0.0 {
            // leading series terms
            let x = ln_x.exp();
            let g1 = libm::tgamma(1.0 + self.alpha);
            let g2 = libm::tgamma(1.0 + 2.0 * self.alpha);
            return 1.0 - x / g1 + x * x / g2;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.values.len() {
            let last = self.values.len() - 1;
            // past the table: algebraic tail x^{-1}/Γ(1−α), matched to the last node
            let x_last = (self.ln_x0 + last as f64 * self.step).exp();
            return self.values[last] * x_last / ln_x.exp();
        }
        let s = u - i as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.values[i]
            + (s3 - 2.0 * s2 + s) * self.step * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.values[i + 1]
            + (s3 - s2) * self.step * self.slopes[i + 1]
    }
}

/// Signed polarisation state in [−1, 1] under the drive: superposition of
/// step responses at each level change, with fully relaxed old edges folded
/// into the current ideal level. The most recent edge is always kept.
fn polarization_state(timeline: &DriveTimeline, t: f64, memory: f64, fraction: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let window_start = (t - memory).max(0.0).min(timeline.last_edge_time(t));
    let edges = timeline.edges_between(window_start, t);
    let step_sum: f64 = edges.iter().map(|e| e.to - e.from).sum();
    // edges before the window count as fully relaxed
    let mut state = timeline.level(t) - step_sum;
    for e in &edges {
        state += (e.to - e.from) * fraction(t - e.t)?;
    }
    Ok(state.clamp(-1.0, 1.0))
}

/// κ_eff(t) = κ∞ + (κs − κ∞)·|state(t)|, evaluated with the Mittag-Leffler function directly.
pub fn effective_kappa(model: &DielectricModel, signal: &DriveSignal, t: f64) -> Result<f64> {
    effective_kappa_timeline(model, &DriveTimeline::new(*signal), t)
}

pub fn effective_kappa_timeline(model: &DielectricModel, timeline: &DriveTimeline, t: f64) -> Result<f64> {
    let memory = memory_age(model)?;
    let state = polarization_state(timeline, t, memory, |age| {
        step_fraction(model.alpha, model.tau, age)
    })?;
    Ok(model.kappa_inf + model.delta() * state.abs())
}

fn memory_age(model: &DielectricModel) -> Result<f64> {
    // coarse bisection is enough here; the kernel path uses a tighter value
    let mut lo = -10.0f64;
    let mut hi = 60.0f64;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if mittag_leffler(model.alpha, 1.0, -mid.exp())? > EDGE_MEMORY_THRESHOLD {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(model.tau * hi.exp().powf(1.0 / model.alpha))
}

/// State after switch-off tabulated on a uniform ln(age) grid, where age is
/// the time since the drive was switched off.
#[derive(Debug, Clone)]
struct OffTail {
    off: f64,
    ln_a0: f64,
    step: f64,
    values: Vec<f64>,
}

const TAIL_LN_AGE_MIN: f64 = -28.0;
const TAIL_STEP: f64 = 0.01;

impl OffTail {
    fn build(timeline: &DriveTimeline, kernel: &RelaxationKernel, off: f64) -> Self {
        let ln_max = (10.0 * kernel.memory).ln();
        let n = ((ln_max - TAIL_LN_AGE_MIN) / TAIL_STEP).ceil() as usize + 1;
        let edges = timeline.edges_between((off - kernel.memory).max(0.0), off);
        let step_sum: f64 = edges.iter().map(|e| e.to - e.from).sum();
        let values = (0..n)
            .map(|i| {
                let age = (TAIL_LN_AGE_MIN + i as f64 * TAIL_STEP).exp();
                let mut state = -step_sum;
                for e in &edges {
                    state += (e.to - e.from) * (1.0 - kernel.residual(off + age - e.t));
                }
                state.clamp(-1.0, 1.0)
            })
            .collect();
        Self { off, ln_a0: TAIL_LN_AGE_MIN, step: TAIL_STEP, values }
    }

    /// Catmull-Rom interpolation; None outside the table.
    fn eval(&self, t: f64) -> Option<f64> {
        let age = t - self.off;
        if age <= 0.0 {
            return None;
        }
        let u = (age.ln() - self.ln_a0) / self.step;
        if u < 1.0 || u >= (self.values.len() - 2) as f64 {
            return None;
        }
        let i = u.floor() as usize;
        let s = u - i as f64;
        let (p0, p1, p2, p3) = (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        Some(
            p1 + 0.5
                * s
                * (p2 - p0 + s * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + s * (3.0 * (p1 - p2) + p3 - p0))),
        )
    }
}

/// Fast evaluator for dynamics: tabulated kernel plus a fixed timeline.
#[derive(Debug, Clone)]
pub struct PolarizationTracker {
    pub model: DielectricModel,
    pub timeline: DriveTimeline,
    kernel: RelaxationKernel,
    tail: Option<OffTail>,
}

impl PolarizationTracker {
    pub fn new(model: &DielectricModel, timeline: DriveTimeline) -> Result<Self> {
        Ok(Self::with_kernel(model, timeline, RelaxationKernel::new(model)?))
    }

    pub fn with_kernel(model: &DielectricModel, timeline: DriveTimeline, kernel: RelaxationKernel) -> Self {
        let tail = timeline.off_time.map(|off| OffTail::build(&timeline, &kernel, off));
        Self { model: *model, timeline, kernel, tail }
    }

    pub fn kernel(&self) -> &RelaxationKernel {
        &self.kernel
    }

    pub fn state(&self, t: f64) -> f64 {
        if let Some(v) = self.tail.as_ref().and_then(|tail| tail.eval(t)) {
            return v;
        }
        self.state_direct(t)
    }

    fn state_direct(&self, t: f64) -> f64 {
        polarization_state(&self.timeline, t, self.kernel.memory, |age| Ok(1.0 - self.kernel.residual(age)))
            .expect("kernel residual is infallible")
    }

    pub fn kappa(&self, t: f64) -> f64 {
        self.model.kappa_inf + self.model.delta() * self.state(t).abs()
    }

    pub fn voltage(&self, t: f64) -> f64 {
        self.timeline.voltage(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted_model() -> DielectricModel {
        DielectricModel::default()
    }

    #[test]
    fn frequency_limits() {
        let m = fitted_model();
        assert_eq!(cole_cole_kappa(&m, 0.0), Complex64::new(54.2, 0.0));
        let hi = cole_cole_kappa(&m, 1e20);
        assert!((hi.re - 4.0).abs() < 1e-3);
        let debye = DielectricModel { alpha: 1.0, ..m };
        let k = cole_cole_kappa(&debye, 1.0 / m.tau);
        let want = Complex64::new(4.0 + 50.2 * 0.5, -50.2 * 0.5);
        assert!((k - want).norm() < 1e-12);
    }

    #[test]
    fn debye_step_is_exponential() {
        let m = DielectricModel { alpha: 1.0, ..fitted_model() };
        for &t in &[0.0, 1e-7, 2.82e-6, 1e-5, 1e-4] {
            let k = cole_cole_step_response(&m, t).unwrap();
            let want = 4.0 + 50.2 * (1.0 - (-t / m.tau).exp());
            assert!((k - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn ninety_three_percent_in_100us() {
        let r = step_fraction(0.562, 2.82e-6, 100e-6).unwrap();
        assert!(r >= 0.92 && r < 0.95, "{r}");
    }

    #[test]
    fn step_response_monotone_and_bounded() {
        let m = fitted_model();
        let mut prev = m.kappa_inf;
        let mut t = 1e-10;
        while t < 1.0 {
            let k = cole_cole_step_response(&m, t).unwrap();
            assert!(k >= prev - 1e-12 && k <= m.kappa_s);
            prev = k;
            t *= 1.5;
        }
    }

    #[test]
    fn dc_drive_is_rc_charge() {
        let s = DriveSignal { waveform: Waveform::Dc, ..Default::default() };
        let tl = DriveTimeline::new(s);
        for &t in &[1e-6, 5e-6, 2e-5] {
            let want = 300.0 * (1.0 - (-t / s.tau_rise).exp());
            assert!((tl.voltage(t) - want).abs() < 1e-9);
        }
        assert!((s.tau_rise - 3.78e-6).abs() < 0.01e-6);
        assert!((s.tau_fall - 2.37e-6).abs() < 0.01e-6);
    }

    #[test]
    fn square_wave_flips_at_half_periods() {
        let tl = DriveTimeline::new(DriveSignal::default());
        assert_eq!(tl.level(0.1e-3), 1.0);
        assert_eq!(tl.level(0.5e-3), -1.0);
        assert_eq!(tl.level(1.0e-3), 1.0);
        // settled just before a flip, heading down just after
        assert!((tl.voltage(0.5e-3) - 300.0).abs() < 1e-6);
        assert!(tl.voltage(0.5e-3 + 1e-6) < 300.0);
        assert!(tl.voltage(0.5e-3 + 50e-6).abs() - 300.0 < 1e-6);
        assert!(tl.voltage(0.5e-3 + 50e-6) < -299.0);
    }

    #[test]
    fn voltage_bounded_and_continuous() {
        let s = DriveSignal { frequency: 20e3, ..Default::default() };
        let tl = DriveTimeline::with_off(s, 1.013e-3);
        let mut prev = 0.0;
        let dt = 1e-8;
        let mut t = 0.0;
        while t < 1.2e-3 {
            let v = tl.voltage(t);
            assert!(v.abs() <= 300.0 + 1e-9);
            assert!((v - prev).abs() < 300.0 * 2.0 * dt / s.tau_fall.min(s.tau_rise) + 1e-9, "jump at {t}");
            prev = v;
            t += dt;
        }
        assert!(tl.voltage(1.2e-3).abs() < 1e-6);
    }

    #[test]
    fn switch_off_uses_fall_constant() {
        let s = DriveSignal { waveform: Waveform::Dc, ..Default::default() };
        let tl = DriveTimeline::with_off(s, 1e-3);
        let v0 = tl.voltage(1e-3);
        let v = tl.voltage(1e-3 + s.tau_fall);
        assert!((v / v0 - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn edges_of_square_wave() {
        let tl = DriveTimeline::with_off(DriveSignal::default(), 1.25e-3);
        let e = tl.edges_until(2e-3);
        let times: Vec<f64> = e.iter().map(|e| e.t).collect();
        assert_eq!(times, vec![0.0, 0.5e-3, 1.0e-3, 1.25e-3]);
        assert_eq!((e[0].from, e[0].to), (0.0, 1.0));
        assert_eq!((e[1].from, e[1].to), (1.0, -1.0));
        assert_eq!((e[2].from, e[2].to), (-1.0, 1.0));
        assert_eq!((e[3].from, e[3].to), (1.0, 0.0));
    }

    #[test]
    fn dc_effective_kappa_equals_step_response() {
        let m = fitted_model();
        let s = DriveSignal { waveform: Waveform::Dc, ..Default::default() };
        for &t in &[1e-7, 1e-6, 1e-5, 1e-4, 1e-2, 1.0] {
            let a = effective_kappa(&m, &s, t).unwrap();
            let b = cole_cole_step_response(&m, t).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(effective_kappa(&m, &s, 0.0).unwrap(), m.kappa_inf);
    }

    #[test]
    fn kernel_matches_direct_evaluation() {
        let m = fitted_model();
        let k = RelaxationKernel::new(&m).unwrap();
        let mut age = 1e-14;
        while age < 2.0 * k.memory {
            let direct = mittag_leffler(m.alpha, 1.0, -(age / m.tau).powf(m.alpha)).unwrap();
            let tab = k.residual(age);
            assert!((tab - direct).abs() < 1e-7, "age {age}: {tab} vs {direct}");
            age *= 1.37;
        }
    }

    #[test]
    fn square_wave_swing_each_half_cycle() {
        let m = fitted_model();
        let s = DriveSignal::default();
        let tracker = PolarizationTracker::new(&m, DriveTimeline::new(s)).unwrap();
        // late in a half-cycle after many flips
        let t_end_half = 20.0 * 0.5e-3 - 1e-9;
        let k_end = tracker.kappa(t_end_half);
        let k_min = (1..400)
            .map(|i| tracker.kappa(20.0 * 0.5e-3 + i as f64 * 0.05e-6))
            .fold(f64::INFINITY, f64::min);
        let swing = (k_end - k_min) / m.delta();
        assert!(swing >= 0.93, "swing {swing}");
        let direct = effective_kappa(&m, &s, t_end_half).unwrap();
        assert!((direct - k_end).abs() < 1e-5 * direct);
    }

    #[test]
    fn off_tail_matches_exact_sum() {
        let m = fitted_model();
        let off = 0.01025;
        let tl = DriveTimeline::with_off(DriveSignal::default(), off);
        let tr = PolarizationTracker::new(&m, tl).unwrap();
        let edges = tl.edges_between((off - tr.kernel().memory).max(0.0), off);
        for &dt in &[1e-9, 3e-8, 1e-6, 2.5e-5, 4e-4, 7e-3, 0.1] {
            let t = off + dt;
            let mut exact = -edges.iter().map(|e| e.to - e.from).sum::<f64>();
            for e in &edges {
                exact += (e.to - e.from) * step_fraction(m.alpha, m.tau, t - e.t).unwrap();
            }
            assert!((tr.state(t) - exact).abs() < 1e-6, "age {dt}");
        }
    }
}
