//! Adaptive linearly-implicit (Rosenbrock) integrator with event location.
//!
//! Four-stage, order 4 with an embedded order 3 estimate (Shampine's
//! L-stable-at-infinity coefficient set). The Jacobian and the explicit time
//! derivative are taken by finite differences, so the right-hand side only
//! needs to be evaluable.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::Tolerance;

const GAM: f64 = 0.5;
const A21: f64 = 2.0;
const A31: f64 = 48.0 / 25.0;
const A32: f64 = 6.0 / 25.0;
const C21: f64 = -8.0;
const C31: f64 = 372.0 / 25.0;
const C32: f64 = 12.0 / 5.0;
const C41: f64 = -112.0 / 125.0;
const C42: f64 = -54.0 / 125.0;
const C43: f64 = -2.0 / 5.0;
const B1: f64 = 19.0 / 9.0;
const B2: f64 = 0.5;
const B3: f64 = 25.0 / 108.0;
const B4: f64 = 125.0 / 108.0;
const E1: f64 = 17.0 / 54.0;
const E2: f64 = 7.0 / 36.0;
const E3: f64 = 0.0;
const E4: f64 = 125.0 / 108.0;
const C1X: f64 = 0.5;
const C2X: f64 = -1.5;
const C3X: f64 = 121.0 / 50.0;
const C4X: f64 = 29.0 / 250.0;
const A2X: f64 = 1.0;
const A3X: f64 = 0.6;

const SAFETY: f64 = 0.9;
const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.2;

pub type Rhs<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a>;
pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + 'a>;

/// Which sign changes of an event function count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

pub struct Event<'a> {
    pub func: EventFn<'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> Event<'a> {
    pub fn terminal(direction: Direction, func: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'a) -> Self {
        Self { func: Box::new(func), direction, terminal: true }
    }

    pub fn marker(direction: Direction, func: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'a) -> Self {
        Self { func: Box::new(func), direction, terminal: false }
    }
}

/// What the solver stores along the way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    /// Every accepted step.
    Steps,
    /// A uniform grid with this spacing, interpolated from the dense output.
    Uniform(f64),
    /// Only the final state.
    Final,
}

pub struct OdeProblem<'a> {
    pub rhs: Rhs<'a>,
    pub initial_state: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub events: Vec<Event<'a>>,
    /// Times the integrator must land on exactly (discontinuities of the rhs).
    pub tstops: Vec<f64>,
    pub max_step: f64,
    pub first_step: Option<f64>,
    pub output: Output,
    /// Per-component multipliers on the absolute tolerance.
    pub abs_scale: Option<Vec<f64>>,
}

impl<'a> OdeProblem<'a> {
    pub fn new(
        rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a,
        initial_state: Vec<f64>,
        t0: f64,
        t_end: f64,
    ) -> Self {
        Self {
            rhs: Box::new(rhs),
            initial_state,
            t0,
            t_end,
            events: Vec::new(),
            tstops: Vec::new(),
            max_step: f64::INFINITY,
            first_step: None,
            output: Output::Steps,
            abs_scale: None,
        }
    }

    pub fn with_event(mut self, event: Event<'a>) -> Self {
        self.events.push(event);
        self
    }

    pub fn with_tstops(mut self, tstops: impl IntoIterator<Item = f64>) -> Self {
        self.tstops.extend(tstops);
        self
    }

    /// Scales the absolute tolerance per component, for states with mixed units.
    pub fn with_abs_scale(mut self, scale: Vec<f64>) -> Self {
        self.abs_scale = Some(scale);
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_first_step(mut self, h: f64) -> Self {
        self.first_step = Some(h);
        self
    }

    pub fn with_output(mut self, output: Output) -> Self {
        self.output = output;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub index: usize,
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Terminal event that stopped the integration, if any.
    pub event: Option<EventHit>,
    /// Every event crossing found, terminal or not, in time order.
    pub events: Vec<EventHit>,
    pub stats: SolverStats,
}

impl OdeSolution {
    pub fn final_time(&self) -> f64 {
        *self.t.last().expect("solution always holds the initial point")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution always holds the initial point")
    }

    /// One component across the stored samples.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

/// Cubic Hermite interpolant across one accepted step.
struct Segment<'s> {
    t0: f64,
    h: f64,
    y0: &'s [f64],
    f0: &'s [f64],
    y1: &'s [f64],
    f1: &'s [f64],
}

impl Segment<'_> {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i]
                + h10 * self.h * self.f0[i]
                + h01 * self.y1[i]
                + h11 * self.h * self.f1[i];
        }
    }
}

fn crossed(direction: Direction, g0: f64, g1: f64) -> bool {
    let rising = g0 < 0.0 && g1 >= 0.0;
    let falling = g0 > 0.0 && g1 <= 0.0;
    match direction {
        Direction::Rising => rising,
        Direction::Falling => falling,
        Direction::Either => rising || falling,
    }
}

/// Illinois-modified regula falsi on the interpolant.
fn locate(event: &Event<'_>, seg: &Segment<'_>, g_lo: f64, g_hi: f64, buf: &mut [f64]) -> f64 {
    let (mut a, mut b) = (seg.t0, seg.t0 + seg.h);
    let (mut fa, mut fb) = (g_lo, g_hi);
    let width = (b - a).abs();
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * width.max(f64::MIN_POSITIVE) {
            break;
        }
        let mut c = b - fb * (b - a) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        seg.eval(c, buf);
        let fc = (event.func)(c, buf);
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    // the crossing lies in (a, b]; b is on the far side
    b
}

struct Workspace {
    n: usize,
    jac: DMatrix<f64>,
    dfdt: Vec<f64>,
    tmp: Vec<f64>,
    ftmp: Vec<f64>,
    g: [DVector<f64>; 4],
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            n,
            jac: DMatrix::zeros(n, n),
            dfdt: vec![0.0; n],
            tmp: vec![0.0; n],
            ftmp: vec![0.0; n],
            g: std::array::from_fn(|_| DVector::zeros(n)),
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

struct Integrator<'p, 'a> {
    problem: &'p OdeProblem<'a>,
    tol: Tolerance,
    stats: SolverStats,
}

impl Integrator<'_, '_> {
    fn rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.problem.rhs)(t, y, out);
        self.stats.rhs_evals += 1;
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalFailure {
                reason: format!("non-finite derivative at t = {t:e}"),
                partial: t,
            })
        }
    }

    /// Finite-difference Jacobian and explicit time derivative at (t, y).
    fn linearize(&mut self, t: f64, y: &[f64], f: &[f64], h: f64, w: &mut Workspace) -> Result<()> {
        let sq = f64::EPSILON.sqrt();
        let dir = (self.problem.t_end - self.problem.t0).signum();
        let dt = sq * t.abs().max(h.abs()).max(f64::MIN_POSITIVE) * dir;
        let mut ft = std::mem::take(&mut w.ftmp);
        self.rhs(t + dt, y, &mut ft)?;
        for i in 0..w.n {
            w.dfdt[i] = (ft[i] - f[i]) / dt;
        }
        let mut yp = std::mem::take(&mut w.tmp);
        yp.copy_from_slice(y);
        for j in 0..w.n {
            let scale = y[j].abs().max((h * f[j]).abs()).max(self.tol.abs).max(1e-300);
            let dy = sq * scale;
            yp[j] = y[j] + dy;
            let step = yp[j] - y[j];
            self.rhs(t, &yp, &mut ft)?;
            for i in 0..w.n {
                w.jac[(i, j)] = (ft[i] - f[i]) / step;
            }
            yp[j] = y[j];
        }
        w.tmp = yp;
        w.ftmp = ft;
        Ok(())
    }

    /// One Rosenbrock step from (t, y) with slope f. Fills w.y_new and w.err.
    fn attempt(&mut self, t: f64, y: &[f64], f: &[f64], h: f64, w: &mut Workspace) -> Result<bool> {
        let n = w.n;
        let mut a = -w.jac.clone();
        for i in 0..n {
            a[(i, i)] += 1.0 / (GAM * h);
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Ok(false);
        }
        let solve = |rhs: &mut DVector<f64>| lu.solve_mut(rhs);

        for i in 0..n {
            w.g[0][i] = f[i] + h * C1X * w.dfdt[i];
        }
        solve(&mut w.g[0]);
        for i in 0..n {
            w.tmp[i] = y[i] + A21 * w.g[0][i];
        }
        let mut fs = std::mem::take(&mut w.ftmp);
        self.rhs(t + A2X * h, &w.tmp, &mut fs)?;
        for i in 0..n {
            w.g[1][i] = fs[i] + h * C2X * w.dfdt[i] + C21 * w.g[0][i] / h;
        }
        solve(&mut w.g[1]);
        for i in 0..n {
            w.tmp[i] = y[i] + A31 * w.g[0][i] + A32 * w.g[1][i];
        }
        self.rhs(t + A3X * h, &w.tmp, &mut fs)?;
        for i in 0..n {
            w.g[2][i] = fs[i] + h * C3X * w.dfdt[i] + (C31 * w.g[0][i] + C32 * w.g[1][i]) / h;
        }
        solve(&mut w.g[2]);
        for i in 0..n {
            w.g[3][i] = fs[i]
                + h * C4X * w.dfdt[i]
                + (C41 * w.g[0][i] + C42 * w.g[1][i] + C43 * w.g[2][i]) / h;
        }
        solve(&mut w.g[3]);
        w.ftmp = fs;
        for i in 0..n {
            let (g1, g2, g3, g4) = (w.g[0][i], w.g[1][i], w.g[2][i], w.g[3][i]);
            w.y_new[i] = y[i] + B1 * g1 + B2 * g2 + B3 * g3 + B4 * g4;
            w.err[i] = E1 * g1 + E2 * g2 + E3 * g3 + E4 * g4;
        }
        Ok(w.y_new.iter().all(|v| v.is_finite()))
    }

    fn error_norm(&self, y: &[f64], w: &Workspace) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..w.n {
            let abs = self.problem.abs_scale.as_ref().map_or(self.tol.abs, |sc| self.tol.abs * sc[i]);
            let scale = abs + self.tol.rel * y[i].abs().max(w.y_new[i].abs());
            let r = if scale > 0.0 { w.err[i].abs() / scale } else { w.err[i].abs() / f64::MIN_POSITIVE };
            worst = worst.max(r);
        }
        worst
    }

    fn initial_step(&mut self, t: f64, y: &[f64], f: &[f64]) -> Result<f64> {
        let span = (self.problem.t_end - t).abs();
        if let Some(h) = self.problem.first_step {
            return Ok(h.abs().min(span));
        }
        let n = y.len();
        let mut d0: f64 = 0.0;
        let mut d1: f64 = 0.0;
        for i in 0..n {
            let sc = self.tol.abs + self.tol.rel * y[i].abs();
            let sc = if sc > 0.0 { sc } else { 1.0 };
            d0 = d0.max(y[i].abs() / sc);
            d1 = d1.max(f[i].abs() / sc);
        }
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span).min(self.problem.max_step);
        let dir = (self.problem.t_end - t).signum();
        let mut y1 = vec![0.0; n];
        for i in 0..n {
            y1[i] = y[i] + dir * h0 * f[i];
        }
        let mut f1 = vec![0.0; n];
        self.rhs(t + dir * h0, &y1, &mut f1)?;
        let mut d2: f64 = 0.0;
        for i in 0..n {
            let sc = self.tol.abs + self.tol.rel * y[i].abs();
            let sc = if sc > 0.0 { sc } else { 1.0 };
            d2 = d2.max((f1[i] - f[i]).abs() / sc / h0);
        }
        let h1 = if d1.max(d2) <= 1e-15 {
            (1e-6f64).max(h0 * 1e-3)
        } else {
            (0.01 / d1.max(d2)).powf(0.25)
        };
        Ok((100.0 * h0).min(h1).min(span).min(self.problem.max_step).max(f64::MIN_POSITIVE))
    }
}

/// Integrates the problem from t0 toward t_end, stopping early at the first
/// terminal event.
pub fn solve_ivp(problem: &OdeProblem<'_>, tol: &Tolerance) -> Result<OdeSolution> {
    tol.validate()?;
    let n = problem.initial_state.len();
    if n == 0 {
        return Err(Error::Domain("empty initial state".into()));
    }
    if let Some(sc) = &problem.abs_scale {
        if sc.len() != n || sc.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("abs_scale needs one positive entry per component".into()));
        }
    }
    let (t0, t_end) = (problem.t0, problem.t_end);
    if !(t0.is_finite() && t_end.is_finite()) {
        return Err(Error::Domain(format!("non-finite time span [{t0}, {t_end}]")));
    }
    if !(problem.max_step > 0.0) {
        return Err(Error::Domain("max_step must be positive".into()));
    }
    if let Output::Uniform(dt) = problem.output {
        if !(dt > 0.0) {
            return Err(Error::Domain("output spacing must be positive".into()));
        }
    }
    let mut integ = Integrator { problem, tol: *tol, stats: SolverStats::default() };
    let mut y = problem.initial_state.clone();
    let mut f = vec![0.0; n];
    integ.rhs(t0, &y, &mut f)?;

    let mut sol = OdeSolution {
        t: vec![t0],
        states: vec![y.clone()],
        event: None,
        events: Vec::new(),
        stats: SolverStats::default(),
    };
    if t0 == t_end {
        sol.stats = integ.stats;
        return Ok(sol);
    }
    let dir = (t_end - t0).signum();
    let mut stops: Vec<f64> = problem
        .tstops
        .iter()
        .copied()
        .filter(|&s| dir * (s - t0) > 0.0 && dir * (t_end - s) > 0.0)
        .collect();
    stops.sort_by(|a, b| (dir * a).total_cmp(&(dir * b)));
    // stops closer than rounding noise would force a degenerate step
    let scale = t0.abs().max(t_end.abs()).max(f64::MIN_POSITIVE);
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    stops.retain(|&s| (t_end - s).abs() > 1e-12 * scale && (s - t0).abs() > 1e-12 * scale);
    stops.push(t_end);
    let mut next_stop = 0usize;

    let mut g_prev: Vec<f64> = problem.events.iter().map(|e| (e.func)(t0, &y)).collect();
    let mut sample_index = 1u64;
    let mut w = Workspace::new(n);
    let mut f_new = vec![0.0; n];
    let mut interp = vec![0.0; n];
    let mut t = t0;
    let mut h = integ.initial_step(t, &y, &f)?;
    let mut last_rejected = false;
    let mut linearized_at = f64::NAN;

    loop {
        if integ.stats.accepted + integ.stats.rejected >= tol.max_iter {
            return Err(Error::NumericalFailure {
                reason: format!("step budget of {} exhausted at t = {t:e}", tol.max_iter),
                partial: t,
            });
        }
        let target = stops[next_stop];
        let remaining = (target - t).abs();
        h = h.min(problem.max_step);
        let mut landing = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            landing = true;
        } else if h > 0.5 * remaining {
            // split the remainder instead of leaving a sliver
            h = 0.5 * remaining;
        }
        let min_step = 16.0 * f64::EPSILON * t.abs().max(t_end.abs()).max(1e-300);
        if h < min_step {
            return Err(Error::Stiffness { t });
        }
        if linearized_at != t {
            integ.linearize(t, &y, &f, h, &mut w)?;
            linearized_at = t;
        }
        let hs = dir * h;
        let ok = integ.attempt(t, &y, &f, hs, &mut w)?;
        let err = if ok { integ.error_norm(&y, &w) } else { f64::INFINITY };
        if !(err <= 1.0) {
            integ.stats.rejected += 1;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.25)).clamp(SHRINK_MIN, 1.0)
            } else {
                0.25
            };
            h *= factor;
            last_rejected = true;
            continue;
        }
        integ.stats.accepted += 1;
        let t_new = if landing { target } else { t + hs };
        integ.rhs(t_new, &w.y_new, &mut f_new)?;

        let seg = Segment { t0: t, h: t_new - t, y0: &y, f0: &f, y1: &w.y_new, f1: &f_new };
        // events on this step, earliest first
        let mut stop_at: Option<EventHit> = None;
        let mut found: Vec<EventHit> = Vec::new();
        for (k, event) in problem.events.iter().enumerate() {
            let g_new = (event.func)(t_new, &w.y_new);
            if crossed(event.direction, g_prev[k], g_new) {
                let te = locate(event, &seg, g_prev[k], g_new, &mut interp);
                seg.eval(te, &mut interp);
                if te == t_new {
                    interp.copy_from_slice(&w.y_new);
                }
                found.push(EventHit { index: k, t: te, state: interp.clone() });
            }
            g_prev[k] = g_new;
        }
        found.sort_by(|a, b| (dir * a.t).total_cmp(&(dir * b.t)));
        for hit in found {
            let terminal = problem.events[hit.index].terminal;
            if stop_at.is_some() {
                break;
            }
            sol.events.push(hit.clone());
            if terminal {
                stop_at = Some(hit);
            }
        }
        let t_limit = stop_at.as_ref().map_or(t_new, |e| e.t);

        if let Output::Uniform(dt) = problem.output {
            loop {
                let ts = t0 + dir * dt * sample_index as f64;
                if dir * (t_limit - ts) < 0.0 {
                    break;
                }
                seg.eval(ts, &mut interp);
                sol.t.push(ts);
                sol.states.push(interp.clone());
                sample_index += 1;
            }
        }

        if let Some(hit) = stop_at {
            let last_t = *sol.t.last().expect("non-empty");
            if last_t != hit.t {
                sol.t.push(hit.t);
                sol.states.push(hit.state.clone());
            }
            sol.event = Some(hit);
            sol.stats = integ.stats;
            return Ok(sol);
        }

        if problem.output == Output::Steps {
            sol.t.push(t_new);
            sol.states.push(w.y_new.clone());
        }

        y.copy_from_slice(&w.y_new);
        std::mem::swap(&mut f, &mut f_new);
        t = t_new;

        let mut factor = SAFETY * err.max(1e-10).powf(-0.25);
        factor = factor.clamp(SHRINK_MIN, GROW_MAX);
        if last_rejected {
            factor = factor.min(1.0);
        }
        last_rejected = false;
        h *= factor;

        if landing {
            if next_stop + 1 == stops.len() {
                break;
            }
            next_stop += 1;
            // the rhs may jump at a stop; re-seed the slope from the right
            integ.rhs(t, &y, &mut f)?;
            for (k, event) in problem.events.iter().enumerate() {
                g_prev[k] = (event.func)(t, &y);
            }
        }
    }

    if problem.output != Output::Steps {
        let last_t = *sol.t.last().expect("non-empty");
        if last_t != t {
            sol.t.push(t);
            sol.states.push(y.clone());
        }
    }
    sol.stats = integ.stats;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> Tolerance {
        Tolerance::new(1e-10, 1e-12, 200_000).unwrap()
    }

    #[test]
    fn exponential_decay() {
        let p = OdeProblem::new(|_, y, dy| dy[0] = -y[0], vec![1.0], 0.0, 1.0);
        let sol = solve_ivp(&p, &Tolerance::default()).unwrap();
        assert_eq!(sol.final_time(), 1.0);
        assert!((sol.final_state()[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn backward_in_time() {
        let p = OdeProblem::new(|_, y, dy| dy[0] = -y[0], vec![1.0], 1.0, 0.0);
        let sol = solve_ivp(&p, &tight()).unwrap();
        assert!((sol.final_state()[0] - 1.0f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn oscillator_zero_crossing_event() {
        let omega = 3.0;
        let p = OdeProblem::new(
            move |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -omega * omega * y[0];
            },
            vec![1.0, 0.0],
            0.0,
            10.0,
        )
        .with_event(Event::terminal(Direction::Falling, |_, y| y[0]));
        let sol = solve_ivp(&p, &Tolerance::default()).unwrap();
        let hit = sol.event.clone().expect("event");
        assert!((hit.t - std::f64::consts::PI / (2.0 * omega)).abs() < 1e-4);
        assert_eq!(sol.final_time(), hit.t);
    }

    #[test]
    fn non_terminal_events_are_all_recorded() {
        let p = OdeProblem::new(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            vec![0.0, 1.0],
            0.0,
            10.0,
        )
        .with_event(Event::marker(Direction::Either, |_, y| y[0]));
        let sol = solve_ivp(&p, &tight()).unwrap();
        // sin t crosses zero at π, 2π, 3π within (0, 10]
        assert!(sol.event.is_none());
        assert_eq!(sol.events.len(), 3);
        for (k, e) in sol.events.iter().enumerate() {
            assert!((e.t - (k + 1) as f64 * std::f64::consts::PI).abs() < 1e-7);
        }
    }

    #[test]
    fn energy_drift_over_hundred_periods() {
        let p = OdeProblem::new(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            vec![1.0, 0.0],
            0.0,
            200.0 * std::f64::consts::PI,
        )
        .with_output(Output::Final);
        let sol = solve_ivp(&p, &Tolerance::default()).unwrap();
        let y = sol.final_state();
        let energy = 0.5 * (y[0] * y[0] + y[1] * y[1]);
        assert!((energy - 0.5).abs() / 0.5 < 1e-4, "energy {energy}");
    }

    #[test]
    fn fourth_order_convergence() {
        // fixed steps: large first_step with a loose tolerance never rejects
        let run = |h: f64| {
            let p = OdeProblem::new(
                |t, y, dy| dy[0] = -2.0 * y[0] + t.sin(),
                vec![1.0],
                0.0,
                1.0,
            )
            .with_first_step(h)
            .with_max_step(h);
            let sol = solve_ivp(&p, &Tolerance::new(1e3, 1e3, 1_000_000).unwrap()).unwrap();
            sol.final_state()[0]
        };
        // exact: y = (2 sin t - cos t)/5 + (6/5) e^{-2t}
        let exact = (2.0 * 1.0f64.sin() - 1.0f64.cos()) / 5.0 + 1.2 * (-2.0f64).exp();
        let e1 = (run(0.1) - exact).abs();
        let e2 = (run(0.05) - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.7 && order < 4.5, "observed order {order}");
    }

    #[test]
    fn stiff_problem_takes_few_steps() {
        // stiffness ratio ~1e7; an explicit method would need millions of steps
        let p = OdeProblem::new(
            |_, y, dy| {
                dy[0] = -1e6 * (y[0] - y[1].cos());
                dy[1] = 1.0;
            },
            vec![0.0, 0.0],
            0.0,
            10.0,
        );
        let sol = solve_ivp(&p, &Tolerance::new(1e-6, 1e-9, 100_000).unwrap()).unwrap();
        assert!(sol.stats.accepted < 5_000, "{:?}", sol.stats);
        assert!((sol.final_state()[0] - 10.0f64.cos()).abs() < 1e-4);
    }

    #[test]
    fn lands_on_tstops() {
        let edge = 0.3;
        let p = OdeProblem::new(
            move |t, _, dy| dy[0] = if t < edge { 1.0 } else { -1.0 },
            vec![0.0],
            0.0,
            1.0,
        )
        .with_tstops([edge]);
        let sol = solve_ivp(&p, &tight()).unwrap();
        assert!(sol.t.contains(&edge));
        assert!((sol.final_state()[0] - (0.3 - 0.7)).abs() < 1e-10);
    }

    #[test]
    fn uniform_output_grid() {
        let p = OdeProblem::new(|_, y, dy| dy[0] = -y[0], vec![1.0], 0.0, 1.0)
            .with_output(Output::Uniform(0.1));
        let sol = solve_ivp(&p, &tight()).unwrap();
        assert_eq!(sol.t.len(), 11);
        for (t, y) in sol.t.iter().zip(&sol.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn blow_up_reports_stiffness_or_failure() {
        // y' = y², y(0)=1 escapes at t=1
        let p = OdeProblem::new(|_, y, dy| dy[0] = y[0] * y[0], vec![1.0], 0.0, 2.0);
        let res = solve_ivp(&p, &Tolerance::default());
        assert!(matches!(res, Err(Error::Stiffness { .. }) | Err(Error::NumericalFailure { .. })));
        if let Err(Error::Stiffness { t }) = res {
            assert!((t - 1.0).abs() < 1e-2);
        }
    }
}
