//! Greenwood-Williamson asperity contact, squeeze-film damping, and the
//! Gaussian roughness averages of the damping and electroadhesive forces.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::electrostatics::{ea_force_kernel, ClutchGeometry};
use crate::error::{Error, Result};
use crate::numerics::tolerance::{AIR_VISCOSITY, GAUSSIAN_TRUNCATION_SIGMAS};
use crate::numerics::{bessel_k, fit_least_squares, gauss_legendre, quadrature, Bounds, Tolerance};
use crate::numerics::tolerance::VACUUM_PERMITTIVITY as EPS0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// N·m^-3.5
    pub stiffness_k: f64,
    /// m
    pub sigma_d: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self { stiffness_k: 5.39e14, sigma_d: 2.80e-6 }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness_k > 0.0) || !self.stiffness_k.is_finite() {
            return Err(Error::Config(format!("contact.stiffness_k must be positive, got {}", self.stiffness_k)));
        }
        if !(self.sigma_d > 0.0) || !self.sigma_d.is_finite() {
            return Err(Error::Config(format!("contact.sigma_d must be positive, got {}", self.sigma_d)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirProperties {
    /// N·s/m²
    pub dynamic_viscosity: f64,
    /// Gap below which the squeeze-film law is held constant, m.
    pub floor_gap: f64,
}

/// Default squeeze-film floor gap.
pub const DEFAULT_FLOOR_GAP: f64 = 1e-6;

impl Default for AirProperties {
    fn default() -> Self {
        Self { dynamic_viscosity: AIR_VISCOSITY, floor_gap: DEFAULT_FLOOR_GAP }
    }
}

impl AirProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.dynamic_viscosity > 0.0) {
            return Err(Error::Config(format!("air.dynamic_viscosity must be positive, got {}", self.dynamic_viscosity)));
        }
        if !(self.floor_gap > 0.0) {
            return Err(Error::Config(format!("air.floor_gap must be positive, got {}", self.floor_gap)));
        }
        Ok(())
    }
}

/// G_1.5(0) = 2^{1/4} Γ(5/4) / √(2π)
pub fn g_three_halves_at_zero() -> f64 {
    2f64.powf(0.25) * libm::tgamma(1.25) / (2.0 * PI).sqrt()
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// G_1.5(h) = ∫_h^∞ (s − h)^1.5 φ(s) ds.
pub fn g_three_halves(h: f64) -> f64 {
    if h.is_nan() {
        return f64::NAN;
    }
    if h == 0.0 {
        return g_three_halves_at_zero();
    }
    if h < 0.0 {
        // closed form needs √h; fall back to the defining integral
        let f = |s: f64| (s - h).powf(1.5) * normal_pdf(s);
        return quadrature(f, h, f64::INFINITY, &Tolerance::default().with_rel(1e-11))
            .expect("smooth, rapidly decaying integrand");
    }
    if h > 38.0 {
        return 0.0;
    }
    let z = 0.25 * h * h;
    let k14 = bessel_k(0.25, z).expect("z > 0");
    let k34 = bessel_k(0.75, z).expect("z > 0");
    h.sqrt() * (-z).exp() / (4.0 * PI.sqrt()) * ((h * h + 1.0) * k14 - h * h * k34)
}

/// F_k = k L_s w_s σ_d^1.5 G_1.5(T_air / σ_d)
pub fn contact_force(t_air: f64, model: &ContactModel, l_s: f64, w_s: f64) -> f64 {
    model.stiffness_k * l_s * w_s * model.sigma_d.powf(1.5) * g_three_halves(t_air / model.sigma_d)
}

fn damping_prefactor(l_s: f64, w_s: f64, air: &AirProperties) -> f64 {
    let (short, long) = if l_s < w_s { (l_s, w_s) } else { (w_s, l_s) };
    96.0 * air.dynamic_viscosity * short.powi(3) * long / PI.powi(4)
}

/// b = 96 µ min(L,w)³ max(L,w) / (π⁴ T_air³), N·s/m.
pub fn squeeze_film_damping_coeff(t_air: f64, l_s: f64, w_s: f64, air: &AirProperties) -> Result<f64> {
    if !(t_air > 0.0) {
        return Err(Error::Domain(format!("squeeze-film gap must be positive, got {t_air}")));
    }
    Ok(damping_prefactor(l_s, w_s, air) / t_air.powi(3))
}

const PANEL_NODES: usize = 24;

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_NODES))
}

/// ∫ f(τ) N(τ; mean, σ) dτ over [max(lo, mean − 8σ), mean + 8σ], split at `breaks`.
fn gaussian_average(f: impl Fn(f64) -> f64, mean: f64, sigma: f64, lo: f64, breaks: &[f64]) -> f64 {
    let a = (mean - GAUSSIAN_TRUNCATION_SIGMAS * sigma).max(lo);
    let b = mean + GAUSSIAN_TRUNCATION_SIGMAS * sigma;
    if a >= b {
        return 0.0;
    }
    let mut pts: Vec<f64> = Vec::with_capacity(breaks.len() + 3);
    pts.push(a);
    pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    if mean > a && mean < b {
        pts.push(mean);
    }
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let (x, w) = gl_rule();
    let mut total = 0.0;
    for seg in pts.windows(2) {
        let (u, v) = (seg[0], seg[1]);
        // Gaussian spans several panels when σ is large relative to the segment
        let pieces = (((v - u) / (2.0 * sigma)).ceil() as usize).clamp(1, 16);
        let h = (v - u) / pieces as f64;
        for p in 0..pieces {
            let pu = u + p as f64 * h;
            let ph = 0.5 * h;
            let pm = pu + ph;
            let mut s = 0.0;
            for (xi, wi) in x.iter().zip(w) {
                let tau = pm + ph * xi;
                s += wi * f(tau) * normal_pdf((tau - mean) / sigma);
            }
            total += ph * s / sigma;
        }
    }
    total
}

/// Geometric breakpoints above the damping floor, where 1/τ³ varies fastest.
fn damping_breaks(floor: f64, top: f64) -> Vec<f64> {
    let mut out = vec![floor];
    let mut p = floor * 2.0;
    while p < top {
        out.push(p);
        p *= 2.0;
    }
    out
}

/// Roughness-averaged squeeze-film coefficient b′ = ∫₀^∞ b(max(τ, floor)) N(τ; T_air, σ_d) dτ.
pub fn averaged_damping_coeff(t_air: f64, model: &ContactModel, l_s: f64, w_s: f64, air: &AirProperties) -> f64 {
    let pre = damping_prefactor(l_s, w_s, air);
    let floor = air.floor_gap;
    let kernel = |tau: f64| pre / tau.max(floor).powi(3);
    let top = t_air + GAUSSIAN_TRUNCATION_SIGMAS * model.sigma_d;
    gaussian_average(kernel, t_air, model.sigma_d, 0.0, &damping_breaks(floor, top))
}

/// F_b′ = −b′ Ṫ_air
pub fn averaged_damping_force(
    t_air: f64,
    tdot: f64,
    model: &ContactModel,
    l_s: f64,
    w_s: f64,
    air: &AirProperties,
) -> f64 {
    -averaged_damping_coeff(t_air, model, l_s, w_s, air) * tdot
}

/// F_ea′ = ∫ F_ea(max(τ, 0)) N(τ; T_air, σ_d) dτ. Asperities that pass through
/// the mean plane are in contact, so the local gap is clamped at zero rather
/// than following the force law into its pole at −T_d/κ.
pub fn averaged_ea_force(t_air: f64, geom: &ClutchGeometry, kappa: f64, v: f64, model: &ContactModel) -> f64 {
    let kernel = |tau: f64| ea_force_kernel(geom, kappa, v, tau.max(0.0));
    gaussian_average(kernel, t_air, model.sigma_d, f64::NEG_INFINITY, &[0.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactFit {
    pub model: ContactModel,
    /// Standard errors of (stiffness_k, sigma_d).
    pub std_errors: [f64; 2],
    pub residual_norm: f64,
    /// Air gaps inferred from the measured capacitances, m.
    pub gaps: Vec<f64>,
    /// (normal force N, model capacitance F) over the measured force range.
    pub predicted_capacitance: Vec<(f64, f64)>,
    /// Set when the inferred gaps do not decrease with increasing force.
    pub non_monotone: bool,
    pub clamped: bool,
}

/// Air gap at which the contact force equals `force`, by bisection.
pub fn gap_for_contact_force(force: f64, model: &ContactModel, l_s: f64, w_s: f64) -> f64 {
    let f = |t: f64| contact_force(t, model, l_s, w_s) - force;
    let mut lo = -5.0 * model.sigma_d;
    let mut hi = 12.0 * model.sigma_d;
    while f(lo) < 0.0 {
        lo *= 2.0;
    }
    if f(hi) > 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * model.sigma_d {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Capacitance the contact model predicts at a given normal force. Gaps below
/// zero (compressed asperities) are kept.
pub fn model_capacitance(force: f64, model: &ContactModel, geom: &ClutchGeometry, kappa: f64) -> f64 {
    let g = gap_for_contact_force(force, model, geom.overlap_length, geom.substrate_width);
    geom.n_area() * kappa * EPS0 / (4.0 * (geom.dielectric_thickness + kappa * g))
}

/// Fits the contact model to (normal force N, capacitance F) measurements:
/// capacitances are converted to gaps with the co-planar capacitance law,
/// then force-vs-gap is least-squares fitted for (k, σ_d).
pub fn fit_contact_model(data: &[(f64, f64)], geom: &ClutchGeometry, kappa: f64) -> Result<ContactFit> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("{} calibration points, need >= 2", data.len())));
    }
    if data.iter().any(|&(f, c)| !(c > 0.0) || !f.is_finite()) {
        return Err(Error::Domain("capacitances must be positive and forces finite".into()));
    }
    let n_area = geom.n_area();
    let gaps: Vec<f64> = data
        .iter()
        .map(|&(_, c)| n_area * EPS0 / (4.0 * c) - geom.dielectric_thickness / kappa)
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].0.total_cmp(&data[b].0));
    let non_monotone = order.windows(2).any(|w| gaps[w[1]] > gaps[w[0]]);

    let (l_s, w_s) = (geom.overlap_length, geom.substrate_width);
    let pts: Vec<(f64, f64)> = gaps.iter().zip(data).map(|(&g, &(f, _))| (g, f)).collect();
    // parameters: ln k and σ_d in µm, both of order one
    let model = |p: &[f64], gap: f64| {
        let m = ContactModel { stiffness_k: p[0].exp(), sigma_d: p[1] * 1e-6 };
        contact_force(gap, &m, l_s, w_s)
    };
    let spread = {
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt()
    };
    let sigma0 = (spread.max(0.5e-6) * 1e6).min(20.0);
    let tol = Tolerance::default();
    let bounds = Bounds(vec![(0.0, 80.0), (1e-3, 1e3)]);
    // k from the largest force at the initial σ
    let (g_max_f, f_max) = pts.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
    let mut best = None;
    for scale in [1.0, 0.5, 2.0, 0.25, 4.0] {
        let s = sigma0 * scale;
        let sd = s * 1e-6;
        let g = g_three_halves(g_max_f / sd).max(1e-300);
        let k0 = (f_max.max(1e-12) / (l_s * w_s * sd.powf(1.5) * g)).ln().clamp(1.0, 79.0);
        if let Ok(fit) = fit_least_squares(model, &pts, &[k0, s], &bounds, &tol) {
            let better = best.as_ref().is_none_or(|b: &crate::numerics::FitResult| fit.residual_norm < b.residual_norm);
            if better {
                best = Some(fit);
            }
        }
    }
    let fit = best.ok_or_else(|| Error::DegenerateFit("contact fit did not converge from any start".into()))?;
    let fitted = ContactModel { stiffness_k: fit.params[0].exp(), sigma_d: fit.params[1] * 1e-6 };
    let f_lo = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let f_hi = data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let predicted_capacitance = (0..=50)
        .map(|i| {
            let f = f_lo + (f_hi - f_lo) * i as f64 / 50.0;
            (f, model_capacitance(f, &fitted, geom, kappa))
        })
        .collect();
    Ok(ContactFit {
        model: fitted,
        std_errors: [fitted.stiffness_k * fit.std_errors[0], fit.std_errors[1] * 1e-6],
        residual_norm: fit.residual_norm,
        gaps,
        predicted_capacitance,
        non_monotone,
        clamped: fit.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gw_oracle(h: f64) -> f64 {
        let f = |s: f64| (s - h).powf(1.5) * normal_pdf(s);
        quadrature(f, h, f64::INFINITY, &Tolerance::default().with_rel(1e-13).with_abs(0.0)).unwrap()
    }

    #[test]
    fn g_at_zero() {
        assert!((g_three_halves(0.0) - 0.4300).abs() < 1e-3);
        assert!((g_three_halves(1e-9) - g_three_halves(0.0)).abs() < 1e-8);
        assert!((g_three_halves(-1e-9) - g_three_halves(0.0)).abs() < 1e-8);
    }

    #[test]
    fn g_closed_form_matches_integral() {
        for i in 1..=60 {
            let h = 0.1 * i as f64;
            let a = g_three_halves(h);
            let b = gw_oracle(h);
            assert!(((a - b) / b).abs() < 1e-8, "h={h}: {a} vs {b}");
        }
        assert!(g_three_halves(5.0) < 1e-5);
    }

    #[test]
    fn g_monotone_through_zero() {
        let mut prev = f64::INFINITY;
        for i in -40..=80 {
            let g = g_three_halves(0.05 * i as f64);
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn contact_force_hand_value() {
        let m = ContactModel::default();
        let f0 = contact_force(0.0, &m, 55.5e-3, 2e-3);
        let want = 5.39e14 * 55.5e-3 * 2e-3 * (2.8e-6f64).powf(1.5) * 0.43002;
        assert!((f0 / want - 1.0).abs() < 1e-4, "{f0}");
        assert!(contact_force(50e-6, &m, 55.5e-3, 2e-3) < 1e-12);
    }

    #[test]
    fn damping_hand_value() {
        let air = AirProperties::default();
        let b = squeeze_film_damping_coeff(3e-6, 55.5e-3, 2e-3, &air).unwrap();
        let want = 96.0 * 1.85e-5 * 8e-9 * 55.5e-3 / (PI.powi(4) * 27e-18);
        assert!((b / want - 1.0).abs() < 1e-12);
        assert!((b - 3.0e2).abs() < 5.0);
        let b2 = squeeze_film_damping_coeff(1.5e-6, 55.5e-3, 2e-3, &air).unwrap();
        assert!((b2 / b - 8.0).abs() < 1e-9);
        assert!(squeeze_film_damping_coeff(0.0, 1.0, 1.0, &air).is_err());
    }

    #[test]
    fn damping_force_opposes_motion() {
        let m = ContactModel::default();
        let air = AirProperties::default();
        for &v in &[-1.0, -1e-3, 1e-3, 1.0] {
            let f = averaged_damping_force(3e-6, v, &m, 55.5e-3, 2e-3, &air);
            assert!(f * v < 0.0);
        }
    }

    #[test]
    fn averages_reduce_to_point_values() {
        let geom = ClutchGeometry::default();
        let air = AirProperties::default();
        let sharp = ContactModel { sigma_d: 1e-12, ..Default::default() };
        let t = 5e-6;
        let b = squeeze_film_damping_coeff(t, 55.5e-3, 2e-3, &air).unwrap();
        assert!((averaged_damping_coeff(t, &sharp, 55.5e-3, 2e-3, &air) / b - 1.0).abs() < 1e-3);
        let f = ea_force_kernel(&geom, 54.2, 300.0, t);
        assert!((averaged_ea_force(t, &geom, 54.2, 300.0, &sharp) / f - 1.0).abs() < 1e-6);
    }

    #[test]
    fn damping_average_matches_adaptive_quadrature() {
        let m = ContactModel::default();
        let air = AirProperties { floor_gap: 100e-9, ..Default::default() };
        let pre = damping_prefactor(55.5e-3, 2e-3, &air);
        for &t in &[0.0, 1e-6, 3e-6, 10e-6, 28e-6] {
            let f = |tau: f64| {
                pre / tau.max(air.floor_gap).powi(3)
                    * normal_pdf((tau - t) / m.sigma_d)
                    / m.sigma_d
            };
            let lo = (t - 8.0 * m.sigma_d).max(0.0);
            let hi = t + 8.0 * m.sigma_d;
            let tol = Tolerance::default().with_rel(1e-10);
            let mut pts = vec![lo, air.floor_gap, hi];
            pts.retain(|&p| p >= lo && p <= hi);
            pts.sort_by(f64::total_cmp);
            let oracle: f64 = pts.windows(2).map(|w| quadrature(f, w[0], w[1], &tol).unwrap()).sum();
            let got = averaged_damping_coeff(t, &m, 55.5e-3, 2e-3, &air);
            assert!((got / oracle - 1.0).abs() < 1e-6, "t={t}: {got} vs {oracle}");
        }
        // far from contact: E[(1+u)^-3] = 1 + 6s² + 45s⁴ + 420s⁶ + ... with s = σ/T
        let t = 10.0 * m.sigma_d;
        let b = squeeze_film_damping_coeff(t, 55.5e-3, 2e-3, &air).unwrap();
        let s2: f64 = 0.01;
        let series = 1.0 + 6.0 * s2 + 45.0 * s2 * s2 + 420.0 * s2.powi(3);
        let ratio = averaged_damping_coeff(t, &m, 55.5e-3, 2e-3, &air) / b;
        assert!((ratio / series - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn ea_average_amplification() {
        let geom = ClutchGeometry::default();
        let m = ContactModel::default();
        let mut best: f64 = 0.0;
        for i in 0..400 {
            let t = i as f64 * 0.05e-6;
            let ratio = averaged_ea_force(t, &geom, 54.2, 300.0, &m) / ea_force_kernel(&geom, 54.2, 300.0, t);
            best = best.max(ratio);
        }
        assert!((best / 11.1 - 1.0).abs() < 0.10, "max amplification {best}");
        let far = 40.0 * m.sigma_d;
        let r = averaged_ea_force(far, &geom, 54.2, 300.0, &m) / ea_force_kernel(&geom, 54.2, 300.0, far);
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn forces_continuous_across_zero() {
        let geom = ClutchGeometry::default();
        let m = ContactModel::default();
        for &(a, b) in &[(-1e-12, 1e-12)] {
            let fa = contact_force(a, &m, 55.5e-3, 2e-3);
            let fb = contact_force(b, &m, 55.5e-3, 2e-3);
            assert!((fa - fb).abs() < 1e-5 * fa);
            let ea = averaged_ea_force(a, &geom, 54.2, 300.0, &m);
            let eb = averaged_ea_force(b, &geom, 54.2, 300.0, &m);
            assert!((ea - eb).abs() < 1e-5 * ea);
        }
    }

    #[test]
    fn linear_in_length() {
        let m = ContactModel::default();
        let air = AirProperties::default();
        let t = 2e-6;
        let f1 = contact_force(t, &m, 55.5e-3, 2e-3);
        let f2 = contact_force(t, &m, 111e-3, 2e-3);
        assert!((f2 / f1 - 2.0).abs() < 1e-12);
        let b1 = averaged_damping_coeff(t, &m, 55.5e-3, 2e-3, &air);
        let b2 = averaged_damping_coeff(t, &m, 111e-3, 2e-3, &air);
        assert!((b2 / b1 - 2.0).abs() < 1e-12);
        let b3 = averaged_damping_coeff(t, &m, 55.5e-3, 4e-3, &air);
        assert!((b3 / b1 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn contact_fit_round_trip() {
        let geom = ClutchGeometry::default();
        let truth = ContactModel::default();
        let kappa = 4.0;
        let data: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let gap = 0.5e-6 + i as f64 * 0.6e-6;
                let f = contact_force(gap, &truth, geom.overlap_length, geom.substrate_width);
                let c = geom.n_area() * kappa * EPS0 / (4.0 * (geom.dielectric_thickness + kappa * gap));
                (f, c)
            })
            .collect();
        let fit = fit_contact_model(&data, &geom, kappa).unwrap();
        assert!((fit.model.stiffness_k / truth.stiffness_k - 1.0).abs() < 0.02);
        assert!((fit.model.sigma_d / truth.sigma_d - 1.0).abs() < 0.02);
        assert!(!fit.non_monotone);
        assert_eq!(fit.predicted_capacitance.len(), 51);
    }

    #[test]
    fn contact_fit_two_points_exact() {
        let geom = ClutchGeometry::default();
        let truth = ContactModel { stiffness_k: 3e14, sigma_d: 2e-6 };
        let kappa = 4.0;
        let data: Vec<(f64, f64)> = [1e-6, 4e-6]
            .iter()
            .map(|&gap| {
                let f = contact_force(gap, &truth, geom.overlap_length, geom.substrate_width);
                let c = geom.n_area() * kappa * EPS0 / (4.0 * (geom.dielectric_thickness + kappa * gap));
                (f, c)
            })
            .collect();
        let fit = fit_contact_model(&data, &geom, kappa).unwrap();
        assert!((fit.model.stiffness_k / truth.stiffness_k - 1.0).abs() < 1e-6);
        assert!((fit.model.sigma_d / truth.sigma_d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gap_for_force_inverts() {
        let m = ContactModel::default();
        for &g in &[-1e-6, 0.0, 2e-6, 8e-6] {
            let f = contact_force(g, &m, 55.5e-3, 2e-3);
            let back = gap_for_contact_force(f, &m, 55.5e-3, 2e-3);
            assert!((back - g).abs() < 1e-12, "{g} -> {back}");
        }
    }
}
