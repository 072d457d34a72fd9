//! Gap equation of motion, static equilibria, shear capacity, and the
//! engagement, release and frequency-response simulations built on them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{averaged_damping_coeff, averaged_ea_force, contact_force, AirProperties, ContactModel};
use crate::electrostatics::ClutchGeometry;
use crate::error::{Error, Result};
use crate::numerics::tolerance::GRAVITY;
use crate::numerics::{solve_ivp, Direction, Event, OdeProblem, OdeSolution, Output, Tolerance};
use crate::polarization::{DielectricModel, DriveSignal, DriveTimeline, PolarizationTracker, RelaxationKernel, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaLaw {
    /// λ = 1
    Ideal,
    Fixed { value: f64 },
    /// λ = intercept + slope·V, clamped at 0
    Linear { intercept: f64, slope: f64 },
}

impl Default for LambdaLaw {
    fn default() -> Self {
        LambdaLaw::Linear { intercept: 2.40, slope: -0.0058 }
    }
}

/// Force multiplier applied to the averaged electroadhesive force.
pub fn lambda_ea(v: f64, law: &LambdaLaw) -> f64 {
    match *law {
        LambdaLaw::Ideal => 1.0,
        LambdaLaw::Fixed { value } => value.max(0.0),
        LambdaLaw::Linear { intercept, slope } => (intercept + slope * v.abs()).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Friction {
    pub mu_d_static: f64,
    pub mu_d_kinetic: f64,
    pub mu_base_static: f64,
    pub mu_base_kinetic: f64,
}

impl Default for Friction {
    fn default() -> Self {
        Self { mu_d_static: 0.188, mu_d_kinetic: 0.154, mu_base_static: 0.281, mu_base_kinetic: 0.173 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCellModel {
    /// N/m
    pub k_lc: f64,
    /// kg/s
    pub b_lc: f64,
    /// kg
    pub m_lc: f64,
    /// Expected resonance in Hz; validated to ±1 % when given.
    #[serde(default)]
    pub resonance_check_hz: Option<f64>,
}

impl Default for LoadCellModel {
    fn default() -> Self {
        Self { k_lc: 18.0e3, b_lc: 0.43, m_lc: 1.10e-3, resonance_check_hz: Some(643.4) }
    }
}

impl LoadCellModel {
    pub fn resonance_hz(&self) -> f64 {
        (self.k_lc / self.m_lc).sqrt() / (2.0 * std::f64::consts::PI)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_lc", self.k_lc), ("b_lc", self.b_lc), ("m_lc", self.m_lc)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("load_cell.{name} must be positive, got {v}")));
            }
        }
        if let Some(f) = self.resonance_check_hz {
            let got = self.resonance_hz();
            if (got / f - 1.0).abs() > 0.01 {
                return Err(Error::Config(format!(
                    "load_cell resonance {got:.1} Hz differs from resonance_check_hz {f} Hz by more than 1 %"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseMetric {
    /// Load-cell force has fallen 90 % of the way to its settled value.
    Ninety,
    /// Load-cell force has fallen 10 % of the way.
    Ten,
}

impl ReleaseMetric {
    pub fn fraction(self) -> f64 {
        match self {
            ReleaseMetric::Ninety => 0.9,
            ReleaseMetric::Ten => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    /// Fraction of the way from the initial to the final gap that ends engagement.
    pub engage_threshold: f64,
    pub engage_max_time: f64,
    /// F_shear(t_r) / F_shear,max at release.
    pub release_force_ratio: f64,
    pub release_metric: ReleaseMetric,
    /// Drive-on time before release; rounded to the middle of a positive half-cycle.
    pub hold_time: f64,
    pub release_max_time: f64,
    /// Drive history before the capacity-vs-frequency window, s.
    pub bode_history: f64,
    pub bode_min_duration: f64,
    pub bode_min_periods: u32,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            engage_threshold: 0.005,
            engage_max_time: 5e-3,
            release_force_ratio: 0.8,
            release_metric: ReleaseMetric::Ninety,
            hold_time: 1.0,
            release_max_time: 20e-3,
            bode_history: 0.2,
            bode_min_duration: 2e-3,
            bode_min_periods: 20,
            rel_tol: 1e-7,
            abs_tol: 1e-13,
        }
    }
}

impl SimulationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.engage_threshold > 0.0 && self.engage_threshold < 1.0) {
            return Err(Error::Config(format!(
                "simulation.engage_threshold must be in (0, 1), got {}",
                self.engage_threshold
            )));
        }
        if !(self.release_force_ratio > 0.0 && self.release_force_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "simulation.release_force_ratio must be in (0, 1], got {}",
                self.release_force_ratio
            )));
        }
        for (name, v) in [
            ("engage_max_time", self.engage_max_time),
            ("release_max_time", self.release_max_time),
            ("bode_min_duration", self.bode_min_duration),
            ("rel_tol", self.rel_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("simulation.{name} must be positive, got {v}")));
            }
        }
        if !(self.hold_time >= 0.0 && self.bode_history >= 0.0 && self.abs_tol >= 0.0) {
            return Err(Error::Config("simulation.hold_time, bode_history and abs_tol must be >= 0".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance { rel: self.rel_tol, abs: self.abs_tol, ..Tolerance::default() }
    }
}

/// Full physical description of one clutch and its operating point.
///
/// geometry, dielectric, contact, drive, friction and preload are required
/// when deserializing; everything else falls back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutchConfig {
    pub geometry: ClutchGeometry,
    pub dielectric: DielectricModel,
    pub contact: ContactModel,
    #[serde(default)]
    pub air: AirProperties,
    pub drive: DriveSignal,
    pub friction: Friction,
    #[serde(default)]
    pub load_cell: LoadCellModel,
    #[serde(default)]
    pub lambda: LambdaLaw,
    /// N
    pub preload: f64,
    /// kg/m³, used when `substrate_mass` is not given
    #[serde(default = "default_substrate_density")]
    pub substrate_density: f64,
    /// kg; defaults to density × T_d × L_s × w_s
    #[serde(default)]
    pub dielectric_mass: Option<f64>,
    /// kg; defaults to substrate_density × w_s × T_s × L_s
    #[serde(default)]
    pub substrate_mass: Option<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

fn default_substrate_density() -> f64 {
    8500.0
}

fn default_gravity() -> f64 {
    GRAVITY
}

impl Default for ClutchConfig {
    /// 2 mm brass substrate, 300 V 1 kHz drive, 0.125 N preload.
    fn default() -> Self {
        Self {
            geometry: ClutchGeometry::default(),
            dielectric: DielectricModel::default(),
            contact: ContactModel::default(),
            air: AirProperties::default(),
            drive: DriveSignal::default(),
            friction: Friction::default(),
            load_cell: LoadCellModel::default(),
            lambda: LambdaLaw::default(),
            preload: 0.125,
            substrate_density: default_substrate_density(),
            dielectric_mass: None,
            substrate_mass: None,
            gravity: GRAVITY,
            simulation: SimulationSettings::default(),
        }
    }
}

impl ClutchConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.dielectric.validate()?;
        self.contact.validate()?;
        self.air.validate()?;
        self.drive.validate()?;
        self.load_cell.validate()?;
        self.simulation.validate()?;
        let f = &self.friction;
        for (name, v) in [
            ("mu_d_static", f.mu_d_static),
            ("mu_d_kinetic", f.mu_d_kinetic),
            ("mu_base_static", f.mu_base_static),
            ("mu_base_kinetic", f.mu_base_kinetic),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("friction.{name} must be >= 0, got {v}")));
            }
        }
        if f.mu_d_static < f.mu_d_kinetic {
            return Err(Error::Config("friction.mu_d_static must be >= friction.mu_d_kinetic".into()));
        }
        if f.mu_base_static < f.mu_base_kinetic {
            return Err(Error::Config("friction.mu_base_static must be >= friction.mu_base_kinetic".into()));
        }
        if !(self.preload >= 0.0) || !self.preload.is_finite() {
            return Err(Error::Config(format!("preload must be >= 0, got {}", self.preload)));
        }
        if !(self.substrate_density > 0.0) {
            return Err(Error::Config("substrate_density must be positive".into()));
        }
        for (name, m) in [("dielectric_mass", self.dielectric_mass), ("substrate_mass", self.substrate_mass)] {
            if let Some(m) = m {
                if !(m > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {m}")));
                }
            }
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::Config("gravity must be >= 0".into()));
        }
        if let LambdaLaw::Fixed { value } = self.lambda {
            if !(value >= 0.0) {
                return Err(Error::Config("lambda.value must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Dielectric moving mass m_d, kg.
    pub fn m_d(&self) -> f64 {
        self.dielectric_mass.unwrap_or(
            self.dielectric.density
                * self.geometry.dielectric_thickness
                * self.geometry.overlap_length
                * self.geometry.substrate_width,
        )
    }

    /// Substrate mass m_s, kg.
    pub fn m_s(&self) -> f64 {
        self.substrate_mass.unwrap_or(
            self.substrate_density
                * self.geometry.substrate_width
                * self.geometry.substrate_thickness
                * self.geometry.overlap_length,
        )
    }

    pub fn lambda(&self) -> f64 {
        lambda_ea(self.drive.amplitude, &self.lambda)
    }

    fn l_s(&self) -> f64 {
        self.geometry.overlap_length
    }

    fn w_s(&self) -> f64 {
        self.geometry.substrate_width
    }

    pub fn contact_force(&self, t_air: f64) -> f64 {
        contact_force(t_air, &self.contact, self.l_s(), self.w_s())
    }

    /// λ F_ea′ at the configured λ law.
    pub fn ea_force(&self, t_air: f64, kappa: f64, v: f64) -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        self.lambda() * averaged_ea_force(t_air, &self.geometry, kappa, v, &self.contact)
    }

    pub fn damping_coeff(&self, t_air: f64) -> f64 {
        averaged_damping_coeff(t_air, &self.contact, self.l_s(), self.w_s(), &self.air)
    }

    /// F_k − λF_ea′ − m_d g − F_preload; zero at a static equilibrium.
    pub fn static_balance(&self, t_air: f64, kappa: f64, v: f64) -> f64 {
        self.contact_force(t_air) - self.ea_force(t_air, kappa, v) - self.m_d() * self.gravity - self.preload
    }
}

/// Instantaneous forces on the dielectric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapForces {
    pub contact: f64,
    pub damping: f64,
    /// λ F_ea′
    pub adhesion: f64,
    pub voltage: f64,
    pub kappa: f64,
    /// Normal force from the base, floored at zero.
    pub normal_base: f64,
    /// Set when the unfloored base reaction was negative.
    pub lift_off: bool,
}

/// Gap equation of motion for one configuration and drive timeline.
#[derive(Debug, Clone)]
pub struct GapModel<'c> {
    pub config: &'c ClutchConfig,
    pub polarization: PolarizationTracker,
    m_d: f64,
    m_s: f64,
}

impl<'c> GapModel<'c> {
    pub fn new(config: &'c ClutchConfig, timeline: DriveTimeline) -> Result<Self> {
        let polarization = PolarizationTracker::new(&config.dielectric, timeline)?;
        Ok(Self::with_tracker(config, polarization))
    }

    pub fn with_tracker(config: &'c ClutchConfig, polarization: PolarizationTracker) -> Self {
        Self { config, polarization, m_d: config.m_d(), m_s: config.m_s() }
    }

    pub fn forces(&self, t: f64, t_air: f64, tdot: f64) -> GapForces {
        let cfg = self.config;
        let v = self.polarization.voltage(t);
        let kappa = self.polarization.kappa(t);
        let contact = cfg.contact_force(t_air);
        let damping = -cfg.damping_coeff(t_air) * tdot;
        let adhesion = cfg.ea_force(t_air, kappa, v);
        let raw_base = contact + damping + self.m_s * cfg.gravity - adhesion;
        GapForces {
            contact,
            damping,
            adhesion,
            voltage: v,
            kappa,
            normal_base: raw_base.max(0.0),
            lift_off: raw_base < 0.0,
        }
    }

    /// d/dt [T_air, Ṫ_air]
    pub fn rhs(&self, t: f64, state: &[f64], out: &mut [f64]) {
        self.rhs_forces(t, state, out);
    }

    /// As `rhs`, also returning the forces used.
    fn rhs_forces(&self, t: f64, state: &[f64], out: &mut [f64]) -> GapForces {
        let f = self.forces(t, state[0], state[1]);
        let cfg = self.config;
        out[0] = state[1];
        out[1] = (f.contact + f.damping - f.adhesion - self.m_d * cfg.gravity - cfg.preload) / self.m_d;
        f
    }
}

/// d/dt [T_air, Ṫ_air] at time t.
pub fn gap_dynamics_rhs(state: [f64; 2], t: f64, model: &GapModel<'_>) -> [f64; 2] {
    let mut out = [0.0; 2];
    model.rhs(t, &state, &mut out);
    out
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, scale: f64) -> f64 {
    // f(lo) > 0 >= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-13 * scale {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Root of the static balance near `start`, searching downward first.
fn root_near(f: &impl Fn(f64) -> f64, start: f64, sigma: f64, floor: f64) -> Result<f64> {
    let f0 = f(start);
    if f0 == 0.0 {
        return Ok(start);
    }
    let mut step = 0.02 * sigma;
    let mut x = start;
    let fx = f0;
    if fx < 0.0 {
        // balance favours closing: walk down to the first sign change
        loop {
            let x2 = x - step;
            if x2 < floor {
                return Err(Error::NoEquilibrium(format!(
                    "no static balance above {floor:.3e} m (full-contact regime)"
                )));
            }
            let f2 = f(x2);
            if f2 >= 0.0 {
                return Ok(bisect(f, x2, x, sigma));
            }
            x = x2;
            step *= 1.3;
        }
    }
    loop {
        let x2 = x + step;
        if x2 > start + 100.0 * sigma {
            return Err(Error::NoEquilibrium("static balance stays positive far above the start".into()));
        }
        let f2 = f(x2);
        if f2 <= 0.0 {
            return Ok(bisect(f, x, x2, sigma));
        }
        x = x2;
        step *= 1.3;
    }
}

/// Equilibrium gap with the drive off.
pub fn rest_gap(config: &ClutchConfig) -> Result<f64> {
    let sigma = config.contact.sigma_d;
    let f = |t: f64| config.static_balance(t, config.dielectric.kappa_inf, 0.0);
    let hi = 20.0 * sigma;
    if f(hi) > 0.0 {
        return Err(Error::NoEquilibrium("contact force exceeds the load even at 20 sigma".into()));
    }
    let mut lo = 0.0;
    let mut k = 0;
    while f(lo) <= 0.0 {
        // preload beyond the contact force at zero gap: compression regime
        lo = -sigma * 2f64.powi(k);
        k += 1;
        if k > 12 {
            return Err(Error::NoEquilibrium("no static balance in the compression regime".into()));
        }
    }
    Ok(bisect(f, lo, hi, sigma))
}

/// Static gap at permittivity `kappa` and voltage `v`, reached by raising the
/// voltage from zero in small steps starting at `from_gap` (the rest gap when None).
pub fn equilibrium_gap(config: &ClutchConfig, kappa: f64, v: f64, from_gap: Option<f64>) -> Result<f64> {
    let mut gap = match from_gap {
        Some(g) => g,
        None => rest_gap(config)?,
    };
    if v == 0.0 {
        return if from_gap.is_some() { rest_gap(config) } else { Ok(gap) };
    }
    let sigma = config.contact.sigma_d;
    let floor = -200.0 * sigma;
    let steps = 40;
    for i in 1..=steps {
        let vi = v * i as f64 / steps as f64;
        let f = |t: f64| config.static_balance(t, kappa, vi);
        gap = root_near(&f, gap, sigma, floor)?;
    }
    Ok(gap)
}

/// F_shear = µ_base F_N,base + µ_d F_k
pub fn shear_force(config: &ClutchConfig, normal_base: f64, contact: f64, moving: bool) -> f64 {
    let fr = &config.friction;
    if moving {
        fr.mu_base_kinetic * normal_base + fr.mu_d_kinetic * contact
    } else {
        fr.mu_base_static * normal_base + fr.mu_d_static * contact
    }
}

/// F_shear,max = µ_base (m_d g + m_s g + F_preload) + µ_d F_k(T_settled), static coefficients.
pub fn shear_capacity(config: &ClutchConfig, t_air_settled: f64) -> f64 {
    capacity_from_contact(config, config.contact_force(t_air_settled))
}

fn capacity_from_contact(config: &ClutchConfig, contact: f64) -> f64 {
    let fr = &config.friction;
    let g = config.gravity;
    fr.mu_base_static * (config.m_d() * g + config.m_s() * g + config.preload) + fr.mu_d_static * contact
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreloadEstimate {
    pub preload: f64,
    /// The raw estimate was negative and has been set to zero.
    pub clamped: bool,
}

/// Preload from the kinetic friction measured with the drive off. Exact inverse
/// of the shear-force law at rest, where F_k = m_d g + F_preload and
/// F_N,base = (m_s + m_d) g + F_preload.
pub fn preload_from_baseline(f_shear_v0: f64, config: &ClutchConfig) -> Result<PreloadEstimate> {
    let fr = &config.friction;
    let denom = fr.mu_d_kinetic + fr.mu_base_kinetic;
    if !(denom > 0.0) {
        return Err(Error::Domain("mu_d + mu_base must be positive to estimate preload".into()));
    }
    let g = config.gravity;
    let raw = (f_shear_v0 - fr.mu_base_kinetic * (config.m_s() + config.m_d()) * g - fr.mu_d_kinetic * config.m_d() * g)
        / denom;
    Ok(PreloadEstimate { preload: raw.max(0.0), clamped: raw < 0.0 })
}

/// Kinetic shear force at rest with the drive off, for a given preload.
pub fn baseline_shear(config: &ClutchConfig) -> f64 {
    let g = config.gravity;
    let contact = config.m_d() * g + config.preload;
    let normal = (config.m_s() + config.m_d()) * g + config.preload;
    shear_force(config, normal, contact, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Engagement threshold crossed.
    Engaged,
    /// Load cell returned to zero.
    ReturnedToZero,
    /// Load cell stuck again and stayed stuck.
    MotionStopped,
    TimeLimit,
}

/// Sampled simulation output. Times are relative to the voltage switching
/// event (on for engagement, off for release).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub gap: Vec<f64>,
    pub gap_velocity: Vec<f64>,
    pub shear: Vec<f64>,
    pub voltage: Vec<f64>,
    pub kappa: Vec<f64>,
    /// k_lc x_lc, release only.
    pub load_cell_force: Option<Vec<f64>>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with columns t_s, gap_m, gapvel_mps, shear_n, voltage_v, kappa_eff
    /// (and loadcell_n for release), 9 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec!["t_s", "gap_m", "gapvel_mps", "shear_n", "voltage_v", "kappa_eff"];
        if self.load_cell_force.is_some() {
            header.push("loadcell_n");
        }
        w.write_record(&header).map_err(io)?;
        for i in 0..self.len() {
            let mut row = vec![
                sci(self.t[i]),
                sci(self.gap[i]),
                sci(self.gap_velocity[i]),
                sci(self.shear[i]),
                sci(self.voltage[i]),
                sci(self.kappa[i]),
            ];
            if let Some(lc) = &self.load_cell_force {
                row.push(sci(lc[i]));
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

/// Scientific notation with 9 significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.8e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trace: SimTrace,
    pub t_engage: Option<f64>,
    pub t_release: Option<f64>,
    pub termination: Termination,
    pub initial_gap: f64,
    /// Settled gap at full voltage (engagement) or at the end of the run (release).
    pub final_gap: f64,
    /// The base reaction went negative somewhere and was floored.
    pub lift_off: bool,
    /// Release only: predicted capacity and initial load-cell force.
    pub capacity: Option<f64>,
    pub initial_load_cell_force: Option<f64>,
}

/// Velocities get the position tolerance divided by this time scale.
const VELOCITY_TOL_TIME: f64 = 1e-6;

fn gap_abs_scale(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 1.0 / VELOCITY_TOL_TIME }).collect()
}

fn engage_step_limits(config: &ClutchConfig) -> (f64, f64) {
    let d = &config.drive;
    (1e-10, 0.5 * d.tau_rise.min(d.tau_fall))
}

/// Time for the gap to move the engagement threshold fraction of the way from
/// its rest value to its settled full-voltage value after the drive turns on.
pub fn simulate_engagement(config: &ClutchConfig) -> Result<SimResult> {
    config.validate()?;
    if !(config.drive.amplitude > 0.0) {
        return Err(Error::Domain("engagement needs a positive drive amplitude".into()));
    }
    let kernel = RelaxationKernel::new(&config.dielectric)?;
    simulate_engagement_with(config, kernel)
}

fn simulate_engagement_with(config: &ClutchConfig, kernel: RelaxationKernel) -> Result<SimResult> {
    let t0_gap = rest_gap(config)?;
    let t_inf = equilibrium_gap(config, config.dielectric.kappa_s, config.drive.amplitude, Some(t0_gap))?;
    if !(t_inf < t0_gap) {
        return Err(Error::Domain("drive does not close the gap".into()));
    }
    let threshold = t0_gap + config.simulation.engage_threshold * (t_inf - t0_gap);
    let timeline = DriveTimeline::new(config.drive);
    let model = GapModel::with_tracker(config, PolarizationTracker::with_kernel(&config.dielectric, timeline, kernel));
    let t_end = config.simulation.engage_max_time;
    let (h0, h_max) = engage_step_limits(config);
    let problem = OdeProblem::new(|t, y, out| model.rhs(t, y, out), vec![t0_gap, 0.0], 0.0, t_end)
        .with_abs_scale(gap_abs_scale(2))
        .with_event(Event::terminal(Direction::Falling, move |_, y| y[0] - threshold))
        .with_tstops(timeline.edge_times(0.0, t_end))
        .with_first_step(h0)
        .with_max_step(h_max);
    let sol = solve_ivp(&problem, &config.simulation.tolerance())?;
    let (trace, lift_off) = gap_trace(&model, &sol, 0.0);
    let (t_engage, termination) = match &sol.event {
        Some(hit) => (Some(hit.t), Termination::Engaged),
        None => (None, Termination::TimeLimit),
    };
    Ok(SimResult {
        trace,
        t_engage,
        t_release: None,
        termination,
        initial_gap: t0_gap,
        final_gap: t_inf,
        lift_off,
        capacity: None,
        initial_load_cell_force: None,
    })
}

fn gap_trace(model: &GapModel<'_>, sol: &OdeSolution, t_ref: f64) -> (SimTrace, bool) {
    let mut trace = SimTrace::default();
    let mut lift_off = false;
    for (t, y) in sol.t.iter().zip(&sol.states) {
        let f = model.forces(*t, y[0], y[1]);
        lift_off |= f.lift_off;
        trace.t.push(t - t_ref);
        trace.gap.push(y[0]);
        trace.gap_velocity.push(y[1]);
        trace.shear.push(shear_force(model.config, f.normal_base, f.contact, false));
        trace.voltage.push(f.voltage);
        trace.kappa.push(f.kappa);
    }
    (trace, lift_off)
}

/// Release instant: the middle of a positive half-cycle near `hold_time`.
fn release_instant(config: &ClutchConfig) -> f64 {
    let hold = config.simulation.hold_time;
    match config.drive.waveform {
        Waveform::Dc => hold.max(1e-9),
        Waveform::BipolarSquare => {
            let f = config.drive.frequency;
            ((hold * f).round() + 0.25) / f
        }
    }
}

/// Load-cell release after the voltage is switched off, with stick-slip friction.
pub fn simulate_release(config: &ClutchConfig, load_cell: &LoadCellModel, force_ratio: f64) -> Result<SimResult> {
    config.validate()?;
    load_cell.validate()?;
    if !(force_ratio > 0.0 && force_ratio <= 1.0) {
        return Err(Error::Domain(format!("force ratio must be in (0, 1], got {force_ratio}")));
    }
    let kernel = RelaxationKernel::new(&config.dielectric)?;
    simulate_release_with(config, load_cell, force_ratio, kernel)
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Stuck,
    Moving,
}

fn simulate_release_with(
    config: &ClutchConfig,
    lc: &LoadCellModel,
    force_ratio: f64,
    kernel: RelaxationKernel,
) -> Result<SimResult> {
    let t_off = release_instant(config);
    let timeline = DriveTimeline::with_off(config.drive, t_off);
    let model = GapModel::with_tracker(config, PolarizationTracker::with_kernel(&config.dielectric, timeline, kernel));
    let kappa_r = model.polarization.kappa(t_off);
    let v_r = model.polarization.voltage(t_off).abs();
    let gap_r = equilibrium_gap(config, kappa_r, v_r, None)?;
    let capacity = shear_capacity(config, gap_r);
    let x0 = capacity / lc.k_lc * force_ratio;
    let tol = config.simulation.tolerance();
    let t_end = t_off + config.simulation.release_max_time;
    let h_max = 2e-6f64.min(0.5 * config.drive.tau_fall.max(1e-7));
    let rest_hold = {
        let g = config.gravity;
        shear_force(config, (config.m_s() + config.m_d()) * g + config.preload, config.m_d() * g + config.preload, false)
    };

    let static_shear = |t: f64, y: &[f64]| {
        let f = model.forces(t, y[0], y[1]);
        shear_force(config, f.normal_base, f.contact, false)
    };
    // friction direction is fixed for a sliding phase, which ends when the velocity reaches zero
    let model_ref = &model;
    let moving_rhs = |dir: f64| {
        let model = model_ref;
        move |t: f64, y: &[f64], out: &mut [f64]| {
            let f = model.rhs_forces(t, &y[..2], &mut out[..2]);
            let kinetic = shear_force(config, f.normal_base, f.contact, true);
            out[2] = y[3];
            out[3] = (-lc.k_lc * y[2] - lc.b_lc * y[3] - kinetic * dir) / lc.m_lc;
        }
    };
    let stuck_rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        model.rhs(t, &y[..2], &mut out[..2]);
        out[2] = 0.0;
        out[3] = 0.0;
    };

    let mut trace = SimTrace { load_cell_force: Some(Vec::new()), ..Default::default() };
    let mut lift_off = false;
    let mut push = |sol: &OdeSolution, trace: &mut SimTrace, skip_first: bool| {
        for (i, (t, y)) in sol.t.iter().zip(&sol.states).enumerate() {
            if skip_first && i == 0 {
                continue;
            }
            let f = model.forces(*t, y[0], y[1]);
            lift_off |= f.lift_off;
            let moving = y[3] != 0.0;
            trace.t.push(t - t_off);
            trace.gap.push(y[0]);
            trace.gap_velocity.push(y[1]);
            trace.shear.push(shear_force(config, f.normal_base, f.contact, moving));
            trace.voltage.push(f.voltage);
            trace.kappa.push(f.kappa);
            trace.load_cell_force.as_mut().expect("release trace").push(lc.k_lc * y[2]);
        }
    };

    let mut state = vec![gap_r, 0.0, x0, 0.0];
    let mut t = t_off;
    let mut phase = Phase::Stuck;
    let mut first = true;
    let termination;
    let mut ever_moved = false;
    loop {
        let sol = match phase {
            Phase::Stuck => {
                let x = state[2];
                let problem = OdeProblem::new(stuck_rhs, state.clone(), t, t_end)
                    .with_abs_scale(gap_abs_scale(4))
                    .with_event(Event::terminal(Direction::Falling, move |t, y| {
                        static_shear(t, y) - lc.k_lc * x
                    }))
                    .with_first_step(1e-9)
                    .with_max_step(h_max);
                solve_ivp(&problem, &tol)?
            }
            Phase::Moving => {
                // sliding opposite to the net spring force
                let dir = if state[3] != 0.0 { state[3].signum() } else { -(state[2].signum()) };
                let problem = OdeProblem::new(moving_rhs(dir), state.clone(), t, t_end)
                    .with_abs_scale(gap_abs_scale(4))
                    .with_event(Event::terminal(Direction::Falling, |_, y| y[2]))
                    .with_event(Event::terminal(Direction::Either, |_, y| y[3]))
                    .with_first_step(1e-9)
                    .with_max_step(h_max);
                solve_ivp(&problem, &tol)?
            }
        };
        push(&sol, &mut trace, !first);
        first = false;
        t = sol.final_time();
        state = sol.final_state().to_vec();
        match (&sol.event, phase) {
            (None, Phase::Stuck) => {
                if !ever_moved {
                    return Err(Error::NoRelease(format!(
                        "load cell still held by friction {:.3e} s after switch-off",
                        config.simulation.release_max_time
                    )));
                }
                termination = Termination::MotionStopped;
                break;
            }
            (None, Phase::Moving) => {
                termination = Termination::TimeLimit;
                break;
            }
            (Some(_), Phase::Stuck) => {
                phase = Phase::Moving;
                ever_moved = true;
            }
            (Some(hit), Phase::Moving) => {
                if hit.index == 0 {
                    termination = Termination::ReturnedToZero;
                    break;
                }
                // velocity reached zero: stick if static friction can hold the spring
                state[3] = 0.0;
                let hold = static_shear(t, &state);
                if (lc.k_lc * state[2]).abs() <= hold {
                    phase = Phase::Stuck;
                    if (lc.k_lc * state[2]).abs() < rest_hold {
                        // friction only decays towards its rest value, so this stick is final
                        termination = Termination::MotionStopped;
                        break;
                    }
                }
            }
        }
    }

    let lc_force = trace.load_cell_force.as_ref().expect("release trace");
    let f0 = lc.k_lc * x0;
    let f_final = match termination {
        Termination::ReturnedToZero => 0.0,
        _ => *lc_force.last().expect("non-empty"),
    };
    let level = f0 - config.simulation.release_metric.fraction() * (f0 - f_final);
    let t_release = crossing_time(&trace.t, lc_force, level);
    let final_gap = *trace.gap.last().expect("non-empty");
    Ok(SimResult {
        trace,
        t_engage: None,
        t_release,
        termination,
        initial_gap: gap_r,
        final_gap,
        lift_off,
        capacity: Some(capacity),
        initial_load_cell_force: Some(f0),
    })
}

/// First time `y` falls to `level`, linearly interpolated.
fn crossing_time(t: &[f64], y: &[f64], level: f64) -> Option<f64> {
    if y.first().is_some_and(|&y0| y0 <= level) {
        return t.first().copied();
    }
    for i in 1..y.len() {
        if y[i] <= level {
            let (a, b) = (y[i - 1], y[i]);
            let s = if a == b { 1.0 } else { (a - level) / (a - b) };
            return Some(t[i - 1] + s * (t[i] - t[i - 1]));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub frequency: f64,
    pub capacity: f64,
    /// Time-averaged F_k and λF_ea′ over the last period.
    pub mean_contact: f64,
    pub mean_adhesion: f64,
    /// The last two periods differed by more than 1 %.
    pub unsettled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResponse {
    pub dc_capacity: f64,
    pub points: Vec<CapacityPoint>,
    /// Frequency where capacity first falls to −3 dB of the dc value.
    pub minus_3db: Option<f64>,
}

/// Shear capacity under a steady bipolar drive at each frequency.
pub fn capacity_vs_frequency(config: &ClutchConfig, freqs: &[f64]) -> Result<CapacityResponse> {
    config.validate()?;
    if freqs.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::Domain("frequencies must be positive".into()));
    }
    let kernel = RelaxationKernel::new(&config.dielectric)?;
    let amp = config.drive.amplitude;
    let settled = equilibrium_gap(config, config.dielectric.kappa_s, amp, None)?;
    let dc_capacity = shear_capacity(config, settled);
    let points: Vec<CapacityPoint> = freqs
        .par_iter()
        .map(|&f| capacity_at_frequency(config, f, settled, kernel.clone()))
        .collect::<Result<_>>()?;
    let threshold = dc_capacity * 10f64.powf(-3.0 / 20.0);
    let mut minus_3db = None;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].frequency.total_cmp(&points[b].frequency));
    let mut prev: Option<&CapacityPoint> = None;
    for &i in &order {
        let p = &points[i];
        if p.capacity <= threshold {
            minus_3db = Some(match prev {
                None => p.frequency,
                Some(q) => {
                    let (l0, l1) = (q.frequency.ln(), p.frequency.ln());
                    let s = (q.capacity - threshold) / (q.capacity - p.capacity);
                    (l0 + s * (l1 - l0)).exp()
                }
            });
            break;
        }
        prev = Some(p);
    }
    Ok(CapacityResponse { dc_capacity, points, minus_3db })
}

fn capacity_at_frequency(config: &ClutchConfig, freq: f64, start_gap: f64, kernel: RelaxationKernel) -> Result<CapacityPoint> {
    let mut cfg = config.clone();
    cfg.drive.waveform = Waveform::BipolarSquare;
    cfg.drive.frequency = freq;
    let period = 1.0 / freq;
    let sim = &cfg.simulation;
    let t_start = (sim.bode_history * freq).round() * period;
    let duration = sim.bode_min_duration.max(sim.bode_min_periods as f64 * period);
    let n_periods = (duration / period).ceil();
    let t_end = t_start + n_periods * period;
    let timeline = DriveTimeline::new(cfg.drive);
    let model = GapModel::with_tracker(&cfg, PolarizationTracker::with_kernel(&cfg.dielectric, timeline, kernel));
    // edges are tstops, so the step only needs to resolve the waveform between them
    let h_max = period / 50.0;
    let tol = sim.tolerance();
    let t_avg = t_end - 2.0 * period;
    let settle = OdeProblem::new(|t, y, out| model.rhs(t, y, out), vec![start_gap, 0.0], t_start, t_avg)
        .with_abs_scale(gap_abs_scale(2))
        .with_tstops(timeline.edge_times(t_start, t_avg))
        .with_first_step(1e-10)
        .with_max_step(h_max)
        .with_output(Output::Final);
    let settled = solve_ivp(&settle, &tol)?;
    // last two periods with running integrals of F_k and λF_ea′ as extra states
    let y0 = settled.final_state();
    let averaging = OdeProblem::new(
        |t, y, out| {
            let f = model.rhs_forces(t, &y[..2], &mut out[..2]);
            out[2] = f.contact;
            out[3] = f.adhesion;
        },
        vec![y0[0], y0[1], 0.0, 0.0],
        t_avg,
        t_end,
    )
    .with_abs_scale(gap_abs_scale(4))
    .with_tstops(timeline.edge_times(t_avg, t_end).into_iter().chain([t_end - period]))
    .with_first_step(1e-10)
    .with_max_step(h_max);
    let sol = solve_ivp(&averaging, &tol)?;
    let mid = sol
        .t
        .iter()
        .position(|&t| (t - (t_end - period)).abs() <= 1e-12 * t_end)
        .ok_or_else(|| Error::NumericalFailure { reason: "averaging window not reached".into(), partial: sol.final_time() })?;
    let end = sol.final_state();
    let k_prev = sol.states[mid][2] / period;
    let k_last = (end[2] - sol.states[mid][2]) / period;
    let ea_last = (end[3] - sol.states[mid][3]) / period;
    let unsettled = (k_last - k_prev).abs() > 0.01 * k_last.abs().max(1e-12);
    Ok(CapacityPoint {
        frequency: freq,
        capacity: capacity_from_contact(&cfg, k_last),
        mean_contact: k_last,
        mean_adhesion: ea_last,
        unsettled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard errors of (intercept, slope).
    pub std_errors: [f64; 2],
    pub residual_norm: f64,
    /// (V, λ) matching each measured capacity.
    pub points: Vec<(f64, f64)>,
}

/// Dc shear capacity at `v` with the adhesive force scaled by a fixed `lambda`.
pub fn capacity_with_lambda(config: &ClutchConfig, v: f64, lambda: f64) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.drive.amplitude = v;
    cfg.lambda = LambdaLaw::Fixed { value: lambda };
    let gap = equilibrium_gap(&cfg, cfg.dielectric.kappa_s, v, None)?;
    Ok(shear_capacity(&cfg, gap))
}

/// Linear λ(V) law from measured (V, capacity) pairs. Each point is inverted
/// for λ by bisection on the dc capacity, then λ is regressed on V.
pub fn fit_lambda_law(config: &ClutchConfig, data: &[(f64, f64)]) -> Result<LambdaFit> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("lambda fit needs 2 points, got {}", data.len())));
    }
    if data.iter().any(|&(v, f)| !(v > 0.0 && f > 0.0 && v.is_finite() && f.is_finite())) {
        return Err(Error::Domain("voltages and capacities must be positive".into()));
    }
    let points = data
        .iter()
        .map(|&(v, target)| {
            let too_high = |l: f64| capacity_with_lambda(config, v, l).map_or(true, |c| c >= target);
            if too_high(0.0) {
                return Err(Error::Domain(format!("capacity {target} N at {v} V is below the drive-off friction")));
            }
            let mut hi = 1.0;
            while !too_high(hi) {
                hi *= 2.0;
                if hi > 1e6 {
                    return Err(Error::DegenerateFit(format!("no lambda reaches {target} N at {v} V")));
                }
            }
            let mut lo = 0.0;
            while hi - lo > 1e-12 * hi {
                let mid = 0.5 * (lo + hi);
                if too_high(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok((v, 0.5 * (lo + hi)))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all voltages are equal".into()));
    }
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = if points.len() > 2 { rss / (m - 2.0) } else { f64::NAN };
    Ok(LambdaFit {
        intercept,
        slope,
        std_errors: [(s2 * (1.0 / m + mx * mx / sxx)).sqrt(), (s2 / sxx).sqrt()],
        residual_norm: rss.sqrt(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// V
    Voltage,
    /// w_s, m
    SubstrateWidth,
    /// T_d, m
    DielectricThickness,
    /// L_s, m
    OverlapLength,
    /// s
    TauRise,
    /// s
    TauFall,
    /// Hz
    Frequency,
    /// N
    Preload,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Voltage => "voltage_v",
            SweepAxis::SubstrateWidth => "substrate_width_m",
            SweepAxis::DielectricThickness => "dielectric_thickness_m",
            SweepAxis::OverlapLength => "overlap_length_m",
            SweepAxis::TauRise => "tau_rise_s",
            SweepAxis::TauFall => "tau_fall_s",
            SweepAxis::Frequency => "frequency_hz",
            SweepAxis::Preload => "preload_n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "voltage" | "v" => SweepAxis::Voltage,
            "width" | "w_s" | "substrate_width" => SweepAxis::SubstrateWidth,
            "thickness" | "t_d" | "dielectric_thickness" => SweepAxis::DielectricThickness,
            "length" | "l_s" | "overlap_length" => SweepAxis::OverlapLength,
            "tau_rise" => SweepAxis::TauRise,
            "tau_fall" => SweepAxis::TauFall,
            "frequency" | "f" => SweepAxis::Frequency,
            "preload" => SweepAxis::Preload,
            other => return Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        })
    }

    pub fn apply(self, cfg: &mut ClutchConfig, value: f64) {
        match self {
            SweepAxis::Voltage => cfg.drive.amplitude = value,
            SweepAxis::SubstrateWidth => cfg.geometry.substrate_width = value,
            SweepAxis::DielectricThickness => cfg.geometry.dielectric_thickness = value,
            SweepAxis::OverlapLength => cfg.geometry.overlap_length = value,
            SweepAxis::TauRise => cfg.drive.tau_rise = value,
            SweepAxis::TauFall => cfg.drive.tau_fall = value,
            SweepAxis::Frequency => cfg.drive.frequency = value,
            SweepAxis::Preload => cfg.preload = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Engage,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub inputs: Vec<f64>,
    pub value: Option<f64>,
    /// Termination reason, or the error message for a failed cell.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axes: Vec<SweepAxis>,
    pub metric: SweepMetric,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Format(e.to_string());
        let mut header: Vec<String> = self.axes.iter().map(|a| a.name().to_string()).collect();
        header.push(match self.metric {
            SweepMetric::Engage => "t_engage_s".into(),
            SweepMetric::Release => "t_release_s".into(),
        });
        header.push("status".into());
        w.write_record(&header).map_err(io)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.inputs.iter().map(|&v| sci(v)).collect();
            rec.push(row.value.map_or_else(String::new, sci));
            rec.push(row.status.clone());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

fn status_of(t: Termination) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Evaluates one metric on a configuration.
pub fn run_metric(config: &ClutchConfig, metric: SweepMetric) -> Result<SimResult> {
    match metric {
        SweepMetric::Engage => simulate_engagement(config),
        SweepMetric::Release => {
            let ratio = config.simulation.release_force_ratio;
            simulate_release(config, &config.load_cell, ratio)
        }
    }
}

/// Full cross product of the axis grids, first axis outermost. Failed cells
/// carry their error in `status`; the sweep continues.
pub fn parameter_sweep(base: &ClutchConfig, axes: &[(SweepAxis, Vec<f64>)], metric: SweepMetric) -> Result<SweepTable> {
    if axes.is_empty() || axes.iter().any(|(_, g)| g.is_empty()) {
        return Err(Error::Domain("sweep needs at least one non-empty axis".into()));
    }
    let mut cells: Vec<Vec<f64>> = vec![Vec::new()];
    for (_, grid) in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                grid.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    let rows = cells
        .into_par_iter()
        .map(|inputs| {
            let mut cfg = base.clone();
            for ((axis, _), &v) in axes.iter().zip(&inputs) {
                axis.apply(&mut cfg, v);
            }
            match run_metric(&cfg, metric) {
                Ok(res) => {
                    let value = match metric {
                        SweepMetric::Engage => res.t_engage,
                        SweepMetric::Release => res.t_release,
                    };
                    SweepRow { inputs, value, status: status_of(res.termination) }
                }
                Err(e) => SweepRow { inputs, value: None, status: format!("error: {e}") },
            }
        })
        .collect();
    Ok(SweepTable { axes: axes.iter().map(|(a, _)| *a).collect(), metric, rows })
}
