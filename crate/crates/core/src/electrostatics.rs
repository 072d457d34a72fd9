//! Quasistatic capacitance, air-gap inversion and normal-force laws for
//! interdigitated co-planar electrodes (EA-ICE) and parallel-plate clutches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tolerance::VACUUM_PERMITTIVITY as EPS0;

/// Pad and substrate dimensions. Lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutchGeometry {
    pub n_electrodes: u32,
    pub electrode_length: f64,
    pub electrode_gap: f64,
    pub dielectric_thickness: f64,
    pub overlap_length: f64,
    pub substrate_width: f64,
    pub substrate_thickness: f64,
}

impl Default for ClutchGeometry {
    /// 28-finger pad on a 2 mm × 2 mm brass bar.
    fn default() -> Self {
        Self {
            n_electrodes: 28,
            electrode_length: 1.5e-3,
            electrode_gap: 0.5e-3,
            dielectric_thickness: 24e-6,
            overlap_length: 55.5e-3,
            substrate_width: 2e-3,
            substrate_thickness: 2e-3,
        }
    }
}

impl ClutchGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_electrodes < 2 || self.n_electrodes % 2 != 0 {
            return Err(Error::Config(format!(
                "geometry.n_electrodes must be even and >= 2, got {}",
                self.n_electrodes
            )));
        }
        let lengths = [
            ("electrode_length", self.electrode_length),
            ("electrode_gap", self.electrode_gap),
            ("dielectric_thickness", self.dielectric_thickness),
            ("overlap_length", self.overlap_length),
            ("substrate_width", self.substrate_width),
            ("substrate_thickness", self.substrate_thickness),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("geometry.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Overlap area of one electrode with the substrate, L_e·w_s.
    pub fn electrode_area(&self) -> f64 {
        self.electrode_length * self.substrate_width
    }

    /// Total electrode overlap area, N·L_e·w_s.
    pub fn n_area(&self) -> f64 {
        self.n_electrodes as f64 * self.electrode_area()
    }
}

/// Charge density and fields for a given gap and voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSolution {
    /// C/m²
    pub sigma: f64,
    /// V/m
    pub e_dielectric: f64,
    /// V/m
    pub e_air: f64,
    /// Floating substrate potential, V.
    pub substrate_potential: f64,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("permittivity must be positive, got {kappa}")));
    }
    Ok(())
}

/// C = N κ ε0 A / (4 (T_d + κ T_air))
pub fn capacitance_ice(geom: &ClutchGeometry, kappa: f64, t_air: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if t_air < 0.0 || t_air.is_nan() {
        return Err(Error::Domain(format!("air gap must be >= 0, got {t_air}")));
    }
    Ok(geom.n_area() * kappa * EPS0 / (4.0 * (geom.dielectric_thickness + kappa * t_air)))
}

/// Inverse of [`capacitance_ice`]. Negative results (compressed asperities) are returned as-is.
pub fn air_gap_from_capacitance(geom: &ClutchGeometry, kappa: f64, c: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("capacitance must be positive, got {c}")));
    }
    Ok(geom.n_area() * EPS0 / (4.0 * c) - geom.dielectric_thickness / kappa)
}

/// Field solution for the EA-ICE stack: the substrate floats at V/2.
pub fn field_solution(geom: &ClutchGeometry, kappa: f64, v: f64, t_air: f64) -> Result<FieldSolution> {
    check_kappa(kappa)?;
    let denom = geom.dielectric_thickness + kappa * t_air;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "air gap {t_air} m is at or below the -T_d/kappa pole"
        )));
    }
    let half = 0.5 * v;
    let sigma = kappa * EPS0 * half / denom;
    Ok(FieldSolution {
        sigma,
        e_dielectric: sigma / (kappa * EPS0),
        e_air: sigma / EPS0,
        substrate_potential: half,
    })
}

/// F = (κ² ε0 / 2) N A (V/2)² / (T_d + κ T_air)²
pub fn ea_normal_force(geom: &ClutchGeometry, kappa: f64, v: f64, t_air: f64) -> Result<(f64, FieldSolution)> {
    let field = field_solution(geom, kappa, v, t_air)?;
    Ok((ea_force_kernel(geom, kappa, v, t_air), field))
}

/// Unchecked force law shared with the roughness-averaging integrals.
#[inline]
pub(crate) fn ea_force_kernel(geom: &ClutchGeometry, kappa: f64, v: f64, t_air: f64) -> f64 {
    let denom = geom.dielectric_thickness + kappa * t_air;
    let half = 0.5 * v;
    0.5 * kappa * kappa * EPS0 * geom.n_area() * half * half / (denom * denom)
}

/// Flat-film force with no air gap: (κ ε0 / 2) N A (V/2)² / T_d²
pub fn ea_force_no_airgap(geom: &ClutchGeometry, kappa: f64, v: f64) -> f64 {
    let half = 0.5 * v;
    let td = geom.dielectric_thickness;
    0.5 * kappa * EPS0 * geom.n_area() * half * half / (td * td)
}

/// C = κ ε0 A / (T_d + κ T_air)
pub fn parallel_plate_capacitance(area: f64, kappa: f64, t_d: f64, t_air: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(area > 0.0 && t_d > 0.0) {
        return Err(Error::Domain("area and dielectric thickness must be positive".into()));
    }
    if t_air < 0.0 || t_air.is_nan() {
        return Err(Error::Domain(format!("air gap must be >= 0, got {t_air}")));
    }
    Ok(kappa * EPS0 * area / (t_d + kappa * t_air))
}

/// Exact inverse of [`parallel_plate_capacitance`]: T_air = ε0 A / C − T_d / κ.
pub fn parallel_plate_air_gap(area: f64, kappa: f64, t_d: f64, c: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("capacitance must be positive, got {c}")));
    }
    Ok(EPS0 * area / c - t_d / kappa)
}

/// F = (κ² ε0 / 2) A V² / (T_d + κ T_air)²
pub fn parallel_plate_force(area: f64, kappa: f64, t_d: f64, t_air: f64, v: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let denom = t_d + kappa * t_air;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "air gap {t_air} m is at or below the -T_d/kappa pole"
        )));
    }
    Ok(0.5 * kappa * kappa * EPS0 * area * v * v / (denom * denom))
}

/// Maxwell-Wagner interfacial relaxation time, τ = ε0 (κ T_air + T_d) / (σ_d T_air + σ_0 T_d).
pub fn maxwell_wagner_tau(sigma_air: f64, sigma_diel: f64, kappa: f64, t_d: f64, t_air: f64) -> Result<f64> {
    let denom = sigma_diel * t_air + sigma_air * t_d;
    if !(denom > 0.0) {
        return Err(Error::Domain("Maxwell-Wagner denominator must be positive".into()));
    }
    Ok(EPS0 * (kappa * t_air + t_d) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> ClutchGeometry {
        ClutchGeometry::default()
    }

    #[test]
    fn capacitance_hand_value() {
        // 28 · 50 · 8.854e-12 · 3e-6 / (4 · (24e-6 + 150e-6))
        let c = capacitance_ice(&nominal(), 50.0, 3e-6).unwrap();
        let hand = 28.0 * 50.0 * 8.854e-12 * 3e-6 / (4.0 * 174e-6);
        assert!((c - hand).abs() < 1e-24);
        assert!((c - 53.4e-12).abs() < 0.5e-12, "{c}");
    }

    #[test]
    fn capacitance_decreases_with_gap() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let c = capacitance_ice(&nominal(), 54.2, i as f64 * 2e-6).unwrap();
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn gap_roundtrip() {
        let g = nominal();
        for &t in &[0.0, 1e-9, 1e-6, 3e-6, 1e-4, 1e-3] {
            let c = capacitance_ice(&g, 54.2, t).unwrap();
            let back = air_gap_from_capacitance(&g, 54.2, c).unwrap();
            assert!((back - t).abs() < 1e-12, "{t} -> {back}");
        }
        assert!(matches!(air_gap_from_capacitance(&g, 54.2, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_gap_force_ratio_is_kappa() {
        let g = nominal();
        for &k in &[3.0, 50.0, 54.2] {
            let (f4, _) = ea_normal_force(&g, k, 300.0, 0.0).unwrap();
            let f5 = ea_force_no_airgap(&g, k, 300.0);
            assert!((f4 / f5 - k).abs() < 1e-12 * k);
        }
    }

    #[test]
    fn force_hand_value() {
        let (f, _) = ea_normal_force(&nominal(), 54.2, 300.0, 3e-6).unwrap();
        assert!((f - 0.7).abs() < 0.05, "{f}");
    }

    #[test]
    fn potential_balance() {
        let g = nominal();
        let t_air = 4.2e-6;
        let (_, field) = ea_normal_force(&g, 54.2, 300.0, t_air).unwrap();
        let v_half = field.e_dielectric * g.dielectric_thickness + field.e_air * t_air;
        assert!((v_half - 150.0).abs() < 1e-9);
        assert_eq!(field.substrate_potential, 150.0);
    }

    #[test]
    fn pole_is_rejected() {
        let g = nominal();
        let pole = -g.dielectric_thickness / 54.2;
        assert!(ea_normal_force(&g, 54.2, 300.0, pole).is_err());
        assert!(ea_normal_force(&g, 54.2, 300.0, 0.5 * pole).is_ok());
    }

    #[test]
    fn parallel_plate_matches_ice_at_double_voltage() {
        let g = nominal();
        let area = g.n_electrodes as f64 * g.electrode_area();
        for &t in &[0.0, 1e-6, 7e-6] {
            let pp = parallel_plate_force(area, 54.2, g.dielectric_thickness, t, 150.0).unwrap();
            let (ice, _) = ea_normal_force(&g, 54.2, 300.0, t).unwrap();
            assert!((pp - ice).abs() <= 1e-15 * ice);
        }
    }

    #[test]
    fn parallel_plate_roundtrip() {
        for &t in &[0.0, 0.61e-6, 9.2e-6] {
            let c = parallel_plate_capacitance(1e-4, 50.0, 24e-6, t).unwrap();
            let back = parallel_plate_air_gap(1e-4, 50.0, 24e-6, c).unwrap();
            assert!((back - t).abs() < 1e-15);
        }
    }

    #[test]
    fn maxwell_wagner_values() {
        let t1 = maxwell_wagner_tau(5e-16, 1e-11, 50.0, 24e-6, 1e-6).unwrap();
        let t10 = maxwell_wagner_tau(5e-16, 1e-11, 50.0, 24e-6, 10e-6).unwrap();
        assert!((t1 / 65.5 - 1.0).abs() < 0.01, "{t1}");
        assert!((t10 / 46.4 - 1.0).abs() < 0.01, "{t10}");
        assert!(maxwell_wagner_tau(0.0, 0.0, 3.4, 24e-6, 1e-6).is_err());
    }

    #[test]
    fn maxwell_wagner_is_bounded_by_layer_time_constants() {
        // τ is a weighted mean of ε0κ/σ_d and ε0/σ_0, whatever the thicknesses
        let (s0, sd, k) = (5e-16, 6.7e-16, 3.4);
        let lo = EPS0 / s0;
        let hi = EPS0 * k / sd;
        for &t_air in &[1e-9, 1e-6, 1e-5, 1e-3] {
            let tau = maxwell_wagner_tau(s0, sd, k, 24e-6, t_air).unwrap();
            assert!(tau >= lo.min(hi) * (1.0 - 1e-12) && tau <= lo.max(hi) * (1.0 + 1e-12));
        }
        let poly = maxwell_wagner_tau(s0, sd, k, 24e-6, 1e-6).unwrap();
        let hand = EPS0 * (3.4e-6 + 24e-6) / (6.7e-16 * 1e-6 + 5e-16 * 24e-6);
        assert!((poly - hand).abs() < 1e-9 * hand);
    }

    #[test]
    fn geometry_validation() {
        let mut g = nominal();
        assert!(g.validate().is_ok());
        g.n_electrodes = 27;
        assert!(g.validate().is_err());
        let mut g = nominal();
        g.substrate_width = 0.0;
        assert!(g.validate().is_err());
    }
}
