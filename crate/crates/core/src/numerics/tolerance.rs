//! Numerical tolerances and physical constants shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854e-12;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Dynamic viscosity of air at room temperature, N·s/m².
pub const AIR_VISCOSITY: f64 = 1.85e-5;

/// Default relative tolerance for physics integrations and quadratures.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Default absolute tolerance for physics integrations and quadratures.
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

/// Default iteration cap (quadrature subdivisions, ODE steps, fit iterations).
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Term cap for the Mittag-Leffler power series.
pub const MITTAG_LEFFLER_MAX_TERMS: usize = 10_000;

/// |z| below which the Mittag-Leffler power series is used.
pub const MITTAG_LEFFLER_SERIES_RADIUS: f64 = 5.0;

/// Half-width of truncated Gaussian roughness integrals, in standard deviations.
pub const GAUSSIAN_TRUNCATION_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(rel: f64, abs: f64, max_iter: usize) -> Result<Self> {
        let tol = Self { rel, abs, max_iter };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel > 0.0) || !(self.abs >= 0.0) || self.max_iter < 1 {
            return Err(Error::Domain(format!(
                "tolerance requires rel > 0, abs >= 0, max_iter >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn with_rel(mut self, rel: f64) -> Self {
        self.rel = rel;
        self
    }

    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = abs;
        self
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: DEFAULT_REL_TOL,
            abs: DEFAULT_ABS_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid() {
        assert!(Tolerance::new(0.0, 0.0, 1).is_err());
        assert!(Tolerance::new(1e-6, -1.0, 1).is_err());
        assert!(Tolerance::new(1e-6, 0.0, 0).is_err());
        assert!(Tolerance::new(1e-6, 0.0, 1).is_ok());
    }
}
