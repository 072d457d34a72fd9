//! Bounded Levenberg-Marquardt for scalar models y = f(params, x).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tolerance;

/// Per-parameter closed intervals. Infinite ends are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds(pub Vec<(f64, f64)>);

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self(vec![(f64::NEG_INFINITY, f64::INFINITY); n])
    }

    fn clamp(&self, p: &mut [f64]) -> bool {
        let mut hit = false;
        for (v, &(lo, hi)) in p.iter_mut().zip(&self.0) {
            if *v < lo {
                *v = lo;
                hit = true;
            } else if *v > hi {
                *v = hi;
                hit = true;
            }
        }
        hit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// sqrt(Σ residual²)
    pub residual_norm: f64,
    /// From s²(JᵀJ)⁻¹ with s² = SSR/(m - n); NaN when m = n.
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    /// Set when the initial guess or an iterate had to be pulled back inside the bounds.
    pub clamped: bool,
}

struct Problem<'a, M> {
    model: &'a M,
    data: &'a [(f64, f64)],
}

impl<M: Fn(&[f64], f64) -> f64> Problem<'_, M> {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let r = DVector::from_iterator(self.data.len(), self.data.iter().map(|&(x, y)| (self.model)(p, x) - y));
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(Error::NumericalFailure {
                reason: format!("model is not finite at params {p:?}"),
                partial: f64::NAN,
            })
        }
    }

    fn jacobian(&self, p: &[f64], r0: &DVector<f64>, bounds: &Bounds) -> Result<DMatrix<f64>> {
        let m = self.data.len();
        let n = p.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut q = p.to_vec();
        for j in 0..n {
            let mut h = f64::EPSILON.sqrt() * if p[j] == 0.0 { 1.0 } else { p[j].abs() };
            // step away from a bound the parameter is sitting on
            if p[j] + h > bounds.0[j].1 {
                h = -h;
            }
            q[j] = p[j] + h;
            let h = q[j] - p[j];
            let r = self.residuals(&q)?;
            for i in 0..m {
                jac[(i, j)] = (r[i] - r0[i]) / h;
            }
            q[j] = p[j];
        }
        Ok(jac)
    }
}

fn check_rank(jac: &DMatrix<f64>) -> Result<()> {
    // column-normalised so the test is independent of parameter units
    let mut scaled = jac.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateFit("a parameter has no effect on the model".into()));
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 1e-10 * max) {
        return Err(Error::DegenerateFit(format!(
            "Jacobian is numerically singular (condition {:.3e})",
            max / min
        )));
    }
    Ok(())
}

/// Minimises Σ (model(p, x) - y)² from `init`, keeping p inside `bounds`.
pub fn fit_least_squares<M>(
    model: M,
    data: &[(f64, f64)],
    init: &[f64],
    bounds: &Bounds,
    tol: &Tolerance,
) -> Result<FitResult>
where
    M: Fn(&[f64], f64) -> f64,
{
    tol.validate()?;
    let n = init.len();
    let m = data.len();
    if n == 0 {
        return Err(Error::Domain("no parameters to fit".into()));
    }
    if m < n {
        return Err(Error::InsufficientData(format!("{m} points for {n} parameters")));
    }
    if bounds.0.len() != n {
        return Err(Error::Domain(format!("{} bounds for {n} parameters", bounds.0.len())));
    }
    if bounds.0.iter().any(|&(lo, hi)| !(lo <= hi)) {
        return Err(Error::Domain("each bound must satisfy lo <= hi".into()));
    }
    let problem = Problem { model: &model, data };
    let mut p = init.to_vec();
    let mut clamped = bounds.clamp(&mut p);
    let mut r = problem.residuals(&p)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let xtol = tol.rel * 1e-2;
    let mut iterations = 0;

    let mut jac = problem.jacobian(&p, &r, bounds)?;
    check_rank(&jac)?;
    'outer: while iterations < tol.max_iter {
        iterations += 1;
        if cost == 0.0 {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let delta = -chol.solve(&grad);
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let hit = bounds.clamp(&mut trial);
            let r_trial = match problem.residuals(&trial) {
                Ok(v) => v,
                Err(_) => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                }
            };
            let cost_trial = r_trial.norm_squared();
            let small = trial
                .iter()
                .zip(&p)
                .all(|(a, b)| (a - b).abs() <= xtol * (b.abs() + xtol));
            if cost_trial <= cost {
                clamped |= hit;
                p = trial;
                r = r_trial;
                let improvement = cost - cost_trial;
                cost = cost_trial;
                lambda = (lambda / 10.0).max(1e-12);
                if small || improvement <= f64::EPSILON * cost {
                    break 'outer;
                }
                jac = problem.jacobian(&p, &r, bounds)?;
                break;
            }
            if small {
                break 'outer;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }
    let jac = problem.jacobian(&p, &r, bounds)?;
    check_rank(&jac)?;
    let dof = m - n;
    let std_errors = if dof == 0 {
        vec![f64::NAN; n]
    } else {
        let s2 = cost / dof as f64;
        let jtj = jac.transpose() * &jac;
        match jtj.try_inverse() {
            Some(cov) => (0..n).map(|i| (s2 * cov[(i, i)]).max(0.0).sqrt()).collect(),
            None => return Err(Error::DegenerateFit("JᵀJ is not invertible at the solution".into())),
        }
    };
    Ok(FitResult { params: p, residual_norm: cost.sqrt(), std_errors, iterations, clamped })
}
