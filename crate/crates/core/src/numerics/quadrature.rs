//! Adaptive Gauss-Kronrod quadrature and fixed Gauss-Legendre rules.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::Tolerance;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel on [a, b]: (integral, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    let (value, err) = gk15(f, a, b);
    if !value.is_finite() {
        return Err(Error::NumericalFailure {
            reason: "non-finite integrand".into(),
            partial: value,
        });
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, err });
    let mut total = value;
    let mut total_err = err;
    let mut splits = 0usize;
    while total_err > tol.abs.max(tol.rel * total.abs()) {
        if splits >= tol.max_iter {
            return Err(Error::NumericalFailure {
                reason: format!("quadrature did not converge after {splits} subdivisions"),
                partial: total,
            });
        }
        let worst = heap.pop().expect("heap never empties");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval collapsed to machine resolution; accept what we have
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(f, worst.a, mid);
        let (v2, e2) = gk15(f, mid, worst.b);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(Error::NumericalFailure {
                reason: "non-finite integrand".into(),
                partial: total,
            });
        }
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
        splits += 1;
        // re-sum periodically to shed accumulated rounding in the running totals
        if splits % 64 == 0 {
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Integrates `f` over `[a, b]`. `b` may be `f64::INFINITY`.
pub fn quadrature<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    tol.validate()?;
    if a.is_nan() || b.is_nan() || a.is_infinite() {
        return Err(Error::Domain(format!("invalid integration limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b.is_infinite() {
        if b < 0.0 {
            return Err(Error::Domain("lower-infinite ranges are not supported".into()));
        }
        // x = a + t/(1-t), dx = dt/(1-t)^2
        let mapped = |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        };
        return adaptive(&mapped, 0.0, 1.0, tol);
    }
    if b < a {
        return adaptive(&f, b, a, tol).map(|v| -v);
    }
    adaptive(&f, a, b, tol)
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_on_unit_interval() {
        let v = quadrature(|x| x, 0.0, 1.0, &Tolerance::default()).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn exponential_tail() {
        let v = quadrature(|x| (-x).exp(), 0.0, f64::INFINITY, &Tolerance::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn half_moment_of_normal_density() {
        // closed form 2^{1/4} Γ(5/4) / sqrt(2π)
        let exact = 2f64.powf(0.25) * libm::tgamma(1.25) / (2.0 * std::f64::consts::PI).sqrt();
        let v = quadrature(
            |s| s.powf(1.5) * (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            0.0,
            f64::INFINITY,
            &Tolerance::default(),
        )
        .unwrap();
        assert!((v - exact).abs() < 1e-10 * exact);
        assert!((v - 0.4300).abs() < 1e-3);
    }

    #[test]
    fn reversed_limits_negate() {
        let v = quadrature(|x| x * x, 2.0, 0.0, &Tolerance::default()).unwrap();
        assert!((v + 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reports_nonconvergence() {
        let tol = Tolerance::new(1e-15, 0.0, 3).unwrap();
        let err = quadrature(|x| 1.0 / x.sqrt(), 0.0, 1.0, &tol).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { .. }));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }
}
