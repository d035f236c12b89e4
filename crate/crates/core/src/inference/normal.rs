//! Standard normal kernels and the bivariate probability used by the
//! shrinkage critical-value problem.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

const GL_POINTS: usize = 16;

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64); GL_POINTS] {
    static RULE: OnceLock<[(f64, f64); GL_POINTS]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = [(0.0, 0.0); GL_POINTS];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule[i] = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

fn integrate(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre()
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

const Z_TAIL: f64 = 9.0;

/// `P(Z1 >= -x, rho * Z1 - sqrt(1 - rho^2) * Z2 <= c)` for independent
/// standard normals `Z1`, `Z2`. Either threshold may be infinite.
pub fn stoye_constraint_prob(x: f64, c: f64, rho: f64) -> f64 {
    let rho = if rho.is_nan() { 0.0 } else { rho.clamp(-1.0, 1.0) };
    if x == f64::NEG_INFINITY || c == f64::NEG_INFINITY {
        return 0.0;
    }
    if c == f64::INFINITY {
        return normal_cdf(x);
    }
    if x == f64::INFINITY {
        return normal_cdf(c);
    }
    if rho >= 1.0 - 1e-12 {
        return (normal_cdf(c) - normal_cdf(-x)).max(0.0);
    }
    if rho <= -1.0 + 1e-12 {
        return normal_cdf(x.min(c));
    }
    if rho == 0.0 {
        return normal_cdf(x) * normal_cdf(c);
    }
    let s = (1.0 - rho * rho).sqrt();
    let a = (-x).max(-Z_TAIL);
    let b = Z_TAIL;
    if a >= b {
        return 0.0;
    }
    let f = |z: f64| normal_pdf(z) * normal_cdf((c - rho * z) / s);

    // Breakpoints around the transition of the inner CDF at z = c / rho.
    let z0 = c / rho;
    let w = s / rho.abs();
    let mut cuts = vec![a, b];
    for off in [-8.0, -3.0, -1.0, -0.25, 0.0, 0.25, 1.0, 3.0, 8.0] {
        let p = z0 + off * w;
        if p > a && p < b {
            cuts.push(p);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for win in cuts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        let pieces = ((hi - lo) / 1.0).ceil().max(1.0) as usize;
        let h = (hi - lo) / pieces as f64;
        for k in 0..pieces {
            let s0 = lo + k as f64 * h;
            let s1 = if k + 1 == pieces { hi } else { s0 + h };
            total += integrate(s0, s1, &f);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Partial derivatives of [`stoye_constraint_prob`] in `x` and `c`.
pub fn stoye_constraint_grad(x: f64, c: f64, rho: f64) -> (f64, f64) {
    let rho = rho.clamp(-1.0, 1.0);
    let s = (1.0 - rho * rho).sqrt();
    let inner = |num: f64| -> f64 {
        if s < 1e-12 {
            if num >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            normal_cdf(num / s)
        }
    };
    let dx = if x.is_finite() {
        normal_pdf(x) * if c.is_finite() { inner(c + rho * x) } else { 1.0 }
    } else {
        0.0
    };
    let dc = if c.is_finite() {
        normal_pdf(c) * if x.is_finite() { inner(x + rho * c) } else { 1.0 }
    } else {
        0.0
    };
    (dx, dc)
}
