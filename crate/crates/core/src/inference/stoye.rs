//! Critical values for a uniformly valid CI of an interval-identified
//! parameter, with the identified-interval length shrunk towards zero when
//! it is small relative to its sampling noise.

use crate::error::{Error, Result};
use crate::model::{Interval, StoyeRecord};

use super::normal::{normal_quantile, stoye_constraint_grad, stoye_constraint_prob};

/// Largest critical value considered.
const Z_MAX: f64 = 12.0;
const TOL: f64 = 1e-10;

/// `sqrt(log log n / n) * max(sigma_l, sigma_u)` with `sigma = se * sqrt(n)`.
pub fn shrinkage_threshold(se_lo: f64, se_hi: f64, n: usize) -> f64 {
    let nf = n as f64;
    let loglog = nf.ln().ln().max(0.0);
    (loglog / nf).sqrt() * se_lo.max(se_hi) * nf.sqrt()
}

fn shift(delta: f64, se: f64) -> f64 {
    if delta <= 0.0 {
        0.0
    } else if se > 0.0 {
        delta / se
    } else {
        f64::INFINITY
    }
}

struct Problem {
    rho: f64,
    target: f64,
    shift_l: f64,
    shift_u: f64,
    w_l: f64,
    w_u: f64,
    q1: f64,
}

impl Problem {
    fn p1(&self, zl: f64, zu: f64) -> f64 {
        stoye_constraint_prob(zl, zu + self.shift_u, self.rho)
    }

    fn p2(&self, zl: f64, zu: f64) -> f64 {
        stoye_constraint_prob(zu, zl + self.shift_l, self.rho)
    }

    /// Smallest `z` in `[q1, Z_MAX]` with `g(z) >= target` for increasing `g`,
    /// or `None` when even `Z_MAX` falls short.
    fn root(&self, g: impl Fn(f64) -> (f64, f64)) -> Option<f64> {
        let (mut lo, mut hi) = (self.q1, Z_MAX);
        let (ghi, _) = g(hi);
        if ghi < self.target {
            return None;
        }
        let (glo, _) = g(lo);
        if glo >= self.target {
            return Some(lo);
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (v, dv) = g(z);
            if v >= self.target {
                hi = z;
            } else {
                lo = z;
            }
            if hi - lo < TOL {
                break;
            }
            let newton = z - (v - self.target) / dv;
            if !(dv > 0.0 && newton > lo && newton < hi) {
                z = 0.5 * (lo + hi);
                continue;
            }
            if (newton - z).abs() < 1e-12 {
                // Newton approaches from one side; close the bracket.
                let (a, b) = (newton - 1e-12, newton + 1e-12);
                if b < hi && g(b).0 >= self.target {
                    hi = b;
                }
                if a > lo && g(a).0 < self.target {
                    lo = a;
                }
                z = 0.5 * (lo + hi);
            } else {
                z = newton;
            }
        }
        Some(hi)
    }

    /// Minimal feasible `z_l` for a given `z_u`.
    fn z_l_min(&self, zu: f64) -> Option<f64> {
        let r1 = self.root(|zl| {
            let c = zu + self.shift_u;
            (stoye_constraint_prob(zl, c, self.rho), stoye_constraint_grad(zl, c, self.rho).0)
        })?;
        let r2 = self.root(|zl| {
            let c = zl + self.shift_l;
            (stoye_constraint_prob(zu, c, self.rho), stoye_constraint_grad(zu, c, self.rho).1)
        })?;
        Some(r1.max(r2))
    }

    fn objective(&self, zu: f64) -> Option<(f64, f64)> {
        let zl = self.z_l_min(zu)?;
        Some((self.w_l * zl + self.w_u * zu, zl))
    }
}

/// Solves the critical-value problem and builds the CI.
#[allow(clippy::too_many_arguments)]
pub fn stoye_ci(
    point_lo: f64,
    point_hi: f64,
    se_lo: f64,
    se_hi: f64,
    rho_hat: f64,
    n: usize,
    tau: f64,
) -> Result<StoyeRecord> {
    if !(tau > 0.0 && tau <= 0.5) {
        return Err(Error::invalid(format!("tau must lie in (0, 0.5], got {tau}")));
    }
    if n < 2 {
        return Err(Error::invalid("shrinkage needs n >= 2"));
    }
    if !(se_lo >= 0.0 && se_hi >= 0.0) {
        return Err(Error::invalid("standard errors must be >= 0"));
    }
    let rho = if rho_hat.is_nan() { 1.0 } else { rho_hat.clamp(-1.0, 1.0) };
    let sqrt_n = (n as f64).sqrt();
    let delta_hat = point_hi - point_lo;
    let delta_star = if delta_hat > shrinkage_threshold(se_lo, se_hi, n) {
        delta_hat
    } else {
        0.0
    };
    let q1 = normal_quantile(1.0 - tau)?;
    let pr = Problem {
        rho,
        target: 1.0 - tau,
        shift_l: shift(delta_star, se_lo),
        shift_u: shift(delta_star, se_hi),
        w_l: se_lo * sqrt_n,
        w_u: se_hi * sqrt_n,
        q1,
    };

    // Feasibility is monotone in z_u: find the smallest feasible z_u.
    let mut lo = q1;
    let mut hi = Z_MAX;
    if pr.z_l_min(hi).is_none() {
        return Err(Error::Solver(format!(
            "no feasible critical values up to {Z_MAX} (tau {tau}, rho {rho}, delta* {delta_star})"
        )));
    }
    if pr.z_l_min(lo).is_none() {
        while hi - lo > TOL {
            let mid = 0.5 * (lo + hi);
            if pr.z_l_min(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo = hi;
    }
    let zu_min = lo;

    // The objective is convex in z_u on the feasible range.
    let eval = |zu: f64| pr.objective(zu).map(|(h, _)| h).unwrap_or(f64::INFINITY);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (zu_min, Z_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    while b - a > 1e-9 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    // Keep the best evaluated point: near the feasibility boundary `z_l`
    // falls steeply over a span narrower than the bracket.
    let mut best_zu = zu_min;
    let mut best = pr.objective(zu_min);
    for zu in [a, c, d, b, 0.5 * (a + b)] {
        if let Some(cand) = pr.objective(zu) {
            if best.is_none_or(|(h, _)| cand.0 < h) {
                best_zu = zu;
                best = Some(cand);
            }
        }
    }
    let (min_objective, z_l) = best.ok_or_else(|| {
        Error::Solver(format!("critical-value search failed (rho {rho}, delta* {delta_star})"))
    })?;
    let z_u = best_zu;
    if pr.p1(z_l, z_u) < pr.target - 1e-8 || pr.p2(z_l, z_u) < pr.target - 1e-8 {
        return Err(Error::Solver(format!(
            "constraints violated at solution z_l={z_l}, z_u={z_u}"
        )));
    }
    let lo_end = point_lo - se_lo * z_l;
    let hi_end = point_hi + se_hi * z_u;
    Ok(StoyeRecord {
        ci: (lo_end <= hi_end).then(|| Interval::new(lo_end, hi_end)),
        z_l_star: z_l,
        z_u_star: z_u,
        delta_star,
        min_objective,
        rho_hat: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_interval_with_high_correlation_gives_one_sided_values() {
        let r = stoye_ci(0.0, 100.0, 1.0, 1.0, 0.999, 5000, 0.05).unwrap();
        assert!((r.z_l_star - 1.645).abs() < 0.01, "{}", r.z_l_star);
        assert!((r.z_u_star - 1.645).abs() < 0.01, "{}", r.z_u_star);
        assert_eq!(r.delta_star, 100.0);
    }

    #[test]
    fn point_identified_gives_two_sided_values() {
        let r = stoye_ci(1.0, 1.0, 1.0, 1.0, 0.999_999, 5000, 0.05).unwrap();
        assert_eq!(r.delta_star, 0.0);
        assert!((r.z_l_star - 1.96).abs() < 0.01, "{}", r.z_l_star);
        assert!((r.z_u_star - 1.96).abs() < 0.01, "{}", r.z_u_star);
        let ci = r.ci.unwrap();
        assert!(ci.lo < 1.0 && ci.hi > 1.0);
    }

    #[test]
    fn small_interval_is_shrunk_to_a_point() {
        let th = shrinkage_threshold(1.0, 2.0, 1000);
        let r = stoye_ci(0.0, 0.5 * th, 1.0, 2.0, 0.9, 1000, 0.05).unwrap();
        assert_eq!(r.delta_star, 0.0);
        let r = stoye_ci(0.0, 2.0 * th, 1.0, 2.0, 0.9, 1000, 0.05).unwrap();
        assert_eq!(r.delta_star, 2.0 * th);
    }

    #[test]
    fn never_narrower_than_conventional_when_shrunk() {
        let q = normal_quantile(0.975).unwrap();
        for &rho in &[1.0, 1.0 - 1e-13] {
            let r = stoye_ci(0.0, 0.0, 1.0, 1.0, rho, 500, 0.05).unwrap();
            let ci = r.ci.unwrap();
            assert!(ci.lo <= -q + 1e-6 && ci.hi >= q - 1e-6, "{rho}: {ci:?}");
        }
    }

    #[test]
    fn objective_is_weighted_sum() {
        let r = stoye_ci(0.0, 3.0, 0.5, 2.0, 0.4, 400, 0.05).unwrap();
        let expect = 20.0 * (0.5 * r.z_l_star + 2.0 * r.z_u_star);
        assert!((r.min_objective - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(stoye_ci(0.0, 1.0, 1.0, 1.0, 0.5, 100, 0.0).is_err());
        assert!(stoye_ci(0.0, 1.0, 1.0, 1.0, 0.5, 100, 0.6).is_err());
    }
}
