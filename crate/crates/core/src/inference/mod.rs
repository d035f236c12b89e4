//! Standard errors of the bound estimators, bound and test-inversion CIs,
//! robustness thresholds, contour grids and shrinkage-adjusted CIs.

mod normal;
mod stoye;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::phi_bounds;
use crate::model::{
    quad_form, CIReport, Interval, PhiCurveRow, SensitivityConfig, SetBound, ShortEstimates,
    StoyeRecord, StoyeThetaRecord, ThetaCi, ThetaSet,
};
use crate::sensitivity::{bias_bound_gamma, bias_bound_lambda, bound_set};

pub use normal::{
    normal_cdf, normal_pdf, normal_quantile, stoye_constraint_grad, stoye_constraint_prob,
};
pub use stoye::{shrinkage_threshold, stoye_ci};

/// Loadings onto the five influence-function components.
pub type Coef = [f64; 5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "t", rename_all = "snake_case")]
pub enum BoundTarget {
    Lambda,
    Gamma,
    /// `phi_t = lambda - gamma * t`.
    Phi(f64),
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 0.5], got {tau}")))
    }
}

/// Chain-rule loadings of `zeta * S` onto `(v_s2, sigma2)` entries, with
/// `S = sqrt(sigma2 * v_s2)`.
fn s_loadings(zeta: f64, v2: f64, sigma2: f64, what: &str) -> Result<(f64, f64)> {
    if zeta == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(v2 > 0.0 && sigma2 > 0.0) {
        return Err(Error::invalid(format!(
            "zero {what} variance (v2 = {v2}, sigma2 = {sigma2}) with positive sensitivity"
        )));
    }
    let (v, s) = (v2.sqrt(), sigma2.sqrt());
    Ok((zeta * s / (2.0 * v), zeta * v / (2.0 * s)))
}

/// Loadings of the upper and lower bound estimators of `phi_t`.
pub fn bound_coef_vectors(est: &ShortEstimates, cfg: &SensitivityConfig, t: f64) -> Result<(Coef, Coef)> {
    let (yv, ys) = s_loadings(cfg.zeta_y(), est.v_s2, est.sigma_ys2, "outcome")?;
    let (dv, ds) = s_loadings(cfg.zeta_d() * t.abs(), est.v_s2, est.sigma_ds2, "treatment")?;
    let plus = [1.0, -t, yv + dv, ys, ds];
    let minus = [1.0, -t, -(yv + dv), -ys, -ds];
    Ok((plus, minus))
}

pub fn target_coefs(est: &ShortEstimates, cfg: &SensitivityConfig, target: BoundTarget) -> Result<(Coef, Coef)> {
    match target {
        BoundTarget::Lambda => bound_coef_vectors(est, cfg, 0.0),
        BoundTarget::Gamma => {
            let (dv, ds) = s_loadings(cfg.zeta_d(), est.v_s2, est.sigma_ds2, "treatment")?;
            Ok(([0.0, 1.0, dv, 0.0, ds], [0.0, 1.0, -dv, 0.0, -ds]))
        }
        BoundTarget::Phi(t) => bound_coef_vectors(est, cfg, t),
    }
}

/// `(lower, upper)` bound estimates for the target.
pub fn target_points(est: &ShortEstimates, cfg: &SensitivityConfig, target: BoundTarget) -> (f64, f64) {
    match target {
        BoundTarget::Lambda => bias_bound_lambda(est, cfg),
        BoundTarget::Gamma => bias_bound_gamma(est, cfg),
        BoundTarget::Phi(t) => {
            let (ll, lh) = bias_bound_lambda(est, cfg);
            let (gl, gh) = bias_bound_gamma(est, cfg);
            let p = phi_bounds(ll, lh, gl, gh, t);
            (p.phi_lo, p.phi_hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub point_lo: f64,
    pub point_hi: f64,
    pub se_lo: f64,
    pub se_hi: f64,
    pub rho_hat: f64,
    /// A bound has zero estimated variance; `rho_hat` is set to 1.
    pub degenerate: bool,
}

pub fn pair_stats_from_coefs(est: &ShortEstimates, lo: &Coef, hi: &Coef, points: (f64, f64)) -> PairStats {
    let n = est.n as f64;
    let var_lo = quad_form(&est.omega, lo, lo).max(0.0);
    let var_hi = quad_form(&est.omega, hi, hi).max(0.0);
    let cov = quad_form(&est.omega, lo, hi);
    let degenerate = var_lo <= 0.0 || var_hi <= 0.0;
    let rho_hat = if degenerate {
        1.0
    } else {
        (cov / (var_lo.sqrt() * var_hi.sqrt())).clamp(-1.0, 1.0)
    };
    PairStats {
        point_lo: points.0,
        point_hi: points.1,
        se_lo: (var_lo / n).sqrt(),
        se_hi: (var_hi / n).sqrt(),
        rho_hat,
        degenerate,
    }
}

pub fn bound_pair_stats(est: &ShortEstimates, cfg: &SensitivityConfig, target: BoundTarget) -> Result<PairStats> {
    let (plus, minus) = target_coefs(est, cfg, target)?;
    Ok(pair_stats_from_coefs(est, &minus, &plus, target_points(est, cfg, target)))
}

/// `[point_lo - q se_lo, point_hi + q se_hi]` with `q` the `(1 - tau)` quantile.
pub fn one_sided_ci(point_lo: f64, point_hi: f64, se_lo: f64, se_hi: f64, tau: f64) -> Result<Interval> {
    check_tau(tau)?;
    if !(se_lo >= 0.0 && se_hi >= 0.0) {
        return Err(Error::invalid("standard errors must be >= 0"));
    }
    let q = normal_quantile(1.0 - tau)?;
    Ok(Interval::new(point_lo - q * se_lo, point_hi + q * se_hi))
}

/// Symmetric `(1 - 2 tau)` normal CI.
pub fn conventional_ci(point: f64, se: f64, tau: f64) -> Result<Interval> {
    one_sided_ci(point, point, se, se, tau)
}

/// Default search range for theta inversions.
pub fn default_t_range(est: &ShortEstimates, cfg: &SensitivityConfig, tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    let q = normal_quantile(1.0 - tau)?;
    let center = est.theta_s.unwrap_or(0.0);
    let mut half = center.abs();
    if let ThetaSet::Interval { lo, hi } = bound_set(est, cfg).theta.set {
        half = half.max(0.5 * (hi - lo));
    }
    if let Some(se) = est.se_theta() {
        half = half.max(q * se);
    }
    if !(half > 0.0 && half.is_finite()) {
        half = 1.0;
    }
    Ok((center - 20.0 * half, center + 20.0 * half))
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

/// Grid points on `[lo, 0)` and `[0, hi]` separately, `resolution` each.
fn segmented_grid(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    if lo < 0.0 && hi >= 0.0 {
        let mut left = grid(lo, 0.0, resolution + 1);
        left.pop();
        left.extend(grid(0.0, hi, resolution));
        left
    } else {
        grid(lo, hi, resolution)
    }
}

/// Bisects a boundary between a non-member `out` and a member `inside`
/// down to adjacent floating-point values; returns the member side.
fn refine(mut out: f64, mut inside: f64, member: &(impl Fn(f64) -> bool + ?Sized)) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (out + inside);
        if mid == out || mid == inside {
            break;
        }
        if member(mid) {
            inside = mid;
        } else {
            out = mid;
        }
    }
    inside
}

/// Test-inversion set from a membership predicate scanned on a grid.
fn invert_predicate(
    range: (f64, f64),
    resolution: usize,
    member: &(impl Fn(f64) -> bool + Sync),
) -> Result<(ThetaCi, Vec<(f64, bool)>)> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid t range [{lo}, {hi}]")));
    }
    if resolution < 2 {
        return Err(Error::invalid("resolution must be at least 2"));
    }
    let ts = segmented_grid(lo, hi, resolution);
    let flags: Vec<bool> = ts.par_iter().map(|&t| member(t)).collect();
    let scanned: Vec<(f64, bool)> = ts.iter().copied().zip(flags.iter().copied()).collect();
    let Some(first) = flags.iter().position(|&f| f) else {
        return Ok((ThetaCi::Empty, scanned));
    };
    let last = flags.iter().rposition(|&f| f).unwrap_or(first);
    let disconnected = flags[first..=last].iter().any(|&f| !f);
    let lower = if first == 0 {
        SetBound::Unbounded
    } else {
        SetBound::Finite(refine(ts[first - 1], ts[first], member))
    };
    let upper = if last + 1 == ts.len() {
        SetBound::Unbounded
    } else {
        SetBound::Finite(refine(ts[last + 1], ts[last], member))
    };
    Ok((
        ThetaCi::Range {
            lower,
            upper,
            disconnected,
        },
        scanned,
    ))
}

/// Confidence set for theta_0: all `t` with `phi_t^+ + q se^+ >= 0` and
/// `phi_t^- - q se^- <= 0`.
pub fn invert_theta_ci(
    est: &ShortEstimates,
    cfg: &SensitivityConfig,
    tau: f64,
    t_range: Option<(f64, f64)>,
    resolution: usize,
) -> Result<ThetaCi> {
    check_tau(tau)?;
    let q = normal_quantile(1.0 - tau)?;
    // Fail early on degenerate variances.
    bound_coef_vectors(est, cfg, 1.0)?;
    let range = match t_range {
        Some(r) => r,
        None => default_t_range(est, cfg, tau)?,
    };
    let member = |t: f64| -> bool {
        match bound_pair_stats(est, cfg, BoundTarget::Phi(t)) {
            Ok(s) => s.point_hi + q * s.se_hi >= 0.0 && s.point_lo - q * s.se_lo <= 0.0,
            Err(_) => false,
        }
    };
    Ok(invert_predicate(range, resolution, &member)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessThreshold {
    /// Smallest sensitivity product at which the CI endpoint reaches zero.
    pub zeta_star: f64,
    /// The endpoint already covers zero without any omitted variable.
    pub insignificant_at_zero: bool,
}

fn scalar_config(target: BoundTarget, zeta: f64, rho_abs: f64) -> SensitivityConfig {
    match target {
        BoundTarget::Gamma => SensitivityConfig {
            c_alpha: 1.0,
            c_y: 0.0,
            c_d: zeta,
            rho_y_abs: 1.0,
            rho_d_abs: rho_abs,
        },
        _ => SensitivityConfig {
            c_alpha: 1.0,
            c_y: zeta,
            c_d: 0.0,
            rho_y_abs: rho_abs,
            rho_d_abs: 1.0,
        },
    }
}

/// Smallest `zeta = C * C_alpha` at which the one-sided CI endpoint on the
/// side of the estimate reaches zero. Infinite when it never does.
pub fn robustness_threshold(
    est: &ShortEstimates,
    target: BoundTarget,
    rho_abs: f64,
    tau: f64,
) -> Result<RobustnessThreshold> {
    check_tau(tau)?;
    if matches!(target, BoundTarget::Phi(_)) {
        return Err(Error::invalid("robustness thresholds are defined for lambda and gamma"));
    }
    if !(0.0..=1.0).contains(&rho_abs) {
        return Err(Error::invalid(format!("rho_abs must lie in [0, 1], got {rho_abs}")));
    }
    let point = match target {
        BoundTarget::Gamma => est.gamma_s,
        _ => est.lambda_s,
    };
    if point == 0.0 {
        return Err(Error::invalid("short estimate is zero; threshold undefined"));
    }
    let positive = point > 0.0;
    let q = normal_quantile(1.0 - tau)?;
    let crossed = |zeta: f64| -> Result<bool> {
        let s = bound_pair_stats(est, &scalar_config(target, zeta, rho_abs), target)?;
        Ok(if positive {
            s.point_lo - q * s.se_lo <= 0.0
        } else {
            s.point_hi + q * s.se_hi >= 0.0
        })
    };
    if crossed(0.0)? {
        return Ok(RobustnessThreshold {
            zeta_star: 0.0,
            insignificant_at_zero: true,
        });
    }
    let mut lo = 0.0;
    let mut hi = 1e-4;
    while !crossed(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Ok(RobustnessThreshold {
                zeta_star: f64::INFINITY,
                insignificant_at_zero: false,
            });
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if crossed(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RobustnessThreshold {
        zeta_star: hi,
        insignificant_at_zero: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub zeta: f64,
    pub lower: f64,
    pub upper: f64,
    pub se_lower: f64,
    pub se_upper: f64,
    /// `lower - q se_lower`.
    pub ci_lower: f64,
    /// `upper + q se_upper`.
    pub ci_upper: f64,
}

/// One-sided CI endpoints for the lambda or gamma bounds along a grid of
/// sensitivity products.
pub fn contour_grid(
    est: &ShortEstimates,
    target: BoundTarget,
    rho_abs: f64,
    tau: f64,
    zetas: &[f64],
) -> Result<Vec<ContourRow>> {
    check_tau(tau)?;
    if matches!(target, BoundTarget::Phi(_)) {
        return Err(Error::invalid("contours are defined for lambda and gamma"));
    }
    let q = normal_quantile(1.0 - tau)?;
    zetas
        .iter()
        .map(|&zeta| {
            if !(zeta >= 0.0 && zeta.is_finite()) {
                return Err(Error::invalid(format!("zeta must be finite and >= 0, got {zeta}")));
            }
            let s = bound_pair_stats(est, &scalar_config(target, zeta, rho_abs), target)?;
            Ok(ContourRow {
                zeta,
                lower: s.point_lo,
                upper: s.point_hi,
                se_lower: s.se_lo,
                se_upper: s.se_hi,
                ci_lower: s.point_lo - q * s.se_lo,
                ci_upper: s.point_hi + q * s.se_hi,
            })
        })
        .collect()
}

/// Bounds on `phi_t` and their one-sided CI endpoints along `ts`.
pub fn phi_curve(
    est: &ShortEstimates,
    cfg: &SensitivityConfig,
    tau: f64,
    ts: &[f64],
) -> Result<Vec<PhiCurveRow>> {
    check_tau(tau)?;
    let q = normal_quantile(1.0 - tau)?;
    ts.iter()
        .map(|&t| {
            let s = bound_pair_stats(est, cfg, BoundTarget::Phi(t))?;
            Ok(PhiCurveRow {
                t,
                phi_lo: s.point_lo,
                phi_hi: s.point_hi,
                se_lo: s.se_lo,
                se_hi: s.se_hi,
                ci_lo: s.point_lo - q * s.se_lo,
                ci_hi: s.point_hi + q * s.se_hi,
            })
        })
        .collect()
}

/// Shrinkage-adjusted CI for the lambda or gamma bounds.
pub fn stoye_target_ci(
    est: &ShortEstimates,
    cfg: &SensitivityConfig,
    target: BoundTarget,
    tau: f64,
) -> Result<StoyeRecord> {
    let s = bound_pair_stats(est, cfg, target)?;
    stoye_ci(s.point_lo, s.point_hi, s.se_lo, s.se_hi, s.rho_hat, est.n, tau)
}

/// `{t : 0 in CI*(phi_t)}` with diagnostics averaged over the grid points
/// inside the reported set.
pub fn stoye_theta_ci(
    est: &ShortEstimates,
    cfg: &SensitivityConfig,
    tau: f64,
    t_range: Option<(f64, f64)>,
    resolution: usize,
) -> Result<StoyeThetaRecord> {
    check_tau(tau)?;
    bound_coef_vectors(est, cfg, 1.0)?;
    let range = match t_range {
        Some(r) => r,
        None => default_t_range(est, cfg, tau)?,
    };
    let solve = |t: f64| -> Option<StoyeRecord> {
        let r = stoye_target_ci(est, cfg, BoundTarget::Phi(t), tau).ok()?;
        r.ci.filter(|ci| ci.contains(0.0)).map(|_| r)
    };
    let member = |t: f64| solve(t).is_some();
    let (ci, scanned) = invert_predicate(range, resolution, &member)?;
    let inside: Vec<f64> = scanned.iter().filter(|p| p.1).map(|p| p.0).collect();
    let records: Vec<StoyeRecord> = inside.par_iter().filter_map(|&t| solve(t)).collect();
    let m = records.len().max(1) as f64;
    let avg = |f: fn(&StoyeRecord) -> f64| records.iter().map(f).sum::<f64>() / m;
    Ok(StoyeThetaRecord {
        ci,
        z_l_star: avg(|r| r.z_l_star),
        z_u_star: avg(|r| r.z_u_star),
        delta_star: avg(|r| r.delta_star),
        min_objective: avg(|r| r.min_objective),
        rho_hat: avg(|r| r.rho_hat),
        grid_points: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiOptions {
    /// One-sided level for the bound CIs; intervals have level `1 - 2 tau`.
    pub tau: f64,
    /// Level parameter for the shrinkage CIs (level `1 - stoye_tau`).
    pub stoye_tau: f64,
    pub t_range: Option<(f64, f64)>,
    pub resolution: usize,
    pub stoye_resolution: usize,
    pub phi_points: usize,
}

impl Default for CiOptions {
    fn default() -> Self {
        CiOptions {
            tau: 0.025,
            stoye_tau: 0.05,
            t_range: None,
            resolution: 2001,
            stoye_resolution: 401,
            phi_points: 201,
        }
    }
}

pub fn ci_report(est: &ShortEstimates, cfg: &SensitivityConfig, opts: &CiOptions) -> Result<CIReport> {
    let tau = opts.tau;
    check_tau(tau)?;
    check_tau(opts.stoye_tau)?;
    let range = match opts.t_range {
        Some(r) => r,
        None => default_t_range(est, cfg, tau)?,
    };
    let lam = bound_pair_stats(est, cfg, BoundTarget::Lambda)?;
    let gam = bound_pair_stats(est, cfg, BoundTarget::Gamma)?;
    let zero = SensitivityConfig::default();
    let phi_ts = grid(range.0, range.1, opts.phi_points.max(2));
    Ok(CIReport {
        tau,
        lambda_ci: one_sided_ci(lam.point_lo, lam.point_hi, lam.se_lo, lam.se_hi, tau)?,
        gamma_ci: one_sided_ci(gam.point_lo, gam.point_hi, gam.se_lo, gam.se_hi, tau)?,
        theta0_ci: invert_theta_ci(est, cfg, tau, Some(range), opts.resolution)?,
        lambda_conventional: conventional_ci(est.lambda_s, est.se_lambda(), tau)?,
        gamma_conventional: conventional_ci(est.gamma_s, est.se_gamma(), tau)?,
        theta_conventional: invert_theta_ci(est, &zero, tau, Some(range), opts.resolution)?,
        stoye_tau: opts.stoye_tau,
        stoye_lambda: stoye_target_ci(est, cfg, BoundTarget::Lambda, opts.stoye_tau)?,
        stoye_gamma: stoye_target_ci(est, cfg, BoundTarget::Gamma, opts.stoye_tau)?,
        stoye_theta: stoye_theta_ci(est, cfg, opts.stoye_tau, Some(range), opts.stoye_resolution)?,
        phi_curve: phi_curve(est, cfg, tau, &phi_ts)?,
    })
}
