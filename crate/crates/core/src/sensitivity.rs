//! Bias bounds for lambda and gamma, and benchmarking of the sensitivity
//! parameters against observed covariate groups.

use serde::{Deserialize, Serialize};

use crate::crossfit::{assign_folds, crossfit_with_plan, CrossfitResult};
use crate::error::{Error, Result};
use crate::identify::theta_bounds;
use crate::learners::LearnerSpec;
use crate::model::{BoundSet, Dataset, Estimand, SensitivityConfig, ShortEstimates};

/// `(lambda^-, lambda^+)`.
pub fn bias_bound_lambda(est: &ShortEstimates, cfg: &SensitivityConfig) -> (f64, f64) {
    let b = cfg.zeta_y() * est.s_y();
    (est.lambda_s - b, est.lambda_s + b)
}

/// `(gamma^-, gamma^+)`.
pub fn bias_bound_gamma(est: &ShortEstimates, cfg: &SensitivityConfig) -> (f64, f64) {
    let b = cfg.zeta_d() * est.s_d();
    (est.gamma_s - b, est.gamma_s + b)
}

pub fn bound_set(est: &ShortEstimates, cfg: &SensitivityConfig) -> BoundSet {
    let (lambda_lo, lambda_hi) = bias_bound_lambda(est, cfg);
    let (gamma_lo, gamma_hi) = bias_bound_gamma(est, cfg);
    BoundSet {
        lambda_lo,
        lambda_hi,
        gamma_lo,
        gamma_hi,
        theta: theta_bounds(lambda_lo, lambda_hi, gamma_lo, gamma_hi),
    }
}

/// `C_alpha` implied by the share of the long representer's second moment
/// explained by the short one.
pub fn c_alpha_from_r2(r2: f64) -> Result<f64> {
    if !(r2 > 0.0 && r2 <= 1.0) {
        return Err(Error::invalid(format!("R^2 must lie in (0, 1], got {r2}")));
    }
    Ok(((1.0 - r2) / r2).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub group: String,
    pub columns: Vec<String>,
    pub g_alpha: f64,
    pub g_y: f64,
    pub g_d: f64,
    pub c_alpha: f64,
    pub c_y: f64,
    pub c_d: f64,
    pub r2_alpha_drop: f64,
    pub r2_y_drop: f64,
    pub r2_d_drop: f64,
    pub warnings: Vec<String>,
}

impl BenchmarkResult {
    /// Sensitivity config at the implied values.
    pub fn config(&self, rho_y_abs: f64, rho_d_abs: f64) -> SensitivityConfig {
        SensitivityConfig {
            c_alpha: self.c_alpha,
            c_y: self.c_y,
            c_d: self.c_d,
            rho_y_abs,
            rho_d_abs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStrength {
    pub k_alpha: f64,
    pub k_y: f64,
    pub k_d: f64,
}

impl Default for BenchmarkStrength {
    fn default() -> Self {
        BenchmarkStrength {
            k_alpha: 1.0,
            k_y: 1.0,
            k_d: 1.0,
        }
    }
}

fn gain(r2: f64, what: &str, warnings: &mut Vec<String>) -> f64 {
    let g = (1.0 - r2) / r2;
    if g < 0.0 {
        warnings.push(format!(
            "{what}: estimated G = {g:.4e} < 0 (reduced fit better than full), floored at 0"
        ));
        0.0
    } else {
        g
    }
}

/// Computes the benchmark quantities from a full and a reduced fit.
pub fn benchmark_from_fits(
    group: &str,
    columns: &[String],
    full: &ShortEstimates,
    reduced: &ShortEstimates,
    k: BenchmarkStrength,
) -> Result<BenchmarkResult> {
    for (name, v) in [("k_alpha", k.k_alpha), ("k_y", k.k_y), ("k_d", k.k_d)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let mut warnings = Vec::new();
    let ratio = |num: f64, den: f64, what: &str| -> Result<f64> {
        if den > 0.0 && num > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::invalid(format!(
                "{what}: cannot form the R^2 ratio ({num} / {den})"
            )))
        }
    };
    let r2_alpha_drop = ratio(reduced.v_s2, full.v_s2, "representer")?;
    let r2_y_drop = ratio(full.sigma_ys2, reduced.sigma_ys2, "outcome")?;
    let r2_d_drop = ratio(full.sigma_ds2, reduced.sigma_ds2, "treatment")?;
    let g_alpha = gain(r2_alpha_drop, "representer", &mut warnings);
    let g_y = gain(r2_y_drop, "outcome", &mut warnings);
    let g_d = gain(r2_d_drop, "treatment", &mut warnings);
    let kg = k.k_alpha * g_alpha;
    if kg >= 1.0 {
        return Err(Error::BenchmarkUndefined(kg));
    }
    Ok(BenchmarkResult {
        group: group.to_string(),
        columns: columns.to_vec(),
        g_alpha,
        g_y,
        g_d,
        c_alpha: (kg / (1.0 - kg)).sqrt(),
        c_y: (k.k_y * g_y).sqrt(),
        c_d: (k.k_d * g_d).sqrt(),
        r2_alpha_drop,
        r2_y_drop,
        r2_d_drop,
        warnings,
    })
}

/// Runs the full and group-dropped cross-fits on one shared fold plan.
#[allow(clippy::too_many_arguments)]
pub fn benchmark_calibrate(
    ds: &Dataset,
    estimand: Estimand,
    group: &str,
    columns: &[String],
    k: BenchmarkStrength,
    spec: &LearnerSpec,
    folds: usize,
    seed: u64,
) -> Result<BenchmarkResult> {
    let plan = assign_folds(ds.n(), folds, seed)?;
    let full = crossfit_with_plan(ds, estimand, spec, &plan)?;
    benchmark_against(ds, estimand, group, columns, k, spec, &full)
}

/// Like [`benchmark_calibrate`] but reuses an existing full-covariate fit and
/// its fold plan.
pub fn benchmark_against(
    ds: &Dataset,
    estimand: Estimand,
    group: &str,
    columns: &[String],
    k: BenchmarkStrength,
    spec: &LearnerSpec,
    full: &CrossfitResult,
) -> Result<BenchmarkResult> {
    if columns.is_empty() {
        return Err(Error::invalid(format!("group `{group}` is empty")));
    }
    let reduced_ds = ds.without_columns(columns)?;
    if reduced_ds.p() == 0 {
        return Err(Error::invalid(format!(
            "removing group `{group}` leaves no covariates"
        )));
    }
    let plan = full
        .plan
        .as_ref()
        .ok_or_else(|| Error::invalid("full fit carries no fold plan"))?;
    let reduced = crossfit_with_plan(&reduced_ds, estimand, spec, plan)?;
    benchmark_from_fits(group, columns, &full.estimates, &reduced.estimates, k)
}

/// Element-wise maximum of the implied sensitivity values across groups.
pub fn max_over_groups(results: &[BenchmarkResult]) -> Option<SensitivityConfig> {
    if results.is_empty() {
        return None;
    }
    let max = |f: fn(&BenchmarkResult) -> f64| results.iter().map(f).fold(0.0, f64::max);
    Some(SensitivityConfig {
        c_alpha: max(|r| r.c_alpha),
        c_y: max(|r| r.c_y),
        c_d: max(|r| r.c_d),
        rho_y_abs: 1.0,
        rho_d_abs: 1.0,
    })
}
