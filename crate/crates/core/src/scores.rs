//! Per-observation moment contributions for the short-version parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mat5;

/// Nuisance predictions for one observation under a binary instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvNuisance {
    /// `P(Z = 1 | X)`.
    pub pi: f64,
    pub ey1: f64,
    pub ey0: f64,
    pub ed1: f64,
    pub ed0: f64,
}

/// Nuisance predictions for one observation in the partially linear model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlivmNuisance {
    /// `E[Y | X]`.
    pub m: f64,
    /// `E[D | X]`.
    pub r: f64,
    /// `E[Z | X]`.
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub s_lambda: f64,
    pub s_gamma: f64,
    pub s_alpha2: f64,
    pub s_ry2: f64,
    pub s_rd2: f64,
}

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "instrument propensity must lie in (0, 1), got {pi}"
        )))
    }
}

fn residual_squares(y: f64, d: f64, z: f64, nv: &IvNuisance) -> (f64, f64) {
    let gy = z * nv.ey1 + (1.0 - z) * nv.ey0;
    let gd = z * nv.ed1 + (1.0 - z) * nv.ed0;
    ((y - gy).powi(2), (d - gd).powi(2))
}

pub fn late_score_row(y: f64, d: f64, z: f64, nv: &IvNuisance) -> Result<ScoreRow> {
    check_pi(nv.pi)?;
    let w1 = z / nv.pi;
    let w0 = (1.0 - z) / (1.0 - nv.pi);
    let (s_ry2, s_rd2) = residual_squares(y, d, z, nv);
    Ok(ScoreRow {
        s_lambda: w1 * (y - nv.ey1) - w0 * (y - nv.ey0) + nv.ey1 - nv.ey0,
        s_gamma: w1 * (d - nv.ed1) - w0 * (d - nv.ed0) + nv.ed1 - nv.ed0,
        s_alpha2: (w1 - w0).powi(2),
        s_ry2,
        s_rd2,
    })
}

/// Uncentered LATT contributions; the `z * lambda / p_z` centering is left
/// to the caller once the pooled estimate is known.
pub fn latt_score_row(y: f64, d: f64, z: f64, nv: &IvNuisance, p_z: f64) -> Result<ScoreRow> {
    check_pi(nv.pi)?;
    if !(p_z > 0.0 && p_z < 1.0) {
        return Err(Error::invalid(format!("P(Z=1) must lie in (0, 1), got {p_z}")));
    }
    let odds = nv.pi / (1.0 - nv.pi);
    let w1 = z / p_z;
    let w0 = (1.0 - z) / p_z * odds;
    let (s_ry2, s_rd2) = residual_squares(y, d, z, nv);
    Ok(ScoreRow {
        s_lambda: w1 * (y - nv.ey1) - w0 * (y - nv.ey0) + w1 * (nv.ey1 - nv.ey0),
        s_gamma: w1 * (d - nv.ed1) - w0 * (d - nv.ed0) + w1 * (nv.ed1 - nv.ed0),
        s_alpha2: (z - odds * (1.0 - z)).powi(2) / (p_z * p_z),
        s_ry2,
        s_rd2,
    })
}

/// First-pass Robinson contributions. `s_ry2` and `s_rd2` hold the squared
/// partialled-out residuals `(y - m)^2`, `(d - r)^2`; the final residual
/// variances need the pooled estimates, see [`plivm_residuals`].
pub fn plivm_score_row(y: f64, d: f64, z: f64, nv: &PlivmNuisance) -> ScoreRow {
    let zr = z - nv.l;
    ScoreRow {
        s_lambda: (y - nv.m) * zr,
        s_gamma: (d - nv.r) * zr,
        s_alpha2: zr * zr,
        s_ry2: (y - nv.m).powi(2),
        s_rd2: (d - nv.r).powi(2),
    }
}

/// Residuals `y - g_Ys` and `d - g_Ds` given pooled `lambda_s`, `gamma_s`.
pub fn plivm_residuals(
    y: f64,
    d: f64,
    z: f64,
    nv: &PlivmNuisance,
    lambda_s: f64,
    gamma_s: f64,
) -> (f64, f64) {
    let zr = z - nv.l;
    (y - nv.m - lambda_s * zr, d - nv.r - gamma_s * zr)
}

pub fn plivm_jacobian(mean_z_resid_sq: f64) -> Result<Mat5> {
    if !(mean_z_resid_sq > 0.0 && mean_z_resid_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "mean squared instrument residual must be positive, got {mean_z_resid_sq}"
        )));
    }
    let mut j = iv_jacobian();
    j[0][0] = -mean_z_resid_sq;
    j[1][1] = -mean_z_resid_sq;
    Ok(j)
}

/// `-I`, the Jacobian for LATE and LATT.
pub fn iv_jacobian() -> Mat5 {
    let mut j = [[0.0; 5]; 5];
    for (i, row) in j.iter_mut().enumerate() {
        row[i] = -1.0;
    }
    j
}
