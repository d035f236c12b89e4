//! Identification set for theta_0 from bounds on lambda and gamma.

use serde::{Deserialize, Serialize};

use crate::model::{TheoremCase, ThetaBounds, ThetaSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiBounds {
    pub t: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

/// Bounds on `phi_t = lambda - gamma * t` over the bound rectangle.
pub fn phi_bounds(lambda_lo: f64, lambda_hi: f64, gamma_lo: f64, gamma_hi: f64, t: f64) -> PhiBounds {
    let (phi_hi, phi_lo) = if t >= 0.0 {
        (lambda_hi - gamma_lo * t, lambda_lo - gamma_hi * t)
    } else {
        (lambda_hi - gamma_hi * t, lambda_lo - gamma_lo * t)
    };
    PhiBounds { t, phi_lo, phi_hi }
}

#[derive(Clone, Copy, PartialEq)]
enum Sign {
    Pos,
    Neg,
    Mixed,
}

fn sign_of(lo: f64, hi: f64) -> Sign {
    if lo > 0.0 {
        Sign::Pos
    } else if hi < 0.0 {
        Sign::Neg
    } else {
        Sign::Mixed
    }
}

pub fn gamma_is_zero(g: f64, lambda_lo: f64, lambda_hi: f64) -> bool {
    g.abs() < 1e-12 * 1f64.max(lambda_lo.abs()).max(lambda_hi.abs())
}

pub fn theta_bounds(lambda_lo: f64, lambda_hi: f64, gamma_lo: f64, gamma_hi: f64) -> ThetaBounds {
    let (ll, lh, gl, gh) = (lambda_lo, lambda_hi, gamma_lo, gamma_hi);
    if gamma_is_zero(gl, ll, lh) || gamma_is_zero(gh, ll, lh) {
        return ThetaBounds {
            set: ThetaSet::Undefined,
            case: TheoremCase::GammaEndpointZero,
            first_stage_failure: true,
        };
    }
    let lam = sign_of(ll, lh);
    let interval = |lo: f64, hi: f64| ThetaSet::Interval { lo, hi };
    let (set, case) = match (sign_of(gl, gh), lam) {
        (Sign::Pos, Sign::Pos) => (interval(ll / gh, lh / gl), TheoremCase::GammaPosLambdaPos),
        (Sign::Pos, Sign::Neg) => (interval(ll / gl, lh / gh), TheoremCase::GammaPosLambdaNeg),
        (Sign::Pos, Sign::Mixed) => (interval(ll / gl, lh / gl), TheoremCase::GammaPosLambdaMixed),
        (Sign::Neg, Sign::Pos) => (interval(lh / gh, ll / gl), TheoremCase::GammaNegLambdaPos),
        (Sign::Neg, Sign::Neg) => (interval(lh / gl, ll / gh), TheoremCase::GammaNegLambdaNeg),
        (Sign::Neg, Sign::Mixed) => (interval(lh / gh, ll / gh), TheoremCase::GammaNegLambdaMixed),
        (Sign::Mixed, Sign::Pos) => (
            ThetaSet::UnionOfRays {
                left_hi: ll / gl,
                right_lo: ll / gh,
            },
            TheoremCase::GammaMixedLambdaPos,
        ),
        (Sign::Mixed, Sign::Neg) => (
            ThetaSet::UnionOfRays {
                left_hi: lh / gh,
                right_lo: lh / gl,
            },
            TheoremCase::GammaMixedLambdaNeg,
        ),
        (Sign::Mixed, Sign::Mixed) => (ThetaSet::WholeLine, TheoremCase::GammaMixedLambdaMixed),
    };
    ThetaBounds {
        set,
        case,
        first_stage_failure: sign_of(gl, gh) == Sign::Mixed,
    }
}
