//! K-fold cross-fitting of the short-version parameters and the median
//! aggregation over repeated sample splits.

use nalgebra::{DMatrix, Matrix5, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, FittedLearner, LearnerSpec, TargetKind};
use crate::model::{validate, Dataset, Estimand, Mat5, ShortEstimates};
use crate::scores::{self, IvNuisance, PlivmNuisance, ScoreRow};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_REPS: usize = 5;

/// `|gamma_s|` below this leaves theta undefined.
pub const GAMMA_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || 2 * k > n {
        return Err(Error::invalid(format!(
            "fold count K = {k} must satisfy 2 <= K <= n/2 (n = {n})"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub size: usize,
    pub lambda_s: f64,
    pub gamma_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitResult {
    pub estimates: ShortEstimates,
    pub folds: Vec<FoldDiagnostics>,
    /// Mean of per-fold ratios; reported alongside the pooled (DML2) ratio.
    pub theta_dml1: Option<f64>,
    #[serde(skip)]
    pub plan: Option<FoldPlan>,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn learner_seed(base: u64, fold: usize, nuisance: usize) -> u64 {
    mix(mix(base ^ (fold as u64) << 8) ^ nuisance as u64)
}

fn fit_on(
    spec: &LearnerSpec,
    seed: u64,
    x: &DMatrix<f64>,
    rows: &[usize],
    target: &[f64],
    kind: TargetKind,
) -> Result<FittedLearner> {
    let xs = x.select_rows(rows.iter());
    let ys: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    learners::fit(&spec.with_seed(seed), &xs, &ys, kind)
}

enum FoldNuisance {
    Iv(Vec<IvNuisance>),
    Plivm(Vec<PlivmNuisance>),
}

fn fold_nuisances(
    ds: &Dataset,
    estimand: Estimand,
    spec: &LearnerSpec,
    plan: &FoldPlan,
    fold: usize,
    test: &[usize],
) -> Result<FoldNuisance> {
    let train = plan.complement(fold);
    let base = spec.seed ^ mix(plan.seed);
    let xt = ds.x.select_rows(test.iter());
    let predict = |f: FittedLearner| f.predict(&xt);
    if estimand.is_binary_iv() {
        let arm1: Vec<usize> = train.iter().copied().filter(|&i| ds.z[i] == 1.0).collect();
        let arm0: Vec<usize> = train.iter().copied().filter(|&i| ds.z[i] == 0.0).collect();
        if arm1.is_empty() {
            return Err(Error::EmptyArm { fold, arm: 1 });
        }
        if arm0.is_empty() {
            return Err(Error::EmptyArm { fold, arm: 0 });
        }
        let s = |k| learner_seed(base, fold, k);
        let pi = predict(fit_on(spec, s(0), &ds.x, &train, &ds.z, TargetKind::Probability)?)?;
        let ey1 = predict(fit_on(spec, s(1), &ds.x, &arm1, &ds.y, TargetKind::Mean)?)?;
        let ey0 = predict(fit_on(spec, s(2), &ds.x, &arm0, &ds.y, TargetKind::Mean)?)?;
        let ed1 = predict(fit_on(spec, s(3), &ds.x, &arm1, &ds.d, TargetKind::Mean)?)?;
        let ed0 = predict(fit_on(spec, s(4), &ds.x, &arm0, &ds.d, TargetKind::Mean)?)?;
        Ok(FoldNuisance::Iv(
            (0..test.len())
                .map(|i| IvNuisance {
                    pi: pi[i],
                    ey1: ey1[i],
                    ey0: ey0[i],
                    ed1: ed1[i],
                    ed0: ed0[i],
                })
                .collect(),
        ))
    } else {
        let s = |k| learner_seed(base, fold, k);
        let m = predict(fit_on(spec, s(5), &ds.x, &train, &ds.y, TargetKind::Mean)?)?;
        let r = predict(fit_on(spec, s(6), &ds.x, &train, &ds.d, TargetKind::Mean)?)?;
        let l = predict(fit_on(spec, s(7), &ds.x, &train, &ds.z, TargetKind::Mean)?)?;
        Ok(FoldNuisance::Plivm(
            (0..test.len())
                .map(|i| PlivmNuisance {
                    m: m[i],
                    r: r[i],
                    l: l[i],
                })
                .collect(),
        ))
    }
}

pub fn crossfit_estimate(
    ds: &Dataset,
    estimand: Estimand,
    spec: &LearnerSpec,
    k: usize,
    seed: u64,
) -> Result<CrossfitResult> {
    let plan = assign_folds(ds.n(), k, seed)?;
    crossfit_with_plan(ds, estimand, spec, &plan)
}

/// Cross-fitted estimates for a fixed fold plan.
pub fn crossfit_with_plan(
    ds: &Dataset,
    estimand: Estimand,
    spec: &LearnerSpec,
    plan: &FoldPlan,
) -> Result<CrossfitResult> {
    validate(ds, estimand).map_err(Error::Validation)?;
    if plan.assignments.len() != ds.n() {
        return Err(Error::invalid("fold plan does not match the dataset size"));
    }
    if ds.n() < 2 * plan.k {
        return Err(Error::invalid(format!(
            "n = {} is below 2K = {}",
            ds.n(),
            2 * plan.k
        )));
    }
    spec.check()?;
    let members: Vec<Vec<usize>> = (0..plan.k).map(|f| plan.members(f)).collect();
    let nuisances: Vec<FoldNuisance> = (0..plan.k)
        .into_par_iter()
        .map(|f| fold_nuisances(ds, estimand, spec, plan, f, &members[f]))
        .collect::<Result<_>>()?;

    let n = ds.n();
    let p_z = ds.z.iter().sum::<f64>() / n as f64;
    let mut rows = vec![
        ScoreRow {
            s_lambda: 0.0,
            s_gamma: 0.0,
            s_alpha2: 0.0,
            s_ry2: 0.0,
            s_rd2: 0.0
        };
        n
    ];
    let mut plivm_nv = vec![PlivmNuisance { m: 0.0, r: 0.0, l: 0.0 }; n];
    for (f, nu) in nuisances.iter().enumerate() {
        for (j, &i) in members[f].iter().enumerate() {
            let (y, d, z) = (ds.y[i], ds.d[i], ds.z[i]);
            rows[i] = match (estimand, nu) {
                (Estimand::Late, FoldNuisance::Iv(v)) => scores::late_score_row(y, d, z, &v[j])?,
                (Estimand::Latt, FoldNuisance::Iv(v)) => {
                    scores::latt_score_row(y, d, z, &v[j], p_z)?
                }
                (Estimand::Plivm, FoldNuisance::Plivm(v)) => {
                    plivm_nv[i] = v[j];
                    scores::plivm_score_row(y, d, z, &v[j])
                }
                _ => unreachable!("nuisance family matches estimand"),
            };
        }
    }
    Ok(assemble(ds, estimand, &rows, &plivm_nv, p_z, plan, &members))
}

fn mean_by(rows: &[ScoreRow], idx: impl Iterator<Item = usize>, f: impl Fn(&ScoreRow) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut c = 0usize;
    for i in idx {
        acc += f(&rows[i]);
        c += 1;
    }
    acc / c as f64
}

fn assemble(
    ds: &Dataset,
    estimand: Estimand,
    rows: &[ScoreRow],
    plivm_nv: &[PlivmNuisance],
    p_z: f64,
    plan: &FoldPlan,
    members: &[Vec<usize>],
) -> CrossfitResult {
    let n = rows.len();
    let nf = n as f64;
    let mean = |f: &dyn Fn(&ScoreRow) -> f64| rows.iter().map(f).sum::<f64>() / nf;

    let (lambda_s, gamma_s, v_s2, sigma_ys2, sigma_ds2, infl, folds);
    match estimand {
        Estimand::Late | Estimand::Latt => {
            lambda_s = mean(&|r| r.s_lambda);
            gamma_s = mean(&|r| r.s_gamma);
            v_s2 = mean(&|r| r.s_alpha2);
            sigma_ys2 = mean(&|r| r.s_ry2);
            sigma_ds2 = mean(&|r| r.s_rd2);
            let latt = estimand == Estimand::Latt;
            infl = rows
                .iter()
                .zip(&ds.z)
                .map(|(r, &z)| {
                    let (cl, cg) = if latt {
                        (z * lambda_s / p_z, z * gamma_s / p_z)
                    } else {
                        (lambda_s, gamma_s)
                    };
                    [
                        r.s_lambda - cl,
                        r.s_gamma - cg,
                        r.s_alpha2 - v_s2,
                        r.s_ry2 - sigma_ys2,
                        r.s_rd2 - sigma_ds2,
                    ]
                })
                .collect::<Vec<_>>();
            folds = members
                .iter()
                .enumerate()
                .map(|(f, m)| FoldDiagnostics {
                    fold: f,
                    size: m.len(),
                    lambda_s: mean_by(rows, m.iter().copied(), |r| r.s_lambda),
                    gamma_s: mean_by(rows, m.iter().copied(), |r| r.s_gamma),
                })
                .collect::<Vec<_>>();
        }
        Estimand::Plivm => {
            let ez = mean(&|r| r.s_alpha2);
            lambda_s = mean(&|r| r.s_lambda) / ez;
            gamma_s = mean(&|r| r.s_gamma) / ez;
            v_s2 = 1.0 / ez;
            let resid: Vec<(f64, f64, f64)> = (0..n)
                .map(|i| {
                    let (ry, rd) = scores::plivm_residuals(
                        ds.y[i],
                        ds.d[i],
                        ds.z[i],
                        &plivm_nv[i],
                        lambda_s,
                        gamma_s,
                    );
                    (ry, rd, ds.z[i] - plivm_nv[i].l)
                })
                .collect();
            sigma_ys2 = resid.iter().map(|r| r.0 * r.0).sum::<f64>() / nf;
            sigma_ds2 = resid.iter().map(|r| r.1 * r.1).sum::<f64>() / nf;
            // Influence = -J^{-1} psi with J = diag(-E, -E, -1, -1, -1).
            infl = resid
                .iter()
                .map(|&(ry, rd, zr)| {
                    [
                        zr * ry / ez,
                        zr * rd / ez,
                        zr * zr * v_s2 * v_s2 - v_s2,
                        ry * ry - sigma_ys2,
                        rd * rd - sigma_ds2,
                    ]
                })
                .collect::<Vec<_>>();
            folds = members
                .iter()
                .enumerate()
                .map(|(f, m)| {
                    let e = mean_by(rows, m.iter().copied(), |r| r.s_alpha2);
                    FoldDiagnostics {
                        fold: f,
                        size: m.len(),
                        lambda_s: mean_by(rows, m.iter().copied(), |r| r.s_lambda) / e,
                        gamma_s: mean_by(rows, m.iter().copied(), |r| r.s_gamma) / e,
                    }
                })
                .collect::<Vec<_>>();
        }
    }

    let mut omega = [[0.0; 5]; 5];
    for r in &infl {
        for a in 0..5 {
            for b in a..5 {
                omega[a][b] += r[a] * r[b];
            }
        }
    }
    for a in 0..5 {
        for b in a..5 {
            omega[a][b] /= nf;
            omega[b][a] = omega[a][b];
        }
    }

    let theta_s = (gamma_s.abs() >= GAMMA_ZERO).then(|| lambda_s / gamma_s);
    let theta_dml1 = if folds.iter().all(|f| f.gamma_s.abs() >= GAMMA_ZERO) {
        Some(folds.iter().map(|f| f.lambda_s / f.gamma_s).sum::<f64>() / folds.len() as f64)
    } else {
        None
    };
    CrossfitResult {
        estimates: ShortEstimates {
            estimand,
            lambda_s,
            gamma_s,
            theta_s,
            v_s2,
            sigma_ys2,
            sigma_ds2,
            omega,
            n,
            scores: infl,
        },
        folds,
        theta_dml1,
        plan: Some(plan.clone()),
    }
}

pub(crate) fn operator_norm(m: &Mat5) -> f64 {
    let mat = Matrix5::from_fn(|i, j| m[i][j]);
    SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let l = values.len();
    if l % 2 == 1 {
        values[l / 2]
    } else {
        0.5 * (values[l / 2 - 1] + values[l / 2])
    }
}

/// Coordinatewise median of the parameters, and the inflated covariance with
/// median operator norm (lower median for even `L`). Scores, folds and plan
/// come from the replicate whose covariance is chosen.
pub fn median_aggregate(results: &[CrossfitResult]) -> Result<CrossfitResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("median aggregation needs at least one result"))?;
    let n = first.estimates.n;
    if results
        .iter()
        .any(|r| r.estimates.n != n || r.estimates.estimand != first.estimates.estimand)
    {
        return Err(Error::invalid("results come from different data or estimands"));
    }
    let params: Vec<[f64; 5]> = results.iter().map(|r| r.estimates.params()).collect();
    let mut med = [0.0; 5];
    for (c, slot) in med.iter_mut().enumerate() {
        let mut col: Vec<f64> = params.iter().map(|p| p[c]).collect();
        *slot = median(&mut col);
    }
    let adjusted: Vec<Mat5> = results
        .iter()
        .zip(&params)
        .map(|(r, p)| {
            let mut m = r.estimates.omega;
            for a in 0..5 {
                for b in 0..5 {
                    m[a][b] += n as f64 * (p[a] - med[a]) * (p[b] - med[b]);
                }
            }
            m
        })
        .collect();
    let mut order: Vec<(f64, usize)> = adjusted
        .iter()
        .enumerate()
        .map(|(l, m)| (operator_norm(m), l))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let chosen = order[(order.len() - 1) / 2].1;

    let mut out = results[chosen].clone();
    let e = &mut out.estimates;
    e.lambda_s = med[0];
    e.gamma_s = med[1];
    e.v_s2 = med[2];
    e.sigma_ys2 = med[3];
    e.sigma_ds2 = med[4];
    e.theta_s = (med[1].abs() >= GAMMA_ZERO).then(|| med[0] / med[1]);
    e.omega = adjusted[chosen];
    let mut dml1: Vec<f64> = results.iter().filter_map(|r| r.theta_dml1).collect();
    out.theta_dml1 = if dml1.len() == results.len() {
        Some(median(&mut dml1))
    } else {
        None
    };
    Ok(out)
}

/// `L` cross-fits with split seeds derived from `seed`, aggregated by median.
pub fn crossfit_median(
    ds: &Dataset,
    estimand: Estimand,
    spec: &LearnerSpec,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<CrossfitResult> {
    if l == 0 {
        return Err(Error::invalid("number of replications L must be positive"));
    }
    let runs: Vec<CrossfitResult> = (0..l)
        .map(|r| crossfit_estimate(ds, estimand, spec, k, replicate_seed(seed, r)))
        .collect::<Result<_>>()?;
    median_aggregate(&runs)
}

pub fn replicate_seed(seed: u64, rep: usize) -> u64 {
    if rep == 0 {
        seed
    } else {
        mix(seed ^ mix(rep as u64))
    }
}
