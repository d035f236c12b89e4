//! Synthetic data with a fully observed omitted variable `A` on a finite
//! support, and exact population quantities by enumeration.
//!
//! Covariates `X` are a tuple of discrete columns; `A` has `a_levels`
//! values. Tables are stored flat, indexed by `cell = x_index * a_levels + a`
//! where `x_index` is the mixed-radix code of the covariate tuple (first
//! column most significant).

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_estimate, replicate_seed};
use crate::error::{Error, Result};
use crate::inference::{bound_pair_stats, conventional_ci, one_sided_ci, stoye_target_ci, BoundTarget};
use crate::learners::LearnerSpec;
use crate::model::{Dataset, Estimand, SensitivityConfig, ShortEstimates};

/// Compliance types: always-taker, never-taker, complier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvTables {
    /// Per cell `[always, never, complier]`, summing to one.
    pub type_probs: Vec<[f64; 3]>,
    /// Per cell `[always-taker, never-taker, complier untreated, complier treated]`.
    pub outcome_means: Vec<[f64; 4]>,
}

/// `Y = theta D + f(X, A) + u_Y`, `D = gamma Z + h(X, A) + u_D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlivmTables {
    pub theta: f64,
    pub gamma: f64,
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    /// Standard deviation of `u_D`.
    pub treatment_sd: f64,
    /// `corr(u_Y, u_D)`; nonzero makes `D` endogenous.
    pub error_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub estimand: Estimand,
    pub n: usize,
    pub seed: u64,
    /// Number of levels of each observed covariate column.
    pub x_levels: Vec<usize>,
    #[serde(default)]
    pub x_names: Option<Vec<String>>,
    pub a_levels: usize,
    /// `P(X = x, A = a)`.
    pub cell_probs: Vec<f64>,
    /// `P(Z = 1 | X = x, A = a)`.
    pub propensity: Vec<f64>,
    /// Outcome noise standard deviation (`sd(u_Y)` in the partially linear model).
    pub noise_sd: f64,
    #[serde(default)]
    pub iv: Option<IvTables>,
    #[serde(default)]
    pub plivm: Option<PlivmTables>,
}

const SUM_TOL: f64 = 1e-9;

impl DgpSpec {
    pub fn x_cells(&self) -> usize {
        self.x_levels.iter().product()
    }

    pub fn cells(&self) -> usize {
        self.x_cells() * self.a_levels
    }

    pub fn names(&self) -> Vec<String> {
        match &self.x_names {
            Some(v) => v.clone(),
            None => (1..=self.x_levels.len()).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Covariate values of an `x_index`.
    pub fn decode_x(&self, mut xi: usize) -> Vec<usize> {
        let mut out = vec![0; self.x_levels.len()];
        for (j, &l) in self.x_levels.iter().enumerate().rev() {
            out[j] = xi % l;
            xi /= l;
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.x_levels.is_empty() || self.x_levels.contains(&0) {
            errs.push("x_levels must be non-empty with positive entries".to_string());
        }
        if self.a_levels == 0 {
            errs.push("a_levels must be positive".to_string());
        }
        if let Some(names) = &self.x_names {
            if names.len() != self.x_levels.len() {
                errs.push(format!(
                    "{} x_names for {} covariates",
                    names.len(),
                    self.x_levels.len()
                ));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let cells = self.cells();
        let len = |name: &str, got: usize, errs: &mut Vec<String>| {
            if got != cells {
                errs.push(format!("{name} has {got} entries, expected {cells}"));
            }
        };
        len("cell_probs", self.cell_probs.len(), &mut errs);
        len("propensity", self.propensity.len(), &mut errs);
        if self.cell_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            errs.push("cell_probs must be finite and >= 0".into());
        }
        let total: f64 = self.cell_probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            errs.push(format!("cell_probs sum to {total}, not 1"));
        }
        if self.cell_probs.len() == cells {
            for xi in 0..self.x_cells() {
                let px: f64 = (0..self.a_levels).map(|a| self.cell_probs[xi * self.a_levels + a]).sum();
                if px <= 0.0 {
                    errs.push(format!("covariate cell {xi} has zero probability"));
                }
            }
        }
        if let Some((c, p)) = self.propensity.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            errs.push(format!("propensity[{c}] = {p} is outside (0, 1)"));
        }
        match (self.estimand, &self.iv, &self.plivm) {
            (Estimand::Late | Estimand::Latt, Some(iv), None) => {
                if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
                    errs.push("noise_sd must be finite and >= 0".into());
                }
                len("type_probs", iv.type_probs.len(), &mut errs);
                len("outcome_means", iv.outcome_means.len(), &mut errs);
                for (c, q) in iv.type_probs.iter().enumerate() {
                    if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                        errs.push(format!("type_probs[{c}] = {q:?} is not a distribution"));
                    }
                }
                if iv.outcome_means.iter().flatten().any(|v| !v.is_finite()) {
                    errs.push("outcome_means must be finite".into());
                }
            }
            (Estimand::Plivm, None, Some(pl)) => {
                if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
                    errs.push("noise_sd must be finite and > 0 for the partially linear model".into());
                }
                if !(pl.treatment_sd.is_finite() && pl.treatment_sd > 0.0) {
                    errs.push("treatment_sd must be finite and > 0".into());
                }
                if !(pl.error_corr > -1.0 && pl.error_corr < 1.0) {
                    errs.push(format!("error_corr = {} is outside (-1, 1)", pl.error_corr));
                }
                len("f", pl.f.len(), &mut errs);
                len("h", pl.h.len(), &mut errs);
                if [pl.theta, pl.gamma].iter().chain(&pl.f).chain(&pl.h).any(|v| !v.is_finite()) {
                    errs.push("partially linear coefficients must be finite".into());
                }
            }
            (Estimand::Plivm, _, _) => errs.push("the partially linear model needs a [plivm] table and no [iv] table".into()),
            _ => errs.push("LATE/LATT need an [iv] table and no [plivm] table".into()),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// A generated sample together with the withheld omitted variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    pub omitted: Vec<f64>,
}

impl Simulated {
    /// The sample with `A` appended as a covariate column named `a`.
    pub fn long_data(&self) -> Dataset {
        let n = self.data.n();
        let p = self.data.p();
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j < p { self.data.x[(i, j)] } else { self.omitted[i] });
        let mut names = self.data.names.clone();
        names.push("a".into());
        Dataset {
            x,
            names,
            ..self.data.clone()
        }
    }
}

/// Draws `spec.n` observations with the RNG seeded by `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<Simulated> {
    generate_with_seed(spec, spec.seed)
}

/// Draws replication `rep` of a study; replication 0 uses `spec.seed`.
pub fn generate_replication(spec: &DgpSpec, rep: usize) -> Result<Simulated> {
    generate_with_seed(spec, replicate_seed(spec.seed, rep))
}

fn generate_with_seed(spec: &DgpSpec, seed: u64) -> Result<Simulated> {
    spec.check()?;
    if spec.n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell_dist = WeightedIndex::new(&spec.cell_probs).map_err(|e| Error::invalid(format!("cell_probs: {e}")))?;
    let p = spec.x_levels.len();
    let decoded: Vec<Vec<usize>> = (0..spec.x_cells()).map(|xi| spec.decode_x(xi)).collect();
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut x = DMatrix::zeros(n, p);
    let mut omitted = Vec::with_capacity(n);
    for i in 0..n {
        let cell = cell_dist.sample(&mut rng);
        let (xi, a) = (cell / spec.a_levels, cell % spec.a_levels);
        let zi = if rng.random::<f64>() < spec.propensity[cell] { 1.0 } else { 0.0 };
        let (yi, di) = match (&spec.iv, &spec.plivm) {
            (Some(iv), _) => {
                let q = iv.type_probs[cell];
                let u: f64 = rng.random();
                let mu = iv.outcome_means[cell];
                let (di, mean) = if u < q[0] {
                    (1.0, mu[0])
                } else if u < q[0] + q[1] {
                    (0.0, mu[1])
                } else if zi == 1.0 {
                    (1.0, mu[3])
                } else {
                    (0.0, mu[2])
                };
                let e: f64 = rng.sample(StandardNormal);
                (mean + spec.noise_sd * e, di)
            }
            (None, Some(pl)) => {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let ud = pl.treatment_sd * e1;
                let r = pl.error_corr;
                let uy = spec.noise_sd * (r * e1 + (1.0 - r * r).sqrt() * e2);
                let di = pl.gamma * zi + pl.h[cell] + ud;
                (pl.theta * di + pl.f[cell] + uy, di)
            }
            (None, None) => unreachable!("checked above"),
        };
        y.push(yi);
        d.push(di);
        z.push(zi);
        for (j, &v) in decoded[xi].iter().enumerate() {
            x[(i, j)] = v as f64;
        }
        omitted.push(a as f64);
    }
    Ok(Simulated {
        data: Dataset::new(y, d, z, x, spec.names())?,
        omitted,
    })
}

/// Diagnostics of the representer conditions the bias formulas rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresenterChecks {
    /// `max |E[alpha | Z, X] - alpha_s|`; only meaningful for LATE/LATT.
    pub cond_mean_gap: f64,
    /// `E[alpha_s (alpha - alpha_s)]`.
    pub alpha_s_orth: f64,
    /// `E[g_Ys (alpha - alpha_s)]`.
    pub g_ys_orth: f64,
    /// `E[g_Ds (alpha - alpha_s)]`.
    pub g_ds_orth: f64,
    /// `E[alpha]`.
    pub alpha_mean: f64,
    /// `E[alpha_s]`.
    pub alpha_s_mean: f64,
}

/// Exact population quantities of a [`DgpSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub estimand: Estimand,
    /// Structural effect: the complier (treated-complier) effect, or the
    /// slope in the partially linear model.
    pub theta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub lambda_s: f64,
    pub gamma_s: f64,
    pub theta_s: f64,
    pub v2: f64,
    pub v_s2: f64,
    pub sigma_ys2: f64,
    pub sigma_ds2: f64,
    pub c_alpha: f64,
    pub c_y: f64,
    pub c_d: f64,
    /// Signed `corr(alpha - alpha_s, g_Y - g_Ys)`; 0 when either side is constant.
    pub rho_y: f64,
    pub rho_d: f64,
    /// `E[(alpha - alpha_s)(g_Y - g_Ys)]`.
    pub bias_lambda: f64,
    pub bias_gamma: f64,
    /// Asymptotic standard deviations of `sqrt(n) (hat - truth)` for the
    /// short estimators.
    pub sd_lambda_s: f64,
    pub sd_gamma_s: f64,
    pub checks: RepresenterChecks,
}

impl OracleTruth {
    /// Sensitivity values at the truth, with `|rho|` at the truth unless given.
    pub fn sensitivity(&self, rho_abs: Option<f64>) -> SensitivityConfig {
        SensitivityConfig {
            c_alpha: self.c_alpha,
            c_y: self.c_y,
            c_d: self.c_d,
            rho_y_abs: rho_abs.unwrap_or(self.rho_y.abs()),
            rho_d_abs: rho_abs.unwrap_or(self.rho_d.abs()),
        }
    }

    pub fn s_y(&self) -> f64 {
        (self.sigma_ys2 * self.v_s2).sqrt()
    }

    pub fn s_d(&self) -> f64 {
        (self.sigma_ds2 * self.v_s2).sqrt()
    }

    /// Population `(lambda^-, lambda^+)` under `cfg`.
    pub fn lambda_bounds(&self, cfg: &SensitivityConfig) -> (f64, f64) {
        let b = cfg.zeta_y() * self.s_y();
        (self.lambda_s - b, self.lambda_s + b)
    }

    pub fn gamma_bounds(&self, cfg: &SensitivityConfig) -> (f64, f64) {
        let b = cfg.zeta_d() * self.s_d();
        (self.gamma_s - b, self.gamma_s + b)
    }
}

/// One point of the joint support of `(X, A, Z)`.
struct Atom {
    xi: usize,
    z: f64,
    w: f64,
    alpha: f64,
    alpha_s: f64,
    g_y: f64,
    g_d: f64,
    var_y: f64,
    var_d: f64,
}

fn sum(atoms: &[Atom], f: impl Fn(&Atom) -> f64) -> f64 {
    atoms.iter().map(|a| a.w * f(a)).sum()
}

/// Enumerates the joint support and returns the population quantities.
pub fn oracle_truth(spec: &DgpSpec) -> Result<OracleTruth> {
    spec.check()?;
    let (nx, na) = (spec.x_cells(), spec.a_levels);
    let cell = |xi: usize, a: usize| xi * na + a;
    let px: Vec<f64> = (0..nx).map(|xi| (0..na).map(|a| spec.cell_probs[cell(xi, a)]).sum()).collect();
    let pi_s: Vec<f64> = (0..nx)
        .map(|xi| (0..na).map(|a| spec.cell_probs[cell(xi, a)] * spec.propensity[cell(xi, a)]).sum::<f64>() / px[xi])
        .collect();
    let p_z: f64 = (0..nx * na).map(|c| spec.cell_probs[c] * spec.propensity[c]).sum();
    let var_z_long: f64 = (0..nx * na)
        .map(|c| spec.cell_probs[c] * spec.propensity[c] * (1.0 - spec.propensity[c]))
        .sum();
    let var_z_short: f64 = (0..nx).map(|xi| px[xi] * pi_s[xi] * (1.0 - pi_s[xi])).sum();

    let representer = |z: f64, pi: f64, var_z: f64| match spec.estimand {
        Estimand::Late => z / pi - (1.0 - z) / (1.0 - pi),
        Estimand::Latt => (z - (1.0 - z) * pi / (1.0 - pi)) / p_z,
        Estimand::Plivm => (z - pi) / var_z,
    };

    let mut atoms = Vec::with_capacity(2 * nx * na);
    for xi in 0..nx {
        for a in 0..na {
            let c = cell(xi, a);
            let pi = spec.propensity[c];
            for z in [0.0, 1.0] {
                let w = spec.cell_probs[c] * if z == 1.0 { pi } else { 1.0 - pi };
                let (g_y, g_d, var_y, var_d) = match (&spec.iv, &spec.plivm) {
                    (Some(iv), _) => {
                        let q = iv.type_probs[c];
                        let mu = iv.outcome_means[c];
                        let mu_c = if z == 1.0 { mu[3] } else { mu[2] };
                        let g_y = q[0] * mu[0] + q[1] * mu[1] + q[2] * mu_c;
                        let spread = q[0] * (mu[0] - g_y).powi(2) + q[1] * (mu[1] - g_y).powi(2) + q[2] * (mu_c - g_y).powi(2);
                        let g_d = q[0] + z * q[2];
                        (g_y, g_d, spread + spec.noise_sd.powi(2), g_d * (1.0 - g_d))
                    }
                    (None, Some(pl)) => {
                        let g_d = pl.gamma * z + pl.h[c];
                        let g_y = pl.theta * g_d + pl.f[c];
                        let (sd, sy) = (pl.treatment_sd, spec.noise_sd);
                        let var_y = pl.theta.powi(2) * sd * sd + 2.0 * pl.theta * pl.error_corr * sd * sy + sy * sy;
                        (g_y, g_d, var_y, sd * sd)
                    }
                    (None, None) => unreachable!("checked above"),
                };
                atoms.push(Atom {
                    xi,
                    z,
                    w,
                    alpha: representer(z, pi, var_z_long),
                    alpha_s: representer(z, pi_s[xi], var_z_short),
                    g_y,
                    g_d,
                    var_y,
                    var_d,
                });
            }
        }
    }

    // Short regressions g_s(z, x), indexed [xi][z].
    let mut g_ys = vec![[0.0; 2]; nx];
    let mut g_ds = vec![[0.0; 2]; nx];
    if spec.estimand.is_binary_iv() {
        let mut mass = vec![[0.0; 2]; nx];
        for at in &atoms {
            let zi = at.z as usize;
            mass[at.xi][zi] += at.w;
            g_ys[at.xi][zi] += at.w * at.g_y;
            g_ds[at.xi][zi] += at.w * at.g_d;
        }
        for xi in 0..nx {
            for zi in 0..2 {
                g_ys[xi][zi] /= mass[xi][zi];
                g_ds[xi][zi] /= mass[xi][zi];
            }
        }
    } else {
        // Partially linear projection: g_s = b z + E[. | X] - b E[Z | X].
        let lambda_s_proj = sum(&atoms, |a| a.alpha_s * a.g_y);
        let gamma_s_proj = sum(&atoms, |a| a.alpha_s * a.g_d);
        let mut my = vec![0.0; nx];
        let mut md = vec![0.0; nx];
        for at in &atoms {
            my[at.xi] += at.w * at.g_y / px[at.xi];
            md[at.xi] += at.w * at.g_d / px[at.xi];
        }
        for xi in 0..nx {
            for zi in 0..2 {
                let zr = zi as f64 - pi_s[xi];
                g_ys[xi][zi] = my[xi] + lambda_s_proj * zr;
                g_ds[xi][zi] = md[xi] + gamma_s_proj * zr;
            }
        }
    }
    let gys = |a: &Atom| g_ys[a.xi][a.z as usize];
    let gds = |a: &Atom| g_ds[a.xi][a.z as usize];

    let lambda = sum(&atoms, |a| a.alpha * a.g_y);
    let gamma = sum(&atoms, |a| a.alpha * a.g_d);
    let lambda_s = sum(&atoms, |a| a.alpha_s * gys(a));
    let gamma_s = sum(&atoms, |a| a.alpha_s * gds(a));
    let v2 = sum(&atoms, |a| a.alpha * a.alpha);
    let v_s2 = sum(&atoms, |a| a.alpha_s * a.alpha_s);
    let sigma_ys2 = sum(&atoms, |a| a.var_y + (a.g_y - gys(a)).powi(2));
    let sigma_ds2 = sum(&atoms, |a| a.var_d + (a.g_d - gds(a)).powi(2));
    let da = |a: &Atom| a.alpha - a.alpha_s;
    let c_alpha = (sum(&atoms, |a| da(a).powi(2)) / v_s2).sqrt();
    let share = |num: f64, den: f64| if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let c_y = share(sum(&atoms, |a| (a.g_y - gys(a)).powi(2)), sigma_ys2);
    let c_d = share(sum(&atoms, |a| (a.g_d - gds(a)).powi(2)), sigma_ds2);
    // Variances below rounding level relative to their scale count as zero.
    let corr = |f: &dyn Fn(&Atom) -> f64, g: &dyn Fn(&Atom) -> f64, scale_g: f64| {
        let (mf, mg) = (sum(&atoms, f), sum(&atoms, g));
        let cov = sum(&atoms, |a| (f(a) - mf) * (g(a) - mg));
        let vf = sum(&atoms, |a| (f(a) - mf).powi(2));
        let vg = sum(&atoms, |a| (g(a) - mg).powi(2));
        if vf > 1e-24 * v_s2 && vg > 1e-24 * scale_g {
            (cov / (vf * vg).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    };
    let rho_y = corr(&da, &|a| a.g_y - gys(a), sum(&atoms, |a| a.g_y * a.g_y));
    let rho_d = corr(&da, &|a| a.g_d - gds(a), sum(&atoms, |a| a.g_d * a.g_d));
    let bias_lambda = sum(&atoms, |a| da(a) * (a.g_y - gys(a)));
    let bias_gamma = sum(&atoms, |a| da(a) * (a.g_d - gds(a)));

    // Influence functions alpha_s (V - g_s) + b(z, x).
    let drift = |a: &Atom, g: &[[f64; 2]], target: f64| match spec.estimand {
        Estimand::Late => g[a.xi][1] - g[a.xi][0] - target,
        Estimand::Latt => a.z * (g[a.xi][1] - g[a.xi][0] - target) / p_z,
        Estimand::Plivm => 0.0,
    };
    let if_var = |g: &[[f64; 2]], target: f64, long: &dyn Fn(&Atom) -> (f64, f64)| {
        sum(&atoms, |a| {
            let (g_long, var) = long(a);
            let gap = g_long - g[a.xi][a.z as usize];
            let b = drift(a, g, target);
            a.alpha_s.powi(2) * (var + gap * gap) + 2.0 * a.alpha_s * gap * b + b * b
        })
    };
    let sd_lambda_s = if_var(&g_ys, lambda_s, &|a| (a.g_y, a.var_y)).max(0.0).sqrt();
    let sd_gamma_s = if_var(&g_ds, gamma_s, &|a| (a.g_d, a.var_d)).max(0.0).sqrt();

    let mut cond_mean_gap: f64 = 0.0;
    if spec.estimand.is_binary_iv() {
        for xi in 0..nx {
            for z in [0.0, 1.0] {
                let sel: Vec<&Atom> = atoms.iter().filter(|a| a.xi == xi && a.z == z).collect();
                let mass: f64 = sel.iter().map(|a| a.w).sum();
                let cond: f64 = sel.iter().map(|a| a.w * a.alpha).sum::<f64>() / mass;
                cond_mean_gap = cond_mean_gap.max((cond - sel[0].alpha_s).abs());
            }
        }
    } else {
        cond_mean_gap = f64::NAN;
    }
    let checks = RepresenterChecks {
        cond_mean_gap,
        alpha_s_orth: sum(&atoms, |a| a.alpha_s * da(a)),
        g_ys_orth: sum(&atoms, |a| gys(a) * da(a)),
        g_ds_orth: sum(&atoms, |a| gds(a) * da(a)),
        alpha_mean: sum(&atoms, |a| a.alpha),
        alpha_s_mean: sum(&atoms, |a| a.alpha_s),
    };

    let theta = match (&spec.iv, &spec.plivm) {
        (Some(iv), _) => {
            // Complier effect, weighted by P(Z = 1 | X, A) for the treated compliers.
            let (mut num, mut den) = (0.0, 0.0);
            for c in 0..nx * na {
                let w = spec.cell_probs[c]
                    * iv.type_probs[c][2]
                    * if spec.estimand == Estimand::Latt { spec.propensity[c] } else { 1.0 };
                num += w * (iv.outcome_means[c][3] - iv.outcome_means[c][2]);
                den += w;
            }
            num / den
        }
        (None, Some(pl)) => pl.theta,
        (None, None) => unreachable!("checked above"),
    };

    Ok(OracleTruth {
        estimand: spec.estimand,
        theta,
        lambda,
        gamma,
        lambda_s,
        gamma_s,
        theta_s: lambda_s / gamma_s,
        v2,
        v_s2,
        sigma_ys2,
        sigma_ds2,
        c_alpha,
        c_y,
        c_d,
        rho_y,
        rho_d,
        bias_lambda,
        bias_gamma,
        sd_lambda_s,
        sd_gamma_s,
        checks,
    })
}

fn random_cell_probs(rng: &mut ChaCha8Rng, cells: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..cells).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A LATE/LATT design with random tables; `A` shifts the propensity,
/// compliance and outcomes.
pub fn random_iv_spec(estimand: Estimand, x_levels: &[usize], a_levels: usize, n: usize, seed: u64) -> DgpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = x_levels.iter().product::<usize>() * a_levels;
    let cell_probs = random_cell_probs(&mut rng, cells);
    let propensity = (0..cells).map(|_| rng.random_range(0.15..0.85)).collect();
    let type_probs = (0..cells)
        .map(|_| {
            let at = rng.random_range(0.0..0.25);
            let nt = rng.random_range(0.0..0.35);
            [at, nt, 1.0 - at - nt]
        })
        .collect();
    let outcome_means = (0..cells)
        .map(|_| {
            let base: f64 = rng.random_range(-1.0..1.0);
            [
                base + rng.random_range(-1.0..1.0),
                base + rng.random_range(-1.0..1.0),
                base,
                base + rng.random_range(0.0..2.0),
            ]
        })
        .collect();
    DgpSpec {
        estimand,
        n,
        seed,
        x_levels: x_levels.to_vec(),
        x_names: None,
        a_levels,
        cell_probs,
        propensity,
        noise_sd: rng.random_range(0.5..1.5),
        iv: Some(IvTables {
            type_probs,
            outcome_means,
        }),
        plivm: None,
    }
}

/// A partially linear design with random tables.
pub fn random_plivm_spec(x_levels: &[usize], a_levels: usize, n: usize, seed: u64) -> DgpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = x_levels.iter().product::<usize>() * a_levels;
    let cell_probs = random_cell_probs(&mut rng, cells);
    let propensity = (0..cells).map(|_| rng.random_range(0.15..0.85)).collect();
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    DgpSpec {
        estimand: Estimand::Plivm,
        n,
        seed,
        x_levels: x_levels.to_vec(),
        x_names: None,
        a_levels,
        cell_probs,
        propensity,
        noise_sd: rng.random_range(0.5..1.5),
        iv: None,
        plivm: Some(PlivmTables {
            theta: rng.random_range(-2.0..2.0),
            gamma: sign * rng.random_range(0.5..1.5),
            f: (0..cells).map(|_| rng.random_range(-1.0..1.0)).collect(),
            h: (0..cells).map(|_| rng.random_range(-1.0..1.0)).collect(),
            treatment_sd: rng.random_range(0.5..1.5),
            error_corr: rng.random_range(-0.8..0.8),
        }),
    }
}

/// Job-training look-alike: randomized offer with mild dependence on an
/// unobserved motivation indicator `A`, about two-thirds take-up among those
/// offered, earnings in dollars.
pub fn jtpa_like_spec(estimand: Estimand, n: usize, seed: u64) -> DgpSpec {
    let x_levels = vec![2, 2, 2, 3, 2];
    let names = ["hsorged", "black", "hispanic", "age_group", "married"];
    let a_levels = 2;
    let mut cell_probs = Vec::new();
    let mut propensity = Vec::new();
    let mut type_probs = Vec::new();
    let mut outcome_means = Vec::new();
    let marg: [&[f64]; 5] = [&[0.35, 0.65], &[0.75, 0.25], &[0.9, 0.1], &[0.4, 0.35, 0.25], &[0.55, 0.45]];
    let nx: usize = x_levels.iter().product();
    let spec0 = DgpSpec {
        estimand,
        n,
        seed,
        x_levels: x_levels.clone(),
        x_names: None,
        a_levels,
        cell_probs: vec![],
        propensity: vec![],
        noise_sd: 0.0,
        iv: None,
        plivm: None,
    };
    for xi in 0..nx {
        let x = spec0.decode_x(xi);
        let px: f64 = x.iter().enumerate().map(|(j, &v)| marg[j][v]).product();
        let (hs, black, hisp, age, married) = (x[0] as f64, x[1] as f64, x[2] as f64, x[3] as f64, x[4] as f64);
        let p_a1 = 0.3 + 0.2 * hs + 0.1 * married;
        for a in 0..a_levels {
            let af = a as f64;
            cell_probs.push(px * if a == 1 { p_a1 } else { 1.0 - p_a1 });
            propensity.push(0.6 + 0.12 * af + 0.02 * hs);
            let complier = 0.5 + 0.06 * hs + 0.12 * af - 0.03 * black;
            let always = 0.02 + 0.01 * married;
            type_probs.push([always, 1.0 - always - complier, complier]);
            let base = 11_000.0 + 3_500.0 * hs - 1_800.0 * black - 900.0 * hisp + 700.0 * age + 1_500.0 * married + 2_500.0 * af;
            let effect = 900.0 + 500.0 * hs + 1_200.0 * af;
            outcome_means.push([base + 1_000.0, base - 1_200.0, base, base + effect]);
        }
    }
    DgpSpec {
        cell_probs,
        propensity,
        x_names: Some(names.iter().map(|s| s.to_string()).collect()),
        noise_sd: 9_000.0,
        iv: Some(IvTables {
            type_probs,
            outcome_means,
        }),
        ..spec0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub reps: usize,
    /// Level of the one-sided bound CIs (coverage `1 - 2 tau`).
    pub tau: f64,
    /// Level of the shrinkage CI (coverage `1 - tau`).
    pub stoye_tau: f64,
    pub folds: usize,
    pub learner: LearnerSpec,
    /// `|rho|` used for the bounds; `None` uses the true values.
    pub rho_abs: Option<f64>,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            reps: 500,
            tau: 0.025,
            stoye_tau: 0.05,
            folds: 5,
            learner: LearnerSpec::saturated(),
            rho_abs: None,
        }
    }
}

/// Empirical frequency with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub total: usize,
    pub rate: f64,
    pub mc_se: f64,
}

impl Rate {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Rate {
        let (mut hits, mut total) = (0, 0);
        for f in flags {
            total += 1;
            hits += f as usize;
        }
        let rate = if total > 0 { hits as f64 / total as f64 } else { f64::NAN };
        Rate {
            hits,
            total,
            rate,
            mc_se: if total > 0 { (rate * (1.0 - rate) / total as f64).sqrt() } else { f64::NAN },
        }
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    /// Estimates with the per-observation scores dropped.
    pub estimates: ShortEstimates,
    pub lambda_ci: (f64, f64),
    pub gamma_ci: (f64, f64),
    pub lambda_conventional: (f64, f64),
    pub stoye_lambda: Option<(f64, f64)>,
    pub se_lambda_lo: f64,
    pub se_lambda_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub truth: OracleTruth,
    pub config: SensitivityConfig,
    pub n: usize,
    pub reps: usize,
    pub tau: f64,
    pub stoye_tau: f64,
    /// Replications whose estimation failed, with the error text.
    pub failures: Vec<(usize, String)>,
    /// `lambda` in `[lambda^-_tau, lambda^+_{1-tau}]`.
    pub lambda_in_bound_ci: Rate,
    /// Population `[lambda^-, lambda^+]` inside the bound CI.
    pub lambda_bounds_in_ci: Rate,
    pub gamma_in_bound_ci: Rate,
    pub gamma_bounds_in_ci: Rate,
    /// `lambda_s` in its conventional `(1 - 2 tau)` CI.
    pub lambda_s_in_conventional: Rate,
    /// `lambda` in the shrinkage CI at level `1 - stoye_tau`.
    pub lambda_in_stoye: Rate,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

fn one_replication(
    spec: &DgpSpec,
    rep: usize,
    opts: &CoverageOptions,
    cfg: &SensitivityConfig,
) -> Result<ReplicationRecord> {
    let sim = generate_replication(spec, rep)?;
    let fit = crossfit_estimate(&sim.data, spec.estimand, &opts.learner, opts.folds, replicate_seed(spec.seed ^ 0x5eed, rep))?;
    let mut est = fit.estimates;
    let ls = bound_pair_stats(&est, cfg, BoundTarget::Lambda)?;
    let gs = bound_pair_stats(&est, cfg, BoundTarget::Gamma)?;
    let lci = one_sided_ci(ls.point_lo, ls.point_hi, ls.se_lo, ls.se_hi, opts.tau)?;
    let gci = one_sided_ci(gs.point_lo, gs.point_hi, gs.se_lo, gs.se_hi, opts.tau)?;
    let conv = conventional_ci(est.lambda_s, est.se_lambda(), opts.tau)?;
    let stoye = stoye_target_ci(&est, cfg, BoundTarget::Lambda, opts.stoye_tau)?;
    est.scores = Vec::new();
    Ok(ReplicationRecord {
        rep,
        estimates: est,
        lambda_ci: (lci.lo, lci.hi),
        gamma_ci: (gci.lo, gci.hi),
        lambda_conventional: (conv.lo, conv.hi),
        stoye_lambda: stoye.ci.map(|c| (c.lo, c.hi)),
        se_lambda_lo: ls.se_lo,
        se_lambda_hi: ls.se_hi,
    })
}

/// Repeated sampling from `spec` with the sensitivity values set to the
/// truth; replications run in parallel and are seeded by index.
pub fn coverage_study(spec: &DgpSpec, opts: &CoverageOptions) -> Result<CoverageSummary> {
    if opts.reps == 0 {
        return Err(Error::invalid("reps must be positive"));
    }
    let truth = oracle_truth(spec)?;
    let cfg = truth.sensitivity(opts.rho_abs);
    let outcomes: Vec<Result<ReplicationRecord>> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| one_replication(spec, rep, opts, &cfg))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let (l_lo, l_hi) = truth.lambda_bounds(&cfg);
    let (g_lo, g_hi) = truth.gamma_bounds(&cfg);
    let inside = |ci: (f64, f64), v: f64| ci.0 <= v && v <= ci.1;
    Ok(CoverageSummary {
        truth,
        config: cfg,
        n: spec.n,
        reps: opts.reps,
        tau: opts.tau,
        stoye_tau: opts.stoye_tau,
        failures,
        lambda_in_bound_ci: Rate::from_flags(records.iter().map(|r| inside(r.lambda_ci, truth.lambda))),
        lambda_bounds_in_ci: Rate::from_flags(
            records.iter().map(|r| inside(r.lambda_ci, l_lo) && inside(r.lambda_ci, l_hi)),
        ),
        gamma_in_bound_ci: Rate::from_flags(records.iter().map(|r| inside(r.gamma_ci, truth.gamma))),
        gamma_bounds_in_ci: Rate::from_flags(
            records.iter().map(|r| inside(r.gamma_ci, g_lo) && inside(r.gamma_ci, g_hi)),
        ),
        lambda_s_in_conventional: Rate::from_flags(
            records.iter().map(|r| inside(r.lambda_conventional, truth.lambda_s)),
        ),
        lambda_in_stoye: Rate::from_flags(
            records.iter().map(|r| r.stoye_lambda.is_some_and(|c| inside(c, truth.lambda))),
        ),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(effect: f64) -> DgpSpec {
        DgpSpec {
            estimand: Estimand::Late,
            n: 400,
            seed: 3,
            x_levels: vec![2],
            x_names: None,
            a_levels: 2,
            cell_probs: vec![0.25; 4],
            propensity: vec![0.5; 4],
            noise_sd: 0.0,
            iv: Some(IvTables {
                type_probs: vec![[0.0, 0.0, 1.0]; 4],
                outcome_means: vec![[0.0, 0.0, 1.0, 1.0 + effect]; 4],
            }),
            plivm: None,
        }
    }

    #[test]
    fn homogeneous_effect_is_recovered() {
        let spec = homogeneous(2.5);
        let t = oracle_truth(&spec).unwrap();
        assert!((t.theta - 2.5).abs() < 1e-12);
        assert!((t.theta_s - 2.5).abs() < 1e-12);
        assert_eq!((t.c_alpha, t.c_y, t.c_d), (0.0, 0.0, 0.0));
        let sim = generate(&spec).unwrap();
        let fit = crossfit_estimate(&sim.data, Estimand::Late, &LearnerSpec::saturated(), 2, 1).unwrap();
        assert!((fit.estimates.theta_s.unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_n_is_rejected() {
        let mut spec = homogeneous(1.0);
        spec.n = 0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let mut spec = homogeneous(1.0);
        spec.propensity[0] = 1.0;
        assert!(spec.check().is_err());
        let mut spec = homogeneous(1.0);
        spec.iv.as_mut().unwrap().type_probs[1] = [0.5, 0.5, 0.5];
        assert!(spec.check().is_err());
        let mut spec = homogeneous(1.0);
        spec.estimand = Estimand::Plivm;
        assert!(spec.check().is_err());
    }

    #[test]
    fn a_irrelevant_gives_zero_strength() {
        let mut spec = random_iv_spec(Estimand::Late, &[3], 2, 100, 9);
        let iv = spec.iv.as_mut().unwrap();
        for xi in 0..3 {
            let (c0, c1) = (2 * xi, 2 * xi + 1);
            spec.propensity[c1] = spec.propensity[c0];
            iv.type_probs[c1] = iv.type_probs[c0];
            iv.outcome_means[c1] = iv.outcome_means[c0];
        }
        let t = oracle_truth(&spec).unwrap();
        assert!(t.c_alpha < 1e-12 && t.c_y < 1e-12 && t.c_d < 1e-12);
        assert!((t.lambda - t.lambda_s).abs() < 1e-12);
        assert_eq!(t.rho_y, 0.0);
    }

    #[test]
    fn long_estimand_identifies_structural_effect() {
        for est in [Estimand::Late, Estimand::Latt] {
            for seed in 0..10 {
                let t = oracle_truth(&random_iv_spec(est, &[2, 3], 3, 100, seed)).unwrap();
                assert!((t.lambda / t.gamma - t.theta).abs() < 1e-12, "{est} {seed}");
            }
        }
        let spec = random_plivm_spec(&[4], 2, 100, 5);
        let t = oracle_truth(&spec).unwrap();
        assert!((t.lambda / t.gamma - t.theta).abs() < 1e-10);
    }

    #[test]
    fn bias_routes_agree() {
        for seed in 0..20 {
            let t = oracle_truth(&random_iv_spec(Estimand::Latt, &[2, 2], 2, 100, seed)).unwrap();
            assert!((t.lambda - t.lambda_s - t.bias_lambda).abs() < 1e-12);
            assert!((t.gamma - t.gamma_s - t.bias_gamma).abs() < 1e-12);
            let sq = (t.rho_y * t.c_y * t.c_alpha * t.s_y()).powi(2);
            assert!(((t.lambda - t.lambda_s).powi(2) - sq).abs() < 1e-12);
        }
    }

    #[test]
    fn representer_checks_hold() {
        let t = oracle_truth(&random_iv_spec(Estimand::Late, &[3], 4, 100, 2)).unwrap();
        assert!(t.checks.cond_mean_gap < 1e-12);
        assert!(t.checks.alpha_s_orth.abs() < 1e-12);
        let t = oracle_truth(&random_plivm_spec(&[3], 3, 100, 2)).unwrap();
        assert!(t.checks.g_ys_orth.abs() < 1e-10);
        assert!(t.checks.alpha_s_orth.abs() < 1e-10);
        assert!(t.checks.cond_mean_gap.is_nan());
    }

    #[test]
    fn generation_is_deterministic_and_withholds_a() {
        let spec = jtpa_like_spec(Estimand::Late, 300, 17);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.p(), 5);
        assert!(!a.data.names.contains(&"a".to_string()));
        let long = a.long_data();
        assert_eq!(long.p(), 6);
        assert_eq!(long.names.last().unwrap(), "a");
        assert_ne!(generate_replication(&spec, 1).unwrap(), a);
        assert_eq!(generate_replication(&spec, 0).unwrap(), a);
    }

    #[test]
    fn sample_moments_track_the_oracle() {
        let spec = random_iv_spec(Estimand::Late, &[2], 2, 200_000, 4);
        let t = oracle_truth(&spec).unwrap();
        let sim = generate(&spec).unwrap();
        let n = sim.data.n() as f64;
        let pz = sim.data.z.iter().sum::<f64>() / n;
        let expect: f64 = spec.cell_probs.iter().zip(&spec.propensity).map(|(p, q)| p * q).sum();
        assert!((pz - expect).abs() < 0.005);
        let fit = crossfit_estimate(&sim.data, Estimand::Late, &LearnerSpec::saturated(), 2, 1).unwrap();
        let se = t.sd_gamma_s / n.sqrt();
        assert!((fit.estimates.gamma_s - t.gamma_s).abs() < 4.0 * se);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = random_plivm_spec(&[2], 2, 10, 1);
        let text = toml::to_string(&spec).unwrap();
        let back: DgpSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
