//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ovb_iv::crossfit::FoldPlan;
use ovb_iv::simdgp::DgpSpec;
use ovb_iv::{Dataset, Estimand};

/// Population quantities recomputed from the tables, using the
/// regression-functional form of each estimand where possible.
#[derive(Debug, Clone)]
pub struct Population {
    pub lambda: f64,
    pub gamma: f64,
    pub lambda_s: f64,
    pub gamma_s: f64,
    /// `E[(alpha - alpha_s)(g_Y - g_Ys)]`.
    pub cross_y: f64,
    pub cross_d: f64,
    /// `max |E[alpha | Z, X] - alpha_s|` (binary instruments only).
    pub cond_gap: f64,
    /// `E[alpha_s (alpha - alpha_s)]`.
    pub alpha_s_orth: f64,
    /// `E[g_Ys (alpha - alpha_s)]`.
    pub g_ys_orth: f64,
    /// Largest magnitude among the representers and regressions, for relative tolerances.
    pub scale: f64,
    /// Asymptotic sd of `sqrt(n) (lambda_hat_s - lambda_s)`.
    pub sd_lambda_s: f64,
}

struct Cell {
    x: usize,
    w: f64,
    pi: f64,
    /// Long regressions at z = 0, 1.
    gy: [f64; 2],
    gd: [f64; 2],
    /// Conditional variance of Y given (z, x, a).
    vy: [f64; 2],
}

fn cells(spec: &DgpSpec) -> Vec<Cell> {
    let na = spec.a_levels;
    (0..spec.cell_probs.len())
        .map(|c| {
            let pi = spec.propensity[c];
            let (gy, gd, vy) = if let Some(iv) = &spec.iv {
                let [at, nt, co] = iv.type_probs[c];
                let [m_at, m_nt, m_c0, m_c1] = iv.outcome_means[c];
                let mut gy = [0.0; 2];
                let mut vy = [0.0; 2];
                for z in 0..2 {
                    let mc = if z == 1 { m_c1 } else { m_c0 };
                    let mean = at * m_at + nt * m_nt + co * mc;
                    let second = at * m_at * m_at + nt * m_nt * m_nt + co * mc * mc;
                    gy[z] = mean;
                    vy[z] = second - mean * mean + spec.noise_sd * spec.noise_sd;
                }
                (gy, [at, at + co], vy)
            } else {
                let pl = spec.plivm.as_ref().unwrap();
                let gd = [pl.h[c], pl.h[c] + pl.gamma];
                let gy = [pl.theta * gd[0] + pl.f[c], pl.theta * gd[1] + pl.f[c]];
                let total_sd = {
                    let (t, sd, sy, r) = (pl.theta, pl.treatment_sd, spec.noise_sd, pl.error_corr);
                    t * t * sd * sd + 2.0 * t * r * sd * sy + sy * sy
                };
                (gy, gd, [total_sd; 2])
            };
            Cell {
                x: c / na,
                w: spec.cell_probs[c],
                pi,
                gy,
                gd,
                vy,
            }
        })
        .collect()
}

pub fn population(spec: &DgpSpec) -> Population {
    let cs = cells(spec);
    let nx = spec.cell_probs.len() / spec.a_levels;
    let mut px = vec![0.0; nx];
    let mut pzx = vec![0.0; nx];
    for c in &cs {
        px[c.x] += c.w;
        pzx[c.x] += c.w * c.pi;
    }
    let pis: Vec<f64> = (0..nx).map(|x| pzx[x] / px[x]).collect();
    let p_z: f64 = pzx.iter().sum();
    let pz_of = |z: usize, p: f64| if z == 1 { p } else { 1.0 - p };

    // Short regressions by averaging the long ones within (x, z).
    let mut gys = vec![[0.0; 2]; nx];
    let mut gds = vec![[0.0; 2]; nx];
    let mut mass = vec![[0.0; 2]; nx];
    for c in &cs {
        for z in 0..2 {
            let w = c.w * pz_of(z, c.pi);
            mass[c.x][z] += w;
            gys[c.x][z] += w * c.gy[z];
            gds[c.x][z] += w * c.gd[z];
        }
    }
    for x in 0..nx {
        for z in 0..2 {
            gys[x][z] /= mass[x][z];
            gds[x][z] /= mass[x][z];
        }
    }

    let (lambda, gamma, lambda_s, gamma_s, alpha, alpha_s): (f64, f64, f64, f64, Box<dyn Fn(&Cell, usize) -> f64>, Box<dyn Fn(&Cell, usize) -> f64>);
    match spec.estimand {
        Estimand::Late => {
            lambda = cs.iter().map(|c| c.w * (c.gy[1] - c.gy[0])).sum();
            gamma = cs.iter().map(|c| c.w * (c.gd[1] - c.gd[0])).sum();
            lambda_s = (0..nx).map(|x| px[x] * (gys[x][1] - gys[x][0])).sum();
            gamma_s = (0..nx).map(|x| px[x] * (gds[x][1] - gds[x][0])).sum();
            alpha = Box::new(|c: &Cell, z| if z == 1 { 1.0 / c.pi } else { -1.0 / (1.0 - c.pi) });
            let pis = pis.clone();
            alpha_s = Box::new(move |c: &Cell, z| {
                let p = pis[c.x];
                if z == 1 {
                    1.0 / p
                } else {
                    -1.0 / (1.0 - p)
                }
            });
        }
        Estimand::Latt => {
            lambda = cs.iter().map(|c| c.w * c.pi * (c.gy[1] - c.gy[0])).sum::<f64>() / p_z;
            gamma = cs.iter().map(|c| c.w * c.pi * (c.gd[1] - c.gd[0])).sum::<f64>() / p_z;
            lambda_s = (0..nx).map(|x| pzx[x] * (gys[x][1] - gys[x][0])).sum::<f64>() / p_z;
            gamma_s = (0..nx).map(|x| pzx[x] * (gds[x][1] - gds[x][0])).sum::<f64>() / p_z;
            alpha = Box::new(move |c: &Cell, z| if z == 1 { 1.0 / p_z } else { -c.pi / (1.0 - c.pi) / p_z });
            let pis = pis.clone();
            alpha_s = Box::new(move |c: &Cell, z| {
                let p = pis[c.x];
                if z == 1 {
                    1.0 / p_z
                } else {
                    -p / (1.0 - p) / p_z
                }
            });
        }
        Estimand::Plivm => {
            // Residual-on-residual moments of the instrument.
            let var_l: f64 = cs.iter().map(|c| c.w * c.pi * (1.0 - c.pi)).sum();
            let var_s: f64 = cs.iter().map(|c| c.w * (c.pi * (1.0 - pis[c.x]).powi(2) + (1.0 - c.pi) * pis[c.x].powi(2))).sum();
            let cov = |g: &dyn Fn(&Cell, usize) -> f64, center: &dyn Fn(&Cell) -> f64| -> f64 {
                cs.iter()
                    .map(|c| (0..2).map(|z| c.w * pz_of(z, c.pi) * (z as f64 - center(c)) * g(c, z)).sum::<f64>())
                    .sum()
            };
            lambda = cov(&|c, z| c.gy[z], &|c| c.pi) / var_l;
            gamma = cov(&|c, z| c.gd[z], &|c| c.pi) / var_l;
            lambda_s = cov(&|c, z| c.gy[z], &|c| pis[c.x]) / var_s;
            gamma_s = cov(&|c, z| c.gd[z], &|c| pis[c.x]) / var_s;
            // Partially linear short regressions: slope times residualized z plus E[. | X].
            for x in 0..nx {
                let my = (gys[x][1] * mass[x][1] + gys[x][0] * mass[x][0]) / px[x];
                let md = (gds[x][1] * mass[x][1] + gds[x][0] * mass[x][0]) / px[x];
                for z in 0..2 {
                    gys[x][z] = my + lambda_s * (z as f64 - pis[x]);
                    gds[x][z] = md + gamma_s * (z as f64 - pis[x]);
                }
            }
            alpha = Box::new(move |c: &Cell, z| (z as f64 - c.pi) / var_l);
            let pis = pis.clone();
            alpha_s = Box::new(move |c: &Cell, z| (z as f64 - pis[c.x]) / var_s);
        }
    }

    let mut cross_y = 0.0;
    let mut cross_d = 0.0;
    let mut alpha_s_orth = 0.0;
    let mut g_ys_orth = 0.0;
    let mut scale: f64 = 1.0;
    let mut cond = vec![[0.0; 2]; nx];
    let mut var_if = 0.0;
    for c in &cs {
        for z in 0..2 {
            let w = c.w * pz_of(z, c.pi);
            let (a, a_s) = (alpha(c, z), alpha_s(c, z));
            let dy = c.gy[z] - gys[c.x][z];
            cross_y += w * (a - a_s) * dy;
            cross_d += w * (a - a_s) * (c.gd[z] - gds[c.x][z]);
            alpha_s_orth += w * a_s * (a - a_s);
            g_ys_orth += w * gys[c.x][z] * (a - a_s);
            cond[c.x][z] += w * a;
            scale = scale.max(a.abs()).max(a_s.abs()).max(c.gy[z].abs());
            let drift = match spec.estimand {
                Estimand::Late => gys[c.x][1] - gys[c.x][0] - lambda_s,
                Estimand::Latt => z as f64 * (gys[c.x][1] - gys[c.x][0] - lambda_s) / p_z,
                Estimand::Plivm => 0.0,
            };
            // E[psi^2 | z, x, a] with psi = alpha_s (Y - g_Ys) + drift.
            var_if += w * (a_s * a_s * (c.vy[z] + dy * dy) + 2.0 * a_s * dy * drift + drift * drift);
        }
    }
    let mut cond_gap: f64 = 0.0;
    if spec.estimand != Estimand::Plivm {
        for c in &cs {
            for z in 0..2 {
                let gap = cond[c.x][z] / mass[c.x][z] - alpha_s(c, z);
                cond_gap = cond_gap.max(gap.abs());
            }
        }
    }
    Population {
        lambda,
        gamma,
        lambda_s,
        gamma_s,
        cross_y,
        cross_d,
        cond_gap,
        alpha_s_orth,
        g_ys_orth,
        scale,
        sd_lambda_s: var_if.sqrt(),
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: [f64; 2],
    y: [f64; 2],
    d: [f64; 2],
}

fn key(ds: &Dataset, i: usize) -> Vec<i64> {
    (0..ds.p()).map(|j| ds.x[(i, j)].round() as i64).collect()
}

fn tally(ds: &Dataset, rows: &[usize]) -> BTreeMap<Vec<i64>, Sums> {
    let mut m: BTreeMap<Vec<i64>, Sums> = BTreeMap::new();
    for &i in rows {
        let s = m.entry(key(ds, i)).or_default();
        let z = ds.z[i] as usize;
        s.n[z] += 1.0;
        s.y[z] += ds.y[i];
        s.d[z] += ds.d[i];
    }
    m
}

/// Closed-form cross-fitted estimates from cell counts and sums:
/// per fold and covariate cell, training-sample means plug into the
/// weighted residual sums of the held-out cell.
pub fn plugin_short(ds: &Dataset, plan: &FoldPlan, estimand: Estimand, clip: f64) -> (f64, f64) {
    let n = ds.n() as f64;
    let p_z = ds.z.iter().sum::<f64>() / n;
    let (mut lam, mut gam) = (0.0, 0.0);
    for f in 0..plan.k {
        let train = tally(ds, &plan.complement(f));
        let test = tally(ds, &plan.members(f));
        for (k, t) in &test {
            let tr = &train[k];
            let pi = (tr.n[1] / (tr.n[0] + tr.n[1])).clamp(clip, 1.0 - clip);
            let (ey0, ey1) = (tr.y[0] / tr.n[0], tr.y[1] / tr.n[1]);
            let (ed0, ed1) = (tr.d[0] / tr.n[0], tr.d[1] / tr.n[1]);
            let contrib = |s1: f64, s0: f64, m1: f64, m0: f64| match estimand {
                Estimand::Late => {
                    (t.n[0] + t.n[1]) * (m1 - m0) + (s1 - t.n[1] * m1) / pi - (s0 - t.n[0] * m0) / (1.0 - pi)
                }
                _ => (s1 - t.n[1] * m0 - (s0 - t.n[0] * m0) * pi / (1.0 - pi)) / p_z,
            };
            lam += contrib(t.y[1], t.y[0], ey1, ey0);
            gam += contrib(t.d[1], t.d[0], ed1, ed0);
        }
    }
    (lam / n, gam / n)
}
