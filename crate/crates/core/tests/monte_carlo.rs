mod common;

use ovb_iv::crossfit::crossfit_estimate;
use ovb_iv::inference::{bound_pair_stats, BoundTarget};
use ovb_iv::learners::LearnerSpec;
use ovb_iv::simdgp::{
    coverage_study, generate, generate_replication, oracle_truth, random_iv_spec, random_plivm_spec, CoverageOptions,
};
use ovb_iv::Estimand;

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn analytic_variances_match_replication_variance() {
    let spec = random_iv_spec(Estimand::Late, &[2, 2], 2, 2000, 3);
    let truth = oracle_truth(&spec).unwrap();
    let cfg = truth.sensitivity(None);
    let t = truth.theta_s;
    let (mut lam, mut lam_var, mut phi, mut phi_var) = (vec![], vec![], vec![], vec![]);
    for rep in 0..500 {
        let ds = generate_replication(&spec, rep).unwrap().data;
        let e = crossfit_estimate(&ds, Estimand::Late, &LearnerSpec::saturated(), 5, rep as u64)
            .unwrap()
            .estimates;
        if rep < 200 {
            lam.push(e.lambda_s);
            lam_var.push(e.omega[0][0] / e.n as f64);
        }
        let s = bound_pair_stats(&e, &cfg, BoundTarget::Phi(t)).unwrap();
        phi.push(s.point_hi);
        phi_var.push(s.se_hi * s.se_hi);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let r_lam = mean(&lam_var) / variance(&lam);
    let r_phi = mean(&phi_var) / variance(&phi);
    assert!((r_lam - 1.0).abs() < 0.25, "Omega_11 / n vs replication variance: ratio {r_lam}");
    assert!((r_phi - 1.0).abs() < 0.25, "phi_t+ variance ratio {r_phi}");
}

#[test]
fn short_estimates_are_consistent() {
    let specs = [
        random_iv_spec(Estimand::Late, &[2, 3], 2, 5000, 41),
        random_iv_spec(Estimand::Latt, &[2, 3], 3, 5000, 42),
        random_plivm_spec(&[2, 3], 2, 5000, 43),
    ];
    for spec in &specs {
        let pop = common::population(spec);
        let ds = generate(spec).unwrap().data;
        let e = crossfit_estimate(&ds, spec.estimand, &LearnerSpec::saturated(), 5, 1)
            .unwrap()
            .estimates;
        let se = pop.sd_lambda_s / (ds.n() as f64).sqrt();
        let gap = (e.lambda_s - pop.lambda_s).abs();
        assert!(gap < 3.0 * se, "{}: |{} - {}| = {gap} vs se {se}", spec.estimand, e.lambda_s, pop.lambda_s);
    }
}

#[test]
fn plivm_representer_orthogonality_holds_in_samples() {
    let spec = random_plivm_spec(&[3, 2], 3, 20_000, 5);
    let sim = generate(&spec).unwrap();
    let ds = &sim.data;
    let na = spec.a_levels;
    let nx = spec.cell_probs.len() / na;
    let px: Vec<f64> = (0..nx).map(|x| (0..na).map(|a| spec.cell_probs[x * na + a]).sum()).collect();
    let pis: Vec<f64> = (0..nx)
        .map(|x| (0..na).map(|a| spec.cell_probs[x * na + a] * spec.propensity[x * na + a]).sum::<f64>() / px[x])
        .collect();
    let var_l: f64 = (0..nx * na).map(|c| spec.cell_probs[c] * spec.propensity[c] * (1.0 - spec.propensity[c])).sum();
    let var_s: f64 = (0..nx).map(|x| px[x] * pis[x] * (1.0 - pis[x])).sum();
    let terms: Vec<f64> = (0..ds.n())
        .map(|i| {
            let xi = (0..ds.p()).fold(0usize, |acc, j| acc * spec.x_levels[j] + ds.x[(i, j)] as usize);
            let cell = xi * na + sim.omitted[i] as usize;
            let z = ds.z[i];
            let a = (z - spec.propensity[cell]) / var_l;
            let a_s = (z - pis[xi]) / var_s;
            a_s * (a - a_s)
        })
        .collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let se = (variance(&terms) / n).sqrt();
    assert!(mean.abs() < 4.0 * se, "sample mean {mean}, se {se}");
}

#[test]
fn coverage_runs_reproduce_per_seed() {
    let spec = random_iv_spec(Estimand::Latt, &[2], 2, 600, 9);
    let opts = CoverageOptions {
        reps: 20,
        learner: LearnerSpec::saturated(),
        ..CoverageOptions::default()
    };
    let a = coverage_study(&spec, &opts).unwrap();
    let b = coverage_study(&spec, &opts).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.records, b.records);
}
