use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ovb_iv::crossfit::crossfit_median;
use ovb_iv::learners::LearnerSpec;
use ovb_iv::sensitivity::bound_set;
use ovb_iv::simdgp::{generate, random_iv_spec};
use ovb_iv::{Dataset, Estimand, SensitivityConfig};
use ovb_iv_ffi::*;

fn sample() -> Dataset {
    generate(&random_iv_spec(Estimand::Late, &[2, 2], 2, 1500, 7)).unwrap().data
}

fn handle(ds: &Dataset) -> *mut OvbDataset {
    let xs: Vec<f64> = (0..ds.n()).flat_map(|i| (0..ds.p()).map(move |j| (i, j))).map(|(i, j)| ds.x[(i, j)]).collect();
    let mut h = ptr::null_mut();
    let st = unsafe { ovb_dataset_new(ds.n(), ds.p(), ds.y.as_ptr(), ds.d.as_ptr(), ds.z.as_ptr(), xs.as_ptr(), &mut h) };
    assert_eq!(st, OvbStatus::Ok);
    h
}

fn saturated() -> OvbFitOptions {
    OvbFitOptions {
        learner: OvbLearner::SaturatedCells,
        reps: 2,
        seed: 3,
        ..ovb_fit_options_default()
    }
}

fn last_error() -> String {
    let p = ovb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn estimates_and_bounds_match_the_library() {
    let ds = sample();
    let h = handle(&ds);
    assert_eq!(unsafe { ovb_dataset_rows(h) }, ds.n());
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { ovb_estimate(h, &saturated(), &mut est) }, OvbStatus::Ok);

    let direct = crossfit_median(&ds, Estimand::Late, &LearnerSpec::saturated(), 5, 2, 3).unwrap().estimates;
    let mut sum = OvbSummary::default();
    assert_eq!(unsafe { ovb_estimates_summary(est, &mut sum) }, OvbStatus::Ok);
    assert_eq!(sum.n, ds.n());
    assert_eq!(sum.lambda_s, direct.lambda_s);
    assert_eq!(sum.gamma_s, direct.gamma_s);
    assert_eq!(sum.se_lambda, direct.se_lambda());

    let sens = OvbSensitivity { c_alpha: 0.1, c_y: 0.1, c_d: 0.02, rho_y: 1.0, rho_d: 1.0 };
    let mut b = std::mem::MaybeUninit::<OvbBounds>::uninit();
    assert_eq!(unsafe { ovb_bounds(est, &sens, b.as_mut_ptr()) }, OvbStatus::Ok);
    let b = unsafe { b.assume_init() };
    let want = bound_set(&direct, &SensitivityConfig::new(0.1, 0.1, 0.02, 1.0, 1.0).unwrap());
    assert_eq!(b.lambda_lo, want.lambda_lo);
    assert_eq!(b.gamma_hi, want.gamma_hi);
    assert!(b.lambda_lo < sum.lambda_s && sum.lambda_s < b.lambda_hi);

    let mut ci = OvbInterval::default();
    assert_eq!(unsafe { ovb_bound_ci(est, &sens, OvbTarget::Lambda, 0.025, &mut ci) }, OvbStatus::Ok);
    assert!(ci.lo < b.lambda_lo && b.lambda_hi < ci.hi);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ovb_ci_report_json(est, &sens, 0.025, 0.05, &mut json) }, OvbStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { ovb_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v.is_object());

    unsafe {
        ovb_estimates_free(est);
        ovb_dataset_free(h);
    }
}

#[test]
fn estimates_round_trip_through_json() {
    let h = handle(&sample());
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { ovb_estimate(h, &saturated(), &mut est) }, OvbStatus::Ok);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ovb_estimates_to_json(est, &mut json) }, OvbStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ovb_estimates_from_json(json, &mut back) }, OvbStatus::Ok);
    let (mut a, mut b) = (OvbSummary::default(), OvbSummary::default());
    unsafe {
        ovb_estimates_summary(est, &mut a);
        ovb_estimates_summary(back, &mut b);
    }
    assert_eq!(a.lambda_s, b.lambda_s);
    assert_eq!(a.se_gamma, b.se_gamma);

    let sens = OvbSensitivity { c_alpha: 0.05, c_y: 0.05, c_d: 0.05, rho_y: 0.5, rho_d: 1.0 };
    let (mut c1, mut c2) = (OvbInterval::default(), OvbInterval::default());
    unsafe {
        ovb_bound_ci(est, &sens, OvbTarget::Gamma, 0.025, &mut c1);
        ovb_bound_ci(back, &sens, OvbTarget::Gamma, 0.025, &mut c2);
    }
    assert_eq!((c1.lo, c1.hi), (c2.lo, c2.hi));
    unsafe {
        ovb_string_free(json);
        ovb_estimates_free(est);
        ovb_estimates_free(back);
        ovb_dataset_free(h);
    }
}

#[test]
fn theta_set_cases() {
    let mut t = std::mem::MaybeUninit::<OvbThetaSet>::uninit();
    assert_eq!(unsafe { ovb_theta_set(196.40, 1849.64, 0.61, 0.62, t.as_mut_ptr()) }, OvbStatus::Ok);
    let t = unsafe { t.assume_init() };
    assert_eq!(t.kind, OvbThetaSetKind::Interval);
    assert!((t.a - 196.40 / 0.62).abs() < 1e-9 && (t.b - 1849.64 / 0.61).abs() < 1e-9);
    assert!(!t.first_stage_failure);

    let mut t = std::mem::MaybeUninit::<OvbThetaSet>::uninit();
    assert_eq!(unsafe { ovb_theta_set(1.0, 2.0, -0.1, 0.3, t.as_mut_ptr()) }, OvbStatus::Ok);
    let t = unsafe { t.assume_init() };
    assert_eq!(t.kind, OvbThetaSetKind::UnionOfRays);
    assert!(t.first_stage_failure);

    let mut t = std::mem::MaybeUninit::<OvbThetaSet>::uninit();
    assert_eq!(unsafe { ovb_theta_set(2.0, 1.0, 0.1, 0.3, t.as_mut_ptr()) }, OvbStatus::InvalidInput);
}

#[test]
fn errors_are_reported_by_status_and_message() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ovb_dataset_from_csv(ptr::null(), &mut h) }, OvbStatus::NullPointer);
    assert!(last_error().contains("path"));

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("noz.csv");
    std::fs::write(&csv, "y,d,x1\n1,1,0\n0,0,1\n").unwrap();
    let path = CString::new(csv.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ovb_dataset_from_csv(path.as_ptr(), &mut h) }, OvbStatus::MissingColumn);
    assert!(last_error().contains("`z`"));
    assert!(h.is_null());

    let missing = CString::new(dir.path().join("absent.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ovb_dataset_from_csv(missing.as_ptr(), &mut h) }, OvbStatus::InvalidInput);
    assert!(last_error().contains("cannot open"));

    let h = handle(&sample());
    let mut est = ptr::null_mut();
    let one_fold = OvbFitOptions { k_folds: 1, ..saturated() };
    assert_ne!(unsafe { ovb_estimate(h, &one_fold, &mut est) }, OvbStatus::Ok);
    assert!(est.is_null());
    let bad_sens = OvbSensitivity { c_alpha: -1.0, c_y: 0.0, c_d: 0.0, rho_y: 1.0, rho_d: 1.0 };
    assert_eq!(unsafe { ovb_estimate(h, &saturated(), &mut est) }, OvbStatus::Ok);
    let mut b = std::mem::MaybeUninit::<OvbBounds>::uninit();
    assert_eq!(unsafe { ovb_bounds(est, &bad_sens, b.as_mut_ptr()) }, OvbStatus::InvalidInput);

    let bad = CString::new("{not json").unwrap();
    let mut e2 = ptr::null_mut();
    assert_eq!(unsafe { ovb_estimates_from_json(bad.as_ptr(), &mut e2) }, OvbStatus::Parse);
    unsafe {
        ovb_estimates_free(est);
        ovb_dataset_free(h);
        ovb_dataset_free(ptr::null_mut());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ovb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("ovb_iv.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ OvbFitOptions o = ovb_fit_options_default(); OvbThetaSet t; \
             return ovb_theta_set(1.0, 2.0, 0.5, 1.0, &t) == OVB_STATUS_OK && o.k_folds > 0 ? 0 : 1; }}\n",
            header.display()
        ),
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-x", lang, "-fsyntax-only", "-Wall", "-Werror"]).arg(&src).output() else {
            eprintln!("{compiler} not found; skipped");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
