//! Command-line front end. Every run resolves a [`RunConfig`] from the
//! optional config file plus flags, writes its reports into the output
//! directory and finishes with a `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Calibration, DgpPreset, RunConfig};
use crate::crossfit::{crossfit_median, CrossfitResult};
use crate::error::{Error, Result};
use crate::identify::theta_bounds;
use crate::inference::{
    ci_report, contour_grid, conventional_ci, invert_theta_ci, robustness_threshold, BoundTarget, ContourRow,
    RobustnessThreshold,
};
use crate::learners::LearnerKind;
use crate::model::{
    BoundSet, CIReport, Dataset, Estimand, Interval, SensitivityConfig, SetBound, ShortEstimates, ThetaBounds, ThetaCi,
    ThetaSet,
};
use crate::sensitivity::{benchmark_against, bound_set, max_over_groups, BenchmarkResult};
use crate::simdgp::{coverage_study, generate, oracle_truth, CoverageOptions, CoverageSummary};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_FIRST_STAGE: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ovb-iv", version, about = "Omitted-variable-bias bounds and inference for LATE, LATT and PLIVM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-fitted short-version estimates with standard errors.
    Estimate(RunArgs),
    /// Bounds on lambda, gamma and the identified set for theta.
    Bounds {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sens: SensArgs,
    },
    /// Bound CIs, the inverted theta CI and shrinkage CIs.
    Ci {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sens: SensArgs,
        #[command(flatten)]
        grids: GridArgs,
    },
    /// Lower CI endpoints of the lambda and gamma bounds along a sensitivity grid.
    Contour {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sens: SensArgs,
        #[command(flatten)]
        grids: GridArgs,
    },
    /// Sensitivity values implied by dropping observed covariate groups.
    Benchmark {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sens: SensArgs,
    },
    /// Monte Carlo coverage study on a synthetic design.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        dgp: DgpArgs,
        /// `|rho|` used for the bounds (default: the true values).
        #[arg(long)]
        rho_abs: Option<f64>,
    },
    /// Writes one synthetic sample, its omitted variable and the exact truth.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        dgp: DgpArgs,
    },
    /// Identified set for theta from literal bounds on lambda and gamma.
    #[command(name = "check-theorem1")]
    CheckTheorem1 {
        #[arg(long, allow_hyphen_values = true)]
        lambda_lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda_hi: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma_lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma_hi: f64,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Forest,
    Ridge,
    Saturated,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with columns y, d, z and covariates.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prior estimates.json; skips estimation.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[arg(long)]
    pub estimand: Option<Estimand>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub stoye_tau: Option<f64>,
    #[arg(long)]
    pub k_folds: Option<usize>,
    /// Sample splits for the median method (Monte Carlo replications for `simulate`).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerArg>,
    #[arg(long)]
    pub trees: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SensArgs {
    #[arg(long)]
    pub c_alpha: Option<f64>,
    #[arg(long)]
    pub c_y: Option<f64>,
    #[arg(long)]
    pub c_d: Option<f64>,
    #[arg(long)]
    pub rho_y: Option<f64>,
    #[arg(long)]
    pub rho_d: Option<f64>,
    /// Covariate groups for benchmarking, one `name: col1, col2` per line.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Calibrate the sensitivity values from the benchmark groups.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long)]
    pub k_alpha: Option<f64>,
    #[arg(long)]
    pub k_y: Option<f64>,
    #[arg(long)]
    pub k_d: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub t_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub stoye_resolution: Option<usize>,
    #[arg(long)]
    pub zeta_max: Option<f64>,
    #[arg(long)]
    pub zeta_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    JtpaLike,
    RandomIv,
    RandomPlivm,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DgpArgs {
    /// DGP table file (TOML); overrides the preset.
    #[arg(long)]
    pub dgp: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Sample size per draw.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub table_seed: Option<u64>,
}

fn load_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    let r = &mut cfg.run;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    if run.data.is_some() {
        r.data = run.data.clone();
    }
    if run.estimates.is_some() {
        r.estimates = run.estimates.clone();
    }
    set!(r.estimand, run.estimand);
    set!(r.tau, run.tau);
    set!(r.stoye_tau, run.stoye_tau);
    set!(r.k_folds, run.k_folds);
    set!(r.reps, run.reps);
    set!(r.seed, run.seed);
    set!(r.out, run.out);
    if run.workers.is_some() {
        r.workers = run.workers;
    }
    if let Some(l) = run.learner {
        cfg.learner.kind = match l {
            LearnerArg::Forest => LearnerKind::RandomForest,
            LearnerArg::Ridge => LearnerKind::Ridge,
            LearnerArg::Saturated => LearnerKind::SaturatedCells,
        };
    }
    set!(cfg.learner.trees, run.trees);
    Ok(cfg)
}

fn apply_sens(cfg: &mut RunConfig, s: &SensArgs) {
    let t = &mut cfg.sensitivity;
    for (dst, src) in [
        (&mut t.c_alpha, s.c_alpha),
        (&mut t.c_y, s.c_y),
        (&mut t.c_d, s.c_d),
        (&mut t.rho_y, s.rho_y),
        (&mut t.rho_d, s.rho_d),
        (&mut t.k_alpha, s.k_alpha),
        (&mut t.k_y, s.k_y),
        (&mut t.k_d, s.k_d),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    if s.groups.is_some() {
        t.groups_file = s.groups.clone();
    }
    if s.benchmark {
        t.calibrate = Calibration::Benchmark;
    }
}

fn apply_grids(cfg: &mut RunConfig, g: &GridArgs) {
    let t = &mut cfg.grids;
    if g.t_min.is_some() || g.t_max.is_some() {
        t.t_min = g.t_min;
        t.t_max = g.t_max;
    }
    if let Some(v) = g.resolution {
        t.resolution = v;
    }
    if let Some(v) = g.stoye_resolution {
        t.stoye_resolution = v;
    }
    if let Some(v) = g.zeta_max {
        t.zeta_max = v;
    }
    if let Some(v) = g.zeta_points {
        t.zeta_points = v;
    }
}

fn apply_dgp(cfg: &mut RunConfig, d: &DgpArgs) {
    if d.dgp.is_some() {
        cfg.dgp.file = d.dgp.clone();
    }
    if let Some(p) = d.preset {
        cfg.dgp.preset = match p {
            PresetArg::JtpaLike => DgpPreset::JtpaLike,
            PresetArg::RandomIv => DgpPreset::RandomIv,
            PresetArg::RandomPlivm => DgpPreset::RandomPlivm,
        };
    }
    if let Some(n) = d.n {
        cfg.dgp.n = n;
    }
    if let Some(s) = d.table_seed {
        cfg.dgp.table_seed = s;
    }
}

/// Result of a subcommand: exit code and text printed to stdout.
#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Collects output files and writes the manifest last.
struct Writer {
    dir: PathBuf,
    outputs: Vec<FileDigest>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Writer> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.bytes(name, &bytes)
    }

    fn finish(self, command: &str, cfg: &RunConfig) -> Result<()> {
        let mut inputs = Vec::new();
        for p in [&cfg.run.data, &cfg.run.estimates, &cfg.sensitivity.groups_file, &cfg.dgp.file]
            .into_iter()
            .flatten()
        {
            inputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&fs::read(p)?),
            });
        }
        let config_json = serde_json::to_string(cfg)?;
        let manifest = Manifest {
            tool: "ovb-iv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.run.seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            config: cfg.clone(),
            inputs,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn init_workers(cfg: &RunConfig) {
    if let Some(w) = cfg.run.workers {
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    cfg.check()?;
    cfg.check_paths()?;
    init_workers(cfg);
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .run
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no data file given (--data or run.data)".into()))?;
    Dataset::from_csv_path(path)
}

fn fit(cfg: &RunConfig, ds: &Dataset) -> Result<CrossfitResult> {
    crossfit_median(ds, cfg.run.estimand, &cfg.learner, cfg.run.k_folds, cfg.run.reps, cfg.run.seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardErrors {
    pub lambda_s: f64,
    pub gamma_s: f64,
    pub theta_s: Option<f64>,
    pub v_s2: f64,
    pub sigma_ys2: f64,
    pub sigma_ds2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimates: ShortEstimates,
    pub se: StandardErrors,
    pub tau: f64,
    /// Delta-method `(1 - 2 tau)` CI for `theta_s`.
    pub theta_ci: Option<Interval>,
    pub lambda_ci: Interval,
    pub gamma_ci: Interval,
    /// Median over splits of the fold-averaged ratio estimates.
    pub theta_dml1: Option<f64>,
    pub k_folds: usize,
    pub reps: usize,
    pub seed: u64,
}

fn estimate_report(est: &ShortEstimates, cfg: &RunConfig, theta_dml1: Option<f64>) -> Result<EstimateReport> {
    let n = est.n as f64;
    let se = |i: usize| (est.omega[i][i].max(0.0) / n).sqrt();
    let tau = cfg.run.tau;
    let theta_ci = match (est.theta_s, est.se_theta()) {
        (Some(t), Some(s)) => Some(conventional_ci(t, s, tau)?),
        _ => None,
    };
    Ok(EstimateReport {
        estimates: est.clone(),
        se: StandardErrors {
            lambda_s: se(0),
            gamma_s: se(1),
            theta_s: est.se_theta(),
            v_s2: se(2),
            sigma_ys2: se(3),
            sigma_ds2: se(4),
        },
        tau,
        theta_ci,
        lambda_ci: conventional_ci(est.lambda_s, est.se_lambda(), tau)?,
        gamma_ci: conventional_ci(est.gamma_s, est.se_gamma(), tau)?,
        theta_dml1,
        k_folds: cfg.run.k_folds,
        reps: cfg.run.reps,
        seed: cfg.run.seed,
    })
}

/// Reads either a bare estimates object or an `estimates.json` report.
fn load_estimates(path: &Path) -> Result<ShortEstimates> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let inner = v.get("estimates").cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner)?)
}

fn g(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == 0.0 || (1e-3..1e7).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.4e}")
    }
}

fn fmt_interval(i: &Interval) -> String {
    format!("[{}, {}]", g(i.lo), g(i.hi))
}

fn fmt_bound(b: SetBound, lower: bool) -> String {
    match (b, lower) {
        (SetBound::Finite(v), true) => format!("[{}", g(v)),
        (SetBound::Finite(v), false) => format!("{}]", g(v)),
        (SetBound::Unbounded, true) => "(-inf".into(),
        (SetBound::Unbounded, false) => "+inf)".into(),
    }
}

fn fmt_theta_ci(ci: &ThetaCi) -> String {
    match ci {
        ThetaCi::Empty => "empty".into(),
        ThetaCi::Range {
            lower,
            upper,
            disconnected,
        } => {
            let s = format!("{}, {}", fmt_bound(*lower, true), fmt_bound(*upper, false));
            if *disconnected {
                format!("{s} (not connected)")
            } else {
                s
            }
        }
    }
}

fn fmt_theta_set(b: &ThetaBounds) -> String {
    match b.set {
        ThetaSet::Interval { lo, hi } => format!("[{}, {}]", g(lo), g(hi)),
        ThetaSet::UnionOfRays { left_hi, right_lo } => format!("(-inf, {}] U [{}, +inf)", g(left_hi), g(right_lo)),
        ThetaSet::WholeLine => "(-inf, +inf)".into(),
        ThetaSet::Undefined => "undefined".into(),
    }
}

fn estimate_text(r: &EstimateReport) -> String {
    let e = &r.estimates;
    let level = 100.0 * (1.0 - 2.0 * r.tau);
    let mut s = String::new();
    let _ = writeln!(s, "estimand: {}   n = {}   K = {}   L = {}   seed = {}", e.estimand, e.n, r.k_folds, r.reps, r.seed);
    let _ = writeln!(s, "{:<10} {:>14} {:>14}   CI ({level:.0}%)", "", "estimate", "s.e.");
    let _ = writeln!(s, "{:<10} {:>14} {:>14}   {}", "lambda_s", g(e.lambda_s), g(r.se.lambda_s), fmt_interval(&r.lambda_ci));
    let _ = writeln!(s, "{:<10} {:>14} {:>14}   {}", "gamma_s", g(e.gamma_s), g(r.se.gamma_s), fmt_interval(&r.gamma_ci));
    match (e.theta_s, r.se.theta_s, r.theta_ci) {
        (Some(t), Some(se), Some(ci)) => {
            let _ = writeln!(s, "{:<10} {:>14} {:>14}   {}", "theta_s", g(t), g(se), fmt_interval(&ci));
        }
        _ => {
            let _ = writeln!(s, "theta_s    undefined (gamma_s is zero)");
        }
    }
    let _ = writeln!(s, "{:<10} {:>14} {:>14}", "v_s^2", g(e.v_s2), g(r.se.v_s2));
    let _ = writeln!(s, "{:<10} {:>14} {:>14}", "sigma_Ys^2", g(e.sigma_ys2), g(r.se.sigma_ys2));
    let _ = writeln!(s, "{:<10} {:>14} {:>14}", "sigma_Ds^2", g(e.sigma_ds2), g(r.se.sigma_ds2));
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub groups: Vec<BenchmarkResult>,
    /// Largest implied values with `|rho|` from the run config.
    pub max: Option<SensitivityConfig>,
    pub argmax_c_alpha: Option<String>,
    pub argmax_c_y: Option<String>,
    pub argmax_c_d: Option<String>,
}

fn run_benchmarks(cfg: &RunConfig, ds: &Dataset, full: &CrossfitResult) -> Result<BenchmarkSummary> {
    let groups = cfg.sensitivity.resolve_groups()?;
    if groups.is_empty() {
        return Err(Error::Config("benchmarking needs covariate groups (--groups or sensitivity.groups)".into()));
    }
    let k = cfg.sensitivity.strength();
    let results: Vec<BenchmarkResult> = groups
        .iter()
        .map(|(name, cols)| benchmark_against(ds, cfg.run.estimand, name, cols, k, &cfg.learner, full))
        .collect::<Result<_>>()?;
    let argmax = |f: fn(&BenchmarkResult) -> f64| {
        results
            .iter()
            .fold(None::<&BenchmarkResult>, |best, r| match best {
                Some(b) if f(b) >= f(r) => Some(b),
                _ => Some(r),
            })
            .map(|r| r.group.clone())
    };
    let max = max_over_groups(&results).map(|c| SensitivityConfig {
        rho_y_abs: cfg.sensitivity.rho_y,
        rho_d_abs: cfg.sensitivity.rho_d,
        ..c
    });
    Ok(BenchmarkSummary {
        argmax_c_alpha: argmax(|r| r.c_alpha),
        argmax_c_y: argmax(|r| r.c_y),
        argmax_c_d: argmax(|r| r.c_d),
        groups: results,
        max,
    })
}

fn benchmark_text(b: &BenchmarkSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "group", "C_alpha", "C_Y", "C_D", "G_alpha", "G_Y", "G_D"
    );
    for r in &b.groups {
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            r.group,
            g(r.c_alpha),
            g(r.c_y),
            g(r.c_d),
            g(r.g_alpha),
            g(r.g_y),
            g(r.g_d)
        );
        for w in &r.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    if let Some(m) = &b.max {
        let _ = writeln!(s, "\nmaximum over groups:");
        let none = String::from("-");
        let _ = writeln!(s, "  C_alpha  {:<16} {}", b.argmax_c_alpha.as_ref().unwrap_or(&none), g(m.c_alpha));
        let _ = writeln!(s, "  C_Y      {:<16} {}", b.argmax_c_y.as_ref().unwrap_or(&none), g(m.c_y));
        let _ = writeln!(s, "  C_D      {:<16} {}", b.argmax_c_d.as_ref().unwrap_or(&none), g(m.c_d));
    }
    s
}

/// Estimates plus the sensitivity config they are analysed under.
struct Analysis {
    est: ShortEstimates,
    theta_dml1: Option<f64>,
    sens: SensitivityConfig,
    benchmark: Option<BenchmarkSummary>,
}

fn analysis(cfg: &RunConfig, force_benchmark: bool) -> Result<Analysis> {
    let want_benchmark = force_benchmark || cfg.sensitivity.calibrate == Calibration::Benchmark;
    if let Some(p) = &cfg.run.estimates {
        if want_benchmark {
            return Err(Error::Config("benchmarking needs the data, not prior estimates".into()));
        }
        let est = load_estimates(p)?;
        if est.estimand != cfg.run.estimand {
            return Err(Error::Config(format!(
                "estimates file holds {} estimates but the run estimand is {}",
                est.estimand, cfg.run.estimand
            )));
        }
        return Ok(Analysis {
            est,
            theta_dml1: None,
            sens: cfg.sensitivity.direct()?,
            benchmark: None,
        });
    }
    let ds = load_data(cfg)?;
    let full = fit(cfg, &ds)?;
    let (sens, benchmark) = if want_benchmark {
        let b = run_benchmarks(cfg, &ds, &full)?;
        let sens = if cfg.sensitivity.calibrate == Calibration::Benchmark {
            b.max.expect("non-empty groups")
        } else {
            cfg.sensitivity.direct()?
        };
        (sens, Some(b))
    } else {
        (cfg.sensitivity.direct()?, None)
    };
    Ok(Analysis {
        est: full.estimates,
        theta_dml1: full.theta_dml1,
        sens,
        benchmark,
    })
}

fn sens_text(c: &SensitivityConfig) -> String {
    format!(
        "C_alpha = {}, C_Y = {}, C_D = {}, |rho_Y| = {}, |rho_D| = {}  (zeta_Y = {}, zeta_D = {})",
        g(c.c_alpha),
        g(c.c_y),
        g(c.c_d),
        g(c.rho_y_abs),
        g(c.rho_d_abs),
        g(c.zeta_y()),
        g(c.zeta_d())
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub estimand: Estimand,
    pub sensitivity: SensitivityConfig,
    pub lambda_s: f64,
    pub gamma_s: f64,
    pub theta_s: Option<f64>,
    pub bounds: BoundSet,
    pub case_label: String,
    pub first_stage_failure: bool,
    pub benchmark: Option<BenchmarkSummary>,
}

fn bounds_text(r: &BoundsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "estimand: {}", r.estimand);
    let _ = writeln!(s, "sensitivity: {}", sens_text(&r.sensitivity));
    let b = &r.bounds;
    let _ = writeln!(s, "{:<8} {:>14}   bounds", "", "estimate");
    let _ = writeln!(s, "{:<8} {:>14}   [{}, {}]", "lambda", g(r.lambda_s), g(b.lambda_lo), g(b.lambda_hi));
    let _ = writeln!(s, "{:<8} {:>14}   [{}, {}]", "gamma", g(r.gamma_s), g(b.gamma_lo), g(b.gamma_hi));
    let theta = r.theta_s.map(g).unwrap_or_else(|| "undefined".into());
    let _ = writeln!(s, "{:<8} {:>14}   {}", "theta", theta, fmt_theta_set(&b.theta));
    let _ = writeln!(s, "case: {}", r.case_label);
    if r.first_stage_failure {
        let _ = writeln!(s, "FIRST-STAGE FAILURE: the gamma bounds include zero; theta bounds are not informative.");
    }
    s
}

fn bounds_report(a: &Analysis) -> BoundsReport {
    let bounds = bound_set(&a.est, &a.sens);
    BoundsReport {
        estimand: a.est.estimand,
        sensitivity: a.sens,
        lambda_s: a.est.lambda_s,
        gamma_s: a.est.gamma_s,
        theta_s: a.est.theta_s,
        case_label: bounds.theta.case.label().to_string(),
        first_stage_failure: bounds.theta.first_stage_failure,
        bounds,
        benchmark: a.benchmark.clone(),
    }
}

/// Conventional CIs at the shrinkage CI's level, printed beside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoyeConventional {
    pub lambda: Interval,
    pub gamma: Interval,
    pub theta: ThetaCi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiFileReport {
    pub estimand: Estimand,
    pub sensitivity: SensitivityConfig,
    pub estimate: EstimateReport,
    pub bounds: BoundsReport,
    pub report: CIReport,
    pub stoye_conventional: StoyeConventional,
}

fn ci_text(r: &CiFileReport) -> String {
    let c = &r.report;
    let e = &r.estimate;
    let level = 100.0 * (1.0 - 2.0 * c.tau);
    let mut s = String::new();
    let _ = writeln!(s, "estimand: {}   n = {}", r.estimand, e.estimates.n);
    let _ = writeln!(s, "sensitivity: {}", sens_text(&r.sensitivity));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<8} {:>12}   {:<28} {:<28} {}",
        "",
        "Est.",
        format!("C.I. ({level:.0}%)"),
        "OVB bound est.",
        format!("[Low_{}, Up_{}]", c.tau, 1.0 - c.tau)
    );
    let b = &r.bounds.bounds;
    let theta_est = e.estimates.theta_s.map(g).unwrap_or_else(|| "undefined".into());
    let theta_conv = e.theta_ci.as_ref().map(fmt_interval).unwrap_or_else(|| "undefined".into());
    let _ = writeln!(
        s,
        "{:<8} {:>12}   {:<28} {:<28} {}",
        "theta0",
        theta_est,
        theta_conv,
        fmt_theta_set(&b.theta),
        fmt_theta_ci(&c.theta0_ci)
    );
    let _ = writeln!(
        s,
        "{:<8} {:>12}   {:<28} {:<28} {}",
        "lambda",
        g(e.estimates.lambda_s),
        fmt_interval(&c.lambda_conventional),
        format!("[{}, {}]", g(b.lambda_lo), g(b.lambda_hi)),
        fmt_interval(&c.lambda_ci)
    );
    let _ = writeln!(
        s,
        "{:<8} {:>12}   {:<28} {:<28} {}",
        "gamma",
        g(e.estimates.gamma_s),
        fmt_interval(&c.gamma_conventional),
        format!("[{}, {}]", g(b.gamma_lo), g(b.gamma_hi)),
        fmt_interval(&c.gamma_ci)
    );
    let _ = writeln!(s, "theta0 conventional (zeta = 0) test inversion: {}", fmt_theta_ci(&c.theta_conventional));
    let _ = writeln!(s, "case: {}", r.bounds.case_label);
    if r.bounds.first_stage_failure {
        let _ = writeln!(s, "FIRST-STAGE FAILURE: the gamma bounds include zero.");
    }
    let _ = writeln!(s);
    let slevel = 100.0 * (1.0 - c.stoye_tau);
    let _ = writeln!(
        s,
        "{:<8} {:<30} {:<30} {:>7} {:>7} {:>12} {:>14} {:>8}",
        "",
        format!("OVB-adj. C.I. ({slevel:.0}%)"),
        format!("conventional ({slevel:.0}%)"),
        "z_l*",
        "z_u*",
        "Delta*",
        "Min.Obj.",
        "rho"
    );
    let st = &c.stoye_theta;
    let _ = writeln!(
        s,
        "{:<8} {:<30} {:<30} {:>7.3} {:>7.3} {:>12} {:>14} {:>8.4}",
        "theta0",
        fmt_theta_ci(&st.ci),
        fmt_theta_ci(&r.stoye_conventional.theta),
        st.z_l_star,
        st.z_u_star,
        g(st.delta_star),
        g(st.min_objective),
        st.rho_hat
    );
    for (name, rec, conv) in [
        ("lambda", &c.stoye_lambda, &r.stoye_conventional.lambda),
        ("gamma", &c.stoye_gamma, &r.stoye_conventional.gamma),
    ] {
        let ci = rec.ci.as_ref().map(fmt_interval).unwrap_or_else(|| "empty".into());
        let _ = writeln!(
            s,
            "{:<8} {:<30} {:<30} {:>7.3} {:>7.3} {:>12} {:>14} {:>8.4}",
            name,
            ci,
            fmt_interval(conv),
            rec.z_l_star,
            rec.z_u_star,
            g(rec.delta_star),
            g(rec.min_objective),
            rec.rho_hat
        );
    }
    let _ = writeln!(s, "theta0 averages over {} grid points inside the set.", st.grid_points);
    s
}

fn cmd_estimate(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    let ds = load_data(cfg)?;
    let res = fit(cfg, &ds)?;
    let report = estimate_report(&res.estimates, cfg, res.theta_dml1)?;
    let text = estimate_text(&report);
    let mut w = Writer::new(&cfg.run.out)?;
    w.json("estimates.json", &report)?;
    w.bytes("estimate.txt", text.as_bytes())?;
    w.finish("estimate", cfg)?;
    Ok(Outcome {
        code: EXIT_OK,
        stdout: text,
    })
}

fn cmd_bounds(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    let a = analysis(cfg, false)?;
    let report = bounds_report(&a);
    let mut text = String::new();
    if let Some(b) = &a.benchmark {
        text.push_str(&benchmark_text(b));
        text.push('\n');
    }
    text.push_str(&bounds_text(&report));
    let mut w = Writer::new(&cfg.run.out)?;
    w.json("bounds.json", &report)?;
    w.bytes("bounds.txt", text.as_bytes())?;
    w.finish("bounds", cfg)?;
    Ok(Outcome {
        code: if report.first_stage_failure { EXIT_FIRST_STAGE } else { EXIT_OK },
        stdout: text,
    })
}

fn cmd_ci(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    let a = analysis(cfg, false)?;
    let opts = cfg.ci_options()?;
    let report = ci_report(&a.est, &a.sens, &opts)?;
    let half = 0.5 * opts.stoye_tau;
    let range = match opts.t_range {
        Some(r) => r,
        None => crate::inference::default_t_range(&a.est, &a.sens, opts.tau)?,
    };
    let stoye_conventional = StoyeConventional {
        lambda: conventional_ci(a.est.lambda_s, a.est.se_lambda(), half)?,
        gamma: conventional_ci(a.est.gamma_s, a.est.se_gamma(), half)?,
        theta: invert_theta_ci(&a.est, &SensitivityConfig::default(), half, Some(range), opts.resolution)?,
    };
    let bounds = bounds_report(&a);
    let file = CiFileReport {
        estimand: a.est.estimand,
        sensitivity: a.sens,
        estimate: estimate_report(&a.est, cfg, a.theta_dml1)?,
        bounds,
        report,
        stoye_conventional,
    };
    let mut text = String::new();
    if let Some(b) = &a.benchmark {
        text.push_str(&benchmark_text(b));
        text.push('\n');
    }
    text.push_str(&ci_text(&file));
    let mut w = Writer::new(&cfg.run.out)?;
    w.json("ci.json", &file)?;
    w.csv("phi_curve.csv", &file.report.phi_curve)?;
    w.bytes("ci.txt", text.as_bytes())?;
    w.finish("ci", cfg)?;
    Ok(Outcome {
        code: if file.bounds.first_stage_failure { EXIT_FIRST_STAGE } else { EXIT_OK },
        stdout: text,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourReport {
    pub tau: f64,
    pub rho_y_abs: f64,
    pub rho_d_abs: f64,
    pub lambda_threshold: Option<RobustnessThreshold>,
    pub gamma_threshold: Option<RobustnessThreshold>,
}

fn fmt_threshold(t: &Option<RobustnessThreshold>) -> String {
    match t {
        None => "undefined (zero estimate)".into(),
        Some(t) if t.insignificant_at_zero => "0 (not significant without omitted variables)".into(),
        Some(t) if t.zeta_star.is_infinite() => "none (never crosses zero)".into(),
        Some(t) => g(t.zeta_star),
    }
}

fn cmd_contour(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    let a = analysis(cfg, false)?;
    let tau = cfg.run.tau;
    let zetas = cfg.grids.zetas()?;
    let (rho_y, rho_d) = (cfg.sensitivity.rho_y, cfg.sensitivity.rho_d);
    let lam: Vec<ContourRow> = contour_grid(&a.est, BoundTarget::Lambda, rho_y, tau, &zetas)?;
    let gam: Vec<ContourRow> = contour_grid(&a.est, BoundTarget::Gamma, rho_d, tau, &zetas)?;
    let threshold = |target, rho, point: f64| -> Result<Option<RobustnessThreshold>> {
        if point == 0.0 {
            Ok(None)
        } else {
            robustness_threshold(&a.est, target, rho, tau).map(Some)
        }
    };
    let report = ContourReport {
        tau,
        rho_y_abs: rho_y,
        rho_d_abs: rho_d,
        lambda_threshold: threshold(BoundTarget::Lambda, rho_y, a.est.lambda_s)?,
        gamma_threshold: threshold(BoundTarget::Gamma, rho_d, a.est.gamma_s)?,
    };
    let mut text = String::new();
    let _ = writeln!(text, "one-sided level tau = {tau}, |rho_Y| = {}, |rho_D| = {}", g(rho_y), g(rho_d));
    let _ = writeln!(text, "lambda: zeta = C_Y C_alpha at which the CI endpoint reaches zero: {}", fmt_threshold(&report.lambda_threshold));
    let _ = writeln!(text, "gamma:  zeta = C_D C_alpha at which the CI endpoint reaches zero: {}", fmt_threshold(&report.gamma_threshold));
    let _ = writeln!(
        text,
        "zeta = 0 conventional lower endpoints: lambda {}, gamma {}",
        g(lam[0].ci_lower),
        g(gam[0].ci_lower)
    );
    let mut w = Writer::new(&cfg.run.out)?;
    w.csv("contour_lambda.csv", &lam)?;
    w.csv("contour_gamma.csv", &gam)?;
    w.json("thresholds.json", &report)?;
    w.bytes("contour.txt", text.as_bytes())?;
    w.finish("contour", cfg)?;
    Ok(Outcome {
        code: EXIT_OK,
        stdout: text,
    })
}

fn cmd_benchmark(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    if cfg.run.estimates.is_some() {
        return Err(Error::Config("benchmarking needs the data, not prior estimates".into()));
    }
    let a = analysis(cfg, true)?;
    let b = a.benchmark.expect("benchmark requested");
    let text = benchmark_text(&b);
    let mut w = Writer::new(&cfg.run.out)?;
    w.json("benchmark.json", &b)?;
    w.bytes("benchmark.txt", text.as_bytes())?;
    w.finish("benchmark", cfg)?;
    Ok(Outcome {
        code: EXIT_OK,
        stdout: text,
    })
}

#[derive(Debug, Serialize)]
struct ReplicationRow {
    rep: usize,
    lambda_s: f64,
    gamma_s: f64,
    se_lambda_s: f64,
    se_gamma_s: f64,
    lambda_ci_lo: f64,
    lambda_ci_hi: f64,
    gamma_ci_lo: f64,
    gamma_ci_hi: f64,
    stoye_lo: Option<f64>,
    stoye_hi: Option<f64>,
}

fn coverage_text(s: &CoverageSummary) -> String {
    let mut t = String::new();
    let tr = &s.truth;
    let _ = writeln!(t, "estimand: {}   n = {}   replications = {}   failed = {}", tr.estimand, s.n, s.reps, s.failures.len());
    let _ = writeln!(
        t,
        "truth: lambda = {}, lambda_s = {}, gamma = {}, gamma_s = {}, theta = {}",
        g(tr.lambda),
        g(tr.lambda_s),
        g(tr.gamma),
        g(tr.gamma_s),
        g(tr.theta)
    );
    let _ = writeln!(t, "sensitivity at truth: {}", sens_text(&s.config));
    let rows = [
        (format!("lambda in bound CI ({:.0}%)", 100.0 * (1.0 - 2.0 * s.tau)), s.lambda_in_bound_ci),
        ("[lambda-, lambda+] in bound CI".to_string(), s.lambda_bounds_in_ci),
        ("gamma in bound CI".to_string(), s.gamma_in_bound_ci),
        ("[gamma-, gamma+] in bound CI".to_string(), s.gamma_bounds_in_ci),
        ("lambda_s in conventional CI".to_string(), s.lambda_s_in_conventional),
        (format!("lambda in shrinkage CI ({:.0}%)", 100.0 * (1.0 - s.stoye_tau)), s.lambda_in_stoye),
    ];
    for (name, r) in rows {
        let _ = writeln!(t, "{name:<36} {:.4}  (mc s.e. {:.4}, {}/{})", r.rate, r.mc_se, r.hits, r.total);
    }
    t
}

fn cmd_simulate(cfg: &RunConfig, rho_abs: Option<f64>) -> Result<Outcome> {
    prepare(cfg)?;
    let spec = cfg.dgp.resolve(cfg.run.estimand)?;
    let opts = CoverageOptions {
        reps: cfg.simulate.reps,
        tau: cfg.run.tau,
        stoye_tau: cfg.run.stoye_tau,
        folds: cfg.run.k_folds,
        learner: cfg.learner.clone(),
        rho_abs: rho_abs.or(cfg.simulate.rho_abs),
    };
    let summary = coverage_study(&spec, &opts)?;
    let rows: Vec<ReplicationRow> = summary
        .records
        .iter()
        .map(|r| ReplicationRow {
            rep: r.rep,
            lambda_s: r.estimates.lambda_s,
            gamma_s: r.estimates.gamma_s,
            se_lambda_s: r.estimates.se_lambda(),
            se_gamma_s: r.estimates.se_gamma(),
            lambda_ci_lo: r.lambda_ci.0,
            lambda_ci_hi: r.lambda_ci.1,
            gamma_ci_lo: r.gamma_ci.0,
            gamma_ci_hi: r.gamma_ci.1,
            stoye_lo: r.stoye_lambda.map(|c| c.0),
            stoye_hi: r.stoye_lambda.map(|c| c.1),
        })
        .collect();
    let text = coverage_text(&summary);
    let mut w = Writer::new(&cfg.run.out)?;
    w.json("coverage.json", &summary)?;
    w.csv("replications.csv", &rows)?;
    w.bytes("coverage.txt", text.as_bytes())?;
    w.finish("simulate", cfg)?;
    Ok(Outcome {
        code: EXIT_OK,
        stdout: text,
    })
}

fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    prepare(cfg)?;
    let spec = cfg.dgp.resolve(cfg.run.estimand)?;
    let sim = generate(&spec)?;
    let truth = oracle_truth(&spec)?;
    let mut data = Vec::new();
    sim.data.to_csv_writer(&mut data)?;
    let mut omitted = String::from("a\n");
    for a in &sim.omitted {
        let _ = writeln!(omitted, "{a}");
    }
    let spec_toml = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut w = Writer::new(&cfg.run.out)?;
    w.bytes("data.csv", &data)?;
    w.bytes("omitted.csv", omitted.as_bytes())?;
    w.bytes("dgp.toml", spec_toml.as_bytes())?;
    w.json("truth.json", &truth)?;
    w.finish("generate", cfg)?;
    let text = format!(
        "wrote {} rows to {}\ntruth: theta = {}, lambda = {}, gamma = {}, lambda_s = {}, gamma_s = {}, C_alpha = {}, C_Y = {}, C_D = {}\n",
        spec.n,
        cfg.run.out.join("data.csv").display(),
        g(truth.theta),
        g(truth.lambda),
        g(truth.gamma),
        g(truth.lambda_s),
        g(truth.gamma_s),
        g(truth.c_alpha),
        g(truth.c_y),
        g(truth.c_d)
    );
    Ok(Outcome {
        code: EXIT_OK,
        stdout: text,
    })
}

fn cmd_check_theorem1(ll: f64, lh: f64, gl: f64, gh: f64, json: bool) -> Result<Outcome> {
    for (name, v) in [("lambda-lo", ll), ("lambda-hi", lh), ("gamma-lo", gl), ("gamma-hi", gh)] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("--{name} must be finite")));
        }
    }
    if ll > lh || gl > gh {
        return Err(Error::invalid("lower bounds must not exceed upper bounds"));
    }
    let b = theta_bounds(ll, lh, gl, gh);
    let stdout = if json {
        let mut s = serde_json::to_string_pretty(&b)?;
        s.push('\n');
        s
    } else {
        let mut s = format!("theta set: {}\ncase: {}\n", fmt_theta_set(&b), b.case.label());
        if b.first_stage_failure {
            s.push_str("FIRST-STAGE FAILURE: the gamma bounds include zero.\n");
        }
        s
    };
    Ok(Outcome {
        code: if b.first_stage_failure { EXIT_FIRST_STAGE } else { EXIT_OK },
        stdout,
    })
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Estimate(run) => cmd_estimate(&load_config(&run)?),
        Command::Bounds { run, sens } => {
            let mut cfg = load_config(&run)?;
            apply_sens(&mut cfg, &sens);
            cmd_bounds(&cfg)
        }
        Command::Ci { run, sens, grids } => {
            let mut cfg = load_config(&run)?;
            apply_sens(&mut cfg, &sens);
            apply_grids(&mut cfg, &grids);
            cmd_ci(&cfg)
        }
        Command::Contour { run, sens, grids } => {
            let mut cfg = load_config(&run)?;
            apply_sens(&mut cfg, &sens);
            apply_grids(&mut cfg, &grids);
            cmd_contour(&cfg)
        }
        Command::Benchmark { run, sens } => {
            let mut cfg = load_config(&run)?;
            apply_sens(&mut cfg, &sens);
            cmd_benchmark(&cfg)
        }
        Command::Simulate { run, dgp, rho_abs } => {
            // `--reps` counts Monte Carlo replications here.
            let mut cfg = load_config(&RunArgs { reps: None, ..run.clone() })?;
            if let Some(r) = run.reps {
                cfg.simulate.reps = r;
            }
            apply_dgp(&mut cfg, &dgp);
            if let Some(s) = run.seed {
                cfg.dgp.seed = s;
            }
            cmd_simulate(&cfg, rho_abs)
        }
        Command::Generate { run, dgp } => {
            let mut cfg = load_config(&run)?;
            apply_dgp(&mut cfg, &dgp);
            if let Some(s) = run.seed {
                cfg.dgp.seed = s;
            }
            cmd_generate(&cfg)
        }
        Command::CheckTheorem1 {
            lambda_lo,
            lambda_hi,
            gamma_lo,
            gamma_hi,
            json,
        } => cmd_check_theorem1(lambda_lo, lambda_hi, gamma_lo, gamma_hi, json),
    }
}
