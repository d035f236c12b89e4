//! Shared data types: the estimation input, short-version estimates,
//! sensitivity settings, identification sets and CI reports.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric 5x5 matrix stored row-major, ordered as
/// `(lambda_s, gamma_s, v_s2, sigma_ys2, sigma_ds2)`.
pub type Mat5 = [[f64; 5]; 5];

pub(crate) fn quad_form(m: &Mat5, a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut acc = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            acc += a[i] * m[i][j] * b[j];
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Late,
    Latt,
    Plivm,
}

impl Estimand {
    /// LATE and LATT require a binary instrument and treatment.
    pub fn is_binary_iv(self) -> bool {
        matches!(self, Estimand::Late | Estimand::Latt)
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Late => "late",
            Estimand::Latt => "latt",
            Estimand::Plivm => "plivm",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "late" => Ok(Estimand::Late),
            "latt" => Ok(Estimand::Latt),
            "plivm" => Ok(Estimand::Plivm),
            other => Err(Error::invalid(format!(
                "unknown estimand `{other}` (expected late, latt or plivm)"
            ))),
        }
    }
}

/// Outcome, treatment, instrument and covariates for `n` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    /// `n x p` covariate matrix.
    pub x: DMatrix<f64>,
    /// Covariate column labels, length `p`.
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        d: Vec<f64>,
        z: Vec<f64>,
        x: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.len() != n || x.nrows() != n {
            return Err(Error::invalid(format!(
                "length mismatch: y={}, d={}, z={}, x rows={}",
                n,
                d.len(),
                z.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::invalid(format!(
                "{} covariate names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        Ok(Dataset { y, d, z, x, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    /// Copy of the dataset with the named covariate columns removed.
    pub fn without_columns(&self, drop: &[String]) -> Result<Dataset> {
        for name in drop {
            if self.column_index(name).is_none() {
                return Err(Error::MissingColumn(name.clone()));
            }
        }
        let keep: Vec<usize> = (0..self.p())
            .filter(|&j| !drop.contains(&self.names[j]))
            .collect();
        let x = self.x.select_columns(keep.iter());
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        Ok(Dataset {
            y: self.y.clone(),
            d: self.d.clone(),
            z: self.z.clone(),
            x,
            names,
        })
    }

    /// Reads a CSV with a header row. Columns `y`, `d`, `z` are bound by
    /// name; every other column is a covariate, kept in file order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (iy, id, iz) = (find("y")?, find("d")?, find("z")?);
        let cov: Vec<usize> = (0..headers.len())
            .filter(|&j| j != iy && j != id && j != iz)
            .collect();

        let (mut y, mut d, mut z) = (Vec::new(), Vec::new(), Vec::new());
        let mut xs: Vec<f64> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::invalid(format!(
                        "row {row}, column `{}`: cannot parse `{raw}` as a number (missing values are not supported)",
                        headers[j]
                    ))
                })
            };
            y.push(cell(iy)?);
            d.push(cell(id)?);
            z.push(cell(iz)?);
            for &j in &cov {
                xs.push(cell(j)?);
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n, cov.len(), &xs);
        let names = cov.iter().map(|&j| headers[j].clone()).collect();
        Dataset::new(y, d, z, x, names)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::invalid(format!("cannot open {}: {e}", path.as_ref().display()))
        })?;
        Dataset::from_csv_reader(std::io::BufReader::new(f))
    }

    /// Writes `y,d,z,<covariates>` using shortest round-trip float formatting.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "d".to_string(), "z".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![
                self.y[i].to_string(),
                self.d[i].to_string(),
                self.z[i].to_string(),
            ];
            rec.extend((0..self.p()).map(|j| self.x[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(f))
    }
}

/// Returns every invariant violation; `Ok(())` iff there are none.
pub fn validate(ds: &Dataset, estimand: Estimand) -> std::result::Result<(), Vec<String>> {
    let mut issues = Vec::new();
    let n = ds.y.len();
    if ds.d.len() != n || ds.z.len() != n || ds.x.nrows() != n {
        issues.push(format!(
            "length mismatch: y={}, d={}, z={}, x rows={}",
            n,
            ds.d.len(),
            ds.z.len(),
            ds.x.nrows()
        ));
        return Err(issues);
    }
    if n < 2 {
        issues.push(format!("need at least 2 observations, got {n}"));
    }
    for (label, v) in [("y", &ds.y), ("d", &ds.d), ("z", &ds.z)] {
        for (i, val) in v.iter().enumerate() {
            if !val.is_finite() {
                issues.push(format!("{label} is non-finite ({val}) at row {i}"));
            }
        }
    }
    for j in 0..ds.p() {
        for i in 0..n {
            let val = ds.x[(i, j)];
            if !val.is_finite() {
                issues.push(format!(
                    "covariate `{}` is non-finite ({val}) at row {i}",
                    ds.names[j]
                ));
            }
        }
    }
    if estimand.is_binary_iv() {
        if let Some(i) = ds.z.iter().position(|&v| v.is_finite() && v != 0.0 && v != 1.0) {
            issues.push(format!(
                "instrument must be binary for {estimand}: z = {} at row {i}",
                ds.z[i]
            ));
        }
        if let Some(i) = ds.d.iter().position(|&v| v.is_finite() && v != 0.0 && v != 1.0) {
            issues.push(format!(
                "treatment must be binary for {estimand}: d = {} at row {i}",
                ds.d[i]
            ));
        }
        if estimand == Estimand::Latt {
            let ones = ds.z.iter().filter(|&&v| v == 1.0).count();
            if ones == 0 || ones == n {
                issues.push("LATT needs both instrument arms (P(Z=1) in (0,1))".to_string());
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

/// Covariate groups for benchmarking, one `name: col1,col2,...` per line.
/// Blank lines and `#` comments are ignored.
pub fn parse_groups(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, cols) = line.split_once(':').ok_or_else(|| {
            Error::invalid(format!(
                "group file line {}: expected `name: col1,col2`",
                lineno + 1
            ))
        })?;
        let cols: Vec<String> = cols
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if cols.is_empty() {
            return Err(Error::invalid(format!(
                "group file line {}: group `{}` has no columns",
                lineno + 1,
                name.trim()
            )));
        }
        out.push((name.trim().to_string(), cols));
    }
    Ok(out)
}

/// The five short-version parameters, their approximate covariance and the
/// per-observation influence contributions they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortEstimates {
    pub estimand: Estimand,
    pub lambda_s: f64,
    pub gamma_s: f64,
    /// `lambda_s / gamma_s`; `None` when `|gamma_s| < 1e-12`.
    pub theta_s: Option<f64>,
    pub v_s2: f64,
    pub sigma_ys2: f64,
    pub sigma_ds2: f64,
    /// Approximate covariance of `sqrt(n) * (estimates - truth)`.
    pub omega: Mat5,
    pub n: usize,
    /// `n` rows of influence-function values whose second moment is `omega`.
    #[serde(skip)]
    pub scores: Vec<[f64; 5]>,
}

impl ShortEstimates {
    pub fn params(&self) -> [f64; 5] {
        [
            self.lambda_s,
            self.gamma_s,
            self.v_s2,
            self.sigma_ys2,
            self.sigma_ds2,
        ]
    }

    pub fn se_lambda(&self) -> f64 {
        (self.omega[0][0].max(0.0) / self.n as f64).sqrt()
    }

    pub fn se_gamma(&self) -> f64 {
        (self.omega[1][1].max(0.0) / self.n as f64).sqrt()
    }

    /// Delta-method standard error of `theta_s`.
    pub fn se_theta(&self) -> Option<f64> {
        let theta = self.theta_s?;
        let c = [1.0, -theta, 0.0, 0.0, 0.0];
        let var = quad_form(&self.omega, &c, &c) / (self.gamma_s * self.gamma_s);
        Some((var.max(0.0) / self.n as f64).sqrt())
    }

    /// `S_Y = sqrt(sigma_ys2 * v_s2)`.
    pub fn s_y(&self) -> f64 {
        (self.sigma_ys2.max(0.0) * self.v_s2.max(0.0)).sqrt()
    }

    /// `S_D = sqrt(sigma_ds2 * v_s2)`.
    pub fn s_d(&self) -> f64 {
        (self.sigma_ds2.max(0.0) * self.v_s2.max(0.0)).sqrt()
    }
}

/// Strength of the omitted variable, expressed unit-free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    pub c_alpha: f64,
    pub c_y: f64,
    pub c_d: f64,
    pub rho_y_abs: f64,
    pub rho_d_abs: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            c_alpha: 0.0,
            c_y: 0.0,
            c_d: 0.0,
            rho_y_abs: 1.0,
            rho_d_abs: 1.0,
        }
    }
}

impl SensitivityConfig {
    pub fn new(c_alpha: f64, c_y: f64, c_d: f64, rho_y_abs: f64, rho_d_abs: f64) -> Result<Self> {
        let cfg = SensitivityConfig {
            c_alpha,
            c_y,
            c_d,
            rho_y_abs,
            rho_d_abs,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("c_alpha", self.c_alpha),
            ("c_y", self.c_y),
            ("c_d", self.c_d),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("rho_y_abs", self.rho_y_abs), ("rho_d_abs", self.rho_d_abs)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// `|rho_Y| * C_Y * C_alpha`.
    pub fn zeta_y(&self) -> f64 {
        self.rho_y_abs * self.c_y * self.c_alpha
    }

    /// `|rho_D| * C_D * C_alpha`.
    pub fn zeta_d(&self) -> f64 {
        self.rho_d_abs * self.c_d * self.c_alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Identification set for theta_0 implied by bounds on lambda and gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaSet {
    Interval { lo: f64, hi: f64 },
    /// `(-inf, left_hi] U [right_lo, inf)`.
    UnionOfRays { left_hi: f64, right_lo: f64 },
    WholeLine,
    /// A gamma endpoint is (numerically) zero; one side of the set is undefined.
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremCase {
    GammaPosLambdaPos,
    GammaPosLambdaNeg,
    GammaPosLambdaMixed,
    GammaNegLambdaPos,
    GammaNegLambdaNeg,
    GammaNegLambdaMixed,
    GammaMixedLambdaPos,
    GammaMixedLambdaNeg,
    GammaMixedLambdaMixed,
    GammaEndpointZero,
}

impl TheoremCase {
    pub fn label(self) -> &'static str {
        match self {
            TheoremCase::GammaPosLambdaPos => "1a: gamma > 0, lambda > 0",
            TheoremCase::GammaPosLambdaNeg => "1b: gamma > 0, lambda < 0",
            TheoremCase::GammaPosLambdaMixed => "1c: gamma > 0, lambda bounds of mixed sign",
            TheoremCase::GammaNegLambdaPos => "2a: gamma < 0, lambda > 0",
            TheoremCase::GammaNegLambdaNeg => "2b: gamma < 0, lambda < 0",
            TheoremCase::GammaNegLambdaMixed => "2c: gamma < 0, lambda bounds of mixed sign",
            TheoremCase::GammaMixedLambdaPos => "3a: gamma bounds of mixed sign, lambda > 0",
            TheoremCase::GammaMixedLambdaNeg => "3b: gamma bounds of mixed sign, lambda < 0",
            TheoremCase::GammaMixedLambdaMixed => "3c: gamma and lambda bounds both of mixed sign",
            TheoremCase::GammaEndpointZero => "gamma bound endpoint equals zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub set: ThetaSet,
    pub case: TheoremCase,
    /// Gamma bounds do not share a strict sign: report, do not interpret.
    pub first_stage_failure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub theta: ThetaBounds,
}

impl BoundSet {
    pub fn delta_lambda(&self) -> f64 {
        self.lambda_hi - self.lambda_lo
    }

    pub fn delta_gamma(&self) -> f64 {
        self.gamma_hi - self.gamma_lo
    }
}

/// Endpoint of a test-inverted confidence set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SetBound {
    Finite(f64),
    /// No sign change inside the searched range on this side.
    Unbounded,
}

impl SetBound {
    pub fn value(self) -> Option<f64> {
        match self {
            SetBound::Finite(v) => Some(v),
            SetBound::Unbounded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaCi {
    Empty,
    Range {
        lower: SetBound,
        upper: SetBound,
        /// The accepted grid points between the endpoints are not contiguous.
        disconnected: bool,
    },
}

impl ThetaCi {
    pub fn finite(&self) -> Option<Interval> {
        match *self {
            ThetaCi::Range {
                lower: SetBound::Finite(lo),
                upper: SetBound::Finite(hi),
                ..
            } => Some(Interval::new(lo, hi)),
            _ => None,
        }
    }
}

/// Stoye-shrinkage OVB-adjusted CI for one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoyeRecord {
    /// `None` when the endpoints cross.
    pub ci: Option<Interval>,
    pub z_l_star: f64,
    pub z_u_star: f64,
    pub delta_star: f64,
    pub min_objective: f64,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoyeThetaRecord {
    pub ci: ThetaCi,
    /// Averages over the inversion grid points inside the reported set.
    pub z_l_star: f64,
    pub z_u_star: f64,
    pub delta_star: f64,
    pub min_objective: f64,
    pub rho_hat: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiCurveRow {
    pub t: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub se_lo: f64,
    pub se_hi: f64,
    /// `phi_lo - z * se_lo`.
    pub ci_lo: f64,
    /// `phi_hi + z * se_hi`.
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIReport {
    pub tau: f64,
    /// `[lambda^-_tau, lambda^+_{1-tau}]`.
    pub lambda_ci: Interval,
    pub gamma_ci: Interval,
    pub theta0_ci: ThetaCi,
    /// Conventional `(1 - 2 tau)` CIs of the short estimates.
    pub lambda_conventional: Interval,
    pub gamma_conventional: Interval,
    pub theta_conventional: ThetaCi,
    pub stoye_tau: f64,
    pub stoye_lambda: StoyeRecord,
    pub stoye_gamma: StoyeRecord,
    pub stoye_theta: StoyeThetaRecord,
    pub phi_curve: Vec<PhiCurveRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(z: Vec<f64>, d: Vec<f64>) -> Dataset {
        let n = z.len();
        Dataset::new(
            vec![1.0; n],
            d,
            z,
            DMatrix::from_element(n, 1, 0.0),
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn three_rows_binary_late_is_valid() {
        let ds = tiny(vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0]);
        assert!(validate(&ds, Estimand::Late).is_ok());
    }

    #[test]
    fn fractional_instrument_rejected_for_late() {
        let ds = tiny(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]);
        let errs = validate(&ds, Estimand::Late).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("instrument must be binary")));
        assert!(validate(&ds, Estimand::Plivm).is_ok());
    }

    #[test]
    fn nan_outcome_names_row() {
        let mut ds = tiny(vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]);
        ds.y[2] = f64::NAN;
        let errs = validate(&ds, Estimand::Late).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("row 2"), "{}", errs[0]);
    }

    #[test]
    fn validate_is_pure() {
        let mut ds = tiny(vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 0.3]);
        ds.x[(1, 0)] = f64::INFINITY;
        assert_eq!(validate(&ds, Estimand::Late), validate(&ds, Estimand::Late));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let ds = Dataset {
            y: vec![1.0, 2.0],
            d: vec![0.0],
            z: vec![0.0, 1.0],
            x: DMatrix::zeros(2, 0),
            names: vec![],
        };
        let errs = validate(&ds, Estimand::Plivm).unwrap_err();
        assert!(errs[0].contains("length mismatch"));
    }

    #[test]
    fn csv_binds_columns_by_name() {
        let text = "age,z,y,black,d\n30,1,100.5,0,1\n41,0,-3,1,0\n";
        let ds = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(ds.names, vec!["age", "black"]);
        assert_eq!(ds.y, vec![100.5, -3.0]);
        assert_eq!(ds.z, vec![1.0, 0.0]);
        assert_eq!(ds.x[(1, 0)], 41.0);
    }

    #[test]
    fn csv_missing_column_is_named() {
        let text = "y,d,x1\n1,0,3\n";
        match Dataset::from_csv_reader(text.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "z"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_empty_cell_is_rejected() {
        let text = "y,d,z\n1,,0\n";
        assert!(Dataset::from_csv_reader(text.as_bytes()).is_err());
    }

    #[test]
    fn groups_parse() {
        let g = parse_groups("# comment\nage: age_2, age_3\n\nwork:wkless13\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0, "age");
        assert_eq!(g[0].1, vec!["age_2", "age_3"]);
        assert!(parse_groups("nogroup").is_err());
        assert!(parse_groups("a:").is_err());
    }

    #[test]
    fn sensitivity_ranges() {
        assert!(SensitivityConfig::new(0.1, 0.2, 0.3, 1.0, 0.5).is_ok());
        assert!(SensitivityConfig::new(-0.1, 0.2, 0.3, 1.0, 0.5).is_err());
        assert!(SensitivityConfig::new(0.1, 0.2, 0.3, 1.5, 0.5).is_err());
        let cfg = SensitivityConfig::new(0.5, 0.2, 0.4, 0.5, 1.0).unwrap();
        assert!((cfg.zeta_y() - 0.05).abs() < 1e-15);
        assert!((cfg.zeta_d() - 0.2).abs() < 1e-15);
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn csv_roundtrip_is_bit_exact(
                rows in proptest::collection::vec(
                    (any::<f64>(), 0u8..2, 0u8..2, any::<f64>(), -1e6f64..1e6), 1..20)
            ) {
                let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
                let n = rows.len();
                let y: Vec<f64> = rows.iter().map(|r| finite(r.0)).collect();
                let d: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
                let z: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
                let mut xs = Vec::new();
                for r in &rows { xs.push(finite(r.3)); xs.push(r.4); }
                let x = DMatrix::from_row_slice(n, 2, &xs);
                let ds = Dataset::new(y, d, z, x, vec!["a".into(), "b".into()]).unwrap();
                let mut buf = Vec::new();
                ds.to_csv_writer(&mut buf).unwrap();
                let back = Dataset::from_csv_reader(buf.as_slice()).unwrap();
                for i in 0..n {
                    prop_assert_eq!(back.y[i].to_bits(), ds.y[i].to_bits());
                    prop_assert_eq!(back.x[(i, 0)].to_bits(), ds.x[(i, 0)].to_bits());
                    prop_assert_eq!(back.x[(i, 1)].to_bits(), ds.x[(i, 1)].to_bits());
                }
            }
        }
    }
}
