//! Run configuration: one TOML file with `[run]`, `[learner]`,
//! `[sensitivity]`, `[grids]`, `[simulate]` and `[dgp]` sections. Command
//! line flags are applied on top by the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossfit::{DEFAULT_FOLDS, DEFAULT_REPS};
use crate::error::{Error, Result};
use crate::inference::CiOptions;
use crate::learners::LearnerSpec;
use crate::model::{Estimand, SensitivityConfig};
use crate::sensitivity::BenchmarkStrength;
use crate::simdgp::{jtpa_like_spec, random_iv_spec, random_plivm_spec, DgpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub estimand: Estimand,
    pub data: Option<PathBuf>,
    /// Prior `estimates.json`; skips estimation when set.
    pub estimates: Option<PathBuf>,
    pub k_folds: usize,
    /// Sample splits aggregated by the median method.
    pub reps: usize,
    pub seed: u64,
    pub tau: f64,
    pub stoye_tau: f64,
    pub out: PathBuf,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            estimand: Estimand::Late,
            data: None,
            estimates: None,
            k_folds: DEFAULT_FOLDS,
            reps: DEFAULT_REPS,
            seed: 0,
            tau: 0.025,
            stoye_tau: 0.05,
            out: PathBuf::from("ovb-out"),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Use `c_alpha`, `c_y`, `c_d` as given.
    #[default]
    Direct,
    /// Use the largest benchmark values over the covariate groups.
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDef {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub calibrate: Calibration,
    pub c_alpha: f64,
    pub c_y: f64,
    pub c_d: f64,
    pub rho_y: f64,
    pub rho_d: f64,
    /// Group file, one `name: col1, col2` per line.
    pub groups_file: Option<PathBuf>,
    pub groups: Vec<GroupDef>,
    pub k_alpha: f64,
    pub k_y: f64,
    pub k_d: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            calibrate: Calibration::Direct,
            c_alpha: 0.0,
            c_y: 0.0,
            c_d: 0.0,
            rho_y: 1.0,
            rho_d: 1.0,
            groups_file: None,
            groups: Vec::new(),
            k_alpha: 1.0,
            k_y: 1.0,
            k_d: 1.0,
        }
    }
}

impl SensitivitySection {
    pub fn direct(&self) -> Result<SensitivityConfig> {
        SensitivityConfig::new(self.c_alpha, self.c_y, self.c_d, self.rho_y, self.rho_d)
    }

    pub fn strength(&self) -> BenchmarkStrength {
        BenchmarkStrength {
            k_alpha: self.k_alpha,
            k_y: self.k_y,
            k_d: self.k_d,
        }
    }

    /// Inline groups followed by those read from `groups_file`.
    pub fn resolve_groups(&self) -> Result<Vec<(String, Vec<String>)>> {
        let mut out: Vec<(String, Vec<String>)> =
            self.groups.iter().map(|g| (g.name.clone(), g.columns.clone())).collect();
        if let Some(path) = &self.groups_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read groups file {}: {e}", path.display())))?;
            out.extend(crate::model::parse_groups(&text)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    /// Points per segment of the theta inversion.
    pub resolution: usize,
    pub stoye_resolution: usize,
    pub phi_points: usize,
    pub zeta_max: f64,
    pub zeta_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let ci = CiOptions::default();
        GridSection {
            t_min: None,
            t_max: None,
            resolution: ci.resolution,
            stoye_resolution: ci.stoye_resolution,
            phi_points: ci.phi_points,
            zeta_max: 1.0,
            zeta_points: 101,
        }
    }
}

impl GridSection {
    pub fn t_range(&self) -> Result<Option<(f64, f64)>> {
        match (self.t_min, self.t_max) {
            (None, None) => Ok(None),
            (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => Ok(Some((lo, hi))),
            (Some(lo), Some(hi)) => Err(Error::Config(format!("invalid t range [{lo}, {hi}]"))),
            _ => Err(Error::Config("t_min and t_max must be given together".into())),
        }
    }

    pub fn zetas(&self) -> Result<Vec<f64>> {
        if !(self.zeta_max.is_finite() && self.zeta_max > 0.0) || self.zeta_points < 2 {
            return Err(Error::Config("zeta grid needs zeta_max > 0 and zeta_points >= 2".into()));
        }
        let m = (self.zeta_points - 1) as f64;
        Ok((0..self.zeta_points).map(|i| self.zeta_max * i as f64 / m).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Monte Carlo replications.
    pub reps: usize,
    /// `|rho|` used for the bounds; the true values when absent.
    pub rho_abs: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            reps: 500,
            rho_abs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpPreset {
    #[default]
    JtpaLike,
    RandomIv,
    RandomPlivm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSection {
    pub preset: DgpPreset,
    /// Full table specification; overrides `preset`.
    pub file: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    /// Seed of the random tables for the random presets.
    pub table_seed: u64,
    pub x_levels: Vec<usize>,
    pub a_levels: usize,
}

impl Default for DgpSection {
    fn default() -> Self {
        DgpSection {
            preset: DgpPreset::JtpaLike,
            file: None,
            n: 2000,
            seed: 1,
            table_seed: 1,
            x_levels: vec![2, 2],
            a_levels: 2,
        }
    }
}

impl DgpSection {
    pub fn resolve(&self, estimand: Estimand) -> Result<DgpSpec> {
        let spec = match &self.file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read DGP file {}: {e}", path.display())))?;
                let mut spec: DgpSpec =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                spec.n = self.n;
                spec.seed = self.seed;
                spec
            }
            None => {
                let mut spec = match (self.preset, estimand) {
                    (DgpPreset::JtpaLike, Estimand::Plivm) | (DgpPreset::RandomIv, Estimand::Plivm) => {
                        return Err(Error::Config(format!(
                            "preset {:?} generates a binary-treatment design; use random_plivm for plivm",
                            self.preset
                        )))
                    }
                    (DgpPreset::RandomPlivm, Estimand::Late | Estimand::Latt) => {
                        return Err(Error::Config("preset random_plivm only supports the plivm estimand".into()))
                    }
                    (DgpPreset::JtpaLike, e) => jtpa_like_spec(e, self.n, self.seed),
                    (DgpPreset::RandomIv, e) => random_iv_spec(e, &self.x_levels, self.a_levels, self.n, self.table_seed),
                    (DgpPreset::RandomPlivm, _) => random_plivm_spec(&self.x_levels, self.a_levels, self.n, self.table_seed),
                };
                spec.seed = self.seed;
                spec
            }
        };
        if spec.estimand != estimand {
            return Err(Error::Config(format!(
                "DGP is specified for {} but the run estimand is {estimand}",
                spec.estimand
            )));
        }
        spec.check()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub learner: LearnerSpec,
    pub sensitivity: SensitivitySection,
    pub grids: GridSection,
    pub simulate: SimulateSection,
    pub dgp: DgpSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        rebase(&mut cfg.run.data);
        rebase(&mut cfg.run.estimates);
        rebase(&mut cfg.sensitivity.groups_file);
        rebase(&mut cfg.dgp.file);
        Ok(cfg)
    }

    /// Checks that do not touch the file system.
    pub fn check(&self) -> Result<()> {
        let r = &self.run;
        if r.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", r.k_folds)));
        }
        if r.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        for (name, tau) in [("tau", r.tau), ("stoye_tau", r.stoye_tau)] {
            if !(tau > 0.0 && tau <= 0.5) {
                return Err(Error::Config(format!("{name} must lie in (0, 0.5], got {tau}")));
            }
        }
        if r.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.learner.check().map_err(|e| Error::Config(format!("learner: {e}")))?;
        self.sensitivity
            .direct()
            .map_err(|e| Error::Config(format!("sensitivity: {e}")))?;
        self.grids.t_range()?;
        if self.grids.resolution < 2 || self.grids.stoye_resolution < 2 || self.grids.phi_points < 2 {
            return Err(Error::Config("grid resolutions must be >= 2".into()));
        }
        if self.simulate.reps == 0 {
            return Err(Error::Config("simulate.reps must be >= 1".into()));
        }
        if let Some(r) = self.simulate.rho_abs {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("simulate.rho_abs must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn ci_options(&self) -> Result<CiOptions> {
        Ok(CiOptions {
            tau: self.run.tau,
            stoye_tau: self.run.stoye_tau,
            t_range: self.grids.t_range()?,
            resolution: self.grids.resolution,
            stoye_resolution: self.grids.stoye_resolution,
            phi_points: self.grids.phi_points,
        })
    }

    /// Paths that must exist for the run, with the key naming each.
    pub fn check_paths(&self) -> Result<()> {
        let paths = [
            ("run.data", &self.run.data),
            ("run.estimates", &self.run.estimates),
            ("sensitivity.groups_file", &self.sensitivity.groups_file),
            ("dgp.file", &self.dgp.file),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.check().unwrap();
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            [run]
            estimand = "latt"
            k_folds = 3
            seed = 7
            [learner]
            kind = "saturated_cells"
            [sensitivity]
            calibrate = "benchmark"
            c_y = 0.1
            groups = [{ name = "edu", columns = ["x1"] }]
            [grids]
            t_min = -5.0
            t_max = 5.0
            [dgp]
            preset = "random_iv"
            x_levels = [3]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.run.estimand, Estimand::Latt);
        assert_eq!(cfg.run.k_folds, 3);
        assert_eq!(cfg.sensitivity.calibrate, Calibration::Benchmark);
        assert_eq!(cfg.sensitivity.resolve_groups().unwrap()[0].1, vec!["x1".to_string()]);
        assert_eq!(cfg.grids.t_range().unwrap(), Some((-5.0, 5.0)));
        let spec = cfg.dgp.resolve(Estimand::Latt).unwrap();
        assert_eq!(spec.x_levels, vec![3]);
        cfg.check().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[run]\nfolds = 3").is_err());
        let cfg = RunConfig::from_toml_str("[run]\nk_folds = 1").unwrap();
        assert!(cfg.check().is_err());
        let cfg = RunConfig::from_toml_str("[run]\ntau = 0.7").unwrap();
        assert!(cfg.check().is_err());
        let cfg = RunConfig::from_toml_str("[grids]\nt_min = 1.0").unwrap();
        assert!(cfg.check().is_err());
    }

    #[test]
    fn preset_must_match_estimand() {
        let d = DgpSection::default();
        assert!(d.resolve(Estimand::Plivm).is_err());
        let d = DgpSection {
            preset: DgpPreset::RandomPlivm,
            ..DgpSection::default()
        };
        assert!(d.resolve(Estimand::Plivm).is_ok());
    }

    #[test]
    fn zeta_grid() {
        let g = GridSection {
            zeta_max: 0.5,
            zeta_points: 3,
            ..GridSection::default()
        };
        assert_eq!(g.zetas().unwrap(), vec![0.0, 0.25, 0.5]);
    }
}
