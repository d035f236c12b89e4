//! Nuisance regressions used inside cross-fitting.

mod cells;
mod forest;
mod ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cells::CellMeans;
pub use forest::Forest;
pub use ridge::RidgeFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RandomForest,
    Ridge,
    SaturatedCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Mean,
    /// Binary targets; predictions are clipped to `[clip, 1 - clip]`.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub trees: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` picks a default from the target kind.
    pub mtry: Option<usize>,
    pub ridge_penalty: f64,
    pub seed: u64,
    pub bootstrap: bool,
    pub clip: f64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            kind: LearnerKind::RandomForest,
            trees: 200,
            min_leaf: 5,
            max_depth: None,
            mtry: None,
            ridge_penalty: 0.0,
            seed: 0,
            bootstrap: true,
            clip: 0.01,
        }
    }
}

impl LearnerSpec {
    pub fn saturated() -> Self {
        LearnerSpec {
            kind: LearnerKind::SaturatedCells,
            ..LearnerSpec::default()
        }
    }

    pub fn ridge(penalty: f64) -> Self {
        LearnerSpec {
            kind: LearnerKind::Ridge,
            ridge_penalty: penalty,
            ..LearnerSpec::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LearnerSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.kind == LearnerKind::RandomForest && self.trees == 0 {
            return Err(Error::invalid("trees must be positive"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be positive"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::invalid("max_depth must be positive"));
        }
        if self.mtry == Some(0) {
            return Err(Error::invalid("mtry must be positive"));
        }
        if !(self.ridge_penalty.is_finite() && self.ridge_penalty >= 0.0) {
            return Err(Error::invalid("ridge_penalty must be finite and >= 0"));
        }
        if !(0.0..0.5).contains(&self.clip) {
            return Err(Error::invalid("clip must lie in [0, 0.5)"));
        }
        Ok(())
    }

    fn resolved_mtry(&self, q: usize, target: TargetKind) -> Result<usize> {
        match self.mtry {
            Some(m) if m > q => Err(Error::invalid(format!(
                "mtry = {m} exceeds the {q} available feature columns"
            ))),
            Some(m) => Ok(m),
            None => Ok(match target {
                TargetKind::Probability => (q as f64).sqrt().ceil() as usize,
                TargetKind::Mean => (q / 3).max(1),
            }),
        }
    }
}

pub fn clip_probability(p: f64, clip: f64) -> f64 {
    p.clamp(clip, 1.0 - clip)
}

#[derive(Debug, Clone)]
enum Model {
    Forest(Forest),
    Ridge(RidgeFit),
    Cells(CellMeans),
}

#[derive(Debug, Clone)]
pub struct FittedLearner {
    model: Model,
    target: TargetKind,
    clip: f64,
    width: usize,
}

pub fn fit(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    target: TargetKind,
) -> Result<FittedLearner> {
    spec.check()?;
    let (n, q) = x.shape();
    if n != y.len() {
        return Err(Error::invalid(format!(
            "{n} feature rows but {} targets",
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 training rows, got {n}")));
    }
    if target == TargetKind::Probability {
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid(format!(
                "probability targets must be 0 or 1, got {v}"
            )));
        }
    }
    let model = match spec.kind {
        LearnerKind::RandomForest => {
            if q == 0 {
                return Err(Error::invalid("random forest needs at least one feature"));
            }
            let mtry = spec.resolved_mtry(q, target)?;
            Model::Forest(Forest::fit(spec, mtry, x, y))
        }
        LearnerKind::Ridge => Model::Ridge(RidgeFit::fit(x, y, spec.ridge_penalty)?),
        LearnerKind::SaturatedCells => Model::Cells(CellMeans::fit(x, y)?),
    };
    Ok(FittedLearner {
        model,
        target,
        clip: spec.clip,
        width: q,
    })
}

impl FittedLearner {
    pub fn target(&self) -> TargetKind {
        self.target
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.width {
            return Err(Error::WidthMismatch {
                expected: self.width,
                got: x.ncols(),
            });
        }
        let raw = match &self.model {
            Model::Forest(f) => f.predict(x),
            Model::Ridge(r) => r.predict(x),
            Model::Cells(c) => c.predict(x)?,
        };
        Ok(match self.target {
            TargetKind::Mean => raw,
            TargetKind::Probability => raw
                .into_iter()
                .map(|p| clip_probability(p.clamp(0.0, 1.0), self.clip))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_cell_means() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let f = fit(&LearnerSpec::saturated(), &x, &[1.0, 3.0, 5.0], TargetKind::Mean).unwrap();
        let p = f.predict(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(p, vec![2.0, 5.0]);
    }

    #[test]
    fn ridge_recovers_exact_slope() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        let x = DMatrix::from_column_slice(10, 1, &xs);
        let f = fit(&LearnerSpec::ridge(0.0), &x, &ys, TargetKind::Mean).unwrap();
        let p = f.predict(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert!((p[1] - p[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn probability_clipping() {
        assert_eq!(clip_probability(0.0005, 0.01), 0.01);
        assert_eq!(clip_probability(0.9999, 0.01), 0.99);
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        let f = fit(&LearnerSpec::saturated(), &x, &[0.0, 0.0, 1.0, 1.0], TargetKind::Probability)
            .unwrap();
        let p = f.predict(&x).unwrap();
        assert_eq!(p, vec![0.01, 0.01, 0.99, 0.99]);
    }

    #[test]
    fn probability_targets_must_be_binary() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(fit(&LearnerSpec::saturated(), &x, &[0.0, 0.3], TargetKind::Probability).is_err());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let f = fit(&LearnerSpec::ridge(1.0), &x, &[1.0, 3.0, 5.0], TargetKind::Mean).unwrap();
        assert!(matches!(
            f.predict(&DMatrix::zeros(1, 2)),
            Err(Error::WidthMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn mtry_above_width_rejected() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let spec = LearnerSpec {
            mtry: Some(2),
            ..LearnerSpec::default()
        };
        assert!(fit(&spec, &x, &[1.0, 3.0, 5.0], TargetKind::Mean).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
            }
            let signal = (3.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 1)] * 2.0;
            y.push(signal + 0.3 * (rng.random::<f64>() - 0.5));
        }
        (x, y)
    }

    #[test]
    fn forest_beats_constant_on_holdout() {
        let (xtr, ytr) = synthetic(600, 1);
        let (xte, yte) = synthetic(300, 2);
        let f = fit(&LearnerSpec::default(), &xtr, &ytr, TargetKind::Mean).unwrap();
        let p = f.predict(&xte).unwrap();
        let mean = yte.iter().sum::<f64>() / yte.len() as f64;
        let var = yte.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / yte.len() as f64;
        let mse = p.iter().zip(&yte).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / yte.len() as f64;
        assert!(mse < var, "mse {mse} vs var {var}");
    }

    #[test]
    fn forest_is_deterministic() {
        let (x, y) = synthetic(200, 3);
        let spec = LearnerSpec {
            trees: 20,
            seed: 9,
            ..LearnerSpec::default()
        };
        let a = fit(&spec, &x, &y, TargetKind::Mean).unwrap().predict(&x).unwrap();
        let b = fit(&spec, &x, &y, TargetKind::Mean).unwrap().predict(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn interpolating_tree_reproduces_training_targets() {
        let (x, y) = synthetic(50, 4);
        let spec = LearnerSpec {
            trees: 1,
            min_leaf: 1,
            bootstrap: false,
            ..LearnerSpec::default()
        };
        let p = fit(&spec, &x, &y, TargetKind::Mean).unwrap().predict(&x).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forest_probabilities_in_unit_interval() {
        let (x, y) = synthetic(200, 5);
        let yb: Vec<f64> = y.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let spec = LearnerSpec {
            trees: 30,
            ..LearnerSpec::default()
        };
        let p = fit(&spec, &x, &yb, TargetKind::Probability).unwrap().predict(&x).unwrap();
        assert!(p.iter().all(|&v| (0.01..=0.99).contains(&v)));
    }
}
