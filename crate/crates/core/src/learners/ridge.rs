use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Linear regression with an unpenalized intercept and an L2 penalty on slopes.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    intercept: f64,
    coef: DVector<f64>,
}

impl RidgeFit {
    pub(super) fn fit(x: &DMatrix<f64>, y: &[f64], penalty: f64) -> Result<RidgeFit> {
        let (n, q) = x.shape();
        let ybar = y.iter().sum::<f64>() / n as f64;
        if q == 0 {
            return Ok(RidgeFit {
                intercept: ybar,
                coef: DVector::zeros(0),
            });
        }
        let means: Vec<f64> = (0..q).map(|j| x.column(j).mean()).collect();
        let xc = DMatrix::from_fn(n, q, |i, j| x[(i, j)] - means[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
        let mut gram = xc.transpose() * &xc;
        for j in 0..q {
            gram[(j, j)] += penalty;
        }
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if max <= 0.0 || min <= 1e-12 * max {
            return Err(Error::SingularSystem { penalty });
        }
        let rhs = xc.transpose() * yc;
        let coef = gram
            .cholesky()
            .ok_or(Error::SingularSystem { penalty })?
            .solve(&rhs);
        let intercept = ybar - (0..q).map(|j| means[j] * coef[j]).sum::<f64>();
        Ok(RidgeFit { intercept, coef })
    }

    pub(super) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.intercept
                    + (0..self.coef.len())
                        .map(|j| x[(i, j)] * self.coef[j])
                        .sum::<f64>()
            })
            .collect()
    }
}
