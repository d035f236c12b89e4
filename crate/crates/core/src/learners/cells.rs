use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sample mean of the target within each distinct feature row.
#[derive(Debug, Clone)]
pub struct CellMeans {
    means: BTreeMap<Vec<u64>, f64>,
}

fn key(x: &DMatrix<f64>, i: usize) -> Vec<u64> {
    // +0.0 so that -0.0 and 0.0 share a cell.
    (0..x.ncols()).map(|j| (x[(i, j)] + 0.0).to_bits()).collect()
}

fn describe(x: &DMatrix<f64>, i: usize) -> String {
    let vals: Vec<String> = (0..x.ncols()).map(|j| x[(i, j)].to_string()).collect();
    format!("({})", vals.join(", "))
}

impl CellMeans {
    pub(super) fn fit(x: &DMatrix<f64>, y: &[f64]) -> Result<CellMeans> {
        if let Some(v) = x.iter().find(|v| !v.is_finite() || v.fract() != 0.0) {
            return Err(Error::invalid(format!(
                "saturated cells need integer-coded discrete features, found {v}"
            )));
        }
        let mut acc: BTreeMap<Vec<u64>, (f64, usize)> = BTreeMap::new();
        for (i, &yi) in y.iter().enumerate() {
            let e = acc.entry(key(x, i)).or_insert((0.0, 0));
            e.0 += yi;
            e.1 += 1;
        }
        let means = acc
            .into_iter()
            .map(|(k, (s, c))| (k, s / c as f64))
            .collect();
        Ok(CellMeans { means })
    }

    pub(super) fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| {
                self.means
                    .get(&key(x, i))
                    .copied()
                    .ok_or_else(|| Error::EmptyCell(describe(x, i)))
            })
            .collect()
    }

    pub fn cells(&self) -> usize {
        self.means.len()
    }
}
