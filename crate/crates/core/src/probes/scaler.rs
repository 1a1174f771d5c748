use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns whose std was raised to the floor.
    pub floored: Vec<usize>,
}

pub fn standardize_fit(x: ArrayView2<f64>) -> Result<Scaler> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::domain(format!("standardization needs at least 2 rows, got {n}")));
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    let mut floored = Vec::new();
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let mut s = var.sqrt();
        if !(s > STD_FLOOR) {
            s = STD_FLOOR;
            floored.push(j);
        }
        means.push(m);
        stds.push(s);
    }
    Ok(Scaler {
        means,
        stds,
        floored,
    })
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_and_population_std() {
        let s = standardize_fit(array![[1.0, 5.0], [3.0, 5.0]].view()).unwrap();
        assert_eq!(s.means, vec![2.0, 5.0]);
        assert_eq!(s.stds[0], 1.0);
        assert_eq!(s.stds[1], STD_FLOOR);
        assert_eq!(s.floored, vec![1]);
        assert!(standardize_fit(array![[1.0]].view()).is_err());
    }

    #[test]
    fn refit_after_transform_is_identity() {
        let x = array![[1.0, -2.0, 0.5], [4.0, 0.0, 0.25], [2.5, 7.0, -1.0], [0.0, 1.0, 3.0]];
        let s = standardize_fit(x.view()).unwrap();
        let z = s.transform(x.view()).unwrap();
        let r = standardize_fit(z.view()).unwrap();
        assert!(r.means.iter().all(|m| m.abs() < 1e-9));
        assert!(r.stds.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(s.transform(array![[1.0, 2.0]].view()).is_err());
    }
}
