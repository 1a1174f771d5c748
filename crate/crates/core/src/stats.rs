use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean, extremes and population standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("cannot summarize an empty sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        // Rounding in the mean can leave it a hair outside [min, max].
        Ok(Summary {
            mean: mean.clamp(min, max),
            max,
            min,
            std: var.sqrt(),
        })
    }

    /// `[mean, max, min, std]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.max, self.min, self.std]
    }

    pub const SUFFIXES: [&'static str; 4] = ["mean", "max", "min", "std"];
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}
