//! Per-vector saturation statistics: Hoyer sparsity, DCT spectral entropy and
//! excess kurtosis, plus their aggregation over a set of tokens.

use serde::{Deserialize, Serialize};

use crate::dct::dct2;
use crate::error::{Error, Result};
use crate::stats::Summary;

const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub hoyer: f64,
    pub spectral_entropy: f64,
    pub excess_kurtosis: f64,
}

impl SaturationStats {
    pub const NAMES: [&'static str; 3] = ["hoyer", "spectral_entropy", "excess_kurtosis"];

    pub fn to_array(self) -> [f64; 3] {
        [self.hoyer, self.spectral_entropy, self.excess_kurtosis]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedStats {
    pub hoyer: Summary,
    pub spectral_entropy: Summary,
    pub excess_kurtosis: Summary,
}

impl AggregatedStats {
    /// Twelve values, grouped by statistic then `[mean, max, min, std]`.
    pub fn to_vec(&self) -> Vec<f64> {
        [self.hoyer, self.spectral_entropy, self.excess_kurtosis]
            .iter()
            .flat_map(|s| s.to_array())
            .collect()
    }

    pub fn names(prefix: &str) -> Vec<String> {
        SaturationStats::NAMES
            .iter()
            .flat_map(|stat| {
                Summary::SUFFIXES
                    .iter()
                    .map(move |agg| format!("{prefix}{stat}_{agg}"))
            })
            .collect()
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clamp_unit(x: f64, hi: f64) -> f64 {
    debug_assert!(
        x >= -CLAMP_SLACK && x <= hi + CLAMP_SLACK * hi.max(1.0),
        "value {x} drifted outside [0, {hi}]"
    );
    x.clamp(0.0, hi)
}

/// Hoyer's index `(sqrt(d) - |v|_1 / |v|_2) / (sqrt(d) - 1)`.
pub fn hoyer(v: &[f64]) -> Result<f64> {
    let d = v.len();
    if d < 2 {
        return Err(Error::domain(format!("hoyer needs d >= 2, got {d}")));
    }
    let n2 = l2(v);
    if n2 == 0.0 || !n2.is_finite() {
        return Err(Error::domain("hoyer of a zero or non-finite vector"));
    }
    let n1: f64 = v.iter().map(|x| x.abs()).sum();
    let sd = (d as f64).sqrt();
    Ok(clamp_unit((sd - n1 / n2) / (sd - 1.0), 1.0))
}

/// Shannon entropy (nats) of the normalized orthonormal DCT-II energy spectrum.
pub fn spectral_entropy(v: &[f64]) -> Result<f64> {
    if v.is_empty() || l2(v) == 0.0 {
        return Err(Error::domain("spectral entropy of a zero vector"));
    }
    let coeffs = dct2(v);
    let total: f64 = coeffs.iter().map(|c| c * c).sum();
    let h: f64 = coeffs
        .iter()
        .map(|c| c * c / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(clamp_unit(h, (v.len() as f64).ln()))
}

/// Excess kurtosis `E[(v - mu)^4] / sigma^4 - 3` with population moments.
pub fn excess_kurtosis(v: &[f64]) -> Result<f64> {
    let d = v.len();
    if d < 2 {
        return Err(Error::domain(format!("kurtosis needs d >= 2, got {d}")));
    }
    let n = d as f64;
    let mu = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(a, b), &x| {
        let c = (x - mu) * (x - mu);
        (a + c, b + c * c)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 || !m2.is_finite() {
        return Err(Error::domain("kurtosis undefined for a constant vector"));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

pub fn saturation_profile(v: &[f64]) -> Result<SaturationStats> {
    Ok(SaturationStats {
        hoyer: hoyer(v)?,
        spectral_entropy: spectral_entropy(v)?,
        excess_kurtosis: excess_kurtosis(v)?,
    })
}

pub fn aggregate_saturation(profiles: &[SaturationStats]) -> Result<AggregatedStats> {
    if profiles.is_empty() {
        return Err(Error::domain("cannot aggregate an empty profile list"));
    }
    let column = |f: fn(&SaturationStats) -> f64| -> Result<Summary> {
        Summary::of(&profiles.iter().map(f).collect::<Vec<_>>())
    };
    Ok(AggregatedStats {
        hoyer: column(|s| s.hoyer)?,
        spectral_entropy: column(|s| s.spectral_entropy)?,
        excess_kurtosis: column(|s| s.excess_kurtosis)?,
    })
}
