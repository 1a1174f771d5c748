//! Probing classifiers: feature-based logistic regression plus linear, MLP and
//! MLP+SCL networks, all trained in f64.

pub mod adam;
pub mod artifact;
pub mod logistic;
pub mod network;
pub mod scaler;
pub mod scl;
pub mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use logistic::train_logistic;
pub use network::{NetSpec, Network};
pub use scaler::{standardize_fit, Scaler};
pub use scl::scl_loss;
pub use train::train_probe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Logistic,
    Linear,
    Mlp,
    MlpScl,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Logistic,
        Architecture::Linear,
        Architecture::Mlp,
        Architecture::MlpScl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Logistic => "logistic",
            Architecture::Linear => "linear",
            Architecture::Mlp => "mlp",
            Architecture::MlpScl => "mlp_scl",
        }
    }

    pub fn has_hidden(self) -> bool {
        matches!(self, Architecture::Mlp | Architecture::MlpScl)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown probe architecture {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub l2: f64,
    pub l1: f64,
    pub scl_lambda: f64,
    pub temperature: f64,
    pub val_fraction: f64,
    pub logistic_c: f64,
    pub logistic_max_iter: usize,
    pub logistic_tol: f64,
    pub seed: u64,
}

impl ProbeConfig {
    /// Pinned defaults for one architecture.
    pub fn for_architecture(architecture: Architecture) -> Self {
        let scl = architecture == Architecture::MlpScl;
        ProbeConfig {
            architecture,
            hidden_dim: 1024,
            activation: if scl { Activation::Silu } else { Activation::Relu },
            dropout: if scl { 0.1 } else { 0.0 },
            batch_norm: scl,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: if architecture == Architecture::Linear { 150 } else { 50 },
            patience: 20,
            l2: 500.0,
            l1: 100.0,
            scl_lambda: if scl { 0.3 } else { 0.0 },
            temperature: 0.07,
            val_fraction: 0.2,
            logistic_c: 1e-5,
            logistic_max_iter: 1000,
            logistic_tol: 1e-6,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("learning_rate", self.learning_rate),
            ("temperature", self.temperature),
            ("logistic_c", self.logistic_c),
            ("logistic_tol", self.logistic_tol),
            ("bn_eps", self.bn_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("l2", self.l2), ("l1", self.l1), ("scl_lambda", self.scl_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_momentum == 0.0 {
            return bad(format!("bn_momentum must be in (0, 1), got {}", self.bn_momentum));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 0.5), got {}", self.val_fraction));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.logistic_max_iter == 0 {
            return bad("batch_size, max_epochs and logistic_max_iter must be at least 1".into());
        }
        if self.architecture.has_hidden() && self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        let scl = self.architecture == Architecture::MlpScl;
        if !scl && (self.dropout != 0.0 || self.batch_norm || self.scl_lambda != 0.0) {
            return bad(format!(
                "dropout, batch_norm and scl_lambda apply to mlp_scl only (architecture {})",
                self.architecture
            ));
        }
        let expected = if scl { Activation::Silu } else { Activation::Relu };
        if self.architecture.has_hidden() && self.activation != expected {
            return bad(format!("{} uses {:?} activation", self.architecture, expected));
        }
        Ok(())
    }

    pub fn net_spec(&self, input_dim: usize) -> NetSpec {
        NetSpec {
            architecture: self.architecture,
            input_dim,
            hidden_dim: if self.architecture.has_hidden() { self.hidden_dim } else { 0 },
            activation: self.activation,
            dropout: self.dropout,
            batch_norm: self.batch_norm,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::for_architecture(Architecture::Linear)
    }
}

/// What happened during fitting; stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// `"val_bce"` for networks, `"objective"` for logistic regression.
    pub monitored: String,
    pub epochs_run: usize,
    /// 1-based epoch whose weights were restored; 0 when no validation split existed.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub val_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub architecture: Architecture,
    pub scaler: Scaler,
    pub network: Network,
    pub summary: TrainSummary,
    pub config_digest: String,
}

impl ProbeModel {
    pub fn input_dim(&self) -> usize {
        self.network.spec.input_dim
    }

    /// Logits on raw (unstandardized) features.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = self.scaler.transform(x)?;
        Ok(self.network.logits(z.view())?.to_vec())
    }
}

/// Sigmoid scores in (0, 1) using the model's stored standardization.
pub fn predict_scores(model: &ProbeModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let z = model.scaler.transform(x)?;
    Ok(network::sigmoid_scores(&model.network.logits(z.view())?))
}

pub(crate) fn check_labels(y: &[u8], rows: usize) -> Result<(usize, usize)> {
    if y.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::domain(format!("labels must be 0 or 1, found {bad}")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        let which = if pos == 0 { "all negative" } else { "all positive" };
        return Err(Error::SingleClass(format!("{which}, n = {}", y.len())));
    }
    Ok((pos, neg))
}
