use ndarray::{ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{split_fold, stratified_folds};
use super::{is_valid_combination, roc_auc, FeatureSet, Stage};
use crate::digest::config_digest;
use crate::error::{Error, Result};
use crate::probes::{predict_scores, train_probe, Architecture, ProbeConfig, ProbeModel};
use crate::stats::{mean, population_std};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stage: Stage,
    pub feature_set: FeatureSet,
    pub probe: ProbeConfig,
    pub folds: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(stage: Stage, feature_set: FeatureSet, architecture: Architecture, seed: u64) -> Self {
        ExperimentConfig {
            stage,
            feature_set,
            probe: ProbeConfig::for_architecture(architecture),
            folds: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_combination(self.stage, self.feature_set) {
            return Err(Error::Config(format!(
                "feature set {} is not defined at stage {}",
                self.feature_set, self.stage
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        self.probe.validate()
    }

    /// Probe seed for one fold, split off the experiment seed.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + fold as u64);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_positives: usize,
    pub auc: f64,
    pub probe_seed: u64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub stage: Stage,
    pub feature_set: FeatureSet,
    pub architecture: Architecture,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Always `"population"`.
    pub std_kind: String,
    pub n_instances: usize,
    pub n_positive: usize,
    pub positive_rate: f64,
    pub n_features: usize,
    pub folds: Vec<FoldResult>,
    pub config: ExperimentConfig,
    /// Caller-supplied context (data source, codec, judge mode, ...).
    pub run: serde_json::Value,
    pub config_digest: String,
}

/// Trains on every fold but `fold` and returns the model with the held-out indices.
pub fn fit_fold(
    x: ArrayView2<f64>,
    y: &[u8],
    assign: &[usize],
    fold: usize,
    cfg: &ExperimentConfig,
) -> Result<(ProbeModel, Vec<usize>)> {
    let (train, test) = split_fold(assign, fold);
    let xt = x.select(Axis(0), &train);
    let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let probe = cfg.probe.clone().with_seed(cfg.fold_seed(fold));
    Ok((train_probe(xt.view(), &yt, &probe)?, test))
}

/// Stratified k-fold evaluation. Standardization is fitted inside each
/// training call, so held-out rows never influence it.
pub fn run_experiment(
    x: ArrayView2<f64>,
    y: &[u8],
    cfg: &ExperimentConfig,
    run: serde_json::Value,
) -> Result<EvalReport> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let assign = stratified_folds(y, cfg.folds, cfg.seed)?;
    let folds: Vec<FoldResult> = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let (model, test) = fit_fold(x, y, &assign, fold, cfg)?;
            let xs = x.select(Axis(0), &test);
            let ys: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            let scores = predict_scores(&model, xs.view())?;
            let auc = roc_auc(&scores, &ys).map_err(|e| match e {
                Error::SingleClass(m) => Error::SingleClass(format!("test fold {fold}: {m}")),
                other => other,
            })?;
            Ok(FoldResult {
                fold,
                n_train: y.len() - test.len(),
                n_test: test.len(),
                test_positives: ys.iter().filter(|&&v| v == 1).count(),
                auc,
                probe_seed: cfg.fold_seed(fold),
                best_epoch: model.summary.best_epoch,
            })
        })
        .collect::<Result<_>>()?;
    let fold_aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
    let n_positive = y.iter().filter(|&&v| v == 1).count();
    let digest = config_digest(&(cfg, &run));
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        stage: cfg.stage,
        feature_set: cfg.feature_set,
        architecture: cfg.probe.architecture,
        mean_auc: mean(&fold_aucs),
        std_auc: population_std(&fold_aucs),
        fold_aucs,
        std_kind: "population".into(),
        n_instances: y.len(),
        n_positive,
        positive_rate: n_positive as f64 / y.len() as f64,
        n_features: x.ncols(),
        folds,
        config: cfg.clone(),
        run,
        config_digest: digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn separable_data_and_leakage_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((100, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<u8> = (0..100).map(|i| u8::from(x[[i, 0]] > 0.2)).collect();
        let cfg = ExperimentConfig::new(Stage::PreCompression, FeatureSet::Context, Architecture::Logistic, 7);
        let r = run_experiment(x.view(), &y, &cfg, serde_json::Value::Null).unwrap();
        assert!(r.mean_auc > 0.95, "{}", r.mean_auc);
        assert_eq!(r.fold_aucs.len(), 5);
        assert_eq!(r.folds.iter().map(|f| f.n_test).sum::<usize>(), 100);
        let again = run_experiment(x.view(), &y, &cfg, serde_json::Value::Null).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());

        let assign = stratified_folds(&y, 5, 7).unwrap();
        let (model, test) = fit_fold(x.view(), &y, &assign, 2, &cfg).unwrap();
        let train: Vec<usize> = (0..100).filter(|i| !test.contains(i)).collect();
        let col0: Vec<f64> = train.iter().map(|&i| x[[i, 0]]).collect();
        assert!((model.scaler.means[0] - mean(&col0)).abs() < 1e-12);
        let all0: Vec<f64> = x.column(0).to_vec();
        assert!((model.scaler.means[0] - mean(&all0)).abs() > 1e-12);
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let cfg = ExperimentConfig::new(Stage::PreInference, FeatureSet::Attention, Architecture::Linear, 0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
