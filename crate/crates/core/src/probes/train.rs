//! Mini-batch Adam training with early stopping on a held-out validation split.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::network::{mean_bce, LossWeights, PassMode};
use super::{check_labels, scaler::standardize_fit, Architecture, Network, ProbeConfig, ProbeModel, TrainSummary};
use crate::digest::config_digest;
use crate::error::{Error, Result};

const STREAM_INIT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded stratified split: `(train, val)` row indices, each sorted.
pub fn stratified_split(y: &[u8], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a linear, MLP or MLP+SCL probe on raw features.
pub fn train_probe(x: ArrayView2<f64>, y: &[u8], cfg: &ProbeConfig) -> Result<ProbeModel> {
    if cfg.architecture == Architecture::Logistic {
        return super::train_logistic(x, y, cfg);
    }
    cfg.validate()?;
    check_labels(y, x.nrows())?;
    let scaler = standardize_fit(x)?;
    let xs = scaler.transform(x)?;

    let (train_idx, val_idx) = stratified_split(y, cfg.val_fraction, cfg.seed);
    let x_val = xs.select(Axis(0), &val_idx);
    let y_val: Vec<u8> = val_idx.iter().map(|&i| y[i]).collect();

    let spec = cfg.net_spec(x.ncols());
    let mut net = Network::init(spec, &mut stream_rng(cfg.seed, STREAM_INIT));
    let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream_rng(cfg.seed, STREAM_DROPOUT);
    let weights = LossWeights {
        l2: cfg.l2,
        l1: cfg.l1,
        scl_lambda: cfg.scl_lambda,
        temperature: cfg.temperature,
    };

    let mut order = train_idx.clone();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Network)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut shuffle_rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = xs.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let mode = PassMode {
                dropout: Some(&mut dropout_rng),
                batch_stats: chunk.len() > 1,
            };
            let (loss, grad, stats) = net.loss_and_grad(xb.view(), &yb, &weights, mode)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss { epoch, batch });
            }
            opt.step(&mut net.params, &grad);
            if let Some((mean, var)) = stats {
                net.update_running_stats(&mean, &var, chunk.len());
            }
        }
        if val_idx.is_empty() {
            continue;
        }
        let val = mean_bce(&net.logits(x_val.view())?, &y_val);
        if !val.is_finite() {
            return Err(Error::NanLoss { epoch, batch: usize::MAX });
        }
        history.push(val);
        if best.as_ref().map_or(true, |(_, b, _)| val < *b) {
            best = Some((epoch, val, net.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    let (best_epoch, best_val_loss) = match best {
        Some((epoch, loss, weights)) => {
            net = weights;
            (epoch, Some(loss))
        }
        None => (0, None),
    };
    Ok(ProbeModel {
        architecture: cfg.architecture,
        scaler,
        network: net,
        summary: TrainSummary {
            monitored: "val_bce".into(),
            epochs_run,
            best_epoch,
            best_val_loss,
            val_history: history,
            iterations: 0,
            converged: true,
            grad_inf_norm: None,
        },
        config_digest: config_digest(cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::predict_scores;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 5 == 0)).collect();
        let (tr, va) = stratified_split(&y, 0.2, 9);
        assert_eq!(tr.len() + va.len(), 50);
        assert_eq!(va.iter().filter(|&&i| y[i] == 1).count(), 2);
        assert_eq!(va.len(), 10);
        assert!(tr.iter().all(|i| !va.contains(i)));
        assert_eq!(stratified_split(&y, 0.2, 9), (tr, va));
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((120, 6), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<u8> = (0..120).map(|i| u8::from(x[[i, 0]] > 0.0)).collect();
        let mut cfg = ProbeConfig::for_architecture(Architecture::Linear).with_seed(1);
        cfg.learning_rate = 1e-2;
        cfg.batch_size = 16;
        cfg.max_epochs = 40;
        cfg.patience = 5;
        let m = train_probe(x.view(), &y, &cfg).unwrap();
        let s = &m.summary;
        let best = s.best_val_loss.unwrap();
        assert!(s.val_history.iter().all(|&v| best <= v));
        assert_eq!(s.val_history[s.best_epoch - 1], best);
        let again = train_probe(x.view(), &y, &cfg).unwrap();
        assert_eq!(m.network.params, again.network.params);
        assert_eq!(predict_scores(&m, x.view()).unwrap(), predict_scores(&again, x.view()).unwrap());
    }
}
