//! Linear, MLP and MLP+SCL probes with hand-written backward passes.
//!
//! Parameters live in one flat vector so the optimizer, the finite-difference
//! checks and the artifact writer all see the same layout:
//!
//! ```text
//! linear   w[1, in]  b[1]
//! mlp      w1[h, in] b1[h] (gamma[h] beta[h] if batch norm) w2[1, h] b2[1]
//! ```

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scl::scl_loss_grad;
use super::{Activation, Architecture};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub gamma: Option<Range<usize>>,
    pub beta: Option<Range<usize>>,
    pub w2: Option<Range<usize>>,
    pub b2: Option<Range<usize>>,
    pub total: usize,
}

impl NetSpec {
    pub fn has_hidden(&self) -> bool {
        self.architecture.has_hidden()
    }

    pub fn layout(&self) -> Layout {
        let d = self.input_dim;
        if !self.has_hidden() {
            return Layout {
                w1: 0..d,
                b1: d..d + 1,
                gamma: None,
                beta: None,
                w2: None,
                b2: None,
                total: d + 1,
            };
        }
        let h = self.hidden_dim;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(h * d);
        let b1 = take(h);
        let (gamma, beta) = if self.batch_norm {
            (Some(take(h)), Some(take(h)))
        } else {
            (None, None)
        };
        let w2 = take(h);
        let b2 = take(1);
        Layout {
            w1,
            b1,
            gamma,
            beta,
            w2: Some(w2),
            b2: Some(b2),
            total: at,
        }
    }

    /// Weight-matrix entries; biases and batch-norm affine terms are excluded.
    pub fn regularized_count(&self) -> usize {
        let l = self.layout();
        l.w1.len() + l.w2.map_or(0, |r| r.len())
    }

    fn hidden_width(&self) -> usize {
        if self.has_hidden() {
            self.hidden_dim
        } else {
            1
        }
    }
}

/// Penalty and auxiliary-loss weights for one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l2: f64,
    pub l1: f64,
    pub scl_lambda: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub reg: f64,
    pub scl: f64,
    pub total: f64,
}

/// Controls the stochastic and batch-dependent parts of a forward pass.
pub struct PassMode<'a> {
    pub dropout: Option<&'a mut ChaCha8Rng>,
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
}

impl PassMode<'_> {
    pub fn eval() -> PassMode<'static> {
        PassMode {
            dropout: None,
            batch_stats: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

struct Cache {
    x_in: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    act_in: Array2<f64>,
    hidden: Array2<f64>,
    out_mask: Option<Array2<f64>>,
    hidden_out: Array2<f64>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

impl Network {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases;
    /// batch norm starts at gamma = 1, beta = 0.
    pub fn init(spec: NetSpec, rng: &mut ChaCha8Rng) -> Self {
        let layout = spec.layout();
        let mut params = vec![0.0; layout.total];
        let s1 = 1.0 / (spec.input_dim as f64).sqrt();
        for i in layout.w1.clone().chain(layout.b1.clone()) {
            params[i] = rng.gen_range(-s1..s1);
        }
        if let Some(g) = &layout.gamma {
            params[g.clone()].fill(1.0);
        }
        if let (Some(w2), Some(b2)) = (&layout.w2, &layout.b2) {
            let s2 = 1.0 / (spec.hidden_dim as f64).sqrt();
            for i in w2.clone().chain(b2.clone()) {
                params[i] = rng.gen_range(-s2..s2);
            }
        }
        let (running_mean, running_var) = if spec.batch_norm && spec.has_hidden() {
            (vec![0.0; spec.hidden_dim], vec![1.0; spec.hidden_dim])
        } else {
            (Vec::new(), Vec::new())
        };
        Network {
            spec,
            params,
            running_mean,
            running_var,
        }
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let mut net = Network {
            spec,
            params: vec![0.0; spec.layout().total],
            running_mean: Vec::new(),
            running_var: Vec::new(),
        };
        if spec.batch_norm && spec.has_hidden() {
            net.running_mean = vec![0.0; spec.hidden_dim];
            net.running_var = vec![1.0; spec.hidden_dim];
        }
        net
    }

    fn mat(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[r.clone()]).expect("layout is consistent")
    }

    fn vec(&self, r: &Range<usize>) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[r.clone()])
    }

    fn forward(&self, x: ArrayView2<f64>, mode: &mut PassMode) -> Result<(Array1<f64>, Cache)> {
        let spec = &self.spec;
        if x.ncols() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                found: x.ncols(),
            });
        }
        let b = x.nrows();
        let l = spec.layout();
        let h = spec.hidden_width();
        let use_dropout = spec.has_hidden() && spec.dropout > 0.0;

        let in_mask = match (&mut mode.dropout, use_dropout) {
            (Some(rng), true) => Some(dropout_mask(rng, (b, spec.input_dim), spec.dropout)),
            _ => None,
        };
        let x_in = match &in_mask {
            Some(m) => &x * m,
            None => x.to_owned(),
        };
        let pre = x_in.dot(&self.mat(&l.w1, h, spec.input_dim).t()) + &self.vec(&l.b1);

        if !spec.has_hidden() {
            let logits = pre.column(0).to_owned();
            let empty = Array2::zeros((0, 0));
            return Ok((
                logits,
                Cache {
                    x_in,
                    xhat: None,
                    inv_std: None,
                    act_in: empty.clone(),
                    hidden: empty.clone(),
                    out_mask: None,
                    hidden_out: empty,
                    batch_mean: None,
                    batch_var: None,
                },
            ));
        }

        let (mut xhat, mut inv_std, mut batch_mean, mut batch_var) = (None, None, None, None);
        let act_in = if let (Some(g), Some(be)) = (&l.gamma, &l.beta) {
            let (mean, var) = if mode.batch_stats {
                let mean = pre.mean_axis(Axis(0)).expect("non-empty batch");
                let var = pre.var_axis(Axis(0), 0.0);
                (mean, var)
            } else {
                (
                    Array1::from(self.running_mean.clone()),
                    Array1::from(self.running_var.clone()),
                )
            };
            let istd = var.mapv(|v| 1.0 / (v + spec.bn_eps).sqrt());
            let xh = (&pre - &mean) * &istd;
            let out = &xh * &self.vec(g) + &self.vec(be);
            xhat = Some(xh);
            inv_std = Some(istd);
            if mode.batch_stats {
                batch_mean = Some(mean);
                batch_var = Some(var);
            }
            out
        } else {
            pre
        };

        let hidden = match spec.activation {
            Activation::Silu => act_in.mapv(|v| v * sigmoid(v)),
            Activation::Relu => act_in.mapv(|v| v.max(0.0)),
        };
        let out_mask = match (&mut mode.dropout, use_dropout) {
            (Some(rng), true) => Some(dropout_mask(rng, (b, h), spec.dropout)),
            _ => None,
        };
        let hidden_out = match &out_mask {
            Some(m) => &hidden * m,
            None => hidden.clone(),
        };
        let w2 = l.w2.as_ref().expect("hidden layout");
        let b2 = l.b2.as_ref().expect("hidden layout");
        let logits = hidden_out.dot(&self.vec(w2)) + self.params[b2.start];
        Ok((
            logits,
            Cache {
                x_in,
                xhat,
                inv_std,
                act_in,
                hidden,
                out_mask,
                hidden_out,
                batch_mean,
                batch_var,
            },
        ))
    }

    /// Logits in inference mode (no dropout, running batch-norm statistics).
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x, &mut PassMode::eval())?.0)
    }

    fn penalty(&self, w: &LossWeights) -> f64 {
        let n = self.spec.regularized_count() as f64;
        let l = self.spec.layout();
        let weights = self.params[l.w1.clone()]
            .iter()
            .chain(l.w2.map_or(&[][..], |r| &self.params[r]));
        let (sq, abs) = weights.fold((0.0, 0.0), |(s, a), &v| (s + v * v, a + v.abs()));
        w.l2 / (2.0 * n) * sq + w.l1 / n * abs
    }

    fn uses_scl(&self, w: &LossWeights, rows: usize) -> bool {
        self.spec.architecture == Architecture::MlpScl && w.scl_lambda > 0.0 && rows >= 2
    }

    /// Objective value only; the finite-difference checks call this.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[u8], w: &LossWeights, mut mode: PassMode) -> Result<LossParts> {
        let (logits, cache) = self.forward(x, &mut mode)?;
        let bce = logits
            .iter()
            .zip(y)
            .map(|(&l, &t)| bce_with_logit(l, t as f64))
            .sum::<f64>()
            / y.len() as f64;
        let reg = self.penalty(w);
        let scl = if self.uses_scl(w, y.len()) {
            scl_loss_grad(cache.hidden.view(), y, w.temperature)?.map_or(0.0, |(l, _)| l)
        } else {
            0.0
        };
        Ok(LossParts {
            bce,
            reg,
            scl,
            total: bce + reg + w.scl_lambda * scl,
        })
    }

    /// Objective, its gradient over the flat parameters, and (in batch-stat
    /// mode) the batch moments for the running-statistics update.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: &[u8],
        w: &LossWeights,
        mut mode: PassMode,
    ) -> Result<(LossParts, Vec<f64>, Option<(Array1<f64>, Array1<f64>)>)> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        let (logits, cache) = self.forward(x, &mut mode)?;
        let spec = &self.spec;
        let l = spec.layout();
        let b = y.len() as f64;
        let n_reg = spec.regularized_count() as f64;
        let mut grad = vec![0.0; l.total];

        let bce = logits
            .iter()
            .zip(y)
            .map(|(&lg, &t)| bce_with_logit(lg, t as f64))
            .sum::<f64>()
            / b;
        let d_logits: Array1<f64> = logits
            .iter()
            .zip(y)
            .map(|(&lg, &t)| (sigmoid(lg) - t as f64) / b)
            .collect();

        let mut scl = 0.0;
        let d_pre: Array2<f64> = if !spec.has_hidden() {
            d_logits.clone().insert_axis(Axis(1))
        } else {
            let w2 = l.w2.clone().expect("hidden layout");
            let b2 = l.b2.clone().expect("hidden layout");
            let gw2 = cache.hidden_out.t().dot(&d_logits);
            grad[w2.clone()].copy_from_slice(gw2.as_slice().expect("contiguous"));
            grad[b2.start] = d_logits.sum();

            // d hidden_out = d_logits (outer) w2
            let w2v = self.vec(&w2);
            let mut d_hidden = d_logits
                .view()
                .insert_axis(Axis(1))
                .dot(&w2v.insert_axis(Axis(0)));
            if let Some(m) = &cache.out_mask {
                d_hidden *= m;
            }
            if self.uses_scl(w, y.len()) {
                if let Some((s, gz)) = scl_loss_grad(cache.hidden.view(), y, w.temperature)? {
                    scl = s;
                    d_hidden.scaled_add(w.scl_lambda, &gz);
                }
            }
            let d_act: Array2<f64> = match spec.activation {
                Activation::Silu => {
                    let mut d = d_hidden;
                    d.zip_mut_with(&cache.act_in, |g, &v| {
                        let s = sigmoid(v);
                        *g *= s * (1.0 + v * (1.0 - s));
                    });
                    d
                }
                Activation::Relu => {
                    let mut d = d_hidden;
                    d.zip_mut_with(&cache.act_in, |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    d
                }
            };
            match (&l.gamma, &l.beta, &cache.xhat, &cache.inv_std) {
                (Some(g), Some(be), Some(xhat), Some(istd)) => {
                    let g_gamma = (&d_act * xhat).sum_axis(Axis(0));
                    let g_beta = d_act.sum_axis(Axis(0));
                    grad[g.clone()].copy_from_slice(g_gamma.as_slice().expect("contiguous"));
                    grad[be.clone()].copy_from_slice(g_beta.as_slice().expect("contiguous"));
                    let d_xhat = &d_act * &self.vec(g);
                    if mode.batch_stats {
                        let m = d_xhat.nrows() as f64;
                        let sum_d = d_xhat.sum_axis(Axis(0));
                        let sum_dx = (&d_xhat * xhat).sum_axis(Axis(0));
                        let mut out = d_xhat * m - &sum_d - &(xhat * &sum_dx);
                        out *= &(istd / m);
                        out
                    } else {
                        d_xhat * istd
                    }
                }
                _ => d_act,
            }
        };

        let h = spec.hidden_width();
        let gw1 = d_pre.t().dot(&cache.x_in);
        debug_assert_eq!(gw1.dim(), (h, spec.input_dim));
        grad[l.w1.clone()].copy_from_slice(gw1.as_standard_layout().as_slice().expect("contiguous"));
        let gb1 = d_pre.sum_axis(Axis(0));
        grad[l.b1.clone()].copy_from_slice(gb1.as_slice().expect("contiguous"));

        let reg_ranges = std::iter::once(l.w1.clone()).chain(l.w2.clone());
        for r in reg_ranges {
            for i in r {
                let v = self.params[i];
                let sign = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[i] += w.l2 / n_reg * v + w.l1 / n_reg * sign;
            }
        }
        let reg = self.penalty(w);
        let stats = cache.batch_mean.zip(cache.batch_var);
        Ok((
            LossParts {
                bce,
                reg,
                scl,
                total: bce + reg + w.scl_lambda * scl,
            },
            grad,
            stats,
        ))
    }

    /// Exponential moving average of batch moments (unbiased variance).
    pub fn update_running_stats(&mut self, mean: &Array1<f64>, var: &Array1<f64>, batch: usize) {
        let m = self.spec.bn_momentum;
        let correction = if batch > 1 {
            batch as f64 / (batch - 1) as f64
        } else {
            1.0
        };
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * correction;
        }
    }
}

/// Mean binary cross-entropy of logits against labels.
pub fn mean_bce(logits: &Array1<f64>, y: &[u8]) -> f64 {
    logits
        .iter()
        .zip(y)
        .map(|(&l, &t)| bce_with_logit(l, t as f64))
        .sum::<f64>()
        / y.len() as f64
}

pub fn sigmoid_scores(logits: &Array1<f64>) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

/// Relative error `|g - fd| / max(|g|, |fd|)` between the analytic gradient and
/// central differences of step `h`, in inference mode (no dropout, running
/// batch-norm statistics) or with batch statistics when `batch_stats` is set.
pub fn gradient_check(
    net: &Network,
    x: ArrayView2<f64>,
    y: &[u8],
    w: &LossWeights,
    h: f64,
    batch_stats: bool,
) -> Result<f64> {
    let mode = || PassMode {
        dropout: None,
        batch_stats,
    };
    let (_, grad, _) = net.loss_and_grad(x, y, w, mode())?;
    let mut probe = net.clone();
    let mut diff = 0.0;
    let mut ga = 0.0;
    let mut gf = 0.0;
    for i in 0..net.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(x, y, w, mode())?.total;
        probe.params[i] = orig - h;
        let down = probe.loss(x, y, w, mode())?.total;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        ga += grad[i].powi(2);
        gf += fd * fd;
    }
    let scale = ga.sqrt().max(gf.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}
