//! L2-regularized logistic regression, `0.5 |w|^2 + C * sum log-loss`, with an
//! unpenalized intercept. Solved by truncated Newton (Jacobi-preconditioned
//! conjugate gradient on Hessian-vector products) with Armijo backtracking.

use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{check_labels, scaler::standardize_fit, Architecture, Network, ProbeConfig, ProbeModel, TrainSummary};
use crate::digest::config_digest;
use crate::error::{Error, Result};

const CG_MAX_ITER: usize = 250;
const LINE_SEARCH_STEPS: usize = 60;
const ARMIJO: f64 = 1e-4;

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: Vec<f64>,
    c: f64,
}

impl Problem<'_> {
    fn margins(&self, theta: &[f64]) -> Array1<f64> {
        let d = self.x.ncols();
        self.x.dot(&ArrayView1::from(&theta[..d])) + theta[d]
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let d = self.x.ncols();
        let z = self.margins(theta);
        let ll: f64 = z
            .iter()
            .zip(&self.y)
            .map(|(&zi, &yi)| log1pexp(zi) - yi * zi)
            .sum();
        0.5 * theta[..d].iter().map(|w| w * w).sum::<f64>() + self.c * ll
    }

    /// Value, gradient and the per-row curvature weights p(1-p).
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>, Array1<f64>) {
        let d = self.x.ncols();
        let z = self.margins(theta);
        let mut resid = Array1::zeros(z.len());
        let mut curv = Array1::zeros(z.len());
        let mut ll = 0.0;
        for i in 0..z.len() {
            let p = sigmoid(z[i]);
            ll += log1pexp(z[i]) - self.y[i] * z[i];
            resid[i] = p - self.y[i];
            curv[i] = p * (1.0 - p);
        }
        let gw = self.x.t().dot(&resid) * self.c;
        let mut grad: Vec<f64> = theta[..d].iter().zip(gw.iter()).map(|(w, g)| w + g).collect();
        grad.push(self.c * resid.sum());
        let value = 0.5 * theta[..d].iter().map(|w| w * w).sum::<f64>() + self.c * ll;
        (value, grad, curv)
    }

    fn hess_vec(&self, curv: &Array1<f64>, v: &[f64]) -> Vec<f64> {
        let d = self.x.ncols();
        let s = (self.x.dot(&ArrayView1::from(&v[..d])) + v[d]) * curv;
        let hw = self.x.t().dot(&s) * self.c;
        let mut out: Vec<f64> = v[..d].iter().zip(hw.iter()).map(|(a, b)| a + b).collect();
        out.push(self.c * s.sum());
        out
    }

    fn hess_diag(&self, curv: &Array1<f64>) -> Vec<f64> {
        let d = self.x.ncols();
        let mut diag = vec![1.0; d + 1];
        for (row, &cv) in self.x.rows().into_iter().zip(curv.iter()) {
            for (j, &v) in row.iter().enumerate() {
                diag[j] += self.c * cv * v * v;
            }
        }
        diag[d] = (self.c * curv.sum()).max(1e-300);
        diag
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective value and gradient `(dw, db)` at `(w, b)`; exposed for gradient checks.
pub fn logistic_objective(
    w: &[f64],
    b: f64,
    x: ArrayView2<f64>,
    y: &[u8],
    c: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    if w.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: w.len(),
        });
    }
    let p = Problem {
        x,
        y: y.iter().map(|&v| v as f64).collect(),
        c,
    };
    let mut theta = w.to_vec();
    theta.push(b);
    let (v, mut g, _) = p.eval(&theta);
    let gb = g.pop().expect("intercept gradient");
    Ok((v, g, gb))
}

pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
}

/// Solves the regularized problem on already-standardized features.
pub fn fit_logistic(x: ArrayView2<f64>, y: &[u8], c: f64, max_iter: usize, tol: f64) -> Result<LogisticFit> {
    check_labels(y, x.nrows())?;
    let d = x.ncols();
    let prob = Problem {
        x,
        y: y.iter().map(|&v| v as f64).collect(),
        c,
    };
    let mut theta = vec![0.0; d + 1];
    let mut iterations = 0;
    let (mut f, mut g, mut curv) = prob.eval(&theta);
    while inf_norm(&g) >= tol && iterations < max_iter {
        iterations += 1;
        let step = pcg(&prob, &curv, &g);
        let slope = dot(&g, &step);
        let step = if slope < 0.0 {
            step
        } else {
            g.iter().map(|v| -v).collect()
        };
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..LINE_SEARCH_STEPS {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let ft = prob.value(&trial);
            if ft <= f + ARMIJO * t * slope {
                theta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (f, g, curv) = prob.eval(&theta);
        if !f.is_finite() {
            return Err(Error::NanLoss {
                epoch: iterations,
                batch: 0,
            });
        }
    }
    let grad_inf_norm = inf_norm(&g);
    let bias = theta.pop().expect("intercept");
    Ok(LogisticFit {
        weights: theta,
        bias,
        iterations,
        converged: grad_inf_norm < tol,
        grad_inf_norm,
    })
}

/// Preconditioned CG for `H s = -g`, stopped by the usual truncated-Newton forcing term.
fn pcg(prob: &Problem, curv: &Array1<f64>, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let diag = prob.hess_diag(curv);
    let gnorm = dot(g, g).sqrt();
    let target = gnorm * gnorm.sqrt().min(0.5);
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, m)| a / m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..CG_MAX_ITER {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        let hp = prob.hess_vec(curv, &p);
        let php = dot(&p, &hp);
        if php <= 0.0 {
            break;
        }
        let alpha = rz / php;
        for i in 0..n {
            s[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        z = r.iter().zip(&diag).map(|(a, m)| a / m).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if s.iter().all(|v| *v == 0.0) {
        z
    } else {
        s
    }
}

/// Fits standardization and the logistic model on raw features.
pub fn train_logistic(x: ArrayView2<f64>, y: &[u8], cfg: &ProbeConfig) -> Result<ProbeModel> {
    if cfg.architecture != Architecture::Logistic {
        return Err(Error::Config(format!(
            "train_logistic called with architecture {}",
            cfg.architecture
        )));
    }
    cfg.validate()?;
    check_labels(y, x.nrows())?;
    let scaler = standardize_fit(x)?;
    let xs = scaler.transform(x)?;
    let fit = fit_logistic(xs.view(), y, cfg.logistic_c, cfg.logistic_max_iter, cfg.logistic_tol)?;
    if !fit.converged {
        log::warn!(
            "logistic regression stopped after {} iterations with gradient inf-norm {:.3e}",
            fit.iterations,
            fit.grad_inf_norm
        );
    }
    let mut network = Network::zeros(cfg.net_spec(x.ncols()));
    let d = x.ncols();
    network.params[..d].copy_from_slice(&fit.weights);
    network.params[d] = fit.bias;
    Ok(ProbeModel {
        architecture: Architecture::Logistic,
        scaler,
        network,
        summary: TrainSummary {
            monitored: "objective".into(),
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: None,
            val_history: Vec::new(),
            iterations: fit.iterations,
            converged: fit.converged,
            grad_inf_norm: Some(fit.grad_inf_norm),
        },
        config_digest: config_digest(cfg),
    })
}
