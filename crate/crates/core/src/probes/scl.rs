//! Supervised contrastive loss over L2-normalized representations.
//!
//! For anchors `i` with at least one same-label partner:
//! `L = mean_i  -1/|P(i)| * sum_{p in P(i)} log( exp(u_i.u_p / t) / sum_{a != i} exp(u_i.u_a / t) )`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

fn check(z: &ArrayView2<f64>, labels: &[u8], tau: f64) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::domain(format!("contrastive loss needs a batch of at least 2, got {}", z.nrows())));
    }
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            found: labels.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn normalize_rows(z: &ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let norms: Vec<f64> = z
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let mut u = z.to_owned();
    for (mut row, &n) in u.axis_iter_mut(Axis(0)).zip(&norms) {
        row /= n;
    }
    (u, norms)
}

/// Loss and gradient with respect to the unnormalized `z`.
/// Returns `None` when no anchor in the batch has a positive.
pub fn scl_loss_grad(
    z: ArrayView2<f64>,
    labels: &[u8],
    tau: f64,
) -> Result<Option<(f64, Array2<f64>)>> {
    check(&z, labels, tau)?;
    let b = z.nrows();
    let anchors: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return Ok(None);
    }
    let (u, norms) = normalize_rows(&z);
    let sim = u.dot(&u.t()) / tau;
    let scale = 1.0 / anchors.len() as f64;

    let mut loss = 0.0;
    // d loss / d sim
    let mut g_sim = Array2::<f64>::zeros((b, b));
    for &i in &anchors {
        let row = sim.row(i);
        let max = (0..b).filter(|&a| a != i).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let lse = max + denom.ln();
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        let inv_p = 1.0 / positives.len() as f64;
        loss += scale * (lse - inv_p * positives.iter().map(|&p| row[p]).sum::<f64>());
        for a in (0..b).filter(|&a| a != i) {
            let soft = (row[a] - lse).exp();
            let pos = if labels[a] == labels[i] { inv_p } else { 0.0 };
            g_sim[[i, a]] += scale * (soft - pos);
        }
    }
    // sim = U U^T / tau  =>  dU = (G + G^T) U / tau
    let g_u = (&g_sim + &g_sim.t()).dot(&u) / tau;
    // through u = z / |z|
    let mut g_z = g_u;
    for ((mut gz, ur), &n) in g_z.axis_iter_mut(Axis(0)).zip(u.axis_iter(Axis(0))).zip(&norms) {
        let proj = gz.dot(&ur);
        gz.scaled_add(-proj, &ur);
        gz /= n;
    }
    Ok(Some((loss, g_z)))
}

pub fn scl_loss(z: ArrayView2<f64>, labels: &[u8], tau: f64) -> Result<f64> {
    scl_loss_grad(z, labels, tau)?
        .map(|(l, _)| l)
        .ok_or_else(|| Error::domain("no anchor in the batch has a same-label partner"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight transcription of the formula, no shared code with the implementation.
    fn loop_oracle(z: &Array2<f64>, y: &[u8], tau: f64) -> f64 {
        let b = z.nrows();
        let u: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                let n = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                z.row(i).iter().map(|x| x / n).collect()
            })
            .collect();
        let dot = |i: usize, j: usize| u[i].iter().zip(&u[j]).map(|(a, b)| a * b).sum::<f64>();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..b {
            let pos: Vec<usize> = (0..b).filter(|&p| p != i && y[p] == y[i]).collect();
            if pos.is_empty() {
                continue;
            }
            let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (dot(i, a) / tau).exp()).sum();
            let mut li = 0.0;
            for &p in &pos {
                li -= ((dot(i, p) / tau).exp() / denom).ln();
            }
            total += li / pos.len() as f64;
            count += 1;
        }
        total / count as f64
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let z = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(scl_loss(z.view(), &[1, 1], 0.07).unwrap().abs() < 1e-12);
    }

    #[test]
    fn misaligned_arrangement_costs_more() {
        // same-label pairs orthogonal, cross-label pairs identical
        let bad = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        // label-aligned
        let good = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let y = [0, 0, 1, 1];
        let lb = scl_loss(bad.view(), &y, 0.5).unwrap();
        let lg = scl_loss(good.view(), &y, 0.5).unwrap();
        assert!(lb > lg, "{lb} <= {lg}");
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let b = 3 + trial % 7;
            let z = Array2::from_shape_fn((b, 5), |_| rng.gen_range(-1.0..1.0));
            let y: Vec<u8> = (0..b).map(|_| rng.gen_range(0..2)).collect();
            let tau = rng.gen_range(0.05..1.0);
            match scl_loss(z.view(), &y, tau) {
                Ok(l) => assert!((l - loop_oracle(&z, &y, tau)).abs() < 1e-10),
                Err(_) => assert!(y.iter().all(|&c| y.iter().filter(|&&d| d == c).count() == 1)),
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
        let y = [0, 1, 0, 1, 1, 0];
        let (_, g) = scl_loss_grad(z.view(), &y, 0.3).unwrap().unwrap();
        let h = 1e-6;
        for i in 0..6 {
            for j in 0..4 {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (loop_oracle(&zp, &y, 0.3) - loop_oracle(&zm, &y, 0.3)) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-6, "({i},{j}) fd {fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn rotation_invariance_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let y = [0, 0, 1, 1, 0];
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = array![[c, -s], [s, c]];
        let zr = z.dot(&rot);
        let a = scl_loss(z.view(), &y, 0.07).unwrap();
        let b = scl_loss(zr.view(), &y, 0.07).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(scl_loss(z.slice(ndarray::s![..1, ..]), &y[..1], 0.07).is_err());
        assert!(scl_loss(z.view(), &y, 0.0).is_err());
        assert!(scl_loss(z.slice(ndarray::s![..2, ..]), &[0, 1], 0.07).is_err());
    }
}
