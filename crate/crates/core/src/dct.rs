//! Orthonormal DCT-II.
//!
//! `X_k = s_k * sum_n x_n cos(pi (2n + 1) k / 2N)` with `s_0 = sqrt(1/N)` and
//! `s_k = sqrt(2/N)` otherwise, so the transform preserves the L2 norm.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Below this length the direct sum is used.
const FFT_MIN_LEN: usize = 32;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Direct O(N^2) evaluation.
pub fn dct2_naive(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| xi * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                .sum();
            scale(k, n) * sum
        })
        .collect()
}

/// O(N log N) evaluation through one complex FFT of length N (even/odd
/// reordering followed by a quarter-wave twiddle).
pub fn dct2_fast(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        buf[i].re = x[2 * i];
    }
    for i in 0..n / 2 {
        buf[n - 1 - i].re = x[2 * i + 1];
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(k, v)| {
            let angle = -PI * k as f64 / (2 * n) as f64;
            let tw = Complex::new(angle.cos(), angle.sin());
            scale(k, n) * (tw * v).re
        })
        .collect()
}

pub fn dct2(x: &[f64]) -> Vec<f64> {
    if x.len() < FFT_MIN_LEN {
        dct2_naive(x)
    } else {
        dct2_fast(x)
    }
}
