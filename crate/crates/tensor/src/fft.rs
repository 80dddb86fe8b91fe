//! Real DFT helpers. Truncated transforms are dense basis products so they
//! compose with matmul and have exact transposed adjoints.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Largest admissible mode count for a real signal of length `n`.
pub fn max_modes(n: usize) -> usize {
    n / 2 + 1
}

fn check_modes(op: &'static str, n: usize, r: usize) -> Result<()> {
    if r == 0 || r > max_modes(n) {
        return Err(TensorError::Argument {
            op,
            detail: format!("mode count {r} outside 1..={} for length {n}", max_modes(n)),
        });
    }
    Ok(())
}

/// `[n, 2r]` matrix mapping a length-`n` signal to modes `0..r`, packed as
/// interleaved `(re, im)` with the unnormalized `exp(-2 pi i j k / n)` convention.
pub fn forward_basis(n: usize, r: usize) -> Result<Tensor> {
    check_modes("rfft_truncate", n, r)?;
    let mut b = Tensor::zeros(&[n, 2 * r]);
    let d = b.data_mut();
    for j in 0..n {
        for k in 0..r {
            let theta = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
            d[j * 2 * r + 2 * k] = theta.cos();
            d[j * 2 * r + 2 * k + 1] = -theta.sin();
        }
    }
    Ok(b)
}

/// `[2r, n]` matrix mapping modes `0..r` (higher modes zero) to a real signal,
/// with `1/n` normalization and Hermitian doubling of the interior modes.
pub fn inverse_basis(r: usize, n: usize) -> Result<Tensor> {
    if n == 0 || n < 2 * (r.max(1) - 1) {
        return Err(TensorError::Argument {
            op: "irfft_pad",
            detail: format!("output length {n} too short for {r} modes"),
        });
    }
    check_modes("irfft_pad", n, r)?;
    let mut b = Tensor::zeros(&[2 * r, n]);
    let d = b.data_mut();
    for k in 0..r {
        let self_conjugate = k == 0 || 2 * k == n;
        let weight = if self_conjugate { 1.0 } else { 2.0 } / n as f64;
        for j in 0..n {
            let theta = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
            d[2 * k * n + j] = weight * theta.cos();
            d[(2 * k + 1) * n + j] = if self_conjugate { 0.0 } else { -weight * theta.sin() };
        }
    }
    Ok(b)
}

/// Full real DFT, modes `0..=n/2`.
pub fn rfft(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(max_modes(n));
    buf
}

/// Inverse of [`rfft`] for a signal of length `n`.
pub fn irfft(modes: &[Complex<f64>], n: usize) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (k, m) in modes.iter().enumerate().take(max_modes(n)) {
        buf[k] = *m;
        if k != 0 && 2 * k != n {
            buf[n - k] = m.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

pub use rustfft::num_complex::Complex64;
