//! Iterative radix-2 Cooley-Tukey transform and the periodic Hann window.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{ensure, Result};

/// In-place forward DFT `X[k] = sum_n x[n] exp(-2 pi j k n / N)`.
///
/// `data.len()` must be a power of two (a length of one is the identity).
pub fn fft_in_place(data: &mut [Complex64]) -> Result<()> {
    let n = data.len();
    ensure(n.is_power_of_two(), || format!("FFT length {n} is not a power of two"))?;
    if n == 1 {
        return Ok(());
    }

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        // Twiddles are computed directly per index rather than by recurrence to
        // keep rounding error flat across large transforms.
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for chunk in data.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Forward FFT of a real sequence.
pub fn fft_real(samples: &[f64]) -> Result<Vec<Complex64>> {
    let mut data: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut data)?;
    Ok(data)
}

/// Periodic Hann window `0.5 (1 - cos(2 pi n / N))`; its coherent gain is exactly 1/2.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}
