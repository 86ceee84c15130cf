//! Iterative radix-2 FFT over split real/imaginary buffers.
//!
//! The transform is unnormalized: `fft` computes `X[k] = sum_n x[n] e^{-j2πkn/K}`
//! and `ifft` applies the conjugate transform scaled by `1/K`.

use std::f64::consts::PI;

/// In-place radix-2 decimation-in-time FFT. Length must be a power of two.
pub fn fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len(), "fft: split buffers must have equal length");
    assert!(n.is_power_of_two(), "fft: length {n} is not a power of two");
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (ws, wc) = (step * k as f64).sin_cos();
                let i = start + k;
                let j = i + half;
                let tr = re[j] * wc - im[j] * ws;
                let ti = re[j] * ws + im[j] * wc;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for v in re.iter_mut() {
            *v *= scale;
        }
        for v in im.iter_mut() {
            *v *= scale;
        }
    }
}
