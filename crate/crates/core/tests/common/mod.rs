//! Shared test oracles, independent of the implementation paths they check.

use fdnfit::audio::Rir;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `gamma^n` with `20 log10(gamma) = -60 / (fs * t60)`.
pub fn exponential_rir(t60: f64, fs: u32, len: usize) -> Rir {
    let gamma = 10f64.powf(-60.0 / (20.0 * fs as f64 * t60));
    Rir::new((0..len).map(|n| gamma.powi(n as i32)).collect(), fs).unwrap()
}

pub fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exponentially decaying Gaussian noise, unit-norm: a dense stand-in for a
/// measured room response.
pub fn decaying_noise(seed: u64, t60: f64, fs: u32, len: usize) -> Rir {
    let gamma = 10f64.powf(-60.0 / (20.0 * fs as f64 * t60));
    let samples: Vec<f64> = white_noise(seed, len)
        .into_iter()
        .enumerate()
        .map(|(n, v)| v * gamma.powi(n as i32))
        .collect();
    Rir::new(samples, fs)
        .unwrap()
        .normalize_unit_norm()
        .unwrap()
}

/// Direct transcription of the FDN state equations with integer buffer
/// readout; the oracle for integer-delay renders.
pub fn reference_integer_fdn(
    delays: &[usize],
    feedback: &[f64],
    input_gains: &[f64],
    output_gains: &[f64],
    direct: f64,
    len: usize,
) -> Vec<f64> {
    let n = delays.len();
    let mut written: Vec<Vec<f64>> = vec![Vec::with_capacity(len); n];
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let u = if t == 0 { 1.0 } else { 0.0 };
        let mut s = vec![0.0; n];
        for i in 0..n {
            if delays[i] >= 1 && t >= delays[i] {
                s[i] = written[i][t - delays[i]];
            }
        }
        let mut y = direct * u;
        for i in 0..n {
            y += output_gains[i] * s[i];
        }
        out.push(y);
        for i in 0..n {
            let mut v = input_gains[i] * u;
            for j in 0..n {
                v += feedback[i * n + j] * s[j];
            }
            written[i].push(v);
        }
    }
    out
}

/// `max |M^T M - I|` for a row-major n x n matrix.
pub fn orthogonality_defect(m: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += m[k * n + i] * m[k * n + j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - expect).abs());
        }
    }
    worst
}

/// Complementary error function by its Maclaurin series, accurate to well
/// below 1e-12 for small arguments.
pub fn erfc_series(x: f64) -> f64 {
    let mut term = x;
    let mut erf = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        erf += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    1.0 - erf * 2.0 / std::f64::consts::PI.sqrt()
}
