//! FDN parameters, differentiable constraint maps, learnable fractional
//! delay lines, and the impulse-response renderers (tape-recorded for
//! training, plain buffers for inference).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Normal};

use crate::autodiff::{self, Tape, Tensor, Var};

/// Default number of delay lines.
pub const DEFAULT_LINES: usize = 6;
/// Default delay-line buffer length in samples: 64 ms at 16 kHz. Kernels are
/// twice this long so the circular convolution stays alias-free.
pub const DEFAULT_BUFFER: usize = 1024;

/// Free optimization variables living in unconstrained real space.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub direct_gain: f64,
    /// N x N row-major; only the strict upper triangle reaches the model.
    pub feedback_proxy: Vec<f64>,
    pub absorption_proxy: Vec<f64>,
    pub delay_proxy: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn lines(&self) -> usize {
        self.input_gains.len()
    }

    pub fn validate(&self) {
        let n = self.lines();
        assert!(n >= 2, "an FDN needs at least two delay lines");
        assert_eq!(self.output_gains.len(), n);
        assert_eq!(self.feedback_proxy.len(), n * n);
        assert_eq!(self.absorption_proxy.len(), n);
        assert_eq!(self.delay_proxy.len(), n);
        let finite = self
            .input_gains
            .iter()
            .chain(&self.output_gains)
            .chain(&self.feedback_proxy)
            .chain(&self.absorption_proxy)
            .chain(&self.delay_proxy)
            .chain(std::iter::once(&self.direct_gain))
            .all(|v| v.is_finite());
        assert!(finite, "parameters must be finite");
    }

    /// Parameters flattened in a fixed order: b, c, d, W, gamma, m.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dof_storage());
        out.extend_from_slice(&self.input_gains);
        out.extend_from_slice(&self.output_gains);
        out.push(self.direct_gain);
        out.extend_from_slice(&self.feedback_proxy);
        out.extend_from_slice(&self.absorption_proxy);
        out.extend_from_slice(&self.delay_proxy);
        out
    }

    pub fn unflatten(&self, flat: &[f64]) -> UnconstrainedParams {
        let n = self.lines();
        assert_eq!(flat.len(), self.dof_storage());
        let mut at = 0;
        let mut take = |len: usize| {
            let s = flat[at..at + len].to_vec();
            at += len;
            s
        };
        UnconstrainedParams {
            input_gains: take(n),
            output_gains: take(n),
            direct_gain: take(1)[0],
            feedback_proxy: take(n * n),
            absorption_proxy: take(n),
            delay_proxy: take(n),
        }
    }

    /// Number of stored scalars (the feedback proxy's unused lower triangle
    /// included; it simply never receives gradient).
    pub fn dof_storage(&self) -> usize {
        let n = self.lines();
        n * n + 4 * n + 1
    }
}

/// Draws the initial unconstrained parameters.
///
/// Input-gain, orthogonal-map, and absorption proxies are Normal(0, 1/N);
/// output gains start at 1/N, the direct gain at 1, and each delay proxy at
/// `psi` times a Beta(alpha, beta) draw. Deterministic given the seed.
pub fn init_params(seed: u64, n: usize, psi: f64, alpha: f64, beta: f64) -> UnconstrainedParams {
    assert!(n >= 2, "an FDN needs at least two delay lines");
    assert!(psi > 0.0 && alpha >= 1.0 && beta > alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("valid std");
    let beta_dist = Beta::new(alpha, beta).expect("valid beta parameters");

    let input_gains: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let feedback_proxy: Vec<f64> = (0..n * n).map(|_| normal.sample(&mut rng)).collect();
    let absorption_proxy: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let delay_proxy: Vec<f64> = (0..n).map(|_| psi * beta_dist.sample(&mut rng)).collect();

    UnconstrainedParams {
        input_gains,
        output_gains: vec![1.0 / n as f64; n],
        direct_gain: 1.0,
        feedback_proxy,
        absorption_proxy,
        delay_proxy,
    }
}

/// The unconstrained parameters registered on a tape as gradient leaves.
pub struct ParamLeaves<'t> {
    pub input_gains: Var<'t>,
    pub output_gains: Var<'t>,
    pub direct_gain: Var<'t>,
    pub feedback_proxy: Var<'t>,
    pub absorption_proxy: Var<'t>,
    pub delay_proxy: Var<'t>,
}

impl<'t> ParamLeaves<'t> {
    pub fn record(tape: &'t Tape, p: &UnconstrainedParams) -> Self {
        p.validate();
        let n = p.lines();
        ParamLeaves {
            input_gains: tape.leaf(Tensor::vector(p.input_gains.clone())),
            output_gains: tape.leaf(Tensor::vector(p.output_gains.clone())),
            direct_gain: tape.leaf(Tensor::scalar(p.direct_gain)),
            feedback_proxy: tape.leaf(Tensor::matrix(n, n, p.feedback_proxy.clone())),
            absorption_proxy: tape.leaf(Tensor::vector(p.absorption_proxy.clone())),
            delay_proxy: tape.leaf(Tensor::vector(p.delay_proxy.clone())),
        }
    }
}

/// Physical FDN parameters as tape nodes, produced by [`constrain`].
pub struct ConstrainedVars<'t> {
    pub input_gains: Var<'t>,
    pub output_gains: Var<'t>,
    pub direct_gain: Var<'t>,
    pub orthogonal: Var<'t>,
    pub absorption: Var<'t>,
    pub feedback: Var<'t>,
    pub delays: Var<'t>,
}

/// Differentiable constraint maps from proxies to physical parameters:
/// gains through |x|, the orthogonal part through the exponential of a
/// skew-symmetric matrix, absorption through a sigmoid, and delays through
/// |x| clipped to the buffer.
pub fn constrain<'t>(leaves: &ParamLeaves<'t>, q: usize) -> ConstrainedVars<'t> {
    let orthogonal = autodiff::matrix_exp(autodiff::strict_upper_skew(leaves.feedback_proxy));
    let absorption = leaves.absorption_proxy.sigmoid();
    let feedback = autodiff::scale_columns(orthogonal, absorption);
    let delays = leaves.delay_proxy.abs().min_const((q - 1) as f64);
    ConstrainedVars {
        input_gains: leaves.input_gains.abs(),
        output_gains: leaves.output_gains.abs(),
        direct_gain: leaves.direct_gain.abs(),
        orthogonal,
        absorption,
        feedback,
        delays,
    }
}

/// Physical FDN parameters as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedParams {
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub direct_gain: f64,
    /// Orthogonal part U, row-major N x N.
    pub orthogonal: Vec<f64>,
    /// Absorption diagonal, entries in (0, 1).
    pub absorption: Vec<f64>,
    /// Feedback matrix A = U * diag(absorption), row-major N x N.
    pub feedback: Vec<f64>,
    /// Delay-line lengths in fractional samples, each in [0, q-1].
    pub delays: Vec<f64>,
    /// Delay buffer length; kernels span 2q samples.
    pub q: usize,
}

impl ConstrainedParams {
    pub fn lines(&self) -> usize {
        self.input_gains.len()
    }

    /// Extracts the current values of constrained tape nodes.
    pub fn from_vars(cv: &ConstrainedVars<'_>, q: usize) -> Self {
        ConstrainedParams {
            input_gains: cv.input_gains.to_vec(),
            output_gains: cv.output_gains.to_vec(),
            direct_gain: cv.direct_gain.scalar_value(),
            orthogonal: cv.orthogonal.to_vec(),
            absorption: cv.absorption.to_vec(),
            feedback: cv.feedback.to_vec(),
            delays: cv.delays.to_vec(),
            q,
        }
    }
}

/// Runs the constraint maps on a throwaway tape and returns plain values.
pub fn constrain_values(p: &UnconstrainedParams, q: usize) -> ConstrainedParams {
    let tape = Tape::new();
    let leaves = ParamLeaves::record(&tape, p);
    let cv = constrain(&leaves, q);
    ConstrainedParams::from_vars(&cv, q)
}

/// Builds the length-`k` fractional-delay FIR for a delay of `m` samples as
/// the inverse DFT of the conjugate-symmetric frequency response
/// `exp(-j*m*(2*pi/k)*bin)` (Nyquist bin kept real). Gradient flows to `m`
/// through the bin phases.
pub fn delay_kernel<'t>(m: Var<'t>, k: usize) -> Var<'t> {
    assert!(k.is_power_of_two(), "kernel length {k} is not a power of two");
    let m_value = {
        let v = m.value();
        assert_eq!(v.len(), 1, "delay_kernel takes one delay at a time");
        v.data()[0]
    };
    assert!(
        (0.0..=(k / 2 - 1) as f64).contains(&m_value),
        "delay {m_value} outside [0, {}]",
        k / 2 - 1
    );

    let tape = m.tape();
    let omega = 2.0 * std::f64::consts::PI / k as f64;
    // Signed bin indices [0, 1, ..., K/2, -(K/2-1), ..., -1] make the upper
    // half the conjugate mirror of the lower half.
    let freqs: Vec<f64> = (0..k)
        .map(|i| {
            let signed = if i <= k / 2 {
                i as f64
            } else {
                i as f64 - k as f64
            };
            signed * omega
        })
        .collect();
    // im = -sin(phase), with the Nyquist imaginary part pinned to zero.
    let mut im_mask = vec![-1.0; k];
    im_mask[k / 2] = 0.0;

    let phase = m * tape.constant_vector(&freqs);
    let re = phase.cos();
    let im = phase.sin() * tape.constant_vector(&im_mask);
    autodiff::idft(re, im)
}

/// Dot product of a delay kernel with a line's input history, where
/// `history[j]` holds the input from `j` samples ago. This is the circular
/// convolution of the zero-padded buffer with the kernel, evaluated at the
/// current time.
pub fn delayed_read(kernel: &[f64], history: &[f64]) -> f64 {
    let taps = kernel.len().min(history.len());
    kernel[..taps]
        .iter()
        .zip(&history[..taps])
        .map(|(k, x)| k * x)
        .sum()
}

/// Renders the impulse response of the constrained FDN on the tape:
/// kernels are materialized once from the delays, then the state recursion
/// runs for `len` samples with a Kronecker-delta input. The first output
/// sample equals the direct gain exactly (delay lines start empty).
pub fn render_ir<'t>(cv: &ConstrainedVars<'t>, q: usize, len: usize) -> Var<'t> {
    assert!(len >= 1, "render length must be at least one sample");
    let n = cv.input_gains.len();
    let k = 2 * q;
    let kernels: Vec<Var<'t>> = (0..n)
        .map(|i| delay_kernel(cv.delays.slice(i, 1), k))
        .collect();
    autodiff::fdn_unroll(
        &kernels,
        cv.feedback,
        cv.input_gains,
        cv.output_gains,
        cv.direct_gain,
        q,
        len,
    )
}

/// N ring buffers plus their fractional-delay kernels; the inference-time
/// counterpart of the tape renderer.
pub struct DelayLineBank {
    q: usize,
    /// Kernel taps 1..=q reversed so reads are contiguous dots.
    reversed: Vec<Vec<f64>>,
    kernels: Vec<Vec<f64>>,
    buffers: Vec<Vec<f64>>,
    cursor: usize,
}

impl DelayLineBank {
    pub fn new(delays: &[f64], q: usize) -> Self {
        let k = 2 * q;
        let kernels: Vec<Vec<f64>> = delays
            .iter()
            .map(|&m| {
                let tape = Tape::new();
                let mv = tape.constant(Tensor::vector(vec![m]));
                delay_kernel(mv, k).to_vec()
            })
            .collect();
        let reversed = kernels
            .iter()
            .map(|kern| (0..q).map(|p| kern[q - p]).collect())
            .collect();
        DelayLineBank {
            q,
            reversed,
            kernels,
            buffers: vec![vec![0.0; q]; delays.len()],
            cursor: 0,
        }
    }

    pub fn kernel(&self, line: usize) -> &[f64] {
        &self.kernels[line]
    }

    /// Delayed output of `line` at the current time; call before `push`.
    pub fn read(&self, line: usize) -> f64 {
        let buf = &self.buffers[line];
        let krev = &self.reversed[line];
        // Ring contents in time order: buf[cursor..] are oldest, buf[..cursor]
        // newest; krev is aligned oldest-first.
        let split = self.q - self.cursor;
        crate::autodiff::plain_dot(&krev[..split], &buf[self.cursor..])
            + crate::autodiff::plain_dot(&krev[split..], &buf[..self.cursor])
    }

    /// Writes the current input of `line`.
    pub fn push(&mut self, line: usize, value: f64) {
        let at = self.cursor;
        self.buffers[line][at] = value;
    }

    /// Advances time by one sample; call once per step after all pushes.
    pub fn advance(&mut self) {
        self.cursor = (self.cursor + 1) % self.q;
    }
}

/// Multiply/add tallies of the integer-delay renderer.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
}

/// Renders with exact integer ring buffers, tallying arithmetic as it goes.
/// Delays must all be integral; a zero-length delay line reads silence, as
/// in the kernel formulation.
pub fn render_integer_with_count(p: &ConstrainedParams, len: usize) -> (Vec<f64>, OpCount) {
    let n = p.lines();
    let delays: Vec<usize> = p
        .delays
        .iter()
        .map(|&m| {
            assert_eq!(m.fract(), 0.0, "integer renderer needs integral delays");
            m as usize
        })
        .collect();

    let mut count = OpCount::default();
    let mut inputs: Vec<Vec<f64>> = vec![Vec::with_capacity(len); n];
    let mut s = vec![0.0; n];
    let mut y = Vec::with_capacity(len);

    for t in 0..len {
        let u = if t == 0 { 1.0 } else { 0.0 };
        for (i, si) in s.iter_mut().enumerate() {
            *si = if delays[i] >= 1 && t >= delays[i] {
                inputs[i][t - delays[i]]
            } else {
                0.0
            };
        }
        let mut out = p.direct_gain * u;
        count.mults += 1;
        for i in 0..n {
            out += p.output_gains[i] * s[i];
        }
        count.mults += n as u64;
        count.adds += n as u64;
        y.push(out);
        for i in 0..n {
            let mut v = p.input_gains[i] * u;
            for j in 0..n {
                v += p.feedback[i * n + j] * s[j];
            }
            inputs[i].push(v);
        }
        count.mults += (n * n + n) as u64;
        count.adds += (n * n) as u64;
    }

    (y, count)
}

/// Plain (untaped) impulse-response renderer. Integral delays use exact ring
/// buffers; fractional delays go through the kernel bank.
pub fn render_inference(p: &ConstrainedParams, len: usize) -> Vec<f64> {
    assert!(len >= 1);
    if p.delays.iter().all(|m| m.fract() == 0.0) {
        return render_integer_with_count(p, len).0;
    }

    let n = p.lines();
    let mut bank = DelayLineBank::new(&p.delays, p.q);
    let mut s = vec![0.0; n];
    let mut y = Vec::with_capacity(len);
    for t in 0..len {
        let u = if t == 0 { 1.0 } else { 0.0 };
        for (i, si) in s.iter_mut().enumerate() {
            *si = bank.read(i);
        }
        let mut out = p.direct_gain * u;
        for i in 0..n {
            out += p.output_gains[i] * s[i];
        }
        y.push(out);
        for i in 0..n {
            let mut v = p.input_gains[i] * u;
            for j in 0..n {
                v += p.feedback[i * n + j] * s[j];
            }
            bank.push(i, v);
        }
        bank.advance();
    }
    y
}

#[cfg(test)]
mod tests;
