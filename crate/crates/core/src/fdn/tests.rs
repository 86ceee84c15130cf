use super::*;
use crate::autodiff::Shape;
use std::f64::consts::PI;

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Independent reference FDN with integer buffer readout, written directly
/// from the state equations.
fn reference_fdn(
    delays: &[usize],
    feedback: &[f64],
    b: &[f64],
    c: &[f64],
    d: f64,
    len: usize,
) -> Vec<f64> {
    let n = delays.len();
    let mut v_hist: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut out = Vec::new();
    for t in 0..len {
        let u = if t == 0 { 1.0 } else { 0.0 };
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let m = delays[i];
                if m >= 1 && t >= m {
                    v_hist[i][t - m]
                } else {
                    0.0
                }
            })
            .collect();
        let y: f64 = c.iter().zip(&s).map(|(ci, si)| ci * si).sum::<f64>() + d * u;
        out.push(y);
        for i in 0..n {
            let v: f64 = feedback[i * n..i * n + n]
                .iter()
                .zip(&s)
                .map(|(a, si)| a * si)
                .sum::<f64>()
                + b[i] * u;
            v_hist[i].push(v);
        }
    }
    out
}

#[test]
fn constrain_zero_proxies_give_identity_and_half_absorption() {
    let n = 3;
    let p = UnconstrainedParams {
        input_gains: ones(n),
        output_gains: ones(n),
        direct_gain: 1.0,
        feedback_proxy: vec![0.0; n * n],
        absorption_proxy: vec![0.0; n],
        delay_proxy: vec![5.0, 7.0, 9.0],
    };
    let cp = constrain_values(&p, 64);
    assert_eq!(cp.input_gains, ones(n));
    assert_eq!(cp.output_gains, ones(n));
    assert_eq!(cp.direct_gain, 1.0);
    for i in 0..n {
        for j in 0..n {
            let expect_u = if i == j { 1.0 } else { 0.0 };
            assert!((cp.orthogonal[i * n + j] - expect_u).abs() < 1e-15);
            let expect_a = if i == j { 0.5 } else { 0.0 };
            assert!((cp.feedback[i * n + j] - expect_a).abs() < 1e-15);
        }
        assert!((cp.absorption[i] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn delay_constraint_reflects_and_clips() {
    let n = 2;
    let p = UnconstrainedParams {
        input_gains: ones(n),
        output_gains: ones(n),
        direct_gain: 1.0,
        feedback_proxy: vec![0.0; n * n],
        absorption_proxy: vec![0.0; n],
        delay_proxy: vec![-5.0, 4096.0],
    };
    let cp = constrain_values(&p, 1024);
    assert_eq!(cp.delays, vec![5.0, 1023.0]);
}

#[test]
fn zero_delay_kernel_is_identity() {
    let tape = Tape::new();
    let m = tape.constant(Tensor::vector(vec![0.0]));
    let kernel = delay_kernel(m, 8).to_vec();
    assert!((kernel[0] - 1.0).abs() < 1e-12);
    for v in &kernel[1..] {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn integer_delay_kernels_are_one_hot() {
    for m in 0..8 {
        let tape = Tape::new();
        let mv = tape.constant(Tensor::vector(vec![m as f64]));
        let kernel = delay_kernel(mv, 16).to_vec();
        for (i, v) in kernel.iter().enumerate() {
            let expect = if i == m { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9, "m={m}, tap {i}: {v}");
        }
    }
}

#[test]
fn fractional_kernel_matches_naive_inverse_transform() {
    let m = 0.5;
    let k = 8;
    let tape = Tape::new();
    let mv = tape.constant(Tensor::vector(vec![m]));
    let kernel = delay_kernel(mv, k).to_vec();

    // Naive (1/K) sum_k D[k] e^{j 2 pi k n / K} with D per the filter
    // definition: D[0]=1, D[k]=e^{-j m w k} below Nyquist, D[K/2]=cos(m pi),
    // conjugate mirror above.
    let w = 2.0 * PI / k as f64;
    for n in 0..k {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for bin in 0..k {
            let (d_re, d_im) = if bin == 0 {
                (1.0, 0.0)
            } else if bin < k / 2 {
                ((m * w * bin as f64).cos(), -(m * w * bin as f64).sin())
            } else if bin == k / 2 {
                ((m * PI).cos(), 0.0)
            } else {
                let mirror = (k - bin) as f64;
                ((m * w * mirror).cos(), (m * w * mirror).sin())
            };
            let ang = w * (bin * n) as f64;
            acc_re += d_re * ang.cos() - d_im * ang.sin();
            acc_im += d_re * ang.sin() + d_im * ang.cos();
        }
        acc_re /= k as f64;
        acc_im /= k as f64;
        assert!(acc_im.abs() < 1e-12);
        assert!((kernel[n] - acc_re).abs() < 1e-9, "tap {n}");
    }

    let mass: f64 = kernel.iter().sum();
    assert!((mass - 1.0).abs() < 1e-9, "kernel mass {mass}");
}

#[test]
fn delayed_read_examples() {
    // One-hot kernel at lag 5 picks the sample from 5 steps ago.
    let mut kernel = vec![0.0; 16];
    kernel[5] = 1.0;
    let mut history = vec![0.0; 16];
    history[5] = 1.0;
    assert_eq!(delayed_read(&kernel, &history), 1.0);

    // Zero delay reads the current sample.
    let tape = Tape::new();
    let m0 = tape.constant(Tensor::vector(vec![0.0]));
    let identity = delay_kernel(m0, 16).to_vec();
    let history: Vec<f64> = (0..16).map(|i| 0.3 * i as f64 - 1.0).collect();
    assert!((delayed_read(&identity, &history) - history[0]).abs() < 1e-9);

    // Fractional delay of an impulse reads the periodic sinc half a sample
    // off its peak.
    let m = tape.constant(Tensor::vector(vec![2.5]));
    let frac = delay_kernel(m, 16).to_vec();
    let mut impulse_two_ago = vec![0.0; 16];
    impulse_two_ago[2] = 1.0;
    assert!((delayed_read(&frac, &impulse_two_ago) - frac[2]).abs() < 1e-15);
}

#[test]
fn render_without_recirculation_is_direct_path_only() {
    let n = 2;
    let p = UnconstrainedParams {
        input_gains: vec![0.0; n],
        output_gains: vec![0.3, 0.4],
        direct_gain: 0.7,
        feedback_proxy: vec![0.2; n * n],
        absorption_proxy: vec![0.0; n],
        delay_proxy: vec![3.0, 6.0],
    };
    let tape = Tape::new();
    let leaves = ParamLeaves::record(&tape, &p);
    let cv = constrain(&leaves, 16);
    let y = render_ir(&cv, 16, 32).to_vec();
    assert_eq!(y[0], 0.7);
    for v in &y[1..] {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn single_line_comb_filter_oracle() {
    // One line, integer delay 3, loop gain 0.5: geometric comb.
    let p = ConstrainedParams {
        input_gains: vec![1.0],
        output_gains: vec![1.0],
        direct_gain: 0.0,
        orthogonal: vec![1.0],
        absorption: vec![0.5],
        feedback: vec![0.5],
        delays: vec![3.0],
        q: 8,
    };
    let y = render_inference(&p, 13);
    let mut expect = vec![0.0; 13];
    expect[3] = 1.0;
    expect[6] = 0.5;
    expect[9] = 0.25;
    expect[12] = 0.125;
    for (a, b) in y.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{y:?}");
    }
}

#[test]
fn bank_path_matches_integer_path() {
    // Same comb through the fractional kernel bank (delay forced fractional
    // by an epsilon that the one-hot tolerance absorbs).
    let p_int = ConstrainedParams {
        input_gains: vec![1.0, 0.8],
        output_gains: vec![1.0, 0.5],
        direct_gain: 0.1,
        orthogonal: vec![1.0, 0.0, 0.0, 1.0],
        absorption: vec![0.6, 0.5],
        feedback: vec![0.36, -0.4, 0.48, 0.3],
        delays: vec![3.0, 5.0],
        q: 16,
    };
    let y_int = render_inference(&p_int, 200);

    let mut bank = DelayLineBank::new(&p_int.delays, p_int.q);
    let n = 2;
    let mut y_bank = Vec::new();
    for t in 0..200 {
        let u = if t == 0 { 1.0 } else { 0.0 };
        let s: Vec<f64> = (0..n).map(|i| bank.read(i)).collect();
        let y: f64 = p_int
            .output_gains
            .iter()
            .zip(&s)
            .map(|(c, si)| c * si)
            .sum::<f64>()
            + p_int.direct_gain * u;
        y_bank.push(y);
        for i in 0..n {
            let v: f64 = p_int.feedback[i * n..i * n + n]
                .iter()
                .zip(&s)
                .map(|(a, si)| a * si)
                .sum::<f64>()
                + p_int.input_gains[i] * u;
            bank.push(i, v);
        }
        bank.advance();
    }
    for (a, b) in y_int.iter().zip(&y_bank) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn tape_render_matches_reference_integer_fdn() {
    let n = 3;
    let delays = [2usize, 5, 9];
    let feedback = [0.3, -0.2, 0.1, 0.25, 0.1, -0.3, -0.15, 0.2, 0.35];
    let b = [1.0, 0.7, -0.4];
    let c = [0.5, -0.6, 0.8];
    let d = 0.9;
    let q = 16;

    let tape = Tape::new();
    let cv = ConstrainedVars {
        input_gains: tape.constant(Tensor::vector(b.to_vec())),
        output_gains: tape.constant(Tensor::vector(c.to_vec())),
        direct_gain: tape.constant(Tensor::scalar(d)),
        orthogonal: tape.constant(Tensor::identity(n)),
        absorption: tape.constant(Tensor::vector(vec![1.0; n])),
        feedback: tape.constant(Tensor::matrix(n, n, feedback.to_vec())),
        delays: tape.constant(Tensor::vector(delays.iter().map(|&m| m as f64).collect())),
    };
    let y = render_ir(&cv, q, 256).to_vec();
    let expect = reference_fdn(&delays, &feedback, &b, &c, d, 256);
    for (t, (a, e)) in y.iter().zip(&expect).enumerate() {
        assert!((a - e).abs() < 1e-6, "sample {t}: {a} vs {e}");
    }
}

#[test]
fn contractive_loop_renders_decaying_finite_ir() {
    let p = init_params(3, 4, 24.0, 1.1, 6.0);
    let cp = constrain_values(&p, 32);
    let y = render_inference(&cp, 2048);
    assert!(y.iter().all(|v| v.is_finite()));
    let energy = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
    let head = energy(&y[..512]);
    let tail = energy(&y[1536..]);
    assert!(tail < head, "tail energy {tail} should fall below head {head}");
    assert!(energy(&y) < f64::INFINITY);
}

#[test]
fn init_is_deterministic_and_shaped_by_the_priors() {
    let a = init_params(42, 6, 1024.0, 1.1, 6.0);
    let b = init_params(42, 6, 1024.0, 1.1, 6.0);
    assert_eq!(a, b);

    assert_eq!(a.output_gains, vec![1.0 / 6.0; 6]);
    assert_eq!(a.direct_gain, 1.0);
    for &m in &a.delay_proxy {
        assert!(m > 0.0 && m < 1024.0);
    }

    // Sample mean of the delay prior approaches psi * alpha / (alpha + beta)
    // (about 10 ms at 16 kHz).
    let mut acc = 0.0;
    let draws = 400;
    for seed in 0..draws {
        acc += init_params(seed, 6, 1024.0, 1.1, 6.0)
            .delay_proxy
            .iter()
            .sum::<f64>()
            / 6.0;
    }
    let mean = acc / draws as f64;
    let expect = 1024.0 * 1.1 / 7.1;
    assert!(
        (mean - expect).abs() < 15.0,
        "sample mean {mean} vs analytic {expect}"
    );
    let mean_ms = mean / 16.0;
    assert!(mean_ms > 8.0 && mean_ms < 12.0, "mean delay {mean_ms} ms");
}

#[test]
fn constrained_orthogonal_part_is_orthogonal() {
    for seed in 0..10 {
        let p = init_params(seed, 6, 1024.0, 1.1, 6.0);
        let cp = constrain_values(&p, 1024);
        let n = 6;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += cp.orthogonal[k * n + i] * cp.orthogonal[k * n + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
        assert!(worst <= 1e-6, "seed {seed}: defect {worst:e}");
    }
}

#[test]
fn integer_renderer_arithmetic_matches_the_flop_model() {
    let n = 6;
    let p = init_params(9, n, 900.0, 1.1, 6.0);
    let mut cp = constrain_values(&p, 1024);
    for m in cp.delays.iter_mut() {
        *m = m.round();
    }
    let len = 500;
    let (_, count) = render_integer_with_count(&cp, len);
    let expected = len as u64 * (2 * n * n + 3 * n + 1) as u64;
    assert_eq!(count.mults + count.adds, expected);
}

#[test]
fn delay_gradient_points_toward_the_target_lag() {
    // A single effective line passing one delayed impulse (absorption driven
    // to ~0 so nothing recirculates), scored with the energy-decay loss the
    // trainer actually minimizes.
    let target_lag = 6.0;
    let q = 16;
    let mut target = vec![0.0; 24];
    target[target_lag as usize] = 1.0;
    let target_edc: Vec<f64> = (0..24)
        .map(|n| target[n..].iter().map(|v| v * v).sum())
        .collect();
    let edc_norm: f64 = target_edc.iter().map(|v| v * v).sum();

    for m0 in [4.3, 4.5, 5.5, 6.5, 7.5, 7.7] {
        let p = UnconstrainedParams {
            input_gains: vec![1.0, 0.0],
            output_gains: vec![1.0, 0.0],
            direct_gain: 0.0,
            feedback_proxy: vec![0.0; 4],
            absorption_proxy: vec![-30.0; 2],
            delay_proxy: vec![m0, 2.0],
        };
        let tape = Tape::new();
        let leaves = ParamLeaves::record(&tape, &p);
        let cv = constrain(&leaves, q);
        let y = render_ir(&cv, q, 24);
        let edc_hat = y.square().reverse_cumsum();
        let diff = edc_hat - tape.constant(Tensor::vector(target_edc.clone()));
        let loss = diff.square().sum() * tape.constant_scalar(1.0 / edc_norm);
        let grads = loss.backward();
        let g = grads.wrt(leaves.delay_proxy).data()[0];
        assert!(
            (g > 0.0) == (m0 > target_lag) && g != 0.0,
            "m={m0}: gradient {g} does not move the delay toward {target_lag}"
        );
    }
}

#[test]
#[should_panic(expected = "at least two delay lines")]
fn unconstrained_params_require_two_lines() {
    let p = UnconstrainedParams {
        input_gains: vec![1.0],
        output_gains: vec![1.0],
        direct_gain: 0.0,
        feedback_proxy: vec![0.0],
        absorption_proxy: vec![0.0],
        delay_proxy: vec![1.0],
    };
    p.validate();
}

#[test]
fn kernel_shape_is_vector_of_length_k() {
    let tape = Tape::new();
    let m = tape.constant(Tensor::vector(vec![1.5]));
    let kernel = delay_kernel(m, 32);
    assert_eq!(kernel.shape(), Shape::Vector(32));
}
