//! Hand-derived forward/backward kernels for the two operations that dominate
//! training cost: the sample-by-sample FDN recursion and the soft echo-density
//! profile. Both are recorded as single tape nodes; their adjoints are
//! validated against finite differences in the test suites.

/// Guard applied to `sqrt` adjoints so silent frames do not produce an
/// infinite gradient. Forward values are left exact.
pub(crate) const SQRT_GUARD: f64 = 1e-12;

/// Four-accumulator dot product. Deterministic summation order, fast enough
/// for the unrolled recursion's inner loop.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// FDN unroll
// ---------------------------------------------------------------------------

/// Intermediate state captured by the forward pass and reused by the adjoint
/// sweep. Layout is `[line * len + t]`.
pub(crate) struct FdnUnrollSaved {
    pub line_inputs: Vec<f64>,
    pub line_outputs: Vec<f64>,
}

pub(crate) struct FdnUnrollGrads {
    pub kernels: Vec<Vec<f64>>,
    pub feedback: Vec<f64>,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub direct: f64,
}

/// Reverse a kernel's first `1..=q` taps so the recursion's inner sum becomes
/// a forward dot product over contiguous history.
fn reversed_taps(kernel: &[f64], q: usize) -> Vec<f64> {
    (0..q).map(|p| kernel[q - p]).collect()
}

/// Runs the FDN state recursion driven by a unit impulse.
///
/// Per step `t`: each line output is read from its own input history through
/// the fractional-delay kernel (taps `1..=q`; the tap at lag 0 sees the
/// not-yet-written current input, keeping the loop free of delay-free paths),
/// the output sample is `c·s + d·u`, and the new line inputs `A·s + b·u` are
/// appended to the history.
pub(crate) fn fdn_unroll_forward(
    kernels: &[&[f64]],
    feedback: &[f64],
    input_gains: &[f64],
    output_gains: &[f64],
    direct: f64,
    q: usize,
    len: usize,
) -> (Vec<f64>, FdnUnrollSaved) {
    let n = kernels.len();
    assert!(n >= 1 && len >= 1);
    assert_eq!(feedback.len(), n * n, "feedback matrix must be NxN");
    assert_eq!(input_gains.len(), n);
    assert_eq!(output_gains.len(), n);
    for k in kernels {
        assert!(k.len() > q, "kernel must cover the read depth");
    }

    let krev: Vec<Vec<f64>> = kernels.iter().map(|k| reversed_taps(k, q)).collect();
    let mut x = vec![0.0; n * len];
    let mut s = vec![0.0; n * len];
    let mut y = vec![0.0; len];
    let mut s_now = vec![0.0; n];

    for t in 0..len {
        let u = if t == 0 { 1.0 } else { 0.0 };
        let depth = t.min(q);
        for i in 0..n {
            let sv = if depth == 0 {
                0.0
            } else {
                dot(&krev[i][q - depth..], &x[i * len + t - depth..i * len + t])
            };
            s_now[i] = sv;
            s[i * len + t] = sv;
        }
        y[t] = dot(output_gains, &s_now) + direct * u;
        for i in 0..n {
            x[i * len + t] = dot(&feedback[i * n..(i + 1) * n], &s_now) + input_gains[i] * u;
        }
    }

    (
        y,
        FdnUnrollSaved {
            line_inputs: x,
            line_outputs: s,
        },
    )
}

/// Adjoint of [`fdn_unroll_forward`]: walks the recursion in reverse time,
/// accumulating parameter gradients. Cost is a small constant times the
/// forward pass.
pub(crate) fn fdn_unroll_backward(
    y_bar: &[f64],
    kernels: &[&[f64]],
    feedback: &[f64],
    output_gains: &[f64],
    q: usize,
    saved: &FdnUnrollSaved,
) -> FdnUnrollGrads {
    let n = kernels.len();
    let len = y_bar.len();
    let x = &saved.line_inputs;
    let s = &saved.line_outputs;
    let krev: Vec<Vec<f64>> = kernels.iter().map(|k| reversed_taps(k, q)).collect();

    let mut x_bar = vec![0.0; n * len];
    let mut krev_bar = vec![vec![0.0; q]; n];
    let mut a_bar = vec![0.0; n * n];
    let mut b_bar = vec![0.0; n];
    let mut c_bar = vec![0.0; n];
    let mut d_bar = 0.0;
    let mut s_bar = vec![0.0; n];
    let mut s_row = vec![0.0; n];

    for t in (0..len).rev() {
        let u = if t == 0 { 1.0 } else { 0.0 };
        let yb = y_bar[t];
        for (i, sv) in s_row.iter_mut().enumerate() {
            *sv = s[i * len + t];
        }
        // s[i][t] feeds y[t] through c and every x[r][t] through A's column i.
        for (i, sb) in s_bar.iter_mut().enumerate() {
            let mut v = yb * output_gains[i];
            for r in 0..n {
                v += x_bar[r * len + t] * feedback[r * n + i];
            }
            *sb = v;
        }
        d_bar += yb * u;
        axpy(&mut c_bar, yb, &s_row);
        for r in 0..n {
            let xb = x_bar[r * len + t];
            if xb != 0.0 {
                b_bar[r] += xb * u;
                axpy(&mut a_bar[r * n..(r + 1) * n], xb, &s_row);
            }
        }
        let depth = t.min(q);
        if depth > 0 {
            for i in 0..n {
                let sb = s_bar[i];
                if sb != 0.0 {
                    let hist = &x[i * len + t - depth..i * len + t];
                    axpy(&mut krev_bar[i][q - depth..], sb, hist);
                    axpy(&mut x_bar[i * len + t - depth..i * len + t], sb, &krev[i][q - depth..]);
                }
            }
        }
    }

    let kernel_bar = krev_bar
        .iter()
        .enumerate()
        .map(|(i, kb)| {
            let mut g = vec![0.0; kernels[i].len()];
            for (p, v) in kb.iter().enumerate() {
                g[q - p] = *v;
            }
            g
        })
        .collect();

    FdnUnrollGrads {
        kernels: kernel_bar,
        feedback: a_bar,
        input_gains: b_bar,
        output_gains: c_bar,
        direct: d_bar,
    }
}

// ---------------------------------------------------------------------------
// Soft echo-density profile
// ---------------------------------------------------------------------------

pub(crate) struct SoftEdpSaved {
    /// |h| padded with `nu` zeros on both sides.
    pub abs_padded: Vec<f64>,
    /// Per-frame weighted standard deviation.
    pub sigma: Vec<f64>,
}

/// Sliding-window soft proportion of taps above the local standard deviation.
///
/// For frame center `n`: `eta[n] = norm * sum_j w[j] * sigmoid(kappa[n] *
/// (|h[tau]| - sigma_n))` with `sigma_n` the window-weighted RMS of the frame.
/// Out-of-range taps enter as zero samples.
pub(crate) fn soft_edp_forward(
    h: &[f64],
    window: &[f64],
    kappa: &[f64],
    norm: f64,
) -> (Vec<f64>, SoftEdpSaved) {
    let l = h.len();
    let wn = window.len();
    assert!(wn % 2 == 1, "window length must be odd");
    assert_eq!(kappa.len(), l, "kappa schedule must match signal length");
    let nu = wn / 2;

    let mut abs_padded = vec![0.0; l + 2 * nu];
    for (dst, src) in abs_padded[nu..nu + l].iter_mut().zip(h) {
        *dst = src.abs();
    }

    let mut eta = vec![0.0; l];
    let mut sigma = vec![0.0; l];
    for n in 0..l {
        let frame = &abs_padded[n..n + wn];
        let power: f64 = window.iter().zip(frame).map(|(w, a)| w * a * a).sum();
        let sg = power.max(0.0).sqrt();
        sigma[n] = sg;
        let kn = kappa[n];
        let mass: f64 = window
            .iter()
            .zip(frame)
            .map(|(w, a)| w * sigmoid(kn * (a - sg)))
            .sum();
        eta[n] = norm * mass;
    }

    (eta, SoftEdpSaved { abs_padded, sigma })
}

/// Adjoint of [`soft_edp_forward`]. The gradient flows through both the tap
/// magnitudes and the frame standard deviation.
pub(crate) fn soft_edp_backward(
    eta_bar: &[f64],
    h: &[f64],
    window: &[f64],
    kappa: &[f64],
    norm: f64,
    saved: &SoftEdpSaved,
) -> Vec<f64> {
    let l = h.len();
    let wn = window.len();
    let nu = wn / 2;
    let sigma_floor = SQRT_GUARD.sqrt();

    let mut h_bar = vec![0.0; l];
    let mut gp = vec![0.0; wn];
    for n in 0..l {
        let eb = eta_bar[n];
        if eb == 0.0 {
            continue;
        }
        let sg = saved.sigma[n];
        let kn = kappa[n];
        let frame = &saved.abs_padded[n..n + wn];
        let mut s_acc = 0.0;
        for j in 0..wn {
            let g = sigmoid(kn * (frame[j] - sg));
            let d = g * (1.0 - g) * kn;
            gp[j] = d;
            s_acc += window[j] * d;
        }
        let sg_guarded = sg.max(sigma_floor);
        let lo = nu.saturating_sub(n);
        let hi = wn.min(l + nu - n);
        for j in lo..hi {
            let tau = n + j - nu;
            let d_eta = norm * (window[j] * gp[j] - s_acc * window[j] * frame[j] / sg_guarded);
            h_bar[tau] += eb * d_eta * sign_or_zero(h[tau]);
        }
    }
    h_bar
}
