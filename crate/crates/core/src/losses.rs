//! Training losses: normalized EDC error plus a soft echo-density
//! regularizer, with the hard echo-density profile kept for analysis.

use crate::autodiff::{self, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `1 / erfc(1 / sqrt(2))`: normalizes the echo-density profile so Gaussian
/// reverberation sits near 1.
pub const EDP_NORMALIZATION: f64 = 3.151_487_187_534_377;

/// Loss weights and echo-density settings.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the echo-density term.
    pub lambda: f64,
    /// Echo-density analysis window length in milliseconds.
    pub window_ms: f64,
    /// Sigmoid scale at the first sample of the loss span.
    pub kappa_start: f64,
    /// Sigmoid scale at the last sample of the loss span.
    pub kappa_end: f64,
    /// Number of samples both signals are truncated to (ceil(T60 * fs)).
    pub l_t60: usize,
}

impl LossConfig {
    pub fn new(l_t60: usize) -> Self {
        LossConfig {
            lambda: 0.1,
            window_ms: 20.0,
            kappa_start: 1e2,
            kappa_end: 1e5,
            l_t60,
        }
    }

    pub fn validate(&self) {
        assert!(self.lambda >= 0.0, "lambda must be nonnegative");
        assert!(
            self.kappa_start > 0.0 && self.kappa_end >= self.kappa_start,
            "kappa schedule must satisfy kappa_end >= kappa_start > 0"
        );
        assert!(self.l_t60 >= 2, "loss span must cover at least two samples");
        assert!(self.window_ms > 0.0, "window length must be positive");
    }

    /// Per-sample sigmoid scale, linear from `kappa_start` to `kappa_end`.
    pub fn kappa_schedule(&self, len: usize) -> Vec<f64> {
        let slope = if len > 1 {
            (self.kappa_end - self.kappa_start) / (len - 1) as f64
        } else {
            0.0
        };
        (0..len)
            .map(|n| self.kappa_start + slope * n as f64)
            .collect()
    }
}

/// Schroeder backward integration: `eps[n] = sum_{tau >= n} h[tau]^2`.
pub fn edc(h: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = h.iter().map(|v| v * v).collect();
    let mut acc = 0.0;
    for slot in out.iter_mut().rev() {
        acc += *slot;
        *slot = acc;
    }
    out
}

/// Tape version of [`edc`].
pub fn edc_var(h: Var<'_>) -> Var<'_> {
    h.square().reverse_cumsum()
}

/// Normalized mean squared error between the two EDCs, on a linear scale.
pub fn edc_loss(target: &[f64], pred: &[f64]) -> Result<f64> {
    assert_eq!(target.len(), pred.len(), "signals must have equal length");
    assert!(target.len() >= 2, "signals must have at least two samples");
    let et = edc(target);
    let denom: f64 = et.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateInput("EDC loss target is all-zero".into()));
    }
    let ep = edc(pred);
    let num: f64 = et.iter().zip(&ep).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / denom)
}

/// Odd-length Hann window normalized to unit sum.
pub fn hann_window(window_ms: f64, sample_rate: u32) -> Vec<f64> {
    assert!(window_ms > 0.0);
    let mut len = (window_ms * sample_rate as f64 / 1000.0).round() as usize;
    if len % 2 == 0 {
        len += 1;
    }
    len = len.max(3);
    let mut w: Vec<f64> = (0..len)
        .map(|j| {
            let phase = 2.0 * std::f64::consts::PI * j as f64 / (len - 1) as f64;
            0.5 * (1.0 - phase.cos())
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Hard (non-differentiable) normalized echo-density profile: per frame, the
/// window-weighted fraction of taps strictly above the frame's weighted
/// standard deviation, scaled by [`EDP_NORMALIZATION`]. Out-of-range taps
/// count as zero samples.
pub fn edp(h: &[f64], window: &[f64]) -> Vec<f64> {
    assert!(window.len() % 2 == 1, "window length must be odd");
    let l = h.len();
    let wn = window.len();
    let nu = wn / 2;
    let mut abs_padded = vec![0.0; l + 2 * nu];
    for (dst, src) in abs_padded[nu..nu + l].iter_mut().zip(h) {
        *dst = src.abs();
    }
    (0..l)
        .map(|n| {
            let frame = &abs_padded[n..n + wn];
            let power: f64 = window.iter().zip(frame).map(|(w, a)| w * a * a).sum();
            let sigma = power.sqrt();
            let mass: f64 = window
                .iter()
                .zip(frame)
                .filter(|(_, a)| **a > sigma)
                .map(|(w, _)| w)
                .sum();
            EDP_NORMALIZATION * mass
        })
        .collect()
}

/// Soft echo-density profile on the tape; the indicator is replaced with a
/// sigmoid scaled by the per-sample `kappa`, and the frame deviation stays
/// differentiable.
pub fn soft_edp_var<'t>(h: Var<'t>, window: &[f64], kappa: &[f64]) -> Var<'t> {
    assert!(window.len() % 2 == 1, "window length must be odd");
    autodiff::soft_edp(h, window, kappa, EDP_NORMALIZATION)
}

/// Plain-value soft echo-density profile (scratch tape).
pub fn soft_edp(h: &[f64], window: &[f64], kappa: &[f64]) -> Vec<f64> {
    let tape = Tape::new();
    let hv = tape.constant(Tensor::vector(h.to_vec()));
    soft_edp_var(hv, window, kappa).to_vec()
}

/// Mean squared error between two equal-length profiles.
pub fn profile_mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Soft-EDP loss between two signals: profiles via [`soft_edp`], then MSE.
pub fn edp_loss(target: &[f64], pred: &[f64], window: &[f64], kappa: &[f64]) -> f64 {
    profile_mse(
        &soft_edp(target, window, kappa),
        &soft_edp(pred, window, kappa),
    )
}

/// Everything about the target that the per-iteration loss reuses: its EDC,
/// the EDC normalization, and its soft echo-density profile. Constant across
/// iterations, so computed once.
#[derive(Debug, Clone)]
pub struct TargetCurves {
    pub edc: Vec<f64>,
    pub edc_sq_sum: f64,
    pub soft_edp: Vec<f64>,
    pub window: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda: f64,
}

impl TargetCurves {
    /// `target` must already be truncated to the loss span.
    pub fn build(target: &[f64], config: &LossConfig, sample_rate: u32) -> Result<Self> {
        config.validate();
        assert_eq!(
            target.len(),
            config.l_t60,
            "target must be truncated to the configured loss span"
        );
        let edc_curve = edc(target);
        let edc_sq_sum: f64 = edc_curve.iter().map(|v| v * v).sum();
        if edc_sq_sum == 0.0 {
            return Err(Error::DegenerateInput(
                "loss target carries no energy".into(),
            ));
        }
        let window = hann_window(config.window_ms, sample_rate);
        let kappa = config.kappa_schedule(target.len());
        let soft = soft_edp(target, &window, &kappa);
        Ok(TargetCurves {
            edc: edc_curve,
            edc_sq_sum,
            soft_edp: soft,
            window,
            kappa,
            lambda: config.lambda,
        })
    }
}

/// The three loss nodes of one iteration.
pub struct LossVars<'t> {
    pub total: Var<'t>,
    pub edc: Var<'t>,
    pub edp: Var<'t>,
}

/// Builds `total = edc + lambda * edp` against precomputed target curves.
/// With `lambda = 0` the echo-density node is still evaluated for reporting
/// but stays outside the optimized expression.
pub fn composite_loss_var<'t>(
    tape: &'t Tape,
    curves: &TargetCurves,
    pred: Var<'t>,
) -> LossVars<'t> {
    assert_eq!(
        pred.len(),
        curves.edc.len(),
        "prediction and target must share the loss span"
    );
    let edc_diff = edc_var(pred) - tape.constant(Tensor::vector(curves.edc.clone()));
    let edc_term = edc_diff.square().sum() * tape.constant_scalar(1.0 / curves.edc_sq_sum);

    let eta_hat = soft_edp_var(pred, &curves.window, &curves.kappa);
    let edp_diff = eta_hat - tape.constant(Tensor::vector(curves.soft_edp.clone()));
    let edp_term = edp_diff.square().mean();

    let total = if curves.lambda > 0.0 {
        edc_term + edp_term * tape.constant_scalar(curves.lambda)
    } else {
        edc_term
    };
    LossVars {
        total,
        edc: edc_term,
        edp: edp_term,
    }
}

#[cfg(test)]
mod tests;
