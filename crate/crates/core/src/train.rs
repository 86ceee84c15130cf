//! Adam and the end-to-end fitting loop with best-snapshot tracking.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::Rir;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::fdn::{
    constrain, init_params, render_inference, render_ir, ConstrainedParams, ParamLeaves,
    UnconstrainedParams, DEFAULT_BUFFER, DEFAULT_LINES,
};
use crate::losses::{composite_loss_var, LossConfig, TargetCurves};
use crate::metrics::{estimate_t60, metric_deltas, MetricsComparison};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub max_iterations: usize,
    /// Echo-density loss weight; 0 trains on the EDC alone.
    pub lambda: f64,
    pub seed: u64,
    /// Number of delay lines.
    pub lines: usize,
    /// Delay buffer length in samples.
    pub buffer: usize,
    /// Delay-proxy initialization scale (samples) and Beta shape parameters.
    pub delay_init_scale: f64,
    pub delay_init_alpha: f64,
    pub delay_init_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            max_iterations: 1000,
            lambda: 0.1,
            seed: 0,
            lines: DEFAULT_LINES,
            buffer: DEFAULT_BUFFER,
            delay_init_scale: 1024.0,
            delay_init_alpha: 1.1,
            delay_init_beta: 6.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.learning_rate > 0.0);
        assert!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2));
        assert!(self.max_iterations >= 1);
        assert!(self.lambda >= 0.0);
        assert!(self.lines >= 2);
        assert!(self.buffer.is_power_of_two(), "buffer must be a power of two");
    }
}

/// First/second-moment accumulators for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub edc: f64,
    pub edp: f64,
    pub millis: f64,
}

/// Cumulative wall-clock split of the loop phases.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub forward_ms: f64,
    pub loss_ms: f64,
    pub backward_update_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub best_loss: f64,
    /// Loss span in samples (ceil(T60 * fs), capped at the target length).
    pub l_t60: usize,
    pub timing: TimingBreakdown,
    /// Metrics of the best render against the target, when computable.
    pub metrics: Option<MetricsComparison>,
}

pub struct FitResult {
    pub best_params: UnconstrainedParams,
    pub best_constrained: ConstrainedParams,
    pub report: TrainReport,
}

/// Collects leaf adjoints in the same order as [`UnconstrainedParams::flatten`].
fn flatten_grads(grads: &crate::autodiff::Gradients, leaves: &ParamLeaves<'_>) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(grads.wrt(leaves.input_gains).data());
    out.extend_from_slice(grads.wrt(leaves.output_gains).data());
    out.push(grads.wrt(leaves.direct_gain).as_scalar());
    out.extend_from_slice(grads.wrt(leaves.feedback_proxy).data());
    out.extend_from_slice(grads.wrt(leaves.absorption_proxy).data());
    out.extend_from_slice(grads.wrt(leaves.delay_proxy).data());
    out
}

/// Fits an FDN to a prepared target (trimmed, unit-norm, 16 kHz): at every
/// iteration the IR is rendered over the loss span, scored against the
/// cached target curves, backpropagated, and stepped with Adam; the snapshot
/// with the lowest composite loss is returned.
pub fn fit(target: &Rir, config: &TrainConfig) -> Result<FitResult> {
    config.validate();
    let fs = target.sample_rate();
    let t60 = estimate_t60(target)?;
    let l_t60 = ((t60 * fs as f64).ceil() as usize).min(target.len());
    if l_t60 < 2 {
        return Err(Error::DegenerateInput(
            "loss span shorter than two samples".into(),
        ));
    }

    let mut loss_cfg = LossConfig::new(l_t60);
    loss_cfg.lambda = config.lambda;
    let curves = TargetCurves::build(&target.samples()[..l_t60], &loss_cfg, fs)?;

    let mut params = init_params(
        config.seed,
        config.lines,
        config.delay_init_scale,
        config.delay_init_alpha,
        config.delay_init_beta,
    );
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());

    let mut records = Vec::with_capacity(config.max_iterations);
    let mut timing = TimingBreakdown::default();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0;
    let mut best_params = params.clone();
    let mut best_constrained: Option<ConstrainedParams> = None;

    for iteration in 0..config.max_iterations {
        let iter_start = Instant::now();
        let tape = Tape::new();
        let leaves = ParamLeaves::record(&tape, &params);
        let cv = constrain(&leaves, config.buffer);
        let prediction = render_ir(&cv, config.buffer, l_t60);
        let forward_done = Instant::now();

        let losses = composite_loss_var(&tape, &curves, prediction);
        let total = losses.total.scalar_value();
        let edc = losses.edc.scalar_value();
        let edp = losses.edp.scalar_value();
        if !total.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        let loss_done = Instant::now();

        if total < best_loss {
            best_loss = total;
            best_iteration = iteration;
            best_params = params.clone();
            best_constrained = Some(ConstrainedParams::from_vars(&cv, config.buffer));
        }

        let grads = losses.total.backward();
        let grad_flat = flatten_grads(&grads, &leaves);
        adam_step(&mut flat, &grad_flat, &mut adam, config);
        params = params.unflatten(&flat);
        let backward_done = Instant::now();

        timing.forward_ms += forward_done.duration_since(iter_start).as_secs_f64() * 1e3;
        timing.loss_ms += loss_done.duration_since(forward_done).as_secs_f64() * 1e3;
        timing.backward_update_ms += backward_done.duration_since(loss_done).as_secs_f64() * 1e3;
        records.push(IterationRecord {
            iteration,
            total,
            edc,
            edp,
            millis: backward_done.duration_since(iter_start).as_secs_f64() * 1e3,
        });
    }

    let best_constrained = best_constrained.expect("at least one iteration ran");
    let metrics = Rir::new(render_inference(&best_constrained, target.len()), fs)
        .ok()
        .and_then(|pred| metric_deltas(target, &pred).ok());

    Ok(FitResult {
        best_params,
        best_constrained,
        report: TrainReport {
            iterations: records,
            best_iteration,
            best_loss,
            l_t60,
            timing,
            metrics,
        },
    })
}
