//! Analytically designed baseline FDN with homogeneous reverberation-time
//! control: absorption follows the gain-per-sample rule, everything else is
//! chosen by the classic heuristics.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::audio::Rir;
use crate::autodiff::{self, Tape, Tensor};
use crate::error::Result;
use crate::fdn::{ConstrainedParams, DEFAULT_BUFFER};
use crate::metrics::estimate_t60;

/// Logarithmically distributed prime delay lengths (samples).
pub const DEFAULT_DELAYS: [u32; 6] = [997, 1153, 1327, 1559, 1801, 2099];

#[derive(Debug, Clone)]
pub struct HrtcConfig {
    /// Integer delay-line lengths in samples.
    pub delays: Vec<u32>,
    /// Seed for the random orthogonal feedback prototype.
    pub seed: u64,
}

impl Default for HrtcConfig {
    fn default() -> Self {
        HrtcConfig {
            delays: DEFAULT_DELAYS.to_vec(),
            seed: 0,
        }
    }
}

impl HrtcConfig {
    pub fn validate(&self) {
        assert!(!self.delays.is_empty());
        assert!(self.delays[0] > 0, "delays must be positive");
        assert!(
            self.delays.windows(2).all(|w| w[0] < w[1]),
            "delays must be strictly increasing"
        );
    }
}

/// Gain-per-sample for a target reverberation time:
/// `20 log10(gamma) = -60 / (fs * t60)`.
pub fn hrtc_gamma(t60: f64, sample_rate: u32) -> f64 {
    assert!(t60 > 0.0, "reverberation time must be positive");
    10f64.powf(-60.0 / (20.0 * sample_rate as f64 * t60))
}

/// Builds the baseline FDN for a (prepared) target RIR: T60 estimated from
/// the target sets the gain-per-sample, each line is attenuated by
/// `gamma^delay`, the orthogonal part comes from the exponential map of a
/// seeded random matrix, input gains are unity, output gains 1/N, and the
/// direct gain matches the target's amplitude at the direct-path index
/// (sample 0 of the onset-trimmed target).
pub fn hrtc_build(target: &Rir, config: &HrtcConfig) -> Result<ConstrainedParams> {
    config.validate();
    let n = config.delays.len();
    let t60 = estimate_t60(target)?;
    let gamma = hrtc_gamma(t60, target.sample_rate());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("valid std");
    let proxy: Vec<f64> = (0..n * n).map(|_| normal.sample(&mut rng)).collect();
    let tape = Tape::new();
    let w = tape.constant(Tensor::matrix(n, n, proxy));
    let orthogonal = autodiff::matrix_exp(autodiff::strict_upper_skew(w)).to_vec();

    let absorption: Vec<f64> = config
        .delays
        .iter()
        .map(|&m| gamma.powi(m as i32))
        .collect();
    let mut feedback = orthogonal.clone();
    for i in 0..n {
        for j in 0..n {
            feedback[i * n + j] *= absorption[j];
        }
    }

    let max_delay = *config.delays.last().expect("nonempty") as usize;
    let q = DEFAULT_BUFFER.max((max_delay + 1).next_power_of_two());

    Ok(ConstrainedParams {
        input_gains: vec![1.0; n],
        output_gains: vec![1.0 / n as f64; n],
        direct_gain: target.samples()[0].abs(),
        orthogonal,
        absorption,
        feedback,
        delays: config.delays.iter().map(|&m| m as f64).collect(),
        q,
    })
}
