//! Mono audio ingestion and the preparation steps applied to a measured RIR
//! before fitting: resampling, unit-norm scaling, onset trimming.

mod resample;
mod wav;

pub use resample::resample;
pub use wav::{load_wav, save_wav, SaveInfo, WavEncoding};

use crate::error::{Error, Result};

/// Default onset threshold: a sample counts as the arrival of direct sound
/// once it reaches 1% of the peak magnitude.
pub const ONSET_THRESHOLD: f64 = 0.01;

/// A mono discrete-time impulse response with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Rir {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Format("sample values must be finite".into()));
        }
        Ok(Rir {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Band-limited resampling to `target_rate`. Identity (bit-exact) when
    /// the rates already match.
    pub fn resample(&self, target_rate: u32) -> Rir {
        resample(self, target_rate)
    }

    /// Scales the signal to unit Euclidean norm.
    pub fn normalize_unit_norm(&self) -> Result<Rir> {
        let norm = self.samples.iter().map(|s| s * s).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateInput(
                "cannot normalize an all-zero signal".into(),
            ));
        }
        Ok(Rir {
            samples: self.samples.iter().map(|s| s / norm).collect(),
            sample_rate: self.sample_rate,
        })
    }

    /// Drops leading samples before the first index whose magnitude reaches
    /// `threshold_fraction` of the peak magnitude.
    pub fn trim_to_onset(&self, threshold_fraction: f64) -> Result<Rir> {
        assert!(
            threshold_fraction > 0.0 && threshold_fraction < 1.0,
            "threshold_fraction must lie in (0, 1)"
        );
        let peak = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak == 0.0 {
            return Err(Error::DegenerateInput(
                "cannot locate an onset in an all-zero signal".into(),
            ));
        }
        let threshold = threshold_fraction * peak;
        let onset = self
            .samples
            .iter()
            .position(|s| s.abs() >= threshold)
            .expect("a sample at the peak always qualifies");
        Ok(Rir {
            samples: self.samples[onset..].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}
