//! JSON parameter-file schema shared by the fitting, baseline, and rendering
//! commands. Constrained fields round-trip bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::{ConstrainedParams, UnconstrainedParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamFile {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub n: usize,
    pub q: usize,
    /// Delay-line lengths in fractional samples.
    pub delays: Vec<f64>,
    /// Constrained feedback matrix A, by rows.
    pub feedback_matrix: Vec<Vec<f64>>,
    /// Orthogonal part U, by rows.
    pub orthogonal_part: Vec<Vec<f64>>,
    /// Absorption diagonal.
    pub absorption: Vec<f64>,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub direct_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconstrained: Option<UnconstrainedBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Optional raw optimizer variables, kept so a fit can be resumed or audited.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnconstrainedBlock {
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub direct_gain: f64,
    pub feedback_proxy: Vec<Vec<f64>>,
    pub absorption_proxy: Vec<f64>,
    pub delay_proxy: Vec<f64>,
}

/// Where the parameters came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub iterations: usize,
    pub lambda: f64,
    pub best_iteration: usize,
    pub best_loss: f64,
}

fn to_rows(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Schema(format!("matrix is not {n}x{n}")));
    }
    Ok(rows.iter().flatten().copied().collect())
}

impl ParamFile {
    pub fn from_constrained(p: &ConstrainedParams, sample_rate: u32) -> Self {
        let n = p.lines();
        ParamFile {
            schema_version: SCHEMA_VERSION,
            sample_rate,
            n,
            q: p.q,
            delays: p.delays.clone(),
            feedback_matrix: to_rows(&p.feedback, n),
            orthogonal_part: to_rows(&p.orthogonal, n),
            absorption: p.absorption.clone(),
            input_gains: p.input_gains.clone(),
            output_gains: p.output_gains.clone(),
            direct_gain: p.direct_gain,
            unconstrained: None,
            provenance: None,
        }
    }

    pub fn with_unconstrained(mut self, p: &UnconstrainedParams) -> Self {
        let n = p.lines();
        self.unconstrained = Some(UnconstrainedBlock {
            input_gains: p.input_gains.clone(),
            output_gains: p.output_gains.clone(),
            direct_gain: p.direct_gain,
            feedback_proxy: to_rows(&p.feedback_proxy, n),
            absorption_proxy: p.absorption_proxy.clone(),
            delay_proxy: p.delay_proxy.clone(),
        });
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Schema("sample_rate must be positive".into()));
        }
        let n = self.n;
        if n == 0 {
            return Err(Error::Schema("n must be positive".into()));
        }
        if !self.q.is_power_of_two() {
            return Err(Error::Schema("q must be a power of two".into()));
        }
        let vec_fields = [
            ("delays", &self.delays),
            ("absorption", &self.absorption),
            ("input_gains", &self.input_gains),
            ("output_gains", &self.output_gains),
        ];
        for (name, field) in vec_fields {
            if field.len() != n {
                return Err(Error::Schema(format!("{name} must have {n} entries")));
            }
            if field.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("{name} must be finite")));
            }
        }
        if self.input_gains.iter().any(|v| *v < 0.0)
            || self.output_gains.iter().any(|v| *v < 0.0)
            || self.direct_gain < 0.0
        {
            return Err(Error::Schema("gains must be nonnegative".into()));
        }
        let max_delay = (self.q - 1) as f64;
        if self.delays.iter().any(|m| *m < 0.0 || *m > max_delay) {
            return Err(Error::Schema(format!(
                "delays must lie in [0, {max_delay}]"
            )));
        }
        from_rows(&self.feedback_matrix, n)?;
        from_rows(&self.orthogonal_part, n)?;
        Ok(())
    }

    pub fn to_constrained(&self) -> Result<ConstrainedParams> {
        self.validate()?;
        Ok(ConstrainedParams {
            input_gains: self.input_gains.clone(),
            output_gains: self.output_gains.clone(),
            direct_gain: self.direct_gain,
            orthogonal: from_rows(&self.orthogonal_part, self.n)?,
            absorption: self.absorption.clone(),
            feedback: from_rows(&self.feedback_matrix, self.n)?,
            delays: self.delays.clone(),
            q: self.q,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ParamFile = serde_json::from_str(&text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
