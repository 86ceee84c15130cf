//! Room-acoustic evaluation metrics: reverberation times from the decay
//! curve, clarity, definition, and center time, plus target-T60 estimation
//! for loss-span truncation.

use serde::{Deserialize, Serialize};

use crate::audio::Rir;
use crate::error::{Error, Result};
use crate::losses::edc;

/// Least-squares fit must explain the dB decay this well, otherwise the
/// "decay" is a finite-length artifact (white noise regularly shows R^2
/// around 0.76 in the fit window; real decays sit at 0.99+).
const MIN_FIT_R2: f64 = 0.9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AcousticMetrics {
    /// Reverberation times in seconds, extrapolated from the -5..-25,
    /// -5..-35, and -5..-65 dB EDC segments.
    pub t20: f64,
    pub t30: f64,
    pub t60: f64,
    /// Clarity in dB: energy before vs after 80 ms.
    pub c80: f64,
    /// Definition in percent: energy share of the first 50 ms.
    pub d50: f64,
    /// Center time in milliseconds.
    pub ts: f64,
}

impl AcousticMetrics {
    pub fn abs_deltas(&self, other: &AcousticMetrics) -> AcousticMetrics {
        AcousticMetrics {
            t20: (self.t20 - other.t20).abs(),
            t30: (self.t30 - other.t30).abs(),
            t60: (self.t60 - other.t60).abs(),
            c80: (self.c80 - other.c80).abs(),
            d50: (self.d50 - other.d50).abs(),
            ts: (self.ts - other.ts).abs(),
        }
    }
}

/// Target and predicted metrics side by side with absolute deviations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsComparison {
    pub target: AcousticMetrics,
    pub predicted: AcousticMetrics,
    pub deltas: AcousticMetrics,
}

/// EDC in dB, normalized to 0 dB at the first sample.
pub fn edc_db(h: &[f64]) -> Result<Vec<f64>> {
    let curve = edc(h);
    let total = curve[0];
    if total == 0.0 {
        return Err(Error::DegenerateInput("signal carries no energy".into()));
    }
    Ok(curve.iter().map(|e| 10.0 * (e / total).log10()).collect())
}

/// Reverberation time from a least-squares line over the region of the
/// normalized dB decay curve between `-upper_db` and `-lower_db`,
/// extrapolated to -60 dB. `(5, 25)` gives T20, `(5, 35)` T30, `(5, 65)` T60.
pub fn reverberation_time(
    edc_db: &[f64],
    upper_db: f64,
    lower_db: f64,
    sample_rate: u32,
) -> Result<f64> {
    assert!(lower_db > upper_db && upper_db >= 0.0);
    let reached = edc_db.iter().any(|v| *v <= -lower_db);
    if !reached {
        return Err(Error::InsufficientDecay(format!(
            "EDC never reaches -{lower_db} dB"
        )));
    }

    // Ordinary least squares over every sample inside the dB window.
    let mut count = 0.0f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (n, &v) in edc_db.iter().enumerate() {
        if v <= -upper_db && v >= -lower_db && v.is_finite() {
            let x = n as f64;
            count += 1.0;
            sx += x;
            sy += v;
            sxx += x * x;
            sxy += x * v;
            syy += v * v;
        }
    }
    if count < 2.0 {
        return Err(Error::InsufficientDecay(
            "too few samples inside the fit window".into(),
        ));
    }
    let denom = count * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::InsufficientDecay("degenerate fit window".into()));
    }
    let slope = (count * sxy - sx * sy) / denom;
    if slope >= 0.0 {
        return Err(Error::InsufficientDecay(
            "decay curve is not decreasing over the fit window".into(),
        ));
    }
    let intercept = (sy - slope * sx) / count;
    let ss_tot = syy - sy * sy / count;
    let ss_res = syy - intercept * sy - slope * sxy;
    if ss_tot > 0.0 && 1.0 - ss_res / ss_tot < MIN_FIT_R2 {
        return Err(Error::InsufficientDecay(
            "energy decay is not linear over the fit window".into(),
        ));
    }

    Ok(-60.0 / slope / sample_rate as f64)
}

fn split_index(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).ceil() as usize
}

/// Clarity: `10 log10` of the energy ratio before vs after 80 ms.
pub fn clarity_c80(h: &[f64], sample_rate: u32) -> Result<f64> {
    let l80 = split_index(80.0, sample_rate);
    let early: f64 = h.iter().take(l80).map(|v| v * v).sum();
    let late: f64 = h.iter().skip(l80).map(|v| v * v).sum();
    if late == 0.0 {
        return Err(Error::InfiniteClarity);
    }
    if early == 0.0 {
        return Err(Error::DegenerateInput("no energy before 80 ms".into()));
    }
    Ok(10.0 * (early / late).log10())
}

/// Definition: percentage of total energy inside the first 50 ms.
pub fn definition_d50(h: &[f64], sample_rate: u32) -> Result<f64> {
    let l50 = split_index(50.0, sample_rate);
    let early: f64 = h.iter().take(l50).map(|v| v * v).sum();
    let total: f64 = h.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::DegenerateInput("signal carries no energy".into()));
    }
    Ok(100.0 * early / total)
}

/// Center time: the energy centroid of the IR, in milliseconds.
pub fn center_time(h: &[f64], sample_rate: u32) -> Result<f64> {
    let total: f64 = h.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::DegenerateInput("signal carries no energy".into()));
    }
    let weighted: f64 = h.iter().enumerate().map(|(n, v)| n as f64 * v * v).sum();
    Ok(1e3 * weighted / (sample_rate as f64 * total))
}

/// T60 for truncation and reporting: the -5..-65 dB fit when the curve gets
/// there, otherwise the -5..-35 dB (T30) extrapolation, covering measurements
/// whose noise floor hides the last decades of decay.
pub fn estimate_t60(rir: &Rir) -> Result<f64> {
    let db = edc_db(rir.samples())?;
    match reverberation_time(&db, 5.0, 65.0, rir.sample_rate()) {
        Ok(t) => Ok(t),
        Err(Error::InsufficientDecay(_)) => reverberation_time(&db, 5.0, 35.0, rir.sample_rate()),
        Err(e) => Err(e),
    }
}

/// All six metrics of one impulse response.
pub fn acoustic_metrics(rir: &Rir) -> Result<AcousticMetrics> {
    let db = edc_db(rir.samples())?;
    let fs = rir.sample_rate();
    Ok(AcousticMetrics {
        t20: reverberation_time(&db, 5.0, 25.0, fs)?,
        t30: reverberation_time(&db, 5.0, 35.0, fs)?,
        t60: estimate_t60(rir)?,
        c80: clarity_c80(rir.samples(), fs)?,
        d50: definition_d50(rir.samples(), fs)?,
        ts: center_time(rir.samples(), fs)?,
    })
}

/// Metrics of both responses plus their absolute deviations.
pub fn metric_deltas(target: &Rir, predicted: &Rir) -> Result<MetricsComparison> {
    let t = acoustic_metrics(target)?;
    let p = acoustic_metrics(predicted)?;
    let deltas = t.abs_deltas(&p);
    Ok(MetricsComparison {
        target: t,
        predicted: p,
        deltas,
    })
}
