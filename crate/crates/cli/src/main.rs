//! Command-line front end: fit an FDN to a measured RIR, render impulse
//! responses from parameter files, report room-acoustic metrics, and build
//! the analytic baseline.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input, 3 unsupported
//! option.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdnfit::audio::{load_wav, save_wav, Rir, WavEncoding, ONSET_THRESHOLD};
use fdnfit::baselines::{hrtc_build, HrtcConfig};
use fdnfit::fdn::render_inference;
use fdnfit::losses::{edc, hann_window, soft_edp, LossConfig};
use fdnfit::metrics;
use fdnfit::params::{ParamFile, Provenance};
use fdnfit::train::{fit, TrainConfig};

/// Internal sampling rate every target is brought to before fitting.
const CANONICAL_RATE: u32 = 16000;

#[derive(Parser)]
#[command(
    name = "fdnfit",
    version,
    about = "Learns feedback-delay-network reverberator parameters from measured room impulse responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every FDN parameter to a measured RIR by gradient descent.
    Fit {
        /// Target impulse response (mono WAV, PCM16 or float32).
        target: PathBuf,
        /// Output parameter file.
        #[arg(long, default_value = "params.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optimizer iterations.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Echo-density loss weight (0 disables the regularizer).
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Per-iteration training log (CSV).
        #[arg(long, default_value = "train.csv")]
        log: PathBuf,
        /// Metrics-comparison report; defaults to `<out>.metrics.json`.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Number of delay lines.
        #[arg(long, default_value_t = 6)]
        lines: usize,
        /// Delay buffer length in samples (power of two).
        #[arg(long, default_value_t = 1024)]
        buffer: usize,
    },
    /// Render an impulse response from a parameter file.
    Render {
        params: PathBuf,
        /// Output duration in seconds.
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print room-acoustic metrics of an IR, optionally against a reference.
    Metrics {
        ir: PathBuf,
        /// Reference IR; prints absolute deviations when given.
        reference: Option<PathBuf>,
        /// Write analysis curves (EDC and echo density) as CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Build an analytically designed baseline FDN from a target RIR.
    Baseline {
        target: PathBuf,
        /// Design method; only `hrtc` is available.
        #[arg(long, default_value = "hrtc")]
        method: String,
        #[arg(long, default_value = "params.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum CliError {
    InvalidInput(String),
    UnsupportedOption(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::InvalidInput(_) => 2,
            CliError::UnsupportedOption(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::InvalidInput(m) | CliError::UnsupportedOption(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<fdnfit::Error> for CliError {
    fn from(e: fdnfit::Error) -> Self {
        CliError::InvalidInput(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit {
            target,
            out,
            seed,
            iters,
            lambda,
            log,
            metrics_out,
            lines,
            buffer,
        } => cmd_fit(&target, &out, seed, iters, lambda, &log, metrics_out, lines, buffer),
        Command::Render {
            params,
            duration,
            out,
        } => cmd_render(&params, duration, &out),
        Command::Metrics {
            ir,
            reference,
            curves,
        } => cmd_metrics(&ir, reference.as_deref(), curves.as_deref()),
        Command::Baseline {
            target,
            method,
            out,
            seed,
        } => cmd_baseline(&target, &method, &out, seed),
    }
}

/// Load, resample to the canonical rate, trim leading silence, unit-norm.
fn prepare_target(path: &Path) -> Result<Rir, CliError> {
    let rir = load_wav(path)?;
    let rir = rir.resample(CANONICAL_RATE);
    let rir = rir.trim_to_onset(ONSET_THRESHOLD)?;
    Ok(rir.normalize_unit_norm()?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    target_path: &Path,
    out: &Path,
    seed: u64,
    iters: usize,
    lambda: f64,
    log: &Path,
    metrics_out: Option<PathBuf>,
    lines: usize,
    buffer: usize,
) -> Result<(), CliError> {
    if lambda < 0.0 {
        return Err(CliError::InvalidInput("lambda must be nonnegative".into()));
    }
    let target = prepare_target(target_path)?;
    let config = TrainConfig {
        seed,
        max_iterations: iters,
        lambda,
        lines,
        buffer,
        ..TrainConfig::default()
    };
    let result = fit(&target, &config)?;
    let report = &result.report;

    let file = ParamFile::from_constrained(&result.best_constrained, CANONICAL_RATE)
        .with_unconstrained(&result.best_params)
        .with_provenance(Provenance {
            source: target_path.display().to_string(),
            seed,
            iterations: iters,
            lambda,
            best_iteration: report.best_iteration,
            best_loss: report.best_loss,
        });
    file.save(out)?;

    let mut csv = String::from("iteration,loss_total,loss_edc,loss_edp,ms\n");
    for r in &report.iterations {
        writeln!(csv, "{},{},{},{},{:.3}", r.iteration, r.total, r.edc, r.edp, r.millis)
            .expect("string write");
    }
    std::fs::write(log, csv).map_err(|e| CliError::Internal(e.to_string()))?;

    let metrics_path = metrics_out.unwrap_or_else(|| derived_path(out, ".metrics.json"));
    match &report.metrics {
        Some(cmp) => {
            let text = serde_json::to_string_pretty(cmp)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            std::fs::write(&metrics_path, text).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        None => {
            std::fs::write(&metrics_path, "{}\n").map_err(|e| CliError::Internal(e.to_string()))?;
            eprintln!("warning: metrics of the fitted render were not computable");
        }
    }

    let total_ms: f64 = report.iterations.iter().map(|r| r.millis).sum();
    let spent = report.timing;
    let spent_total = (spent.forward_ms + spent.loss_ms + spent.backward_update_ms).max(1e-9);
    println!(
        "fit: {} iterations over {} samples, best loss {:.6e} at iteration {}",
        report.iterations.len(),
        report.l_t60,
        report.best_loss,
        report.best_iteration
    );
    println!(
        "time: {:.1} s total ({:.0}% forward, {:.0}% loss, {:.0}% backward+update)",
        total_ms / 1e3,
        100.0 * spent.forward_ms / spent_total,
        100.0 * spent.loss_ms / spent_total,
        100.0 * spent.backward_update_ms / spent_total
    );
    println!("wrote {}, {}, {}", out.display(), log.display(), metrics_path.display());
    Ok(())
}

fn derived_path(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    base.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_render(params_path: &Path, duration: f64, out: &Path) -> Result<(), CliError> {
    if !(duration > 0.0) {
        return Err(CliError::InvalidInput("duration must be positive".into()));
    }
    let file = ParamFile::load(params_path)?;
    let constrained = file.to_constrained()?;
    let len = (duration * file.sample_rate as f64).round() as usize;
    let samples = render_inference(&constrained, len.max(1));
    let rir = Rir::new(samples, file.sample_rate)?;
    save_wav(&rir, out, WavEncoding::Float32)?;
    println!("rendered {} samples at {} Hz to {}", rir.len(), file.sample_rate, out.display());
    Ok(())
}

fn cmd_metrics(
    ir_path: &Path,
    reference: Option<&Path>,
    curves: Option<&Path>,
) -> Result<(), CliError> {
    let ir = load_wav(ir_path)?;
    match reference {
        Some(ref_path) => {
            let reference = load_wav(ref_path)?;
            let cmp = metrics::metric_deltas(&reference, &ir)?;
            let text =
                serde_json::to_string_pretty(&cmp).map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
        }
        None => {
            let m = metrics::acoustic_metrics(&ir)?;
            let text =
                serde_json::to_string_pretty(&m).map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
        }
    }
    if let Some(curve_path) = curves {
        write_curves(&ir, curve_path)?;
        eprintln!("wrote curves to {}", curve_path.display());
    }
    Ok(())
}

/// CSV with the linear and dB decay curves plus hard and soft echo-density
/// profiles, one row per sample.
fn write_curves(ir: &Rir, path: &Path) -> Result<(), CliError> {
    let fs = ir.sample_rate();
    let h = ir.samples();
    let edc_lin = edc(h);
    let edc_db = metrics::edc_db(h)?;
    let window = hann_window(20.0, fs);
    let kappa = LossConfig::new(h.len().max(2)).kappa_schedule(h.len());
    let hard = fdnfit::losses::edp(h, &window);
    let soft = soft_edp(h, &window, &kappa);

    let mut csv = String::from("sample_index,time_s,edc_linear,edc_db,edp,soft_edp\n");
    for n in 0..h.len() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            n,
            n as f64 / fs as f64,
            edc_lin[n],
            edc_db[n],
            hard[n],
            soft[n]
        )
        .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

fn cmd_baseline(target_path: &Path, method: &str, out: &Path, seed: u64) -> Result<(), CliError> {
    if method != "hrtc" {
        return Err(CliError::UnsupportedOption(format!(
            "unsupported method `{method}`; available: hrtc"
        )));
    }
    let target = prepare_target(target_path)?;
    let t60 = metrics::estimate_t60(&target)?;
    let params = hrtc_build(&target, &HrtcConfig { seed, ..HrtcConfig::default() })?;
    let file = ParamFile::from_constrained(&params, CANONICAL_RATE).with_provenance(Provenance {
        source: target_path.display().to_string(),
        seed,
        iterations: 0,
        lambda: 0.0,
        best_iteration: 0,
        best_loss: 0.0,
    });
    file.save(out)?;
    println!(
        "baseline hrtc: target T60 {:.3} s, delays {:?}, wrote {}",
        t60,
        params.delays.iter().map(|m| *m as u64).collect::<Vec<_>>(),
        out.display()
    );
    Ok(())
}
