use fdnfit::audio::Rir;
use fdnfit::train::{fit, TrainConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// RIR-like synthetic: direct tap, sparse early reflections, dense decaying tail.
fn rir_like(seed: u64, t60: f64, fs: u32, len: usize) -> Rir {
    let gamma = 10f64.powf(-60.0 / (20.0 * fs as f64 * t60));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    // sparse early reflections between 4 and 40 ms
    let early_end = (0.040 * fs as f64) as usize;
    let mut at = (0.004 * fs as f64) as usize;
    while at < early_end {
        let amp: f64 = rng.gen_range(0.4..1.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        h[at] = sign * amp * gamma.powi(at as i32);
        at += rng.gen_range(40..140);
    }
    // dense Gaussian tail from 40 ms on
    for n in early_end..len {
        let g: f64 = rng.sample(StandardNormal);
        h[n] = 0.35 * g * gamma.powi(n as i32);
    }
    Rir::new(h, fs).unwrap().normalize_unit_norm().unwrap()
}

fn main() {
    let fs = 16000u32;
    for (name, target) in [
        ("rir-like t60=0.5", rir_like(42, 0.5, fs, 16000)),
    ] {
        for (lam, tag) in [(0.1, "l=0.1"), (0.0, "l=0.0")] {
            let r = fit(&target, &TrainConfig { lambda: lam, ..Default::default() }).unwrap();
            let first = r.report.iterations[0].total;
            let best = &r.report.iterations[r.report.best_iteration];
            println!("{name} {tag}: first {:.3e} best {:.3e} (ratio {:.2e}) edc {:.3e} edp {:.3e}",
                first, r.report.best_loss, r.report.best_loss/first, best.edc, best.edp);
        }
    }
}
