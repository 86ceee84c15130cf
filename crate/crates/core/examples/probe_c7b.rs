use fdnfit::audio::Rir;
use fdnfit::baselines::{hrtc_build, HrtcConfig};
use fdnfit::fdn::render_inference;
use fdnfit::metrics::estimate_t60;
use fdnfit::train::{fit, TrainConfig};

fn main() {
    let fs = 16000u32;
    let gamma = 10f64.powf(-60.0 / (20.0 * fs as f64 * 0.6));
    let design = Rir::new((0..19200).map(|n| gamma.powi(n as i32)).collect(), fs).unwrap();
    // Prime delays inside the trainable range [0, Q-1 = 1023].
    let cfg = HrtcConfig { delays: vec![397, 461, 521, 613, 727, 853], seed: 0 };
    let hrtc = hrtc_build(&design, &cfg).unwrap();
    let target = Rir::new(render_inference(&hrtc, 16000), fs).unwrap()
        .trim_to_onset(0.01).unwrap().normalize_unit_norm().unwrap();
    let tt = estimate_t60(&target).unwrap();
    for seed in 0..6u64 {
        let r = fit(&target, &TrainConfig { seed, ..Default::default() }).unwrap();
        let best = &r.report.iterations[r.report.best_iteration];
        let rendered = Rir::new(render_inference(&r.best_constrained, target.len()), fs).unwrap();
        let ft = estimate_t60(&rendered).unwrap();
        println!("seed {seed}: edc {:.3e} edp {:.3e} dT60 {:.2}% (fit {:.4} vs {:.4})",
            best.edc, best.edp, 100.0*(ft-tt).abs()/tt, ft, tt);
    }
}
