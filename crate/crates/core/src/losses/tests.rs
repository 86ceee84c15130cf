use super::*;
use crate::fdn::{constrain, init_params, render_ir, ParamLeaves};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn edc_examples() {
    assert_eq!(edc(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    assert_eq!(edc(&[1.0, 1.0]), vec![2.0, 1.0]);
    let out = edc(&[0.5, -0.5, 0.5, -0.5]);
    let expect = [1.0, 0.75, 0.5, 0.25];
    for (a, b) in out.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn edc_matches_brute_force_and_is_monotone() {
    let h = white_noise(5, 257);
    let fast = edc(&h);
    for n in 0..h.len() {
        let brute: f64 = h[n..].iter().map(|v| v * v).sum();
        assert!((fast[n] - brute).abs() < 1e-12 * brute.max(1.0));
        assert!(fast[n] >= 0.0);
        if n > 0 {
            assert!(fast[n] <= fast[n - 1] + 1e-15);
        }
    }
}

#[test]
fn edc_loss_examples() {
    let target = [1.0, 0.5, 0.25, 0.1];
    assert_eq!(edc_loss(&target, &target).unwrap(), 0.0);
    assert_eq!(edc_loss(&target, &[0.0; 4]).unwrap(), 1.0);
    // eps_t = [1, 0], eps_p = [1, 1] -> ((0)^2 + (1)^2) / (1 + 0) = 1
    assert_eq!(edc_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!(matches!(
        edc_loss(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::DegenerateInput(_))
    ));
}

#[test]
fn edc_var_agrees_with_plain() {
    let h = white_noise(6, 128);
    let tape = Tape::new();
    let hv = tape.constant(Tensor::vector(h.clone()));
    let on_tape = edc_var(hv).to_vec();
    for (a, b) in on_tape.iter().zip(edc(&h)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hann_window_is_odd_and_unit_sum() {
    let w = hann_window(20.0, 16000);
    assert_eq!(w.len(), 321);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w.iter().all(|v| *v >= 0.0));
}

#[test]
fn kappa_schedule_hits_both_endpoints() {
    let cfg = LossConfig::new(9600);
    let k = cfg.kappa_schedule(9600);
    assert_eq!(k[0], 1e2);
    assert!((k[9599] - 1e5).abs() < 1e-9);
    // Linear: midpoint is the average of the endpoints.
    let mid = k[9599 / 2];
    assert!((mid - (1e2 + (1e5 - 1e2) * (4799.0 / 9599.0))).abs() < 1e-6);
}

#[test]
fn hard_edp_of_white_noise_sits_near_one() {
    let h = white_noise(11, 8000);
    let w = hann_window(20.0, 16000);
    let eta = edp(&h, &w);
    let nu = w.len() / 2;
    let steady = &eta[nu..8000 - nu];
    let mean = steady.iter().sum::<f64>() / steady.len() as f64;
    assert!((0.9..=1.1).contains(&mean), "steady-state mean {mean}");
    for (i, v) in steady.iter().enumerate() {
        assert!((0.55..=1.45).contains(v), "frame {i}: {v}");
    }
}

#[test]
fn hard_edp_of_a_lone_impulse_is_near_zero() {
    let mut h = vec![0.0; 2000];
    h[1000] = 1.0;
    let w = hann_window(20.0, 16000);
    let eta = edp(&h, &w);
    for v in &eta {
        assert!(*v <= 0.2, "lone impulse should read as sparse, got {v}");
    }
}

#[test]
fn hard_edp_matches_a_brute_force_frame_oracle() {
    // Constant positive signal plus edges exercises the zero-padded frames.
    let h = vec![0.25; 600];
    let w = hann_window(20.0, 16000);
    let fast = edp(&h, &w);
    let nu = w.len() / 2;
    for n in 0..h.len() {
        let mut power = 0.0;
        let mut mass = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let tau = n as isize - nu as isize + j as isize;
            let a = if tau < 0 || tau >= h.len() as isize {
                0.0
            } else {
                h[tau as usize].abs()
            };
            power += wj * a * a;
        }
        let sigma = power.sqrt();
        for (j, wj) in w.iter().enumerate() {
            let tau = n as isize - nu as isize + j as isize;
            let a = if tau < 0 || tau >= h.len() as isize {
                0.0
            } else {
                h[tau as usize].abs()
            };
            if a > sigma {
                mass += wj;
            }
        }
        let expect = EDP_NORMALIZATION * mass;
        assert!((fast[n] - expect).abs() < 1e-12, "frame {n}");
    }
}

#[test]
#[should_panic(expected = "odd")]
fn edp_rejects_even_windows() {
    let _ = edp(&[1.0; 64], &[0.25; 4]);
}

#[test]
fn soft_edp_of_silence_is_half_mass_at_the_sigmoid_midpoint() {
    let h = vec![0.0; 400];
    let w = hann_window(20.0, 16000);
    let cfg = LossConfig::new(400);
    let kappa = cfg.kappa_schedule(400);
    let eta = soft_edp(&h, &w, &kappa);
    let expect = EDP_NORMALIZATION * 0.5;
    for v in &eta {
        assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
    }
}

#[test]
fn soft_edp_approaches_hard_edp_as_kappa_grows() {
    let h = white_noise(13, 4000);
    let w = hann_window(20.0, 16000);
    let hard = edp(&h, &w);
    let mut last = f64::INFINITY;
    for kappa in [1e2, 1e4, 1e6] {
        let soft = soft_edp(&h, &w, &vec![kappa; h.len()]);
        let dev = soft
            .iter()
            .zip(&hard)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(dev <= last + 1e-12, "kappa {kappa}: {dev} after {last}");
        last = dev;
    }
    assert!(last <= 0.02, "max deviation at kappa=1e6: {last}");
}

#[test]
fn scaled_sigmoid_derivative_vanishes_away_from_zero() {
    let g = |x: f64| 1.0 / (1.0 + (-x).exp());
    for kappa in [1e2, 1e3, 1e5] {
        for mult in [1.0, 2.0, 10.0, 100.0] {
            for sign in [-1.0, 1.0] {
                let x = sign * mult * 20.0 / kappa;
                let d = g(kappa * x) * (1.0 - g(kappa * x)) * kappa;
                assert!(
                    d.abs() < 1e-6 * kappa,
                    "kappa {kappa}, x {x}: derivative {d}"
                );
            }
        }
    }
}

#[test]
fn profile_mse_of_constant_offset() {
    let a = vec![0.5; 128];
    let b = vec![0.6; 128];
    assert!((profile_mse(&a, &b) - 0.01).abs() < 1e-12);
    assert_eq!(profile_mse(&a, &a), 0.0);
}

#[test]
fn edp_loss_separates_noise_from_a_sparse_comb() {
    let len = 4000;
    let noise = white_noise(17, len);
    let mut comb = vec![0.0; len];
    let mut level = 1.0;
    let mut at = 0;
    while at < len {
        comb[at] = level;
        level *= 0.9;
        at += 100;
    }
    let w = hann_window(20.0, 16000);
    let cfg = LossConfig::new(len);
    let kappa = cfg.kappa_schedule(len);
    assert_eq!(edp_loss(&noise, &noise, &w, &kappa), 0.0);
    let loss = edp_loss(&noise, &comb, &w, &kappa);
    assert!(
        (0.03..3.0).contains(&loss),
        "expected order 1e-1, got {loss}"
    );
}

#[test]
fn composite_loss_is_zero_on_identical_signals_and_respects_lambda() {
    let target = {
        let mut h = white_noise(19, 512);
        for (i, v) in h.iter_mut().enumerate() {
            *v *= 0.999f64.powi(i as i32);
        }
        h
    };
    let mut cfg = LossConfig::new(512);
    cfg.lambda = 0.1;
    let curves = TargetCurves::build(&target, &cfg, 16000).unwrap();

    let tape = Tape::new();
    let pred = tape.constant(Tensor::vector(target.clone()));
    let losses = composite_loss_var(&tape, &curves, pred);
    assert!(losses.total.scalar_value().abs() < 1e-18);
    assert!(losses.edc.scalar_value().abs() < 1e-18);
    assert!(losses.edp.scalar_value().abs() < 1e-18);

    // lambda = 0 collapses the total onto the EDC term while the EDP node is
    // still evaluated for reporting.
    let mut cfg0 = cfg.clone();
    cfg0.lambda = 0.0;
    let curves0 = TargetCurves::build(&target, &cfg0, 16000).unwrap();
    let tape0 = Tape::new();
    let shifted: Vec<f64> = target.iter().map(|v| v * 0.5).collect();
    let pred0 = tape0.constant(Tensor::vector(shifted));
    let l0 = composite_loss_var(&tape0, &curves0, pred0);
    assert_eq!(l0.total.scalar_value(), l0.edc.scalar_value());
    assert!(l0.edp.scalar_value() >= 0.0);
}

#[test]
fn composite_gradient_matches_finite_differences_on_a_small_fdn() {
    let n = 3;
    let q = 32;
    let len = 256;
    let target: Vec<f64> = white_noise(23, len)
        .iter()
        .enumerate()
        .map(|(i, v)| v * 0.99f64.powi(i as i32))
        .collect();
    let mut cfg = LossConfig::new(len);
    cfg.lambda = 0.1;
    let curves = TargetCurves::build(&target, &cfg, 16000).unwrap();
    let params = init_params(31, n, 24.0, 1.1, 6.0);

    let eval = |p: &crate::fdn::UnconstrainedParams| -> f64 {
        let tape = Tape::new();
        let leaves = ParamLeaves::record(&tape, p);
        let cv = constrain(&leaves, q);
        let pred = render_ir(&cv, q, len);
        composite_loss_var(&tape, &curves, pred).total.scalar_value()
    };

    let tape = Tape::new();
    let leaves = ParamLeaves::record(&tape, &params);
    let cv = constrain(&leaves, q);
    let pred = render_ir(&cv, q, len);
    let grads = composite_loss_var(&tape, &curves, pred).total.backward();

    // Spot-check one scalar from each parameter family.
    let flat = params.flatten();
    let analytic = [
        grads.wrt(leaves.input_gains).data()[1],
        grads.wrt(leaves.output_gains).data()[2],
        grads.wrt(leaves.direct_gain).data()[0],
        grads.wrt(leaves.feedback_proxy).data()[1], // (0, 1): upper triangle
        grads.wrt(leaves.absorption_proxy).data()[0],
        grads.wrt(leaves.delay_proxy).data()[2],
    ];
    let flat_index = [1, n + 2, 2 * n, 2 * n + 1 + 1, 2 * n + 1 + n * n, 2 * n + 1 + n * n + n + 2];
    // The late-schedule sigmoids are steep (kappa up to 1e5), so the probe
    // step must be small for the central-difference oracle itself to be
    // trustworthy.
    for (&ai, &fi) in analytic.iter().zip(&flat_index) {
        let step = 1e-5 * flat[fi].abs().max(1.0);
        let mut plus = flat.clone();
        plus[fi] += step;
        let mut minus = flat.clone();
        minus[fi] -= step;
        let fd = (eval(&params.unflatten(&plus)) - eval(&params.unflatten(&minus))) / (2.0 * step);
        let diff = (ai - fd).abs();
        assert!(
            diff <= 1e-6 || diff / ai.abs().max(fd.abs()) <= 1e-3,
            "flat index {fi}: analytic {ai} vs fd {fd}"
        );
    }
}
