mod common;

use proptest::prelude::*;
use rand::Rng;

use twofold::fast_learning::{
    gp_fit_predict, log_marginal_likelihood, lml_with_gradient, optimize_hyperparams, GpCompensator, GpConfig,
    GpHyperparams, GpWindow, OptimizerConfig,
};

fn random_hp(rng: &mut rand_chacha::ChaCha8Rng, dim: usize, jitter_rel: f64) -> GpHyperparams<f64> {
    let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..1.5)).collect();
    GpHyperparams::new(alpha, &ls, jitter_rel * alpha * alpha)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_mean_matches_dense_solve(seed in any::<u64>(), n in 1usize..=100, dim in 1usize..=5) {
        let mut rng = common::rng(seed);
        let pts = common::random_points(&mut rng, n, dim, 0.1);
        let hp = random_hp(&mut rng, dim, 1e-2);
        let mut w = common::window_of(&pts);
        for _ in 0..5 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            let got = gp_fit_predict(&mut w, &hp, &q).unwrap();
            let want = common::dense_posterior_mean(&pts, &hp, &q);
            prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-3 * hp.alpha()), "{got} vs {want}");
        }
    }

    #[test]
    fn lml_matches_dense(seed in any::<u64>(), n in 1usize..=80, dim in 1usize..=4) {
        let mut rng = common::rng(seed);
        let pts = common::random_points(&mut rng, n, dim, 0.1);
        let hp = random_hp(&mut rng, dim, 1e-2);
        let mut w = common::window_of(&pts);
        let got = log_marginal_likelihood(&mut w, &hp).unwrap();
        let want = common::dense_lml(&pts, &hp);
        prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
        let (g2, _) = lml_with_gradient(&w, &hp).unwrap();
        prop_assert!((g2 - want).abs() <= 1e-8 * want.abs().max(1.0));
    }
}

#[test]
fn sliding_window_matches_dense_on_contents() {
    let mut rng = common::rng(17);
    let dim = 3;
    let pts = common::random_points(&mut rng, 400, dim, 0.1);
    let hp = random_hp(&mut rng, dim, 1e-3);
    let mut w = GpWindow::new(60);
    for (i, (x, y)) in pts.iter().enumerate() {
        w.push(x.clone(), *y);
        if i % 7 == 0 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            let got = gp_fit_predict(&mut w, &hp, &q).unwrap();
            let contents: Vec<(Vec<f64>, f64)> = w.points().map(|(x, y)| (x.clone(), *y)).collect();
            let want = common::dense_posterior_mean(&contents, &hp, &q);
            assert!((got - want).abs() <= 1e-7 * want.abs().max(1e-3), "step {i}: {got} vs {want}");
        }
    }
    assert_eq!(w.len(), 60);
}

#[test]
fn interpolates_training_targets() {
    let mut rng = common::rng(23);
    for _ in 0..20 {
        let dim = rng.random_range(1..=3);
        let n = rng.random_range(5..=40);
        let pts = common::random_points(&mut rng, n, dim, 0.0);
        let hp = GpHyperparams::new(1.0, &vec![0.3; dim], 1e-6);
        let mut w = common::window_of(&pts);
        let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        for (x, y) in &pts {
            let got = gp_fit_predict(&mut w, &hp, x).unwrap();
            assert!((got - y).abs() <= 1e-3 * scale, "{got} vs {y}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = common::rng(31);
    let h = 1e-5;
    for _ in 0..20 {
        let dim = rng.random_range(1..=4);
        let n = rng.random_range(5..=60);
        let pts = common::random_points(&mut rng, n, dim, 0.2);
        let hp = random_hp(&mut rng, dim, 1e-2);
        let w = common::window_of(&pts);
        let (_, g) = lml_with_gradient(&w, &hp).unwrap();
        let base = hp.to_vec();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..base.len() {
            let at = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                lml_with_gradient(&w, &GpHyperparams::from_vec(&v)).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3 * gmax), "param {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn optimizer_does_not_lower_lml() {
    let mut rng = common::rng(41);
    for _ in 0..20 {
        let dim = rng.random_range(1..=4);
        let n = rng.random_range(10..=60);
        let pts = common::random_points(&mut rng, n, dim, 0.1);
        let w = common::window_of(&pts);
        let init = random_hp(&mut rng, dim, 1e-6);
        let out = optimize_hyperparams(&w, &init, &OptimizerConfig::default());
        assert!(!out.failed);
        let (l0, _) = lml_with_gradient(&w, &init).unwrap();
        let (l1, _) = lml_with_gradient(&w, &out.hyperparams).unwrap();
        assert!(l1 >= l0 - 1e-9 * l0.abs(), "{l1} < {l0}");
        assert!(out.lml.unwrap() >= out.init_lml.unwrap());
    }
}

#[test]
fn compensator_learns_constant_bias() {
    let c = [2.0, -0.5, 10.0];
    let cfg = GpConfig::default();
    let mut comp = GpCompensator::<f64>::new(3, cfg);
    let mut rng = common::rng(2);
    for k in 0..cfg.k_min + 120 {
        let slow: Vec<f64> = (0..3).map(|j| (0.05 * k as f64 + j as f64).sin() + 0.1 * common::normal(&mut rng)).collect();
        let measured: Vec<f64> = slow.iter().zip(&c).map(|(s, b)| s + b).collect();
        let log = comp.step_auto(&slow, &measured).unwrap();
        assert!(comp.window_len() <= cfg.k_max);
        if k >= cfg.k_min + 50 {
            let err = log.prediction.iter().zip(&c).map(|(p, b)| (p - b).abs()).fold(0.0, f64::max);
            assert!(err <= 0.05 * 10.0, "k={k} err={err}");
        }
    }
}

#[test]
fn compensator_f32_runs() {
    let cfg = GpConfig {
        k_min: 10,
        k_max: 40,
        retrain_every: 5,
        ..GpConfig::default()
    };
    let mut comp = GpCompensator::<f32>::new(1, cfg);
    for k in 0..80 {
        let s = (0.1 * k as f32).sin();
        let log = comp.step_auto(&[s], &[s + 1.0]).unwrap();
        assert!(log.prediction[0].is_finite());
    }
    assert!((comp.prediction()[0] - 1.0).abs() < 0.05);
}
