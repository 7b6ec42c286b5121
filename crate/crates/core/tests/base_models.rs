mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use twofold::base_models::{fit_base_model, RegimeModel};
use twofold::{Dataset, DatasetF32, NarxConfig};

fn random_dataset(seed: u64, n: usize, n_u: usize, n_y: usize) -> Dataset {
    let mut rng = common::rng(seed);
    let mut d = Dataset::default();
    let mut y = vec![0.0; n_y];
    for _ in 0..n {
        let u: Vec<f64> = (0..n_u).map(|_| rng.random_range(-2.0..2.0)).collect();
        y = (0..n_y)
            .map(|j| 0.6 * y[j] + (u[j % n_u] + 0.3 * u[(j + 1) % n_u]).tanh() + 0.05 * common::normal(&mut rng))
            .collect();
        d.push(u, y.clone());
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_coefficients_minimize_ridge_loss(seed in any::<u64>(), quad in any::<bool>(), tanh in any::<bool>()) {
        let data = random_dataset(seed, 120, 2, 2);
        let cfg = NarxConfig { nonlinear_features: tanh, quadratic_inputs: quad, ridge: 1e-3, ..NarxConfig::default() };
        let model = fit_base_model(&data, &cfg).unwrap();
        prop_assert_eq!(model.coefficients.cols(), cfg.feature_dim(2, 2));
        let best = model.training_loss(&data);
        let mut rng = common::rng(seed ^ 1);
        for _ in 0..10 {
            let mut m = model.clone();
            let (r, c) = (rng.random_range(0..2), rng.random_range(0..m.coefficients.cols()));
            m.coefficients[(r, c)] += if rng.random() { 1e-3 } else { -1e-3 };
            prop_assert!(m.training_loss(&data) >= best);
        }
    }
}

#[test]
fn linear_fit_matches_normal_equations() {
    let data = random_dataset(4, 200, 2, 1);
    let cfg = NarxConfig {
        nonlinear_features: false,
        ridge: 0.0,
        ..NarxConfig::default()
    };
    let model = fit_base_model(&data, &cfg).unwrap();
    let raw = model.raw_linear().unwrap();
    let rows: Vec<Vec<f64>> = (2..data.len())
        .map(|k| {
            vec![
                data.outputs[k - 1][0],
                data.outputs[k - 2][0],
                data.inputs[k][0],
                data.inputs[k][1],
                data.inputs[k - 1][0],
                data.inputs[k - 1][1],
                1.0,
            ]
        })
        .collect();
    let x = DMatrix::from_fn(rows.len(), 7, |i, j| rows[i][j]);
    let y = DVector::from_fn(rows.len(), |i, _| data.outputs[i + 2][0]);
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
    for c in 0..6 {
        assert!((raw.coefficients[(0, c)] - beta[c]).abs() < 1e-6, "coef {c}: {} vs {}", raw.coefficients[(0, c)], beta[c]);
    }
    assert!((raw.intercept[0] - beta[6]).abs() < 1e-6);
}

#[test]
fn nonlinear_features_help_on_nonlinear_data() {
    let train = random_dataset(8, 600, 2, 2);
    let test = random_dataset(9, 300, 2, 2);
    let err = |cfg: NarxConfig| {
        let m = fit_base_model(&train, &cfg).unwrap();
        let sim = m.simulate(&test.inputs, &m.cold_state()).unwrap();
        sim.iter().zip(&test.outputs).map(|(a, b)| (a[0] - b[0]).powi(2)).sum::<f64>()
    };
    let linear = err(NarxConfig {
        nonlinear_features: false,
        ..NarxConfig::default()
    });
    let nonlinear = err(NarxConfig::default());
    assert!(nonlinear < linear, "{nonlinear} vs {linear}");
}

#[test]
fn f32_model_tracks_f64() {
    let data = random_dataset(12, 300, 2, 2);
    let d32 = DatasetF32::from_f64(&data);
    let cfg = NarxConfig::default();
    let m64 = fit_base_model(&data, &cfg).unwrap();
    let m32 = fit_base_model(&d32, &cfg).unwrap();
    let s64 = m64.simulate(&data.inputs[..50], &m64.cold_state()).unwrap();
    let s32 = m32.simulate(&d32.inputs[..50], &m32.cold_state()).unwrap();
    for (a, b) in s64.iter().zip(&s32) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - *y as f64).abs() < 1e-2 * x.abs().max(1.0));
        }
    }
}

#[test]
fn step_rejects_wrong_input_width() {
    let data = random_dataset(1, 100, 2, 1);
    let m = fit_base_model(&data, &NarxConfig::default()).unwrap();
    let mut s = m.cold_state();
    assert!(m.step(&mut s, &[1.0]).is_err());
    assert_eq!(m.history_len(), 2);
}
