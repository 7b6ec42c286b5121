//! Independent oracles and random case generators shared by the test targets.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use twofold::fast_learning::{GpHyperparams, GpWindow};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Correlated Gaussian rows: `x = offset + M z` with random mixing and scales.
pub fn correlated_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mix: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| normal(rng)).collect())
        .collect();
    let scale: Vec<f64> = (0..dim).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
    let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-100.0..100.0)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            (0..dim)
                .map(|i| offset[i] + scale[i] * (z[i] + 0.5 * (0..dim).map(|j| mix[i][j] * z[j]).sum::<f64>()))
                .collect()
        })
        .collect()
}

/// Brute-force T²: z-score with the benchmark mean and sample standard
/// deviation, sample covariance of the z-scores, ridge `cov_reg·trace/dim`,
/// dense inverse.
pub fn brute_t2(benchmark: &[Vec<f64>], cov_reg: f64, x: &[f64]) -> f64 {
    let n = benchmark.len();
    let dim = benchmark[0].len();
    let data = DMatrix::from_fn(n, dim, |i, j| benchmark[i][j]);
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| data[(i, j)] - mean[j]);
    let std: Vec<f64> = (0..dim)
        .map(|j| (centered.column(j).norm_squared() / (n - 1) as f64).sqrt())
        .collect();
    let z = DMatrix::from_fn(n, dim, |i, j| centered[(i, j)] / std[j]);
    let mut cov = z.transpose() * &z / (n - 1) as f64;
    let eps = cov_reg * cov.trace() / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += eps;
    }
    let inv = cov.try_inverse().expect("oracle covariance invertible");
    let zx = DVector::from_fn(dim, |j, _| (x[j] - mean[j]) / std[j]);
    (zx.transpose() * inv * &zx)[(0, 0)]
}

pub fn se(a: &[f64], b: &[f64], alpha: f64, ls: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    alpha * alpha * (-0.5 * s).exp()
}

/// Dense posterior mean via an LU solve of `K + jitter·I`.
pub fn dense_posterior_mean(points: &[(Vec<f64>, f64)], hp: &GpHyperparams<f64>, query: &[f64]) -> f64 {
    let n = points.len();
    let alpha = hp.alpha();
    let ls: Vec<f64> = (0..hp.dim()).map(|d| hp.lengthscale(d)).collect();
    let mut k = DMatrix::from_fn(n, n, |i, j| se(&points[i].0, &points[j].0, alpha, &ls));
    for i in 0..n {
        k[(i, i)] += hp.jitter();
    }
    let t = DVector::from_fn(n, |i, _| points[i].1);
    let w = k.lu().solve(&t).expect("oracle kernel matrix solvable");
    (0..n).map(|i| se(query, &points[i].0, alpha, &ls) * w[i]).sum()
}

/// Dense log marginal likelihood with the requested jitter.
pub fn dense_lml(points: &[(Vec<f64>, f64)], hp: &GpHyperparams<f64>) -> f64 {
    let n = points.len();
    let alpha = hp.alpha();
    let ls: Vec<f64> = (0..hp.dim()).map(|d| hp.lengthscale(d)).collect();
    let mut k = DMatrix::from_fn(n, n, |i, j| se(&points[i].0, &points[j].0, alpha, &ls));
    for i in 0..n {
        k[(i, i)] += hp.jitter();
    }
    let t = DVector::from_fn(n, |i, _| points[i].1);
    let chol = k.cholesky().expect("oracle kernel matrix positive definite");
    let w = chol.solve(&t);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * t.dot(&w) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Random window of `n` points in `[0, 1]^dim` with targets from a random
/// smooth function plus optional noise.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, noise: f64) -> Vec<(Vec<f64>, f64)> {
    let freq: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..3.0)).collect();
    let phase: f64 = rng.random_range(0.0..6.0);
    let amp: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            let arg: f64 = x.iter().zip(&freq).map(|(v, f)| v * f).sum::<f64>() + phase;
            let y = amp * (arg.sin() + 0.3 * (2.0 * arg).cos()) + noise * amp * normal(rng);
            (x, y)
        })
        .collect()
}

pub fn window_of(points: &[(Vec<f64>, f64)]) -> GpWindow<f64> {
    GpWindow::from_points(points.len(), points)
}
