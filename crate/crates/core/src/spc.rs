//! Statistical process control: z-score profiles, Hotelling T² (squared
//! Mahalanobis distance) and empirical control limits.
//!
//! Both the benchmark and the monitored observations are z-scored with the
//! benchmark's per-dimension mean and standard deviation; the covariance is
//! then estimated on the z-scored benchmark, whose mean is zero.

use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, Matrix};
use crate::{Error, Result, Scalar};

/// Regularization used when a profile is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// `ε_cov = cov_reg · trace(Σ)/dim` is added to the diagonal before inversion.
    pub cov_reg: f64,
    /// Floor for per-dimension standard deviations.
    pub std_floor: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            cov_reg: 1e-8,
            std_floor: 1e-12,
        }
    }
}

impl ProfileOptions {
    pub fn unregularized() -> Self {
        Self {
            cov_reg: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StatProfile<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub cov_inv: Matrix<T>,
    pub dim: usize,
    pub n_obs: usize,
}

/// Benchmark covariance of z-scored data, before regularization.
pub fn normalized_covariance<T: Scalar>(z: &[Vec<T>]) -> Matrix<T> {
    let dim = z.first().map_or(0, Vec::len);
    let mut cov = Matrix::zeros(dim, dim);
    for row in z {
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    let denom = T::from_usize(z.len().saturating_sub(1).max(1)).unwrap();
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub fn build_profile<T: Scalar>(benchmark: &[Vec<T>]) -> Result<StatProfile<T>> {
    build_profile_with(benchmark, ProfileOptions::default())
}

pub fn build_profile_with<T: Scalar>(
    benchmark: &[Vec<T>],
    opts: ProfileOptions,
) -> Result<StatProfile<T>> {
    let n = benchmark.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "profile needs at least 2 observations, got {n}"
        )));
    }
    let dim = benchmark[0].len();
    if dim == 0 {
        return Err(Error::InvalidData("zero-dimensional observations".into()));
    }
    for row in benchmark {
        if row.len() != dim {
            return Err(Error::dim(dim, row.len(), "benchmark observation"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite benchmark entry".into()));
        }
    }

    let nf = T::from_usize(n).unwrap();
    let mut mean = vec![T::zero(); dim];
    for row in benchmark {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    let floor = T::lit(opts.std_floor);
    let mut std = vec![T::zero(); dim];
    for row in benchmark {
        for ((s, &v), &m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let nm1 = T::from_usize(n - 1).unwrap();
    std.iter_mut().for_each(|s| *s = (*s / nm1).sqrt().max(floor));

    let z: Vec<Vec<T>> = benchmark
        .iter()
        .map(|row| zscore(row, &mean, &std))
        .collect();
    let mut cov = normalized_covariance(&z);
    let dimf = T::from_usize(dim).unwrap();
    let mut eps = T::lit(opts.cov_reg) * cov.trace() / dimf;
    if eps <= T::zero() && opts.cov_reg > 0.0 {
        // Every channel constant: fall back to an absolute ridge.
        eps = T::lit(opts.cov_reg);
    }
    cov.add_diagonal(eps);
    let chol = Cholesky::factor(&cov).map_err(|e| {
        Error::NumericalFailure(format!(
            "benchmark covariance not positive definite (pivot {:e} at {})",
            e.pivot, e.index
        ))
    })?;

    Ok(StatProfile {
        mean,
        std,
        cov_inv: chol.inverse(),
        dim,
        n_obs: n,
    })
}

#[inline]
fn zscore<T: Scalar>(x: &[T], mean: &[T], std: &[T]) -> Vec<T> {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((&v, &m), &s)| (v - m) / s)
        .collect()
}

impl<T: Scalar> StatProfile<T> {
    pub fn normalize(&self, x: &[T]) -> Vec<T> {
        zscore(x, &self.mean, &self.std)
    }

    /// T² of a single observation.
    pub fn t2(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::dim(self.dim, x.len(), "mahalanobis observation"));
        }
        let z = self.normalize(x);
        Ok(self.cov_inv.quad_form(&z).max(T::zero()))
    }
}

pub fn mahalanobis<T: Scalar>(profile: &StatProfile<T>, observations: &[Vec<T>]) -> Result<Vec<T>> {
    observations.iter().map(|x| profile.t2(x)).collect()
}

/// Hotelling T² chart with empirical limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ControlChart<T> {
    pub ucl: T,
    pub lcl: T,
    pub percentile_j: f64,
    pub t2_reference: Vec<T>,
}

/// 1-based nearest-rank index `⌈(j/100)·n⌉`, clamped to `1..=n`.
pub fn nearest_rank(percentile_j: f64, n: usize) -> usize {
    let r = percentile_j * n as f64 / 100.0;
    // Absorb round-off such as 95·100/100 = 95.000000000001.
    let idx = (r - r.abs() * 1e-12).ceil() as usize;
    idx.clamp(1, n)
}

pub fn empirical_ucl<T: Scalar>(t2_values: &[T], percentile_j: f64) -> Result<ControlChart<T>> {
    if t2_values.is_empty() {
        return Err(Error::InsufficientData("control chart from empty T² sequence".into()));
    }
    if !(percentile_j > 0.0 && percentile_j < 100.0) {
        return Err(Error::config("percentile_j", format!("{percentile_j} not in (0, 100)")));
    }
    if t2_values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::InvalidData("T² values must be finite and non-negative".into()));
    }
    let mut sorted = t2_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = nearest_rank(percentile_j, sorted.len());
    Ok(ControlChart {
        ucl: sorted[idx - 1],
        lcl: T::zero(),
        percentile_j,
        t2_reference: t2_values.to_vec(),
    })
}

/// Empirical `P(T² ≤ UCL)`; the comparison is inclusive.
pub fn in_control_fraction<T: Scalar>(t2_values: &[T], chart: &ControlChart<T>) -> Result<f64> {
    if t2_values.is_empty() {
        return Err(Error::InsufficientData("in-control fraction of empty sequence".into()));
    }
    let inside = t2_values.iter().filter(|&&v| v <= chart.ucl).count();
    Ok(inside as f64 / t2_values.len() as f64)
}
