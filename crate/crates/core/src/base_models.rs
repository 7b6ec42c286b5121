//! Per-regime dynamical models.
//!
//! An ensemble member only needs to be fitted from a [`Dataset`] and stepped
//! forward in free run; [`RegimeModel`] captures that. The default member is
//! a multi-output NARX model fitted by ridge-regularized least squares on
//! z-scored data, whose lag buffer plays the role of the model state.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{Cholesky, Matrix};
use crate::{Error, Result, Scalar};

/// A data-based model of one operating regime.
pub trait RegimeModel<T: Scalar>: Clone + Send + Sync {
    type Config: Clone + Send + Sync;
    type State: Clone + Send;

    fn fit(data: &Dataset<T>, config: &Self::Config) -> Result<Self>;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Number of past samples the state is built from.
    fn history_len(&self) -> usize;

    /// State with no history: every lag at the training mean.
    fn cold_state(&self) -> Self::State;

    /// State seeded from measured history (most recent sample last).
    /// Missing history falls back to the cold values.
    fn state_from_history(&self, outputs: &[Vec<T>], inputs: &[Vec<T>]) -> Self::State;

    /// Produce `y(k)` from the current state and `u(k)`, then advance the
    /// state by feeding back the prediction.
    fn step(&self, state: &mut Self::State, u: &[T]) -> Result<Vec<T>>;

    /// Free-run simulation.
    fn simulate(&self, inputs: &[Vec<T>], init: &Self::State) -> Result<Vec<Vec<T>>> {
        let mut state = init.clone();
        inputs.iter().map(|u| self.step(&mut state, u)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarxConfig {
    /// Output lags.
    pub n_a: usize,
    /// Input lags, counting the current input.
    pub n_b: usize,
    pub ridge: f64,
    /// Append `tanh` of the linear regressor block.
    pub nonlinear_features: bool,
    /// Append pairwise products of the input lags.
    #[serde(default)]
    pub quadratic_inputs: bool,
}

impl Default for NarxConfig {
    fn default() -> Self {
        Self {
            n_a: 2,
            n_b: 2,
            ridge: 1e-4,
            nonlinear_features: true,
            quadratic_inputs: false,
        }
    }
}

impl NarxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_b == 0 {
            return Err(Error::config("n_b", "must be at least 1"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config("ridge", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn linear_dim(&self, n_u: usize, n_y: usize) -> usize {
        self.n_a * n_y + self.n_b * n_u
    }

    /// Regressor length: linear block, optional tanh and product blocks,
    /// intercept.
    pub fn feature_dim(&self, n_u: usize, n_y: usize) -> usize {
        let l = self.linear_dim(n_u, n_y);
        let m = self.n_b * n_u;
        let q = if self.quadratic_inputs { m * (m + 1) / 2 } else { 0 };
        l * if self.nonlinear_features { 2 } else { 1 } + q + 1
    }

    fn is_linear(&self) -> bool {
        !self.nonlinear_features && !self.quadratic_inputs
    }

    fn history(&self) -> usize {
        self.n_a.max(self.n_b - 1)
    }
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

pub const SCALER_STD_FLOOR: f64 = 1e-12;

impl<T: Scalar> Scaler<T> {
    pub fn fit(rows: &[Vec<T>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = T::from_usize(rows.len().max(1)).unwrap();
        let mut mean = vec![T::zero(); dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); dim];
        for r in rows {
            var.iter_mut()
                .zip(r)
                .zip(&mean)
                .for_each(|((s, &v), &m)| *s += (v - m) * (v - m));
        }
        let denom = T::from_usize(rows.len().saturating_sub(1).max(1)).unwrap();
        let floor = T::lit(SCALER_STD_FLOOR);
        let std = var.into_iter().map(|s| (s / denom).sqrt().max(floor)).collect();
        Self { mean, std }
    }

    pub fn scale(&self, v: &[T]) -> Vec<T> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }

    pub fn unscale(&self, v: &[T]) -> Vec<T> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&x, &m), &s)| x * s + m)
            .collect()
    }
}

/// Multi-output NARX model in scaled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NarxModel<T> {
    pub config: NarxConfig,
    /// `n_y × feature_dim`.
    pub coefficients: Matrix<T>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub input_scaler: Scaler<T>,
    pub output_scaler: Scaler<T>,
}

/// Lag buffer in scaled units; front is the most recent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LagState<T> {
    pub outputs: VecDeque<Vec<T>>,
    pub inputs: VecDeque<Vec<T>>,
}

/// Raw-unit coefficients of a linear NARX model:
/// `y(k) = intercept + coefficients · [y(k-1)..y(k-n_a), u(k)..u(k-n_b+1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLinearModel<T> {
    pub coefficients: Matrix<T>,
    pub intercept: Vec<T>,
}

fn regressor<T: Scalar>(
    cfg: &NarxConfig,
    past_outputs: &VecDeque<Vec<T>>,
    past_inputs: &VecDeque<Vec<T>>,
    current_input: &[T],
) -> Vec<T> {
    let mut phi: Vec<T> = Vec::with_capacity(64);
    for y in past_outputs.iter().take(cfg.n_a) {
        phi.extend_from_slice(y);
    }
    phi.extend_from_slice(current_input);
    for u in past_inputs.iter().take(cfg.n_b - 1) {
        phi.extend_from_slice(u);
    }
    if cfg.nonlinear_features {
        let l = phi.len();
        for i in 0..l {
            let t = phi[i].tanh();
            phi.push(t);
        }
    }
    if cfg.quadratic_inputs {
        let start = past_outputs.iter().take(cfg.n_a).map(Vec::len).sum::<usize>();
        let end = start + current_input.len() * cfg.n_b;
        for i in start..end {
            for j in i..end {
                let p = phi[i] * phi[j];
                phi.push(p);
            }
        }
    }
    phi.push(T::one());
    phi
}

impl<T: Scalar> NarxModel<T> {
    pub fn new_zero(config: NarxConfig, input_scaler: Scaler<T>, output_scaler: Scaler<T>) -> Self {
        let (n_u, n_y) = (input_scaler.mean.len(), output_scaler.mean.len());
        Self {
            config,
            coefficients: Matrix::zeros(n_y, config.feature_dim(n_u, n_y)),
            input_dim: n_u,
            output_dim: n_y,
            input_scaler,
            output_scaler,
        }
    }

    /// Scaled regressors and targets used by the least-squares fit.
    fn design(&self, data: &Dataset<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let cfg = &self.config;
        let us: Vec<Vec<T>> = data.inputs.iter().map(|u| self.input_scaler.scale(u)).collect();
        let ys: Vec<Vec<T>> = data.outputs.iter().map(|y| self.output_scaler.scale(y)).collect();
        let start = cfg.history();
        let mut phis = Vec::with_capacity(data.len().saturating_sub(start));
        let mut targets = Vec::with_capacity(phis.capacity());
        for k in start..data.len() {
            let past_y: VecDeque<Vec<T>> = (1..=cfg.n_a).map(|i| ys[k - i].clone()).collect();
            let past_u: VecDeque<Vec<T>> = (1..cfg.n_b).map(|i| us[k - i].clone()).collect();
            phis.push(regressor(cfg, &past_y, &past_u, &us[k]));
            targets.push(ys[k].clone());
        }
        (phis, targets)
    }

    /// Ridge-regularized loss `Σ‖y − Θφ‖² + ridge·‖Θ‖²` in scaled units.
    pub fn training_loss(&self, data: &Dataset<T>) -> T {
        let (phis, targets) = self.design(data);
        let mut loss = T::zero();
        for (phi, y) in phis.iter().zip(&targets) {
            let pred = self.coefficients.mul_vec(phi);
            loss += pred.iter().zip(y).map(|(&p, &t)| (t - p) * (t - p)).sum::<T>();
        }
        let penalty: T = self.coefficients.as_slice().iter().map(|&c| c * c).sum();
        loss + T::lit(self.config.ridge) * penalty
    }

    /// One-step-ahead predictions using measured lags, for rows `history..len`.
    pub fn predict_one_step(&self, data: &Dataset<T>) -> Vec<Vec<T>> {
        let (phis, _) = self.design(data);
        phis.iter()
            .map(|phi| self.output_scaler.unscale(&self.coefficients.mul_vec(phi)))
            .collect()
    }

    /// Coefficients mapped back to raw units; `None` for nonlinear features.
    pub fn raw_linear(&self) -> Option<RawLinearModel<T>> {
        if !self.config.is_linear() {
            return None;
        }
        let (n_u, n_y) = (self.input_dim, self.output_dim);
        let l = self.config.linear_dim(n_u, n_y);
        let mut coefficients = Matrix::zeros(n_y, l);
        let mut intercept = vec![T::zero(); n_y];
        for r in 0..n_y {
            let sy_r = self.output_scaler.std[r];
            let theta = self.coefficients.row(r);
            let mut offset = theta[l];
            for col in 0..l {
                let (m, s) = if col < self.config.n_a * n_y {
                    let c = col % n_y;
                    (self.output_scaler.mean[c], self.output_scaler.std[c])
                } else {
                    let c = (col - self.config.n_a * n_y) % n_u;
                    (self.input_scaler.mean[c], self.input_scaler.std[c])
                };
                coefficients[(r, col)] = sy_r * theta[col] / s;
                offset -= theta[col] * m / s;
            }
            intercept[r] = self.output_scaler.mean[r] + sy_r * offset;
        }
        Some(RawLinearModel {
            coefficients,
            intercept,
        })
    }
}

pub fn fit_base_model<T: Scalar>(data: &Dataset<T>, config: &NarxConfig) -> Result<NarxModel<T>> {
    NarxModel::fit(data, config)
}

impl<T: Scalar> RegimeModel<T> for NarxModel<T> {
    type Config = NarxConfig;
    type State = LagState<T>;

    fn fit(data: &Dataset<T>, config: &NarxConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        let (n_u, n_y) = (data.input_dim(), data.output_dim());
        if n_u == 0 || n_y == 0 {
            return Err(Error::InvalidData("dataset has no input or output channels".into()));
        }
        let f = config.feature_dim(n_u, n_y);
        let need = config.n_a + config.n_b + f;
        if data.len() <= need {
            return Err(Error::InsufficientData(format!(
                "NARX fit needs more than {need} rows, got {}",
                data.len()
            )));
        }
        let mut model = NarxModel::new_zero(
            *config,
            Scaler::fit(&data.inputs),
            Scaler::fit(&data.outputs),
        );
        let (phis, targets) = model.design(data);

        let mut gram = Matrix::zeros(f, f);
        let mut rhs = Matrix::zeros(f, n_y);
        for (phi, y) in phis.iter().zip(&targets) {
            for i in 0..f {
                let pi = phi[i];
                if pi == T::zero() {
                    continue;
                }
                let row = gram.row_mut(i);
                for j in 0..=i {
                    row[j] += pi * phi[j];
                }
                let r = rhs.row_mut(i);
                for c in 0..n_y {
                    r[c] += pi * y[c];
                }
            }
        }
        for i in 0..f {
            for j in 0..i {
                gram[(j, i)] = gram[(i, j)];
            }
        }
        let max_diag = (0..f).map(|i| gram[(i, i)]).fold(T::zero(), T::max);
        gram.add_diagonal(T::lit(config.ridge));
        let chol = Cholesky::factor(&gram).map_err(|e| Error::SingularFit {
            column: e.index,
            pivot: e.pivot,
        })?;
        let tol = T::lit(100.0) * T::from_usize(f).unwrap() * T::epsilon() * max_diag.max(T::one());
        for i in 0..f {
            let d = chol.diag(i);
            if d * d <= tol {
                return Err(Error::SingularFit {
                    column: i,
                    pivot: (d * d).as_f64(),
                });
            }
        }
        for c in 0..n_y {
            let b: Vec<T> = (0..f).map(|i| rhs[(i, c)]).collect();
            let theta = chol.solve(&b);
            model.coefficients.row_mut(c).copy_from_slice(&theta);
        }
        if !model.coefficients.is_finite() {
            return Err(Error::NumericalFailure("non-finite NARX coefficients".into()));
        }
        Ok(model)
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn history_len(&self) -> usize {
        self.config.history()
    }

    fn cold_state(&self) -> LagState<T> {
        LagState {
            outputs: (0..self.config.n_a).map(|_| vec![T::zero(); self.output_dim]).collect(),
            inputs: (1..self.config.n_b).map(|_| vec![T::zero(); self.input_dim]).collect(),
        }
    }

    fn state_from_history(&self, outputs: &[Vec<T>], inputs: &[Vec<T>]) -> LagState<T> {
        let mut state = self.cold_state();
        for (slot, y) in state.outputs.iter_mut().zip(outputs.iter().rev()) {
            *slot = self.output_scaler.scale(y);
        }
        for (slot, u) in state.inputs.iter_mut().zip(inputs.iter().rev()) {
            *slot = self.input_scaler.scale(u);
        }
        state
    }

    fn step(&self, state: &mut LagState<T>, u: &[T]) -> Result<Vec<T>> {
        if u.len() != self.input_dim {
            return Err(Error::dim(self.input_dim, u.len(), "NARX input"));
        }
        if state.outputs.len() != self.config.n_a || state.inputs.len() + 1 != self.config.n_b {
            return Err(Error::dim(self.config.n_a, state.outputs.len(), "NARX lag buffer"));
        }
        let us = self.input_scaler.scale(u);
        let phi = regressor(&self.config, &state.outputs, &state.inputs, &us);
        let ys = self.coefficients.mul_vec(&phi);
        if self.config.n_a > 0 {
            state.outputs.pop_back();
            state.outputs.push_front(ys.clone());
        }
        if self.config.n_b > 1 {
            state.inputs.pop_back();
            state.inputs.push_front(us);
        }
        Ok(self.output_scaler.unscale(&ys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// y1(k) = 0.5 y1(k-1) - 0.2 y1(k-2) + 1.5 u1(k) + 0.3 u1(k-1) - 0.4 u2(k) + 2
    fn arx_data(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::default();
        let (mut y1, mut y2, mut u_prev) = (0.0, 0.0, vec![0.0, 0.0]);
        for _ in 0..n {
            let u = vec![rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)];
            let y = 0.5 * y1 - 0.2 * y2 + 1.5 * u[0] + 0.3 * u_prev[0] - 0.4 * u[1] + 2.0;
            d.push(u.clone(), vec![y]);
            y2 = y1;
            y1 = y;
            u_prev = u;
        }
        d
    }

    fn linear_cfg(ridge: f64) -> NarxConfig {
        NarxConfig {
            n_a: 2,
            n_b: 2,
            ridge,
            nonlinear_features: false,
            quadratic_inputs: false,
        }
    }

    #[test]
    fn recovers_arx_generator() {
        let data = arx_data(300, 7);
        let model = fit_base_model(&data, &linear_cfg(0.0)).unwrap();
        let raw = model.raw_linear().unwrap();
        // Regressor order: y(k-1), y(k-2), u1(k), u2(k), u1(k-1), u2(k-1).
        let want = [0.5, -0.2, 1.5, -0.4, 0.3, 0.0];
        for (c, w) in want.iter().enumerate() {
            assert!((raw.coefficients[(0, c)] - w).abs() < 1e-6, "coef {c}");
        }
        assert!((raw.intercept[0] - 2.0).abs() < 1e-6);
        for (p, y) in model.predict_one_step(&data).iter().zip(&data.outputs[2..]) {
            assert!((p[0] - y[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn free_run_tracks_generator() {
        let data = arx_data(400, 11);
        let model = fit_base_model(&data, &linear_cfg(0.0)).unwrap();
        let test = data.slice(300..400);
        let init = model.state_from_history(&data.outputs[298..300], &data.inputs[299..300]);
        let sim = model.simulate(&test.inputs, &init).unwrap();
        assert_eq!(sim.len(), 100);
        for (s, y) in sim.iter().zip(&test.outputs) {
            assert!((s[0] - y[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_output_is_reproduced() {
        let mut d = Dataset::default();
        for k in 0..80 {
            d.push(vec![(k as f64 * 0.37).sin()], vec![4.25, -1.0]);
        }
        let m = fit_base_model(&d, &NarxConfig::default()).unwrap();
        let sim = m.simulate(&d.inputs, &m.cold_state()).unwrap();
        assert!(sim.iter().all(|y| y == &vec![4.25, -1.0]));
    }

    #[test]
    fn huge_ridge_predicts_mean() {
        let data = arx_data(200, 3);
        let m = fit_base_model(
            &data,
            &NarxConfig {
                ridge: 1e14,
                ..NarxConfig::default()
            },
        )
        .unwrap();
        assert!(m.coefficients.as_slice().iter().all(|c| c.abs() < 1e-9));
        let mean = m.output_scaler.mean[0];
        let sim = m.simulate(&data.inputs[..10], &m.cold_state()).unwrap();
        assert!(sim.iter().all(|y| (y[0] - mean).abs() < 1e-6));
    }

    #[test]
    fn zero_model_outputs_mean() {
        let data = arx_data(100, 5);
        let m = NarxModel::new_zero(
            NarxConfig::default(),
            Scaler::fit(&data.inputs),
            Scaler::fit(&data.outputs),
        );
        let sim = m.simulate(&data.inputs, &m.cold_state()).unwrap();
        assert!(sim.iter().all(|y| y[0] == m.output_scaler.mean[0]));
    }

    #[test]
    fn static_model_is_direct_regression() {
        let data = arx_data(200, 9);
        let cfg = NarxConfig {
            n_a: 0,
            n_b: 2,
            ridge: 1e-3,
            nonlinear_features: true,
            quadratic_inputs: true,
        };
        let m = fit_base_model(&data, &cfg).unwrap();
        let sim = m.simulate(&data.inputs[1..], &m.state_from_history(&[], &data.inputs[..1])).unwrap();
        let one_step = m.predict_one_step(&data);
        for (a, b) in sim.iter().zip(&one_step) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_channel_is_singular_without_ridge() {
        let mut d = arx_data(200, 2);
        for u in &mut d.inputs {
            u[1] = u[0];
        }
        let err = fit_base_model(&d, &linear_cfg(0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularFit { .. }), "{err}");
        assert!(fit_base_model(&d, &linear_cfg(1e-4)).is_ok());
    }

    #[test]
    fn too_few_rows() {
        let d = arx_data(10, 1);
        assert!(matches!(
            fit_base_model(&d, &NarxConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn dimension_checked_in_step() {
        let data = arx_data(100, 1);
        let m = fit_base_model(&data, &NarxConfig::default()).unwrap();
        let mut s = m.cold_state();
        assert!(matches!(m.step(&mut s, &[1.0]), Err(Error::DimensionError { .. })));
    }

    #[test]
    fn scaler_roundtrip() {
        let s = Scaler::<f64>::fit(&[vec![1.0, 100.0], vec![3.0, -50.0], vec![2.5, 7.0]]);
        let v = [0.123f64, 4567.0];
        let back = s.scale(&s.unscale(&v));
        assert!(back.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
