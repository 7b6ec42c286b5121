//! Synthetic benchmark plant with operating regimes.
//!
//! `x(k+1) = g·A·x(k) + B·tanh(W·ū(k))`,
//! `y_p(k) = C·x(k) + D·ū(k) + drift(k) + noise(k)`, with
//! `ū = (u − center)/scale`. `A` is lower-triangular with its diagonal in
//! `[0.55, 0.7]`, so the nominal map is stable; `g` is `1` unless a regime
//! or the internal-change hook perturbs the dynamics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::{Error, Result};

const STREAM_MATRICES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_CALIBRATION: u64 = 3;

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Disturbance bands of one operating condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub name: String,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Multiplier on `A` while this regime is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics_gain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Amplitude as a fraction of each output's nominal standard deviation.
    pub amplitude_rel: f64,
    /// Period in samples.
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InternalChange {
    pub at_step: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n_u: usize,
    pub n_y: usize,
    pub n_x: usize,
    /// Leading input channels that are manipulated (the rest are disturbances).
    pub n_control: usize,
    pub input_center: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub regimes: Vec<RegimeSpec>,
    /// Input weight scale of the hidden units driven by the control channels.
    pub control_gain: f64,
    /// Input weight scale of the hidden units driven by the disturbances.
    pub disturbance_gain: f64,
    /// White output noise as a fraction of each output's nominal standard deviation.
    pub noise_rel: f64,
    pub drift: DriftSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_change: Option<InternalChange>,
    pub seed: u64,
}

impl PlantConfig {
    /// One control, two disturbances, three outputs, four states.
    pub fn desk() -> Self {
        Self {
            n_u: 3,
            n_y: 3,
            n_x: 4,
            n_control: 1,
            input_center: vec![50.0, 225.0, 225.0],
            input_scale: vec![50.0, 100.0, 100.0],
            regimes: vec![
                RegimeSpec {
                    name: "low demand".into(),
                    low: vec![100.0, 100.0],
                    high: vec![300.0, 300.0],
                    dynamics_gain: None,
                },
                RegimeSpec {
                    name: "high demand".into(),
                    low: vec![150.0, 150.0],
                    high: vec![350.0, 350.0],
                    dynamics_gain: None,
                },
            ],
            control_gain: 1.0,
            disturbance_gain: 2.5,
            noise_rel: 0.03,
            drift: DriftSpec {
                amplitude_rel: 0.05,
                period: 500.0,
            },
            internal_change: None,
            seed: 10,
        }
    }

    /// Larger layout: one control, five disturbances, seventeen outputs.
    pub fn aroma() -> Self {
        let band = |lo: f64, hi: f64| vec![lo; 5].into_iter().zip(vec![hi; 5]).unzip::<f64, f64, Vec<_>, Vec<_>>();
        let (l1, h1) = band(100.0, 300.0);
        let (l2, h2) = band(150.0, 350.0);
        Self {
            n_u: 6,
            n_y: 17,
            n_x: 12,
            n_control: 1,
            input_center: vec![80.0, 225.0, 225.0, 225.0, 225.0, 225.0],
            input_scale: vec![10.0, 100.0, 100.0, 100.0, 100.0, 100.0],
            regimes: vec![
                RegimeSpec { name: "low demand".into(), low: l1, high: h1, dynamics_gain: None },
                RegimeSpec { name: "high demand".into(), low: l2, high: h2, dynamics_gain: None },
            ],
            control_gain: 1.0,
            disturbance_gain: 2.5,
            noise_rel: 0.03,
            drift: DriftSpec {
                amplitude_rel: 0.05,
                period: 500.0,
            },
            internal_change: None,
            seed: 10,
        }
    }

    pub fn n_disturbance(&self) -> usize {
        self.n_u - self.n_control
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("plant.{k}");
        if self.n_u == 0 || self.n_y == 0 || self.n_x == 0 {
            return Err(Error::config(key("n_u"), "dimensions must be positive"));
        }
        if self.n_control > self.n_u {
            return Err(Error::config(key("n_control"), "exceeds n_u"));
        }
        if self.input_center.len() != self.n_u {
            return Err(Error::config(key("input_center"), format!("needs {} entries", self.n_u)));
        }
        if self.input_scale.len() != self.n_u || self.input_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config(key("input_scale"), format!("needs {} positive entries", self.n_u)));
        }
        if self.regimes.is_empty() {
            return Err(Error::config(key("regimes"), "at least one regime is required"));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            let nd = self.n_disturbance();
            if r.low.len() != nd || r.high.len() != nd {
                return Err(Error::config(format!("plant.regimes[{i}]"), format!("needs {nd} disturbance bands")));
            }
            if r.low.iter().zip(&r.high).any(|(l, h)| !(h > l)) {
                return Err(Error::config(format!("plant.regimes[{i}]"), "degenerate disturbance range"));
            }
            if let Some(g) = r.dynamics_gain {
                if !(g > 0.0) || g * A_DIAG_MAX >= 1.0 {
                    return Err(Error::config(format!("plant.regimes[{i}].dynamics_gain"), "must keep the state map stable"));
                }
            }
        }
        if !(self.control_gain > 0.0) || !(self.disturbance_gain > 0.0) {
            return Err(Error::config(key("control_gain"), "input gains must be positive"));
        }
        if !(self.noise_rel >= 0.0) {
            return Err(Error::config(key("noise_rel"), "must be non-negative"));
        }
        if !(self.drift.amplitude_rel >= 0.0) || !(self.drift.period > 0.0) {
            return Err(Error::config(key("drift"), "amplitude must be non-negative and period positive"));
        }
        if let Some(ic) = &self.internal_change {
            if !(ic.gain > 0.0) || ic.gain * A_DIAG_MAX >= 1.0 {
                return Err(Error::config(key("internal_change.gain"), "must keep the state map stable"));
            }
        }
        Ok(())
    }

    pub fn regime(&self, index: usize) -> Result<&RegimeSpec> {
        self.regimes.get(index).ok_or(Error::RegimeError {
            index,
            count: self.regimes.len(),
        })
    }
}

const A_DIAG_MIN: f64 = 0.55;
const A_DIAG_MAX: f64 = 0.7;

/// Multilevel pseudorandom binary sequence for the control channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MprbsSpec {
    pub levels: usize,
    pub min: f64,
    pub max: f64,
    pub dwell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub control: MprbsSpec,
    /// Period of the daily disturbance cycle, in samples.
    pub day_period: f64,
    /// Fraction of each regime's half-width the disturbance profile spans.
    pub spread: f64,
    /// Share of the daily sinusoid in the profile; the rest is AR(1) noise.
    pub daily_weight: f64,
    pub ar_coeff: f64,
}

impl ExcitationSpec {
    pub fn desk() -> Self {
        Self {
            control: MprbsSpec {
                levels: 5,
                min: 0.0,
                max: 100.0,
                dwell: 6,
            },
            day_period: 200.0,
            spread: 0.5,
            daily_weight: 0.2,
            ar_coeff: 0.3,
        }
    }

    pub fn aroma() -> Self {
        Self {
            control: MprbsSpec {
                levels: 5,
                min: 70.0,
                max: 90.0,
                dwell: 6,
            },
            day_period: 288.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.control;
        if c.levels < 2 {
            return Err(Error::config("excitation.control.levels", "at least two levels"));
        }
        if c.dwell < 1 {
            return Err(Error::config("excitation.control.dwell", "must be at least 1"));
        }
        if !(c.max > c.min) {
            return Err(Error::config("excitation.control.max", "must exceed min"));
        }
        if !(self.day_period > 0.0) {
            return Err(Error::config("excitation.day_period", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.spread) {
            return Err(Error::config("excitation.spread", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.daily_weight) {
            return Err(Error::config("excitation.daily_weight", "must lie in [0, 1]"));
        }
        if !(self.ar_coeff.abs() < 1.0) {
            return Err(Error::config("excitation.ar_coeff", "must lie in (-1, 1)"));
        }
        Ok(())
    }
}

/// Input sequence for `length` samples of `regime`, starting at absolute
/// sample `k0` (which fixes the phase of the daily cycle).
pub fn generate_excitation(
    spec: &ExcitationSpec,
    plant: &PlantConfig,
    regime: usize,
    k0: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let r = plant.regime(regime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.control;
    let step = (c.max - c.min) / (c.levels - 1) as f64;
    let nd = plant.n_disturbance();
    let innovation = (1.0 - spec.ar_coeff * spec.ar_coeff).sqrt();
    let mut ar: Vec<f64> = (0..nd).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut control = vec![0.0; plant.n_control];
    let mut out = Vec::with_capacity(length);
    for i in 0..length {
        if i % c.dwell == 0 {
            for v in &mut control {
                *v = c.min + step * rng.random_range(0..c.levels) as f64;
            }
        }
        let mut u = control.clone();
        let t = 2.0 * PI * (k0 + i) as f64 / spec.day_period;
        for d in 0..nd {
            ar[d] = spec.ar_coeff * ar[d] + innovation * rng.sample::<f64, _>(StandardNormal);
            let phase = d as f64 * PI / 3.0;
            let s = spec.daily_weight * (t + phase).sin() + (1.0 - spec.daily_weight) * ar[d];
            let s = s.clamp(-1.0, 1.0);
            let center = 0.5 * (r.low[d] + r.high[d]);
            let half = 0.5 * (r.high[d] - r.low[d]);
            u.push(center + spec.spread * half * s);
        }
        out.push(u);
    }
    Ok(out)
}

/// Mutable part of the simulation: state vector, sample index and the
/// current dynamics multiplier of the active regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub k: usize,
    pub regime_gain: f64,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub config: PlantConfig,
    a: Matrix<f64>,
    b: Matrix<f64>,
    w: Matrix<f64>,
    c: Matrix<f64>,
    d: Matrix<f64>,
    noise_std: Vec<f64>,
    drift_amplitude: Vec<f64>,
    drift_phase: Vec<f64>,
    noise_seed: u64,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_row_major(rows, cols, data)
}

impl Plant {
    /// Draws the system matrices from the seed and calibrates drift and
    /// noise levels on a noiseless nominal run.
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let config_seed = config.seed;
        let mut rng = stream_rng(config.seed, STREAM_MATRICES, 0);
        let (n_x, n_u, n_y) = (config.n_x, config.n_u, config.n_y);
        let n_h = n_x;
        let mut a = Matrix::zeros(n_x, n_x);
        for i in 0..n_x {
            a[(i, i)] = if i == 0 { A_DIAG_MAX } else { rng.random_range(A_DIAG_MIN..A_DIAG_MAX) };
            for j in 0..i {
                a[(i, j)] = rng.random_range(-0.2..0.2);
            }
        }
        let b = random_matrix(&mut rng, n_x, n_h, 1.0 / (n_h as f64).sqrt());
        // Half the hidden units respond mainly to the controls, half to the
        // disturbances, with weak cross-coupling.
        let mut w = random_matrix(&mut rng, n_h, n_u, 1.0);
        let n_c = config.n_control;
        for h in 0..n_h {
            let control_unit = n_c > 0 && (h < n_h / 2 || n_c == n_u);
            let (gc, gd) = if control_unit {
                (config.control_gain, 0.1 * config.disturbance_gain)
            } else {
                (0.1 * config.control_gain, config.disturbance_gain)
            };
            let nd = (n_u - n_c).max(1) as f64;
            for i in 0..n_u {
                w[(h, i)] *= if i < n_c { gc / (n_c as f64).sqrt() } else { gd / nd.sqrt() };
            }
        }
        let c = random_matrix(&mut rng, n_y, n_x, 1.0);
        let d = random_matrix(&mut rng, n_y, n_u, 0.2);
        let drift_phase = (0..n_y).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let mut plant = Self {
            config,
            a,
            b,
            w,
            c,
            d,
            noise_std: vec![0.0; n_y],
            drift_amplitude: vec![0.0; n_y],
            drift_phase,
            noise_seed: config_seed,
        };
        let std = plant.nominal_output_std()?;
        plant.noise_std = std.iter().map(|s| plant.config.noise_rel * s).collect();
        plant.drift_amplitude = std.iter().map(|s| plant.config.drift.amplitude_rel * s).collect();
        Ok(plant)
    }

    fn nominal_output_std(&self) -> Result<Vec<f64>> {
        let nominal = self.nominal();
        let seed = stream_rng(self.config.seed, STREAM_CALIBRATION, 0).random();
        let inputs = generate_excitation(&ExcitationSpec::desk_for(&self.config), &self.config, 0, 0, 2000, seed)?;
        let mut state = nominal.burn_in_state(&inputs[0]);
        let mut ys = Vec::with_capacity(inputs.len());
        for u in &inputs {
            ys.push(nominal.noiseless_output(&state, u));
            state = nominal.next_state(&state, u);
        }
        let n = ys.len() as f64;
        Ok((0..self.config.n_y)
            .map(|j| {
                let m = ys.iter().map(|y| y[j]).sum::<f64>() / n;
                (ys.iter().map(|y| (y[j] - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect())
    }

    /// Re-keys the measurement noise while keeping the system matrices.
    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    pub fn drift_amplitude(&self) -> &[f64] {
        &self.drift_amplitude
    }

    pub fn zero_state(&self) -> PlantState {
        PlantState {
            x: vec![0.0; self.config.n_x],
            k: 0,
            regime_gain: 1.0,
        }
    }

    fn nominal(&self) -> Self {
        let mut p = self.clone();
        p.config.internal_change = None;
        p
    }

    /// State reached by the nominal plant after holding `u` constant long
    /// enough to settle.
    pub fn burn_in_state(&self, u: &[f64]) -> PlantState {
        let nominal = self.nominal();
        let mut s = self.zero_state();
        for _ in 0..200 {
            s = nominal.next_state(&s, u);
        }
        PlantState { k: 0, ..s }
    }

    fn normalized(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.config.input_center)
            .zip(&self.config.input_scale)
            .map(|((&v, &c), &s)| (v - c) / s)
            .collect()
    }

    fn gain(&self, state: &PlantState) -> f64 {
        let ic = match &self.config.internal_change {
            Some(ic) if state.k >= ic.at_step => ic.gain,
            _ => 1.0,
        };
        state.regime_gain * ic
    }

    fn next_state(&self, state: &PlantState, u: &[f64]) -> PlantState {
        let ub = self.normalized(u);
        let h: Vec<f64> = self.w.mul_vec(&ub).into_iter().map(f64::tanh).collect();
        let bh = self.b.mul_vec(&h);
        let g = self.gain(state);
        let ax = self.a.mul_vec(&state.x);
        PlantState {
            x: ax.iter().zip(&bh).map(|(a, b)| g * a + b).collect(),
            k: state.k + 1,
            regime_gain: state.regime_gain,
        }
    }

    fn noiseless_output(&self, state: &PlantState, u: &[f64]) -> Vec<f64> {
        let ub = self.normalized(u);
        let cx = self.c.mul_vec(&state.x);
        let du = self.d.mul_vec(&ub);
        cx.iter().zip(&du).map(|(a, b)| a + b).collect()
    }

    /// `(x(k+1), y_p(k))`. Noise is drawn from a stream keyed by the seed and
    /// `k`, so the result depends only on `(config, state, u)`.
    pub fn step(&self, state: &PlantState, u: &[f64]) -> Result<(PlantState, Vec<f64>)> {
        if u.len() != self.config.n_u {
            return Err(Error::dim(self.config.n_u, u.len(), "plant input"));
        }
        if state.x.len() != self.config.n_x {
            return Err(Error::dim(self.config.n_x, state.x.len(), "plant state"));
        }
        let mut y = self.noiseless_output(state, u);
        let t = 2.0 * PI * state.k as f64 / self.config.drift.period;
        let mut rng = stream_rng(self.noise_seed, STREAM_NOISE, state.k as u64);
        for (j, v) in y.iter_mut().enumerate() {
            *v += self.drift_amplitude[j] * (t + self.drift_phase[j]).sin();
            if self.noise_std[j] > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise_std[j] * z;
            }
        }
        Ok((self.next_state(state, u), y))
    }

    /// Runs the plant over `inputs`, advancing `state`.
    pub fn simulate(&self, state: &mut PlantState, inputs: &[Vec<f64>]) -> Result<Dataset<f64>> {
        let mut outputs = Vec::with_capacity(inputs.len());
        for u in inputs {
            let (next, y) = self.step(state, u)?;
            *state = next;
            outputs.push(y);
        }
        Dataset::new(inputs.to_vec(), outputs)
    }

    /// Activates a regime's dynamics multiplier.
    pub fn enter_regime(&self, state: &mut PlantState, regime: usize) -> Result<()> {
        state.regime_gain = self.config.regime(regime)?.dynamics_gain.unwrap_or(1.0);
        Ok(())
    }
}

impl ExcitationSpec {
    /// Desk-shaped excitation adapted to an arbitrary plant's control span.
    fn desk_for(plant: &PlantConfig) -> Self {
        let c = plant.input_center.first().copied().unwrap_or(0.0);
        let s = plant.input_scale.first().copied().unwrap_or(1.0);
        Self {
            control: MprbsSpec {
                levels: 5,
                min: c - s,
                max: c + s,
                dwell: 6,
            },
            ..Self::desk()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PlantConfig {
        PlantConfig {
            input_center: vec![0.0; 3],
            noise_rel: 0.0,
            drift: DriftSpec {
                amplitude_rel: 0.0,
                period: 500.0,
            },
            ..PlantConfig::desk()
        }
    }

    #[test]
    fn equilibrium_at_zero() {
        let p = Plant::new(quiet()).unwrap();
        let mut s = p.zero_state();
        for _ in 0..50 {
            let (next, y) = p.step(&s, &[0.0; 3]).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
            s = next;
        }
    }

    #[test]
    fn converges_to_fixed_point() {
        let p = Plant::new(quiet()).unwrap();
        let u = [30.0, 120.0, 250.0];
        let mut s = p.zero_state();
        let mut last = vec![];
        for _ in 0..400 {
            let (next, y) = p.step(&s, &u).unwrap();
            s = next;
            last = y;
        }
        let (next, y) = p.step(&s, &u).unwrap();
        assert!(next.x.iter().zip(&s.x).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(y.iter().zip(&last).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let cfg = PlantConfig::desk();
        let spec = ExcitationSpec::desk();
        let inputs = generate_excitation(&spec, &cfg, 0, 0, 300, 11).unwrap();
        let run = || {
            let p = Plant::new(cfg.clone()).unwrap();
            let mut s = p.burn_in_state(&inputs[0]);
            p.simulate(&mut s, &inputs).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_dwell_is_constant() {
        let cfg = PlantConfig::desk();
        let mut spec = ExcitationSpec::desk();
        spec.control.dwell = 50;
        let u = generate_excitation(&spec, &cfg, 0, 0, 50, 3).unwrap();
        assert!(u.iter().all(|r| r[0] == u[0][0]));
        let levels: Vec<f64> = (0..5).map(|i| 25.0 * i as f64).collect();
        assert!(levels.contains(&u[0][0]));
    }

    #[test]
    fn disturbances_stay_in_band() {
        let cfg = PlantConfig::desk();
        let spec = ExcitationSpec { spread: 1.0, ..ExcitationSpec::desk() };
        for regime in 0..2 {
            let u = generate_excitation(&spec, &cfg, regime, 17, 2000, 5).unwrap();
            let r = &cfg.regimes[regime];
            for row in &u {
                for d in 0..2 {
                    assert!(row[1 + d] >= r.low[d] && row[1 + d] <= r.high[d]);
                }
            }
        }
        assert!(matches!(
            generate_excitation(&spec, &cfg, 2, 0, 10, 1),
            Err(Error::RegimeError { index: 2, count: 2 })
        ));
    }

    #[test]
    fn internal_change_multiplies_dynamics() {
        let mut cfg = quiet();
        cfg.internal_change = Some(InternalChange { at_step: 10, gain: 1.3 });
        let changed = Plant::new(cfg).unwrap();
        let nominal = Plant::new(quiet()).unwrap();
        let u = [20.0, 50.0, -40.0];
        let (mut s1, mut s2) = (changed.zero_state(), nominal.zero_state());
        let mut diverged = None;
        for k in 0..30 {
            let (a, y1) = changed.step(&s1, &u).unwrap();
            let (b, y2) = nominal.step(&s2, &u).unwrap();
            if y1 != y2 && diverged.is_none() {
                diverged = Some(k);
            }
            s1 = a;
            s2 = b;
        }
        assert_eq!(diverged, Some(11));
    }

    #[test]
    fn noise_and_drift_are_calibrated() {
        let cfg = PlantConfig::desk();
        let ratio = cfg.drift.amplitude_rel / cfg.noise_rel;
        let p = Plant::new(cfg).unwrap();
        for (n, d) in p.noise_std().iter().zip(p.drift_amplitude()) {
            assert!(*n > 0.0);
            assert!((d / n - ratio).abs() < 1e-9);
        }
    }
}
