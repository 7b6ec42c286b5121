//! The fast-learning compensator: one zero-mean Gaussian process per output
//! channel, fitted online on a sliding window, predicting the next residual
//! of the slow model.
//!
//! For channel `j` the GP input is
//! `ν_j(k) = [e_j(k) … e_j(k−n_re+1), y_s,j(k−1) … y_s,j(k−n_ry), y_s,j(k)]`
//! and the training pairs are `(ν_j(h−1), e_j(h))`. Hyperparameters of the
//! squared-exponential ARD kernel are fitted by maximizing the log marginal
//! likelihood in log space.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Cholesky, Matrix};
use crate::{Error, Result, Scalar};

/// Squared-exponential ARD hyperparameters, stored in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GpHyperparams<T> {
    pub log_alpha: T,
    pub log_lengthscales: Vec<T>,
    pub log_jitter: T,
}

impl<T: Scalar> GpHyperparams<T> {
    pub fn new(alpha: T, lengthscales: &[T], jitter: T) -> Self {
        Self {
            log_alpha: alpha.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_jitter: jitter.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn signal_variance(&self) -> T {
        (self.log_alpha + self.log_alpha).exp()
    }

    pub fn lengthscale(&self, d: usize) -> T {
        self.log_lengthscales[d].exp()
    }

    pub fn jitter(&self) -> T {
        self.log_jitter.exp()
    }

    /// `[log α, log ℓ_1 … log ℓ_D, log jitter]`.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.log_alpha);
        v.extend_from_slice(&self.log_lengthscales);
        v.push(self.log_jitter);
        v
    }

    pub fn from_vec(v: &[T]) -> Self {
        Self {
            log_alpha: v[0],
            log_lengthscales: v[1..v.len() - 1].to_vec(),
            log_jitter: v[v.len() - 1],
        }
    }

    fn inv_sq_lengthscales(&self) -> Vec<T> {
        let m2 = T::lit(-2.0);
        self.log_lengthscales.iter().map(|&l| (m2 * l).exp()).collect()
    }
}

#[inline]
fn se_unchecked<T: Scalar>(a: &[T], b: &[T], inv_sq: &[T], alpha2: T) -> T {
    let mut s = T::zero();
    for ((&x, &y), &w) in a.iter().zip(b).zip(inv_sq) {
        let d = x - y;
        s += d * d * w;
    }
    alpha2 * (T::lit(-0.5) * s).exp()
}

/// `α² exp(−½ Σ_d (a_d − b_d)²/ℓ_d²)`.
pub fn se_kernel<T: Scalar>(a: &[T], b: &[T], hp: &GpHyperparams<T>) -> Result<T> {
    if a.len() != hp.dim() || b.len() != hp.dim() {
        return Err(Error::dim(hp.dim(), a.len().max(b.len()) , "kernel input"));
    }
    Ok(se_unchecked(a, b, &hp.inv_sq_lengthscales(), hp.signal_variance()))
}

/// Jitter escalation policy: multiply by 10 until `cap_rel · α²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub cap_rel: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { cap_rel: 1e-2 }
    }
}

#[derive(Debug, Clone)]
struct CachedFactor<T> {
    key: GpHyperparams<T>,
    jitter: T,
    chol: Cholesky<T>,
    updates: usize,
}

/// Sliding window of `(ν, target)` pairs with a cached factor of `Σ₂ + jitter·I`.
#[derive(Debug, Clone)]
pub struct GpWindow<T> {
    capacity: usize,
    nu: VecDeque<Vec<T>>,
    targets: VecDeque<T>,
    cache: Option<CachedFactor<T>>,
    policy: JitterPolicy,
}

impl<T: Scalar> GpWindow<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            nu: VecDeque::with_capacity(capacity),
            targets: VecDeque::with_capacity(capacity),
            cache: None,
            policy: JitterPolicy::default(),
        }
    }

    pub fn from_points(capacity: usize, points: &[(Vec<T>, T)]) -> Self {
        let mut w = Self::new(capacity);
        for (nu, t) in points {
            w.push(nu.clone(), *t);
        }
        w
    }

    pub fn with_policy(mut self, policy: JitterPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn points(&self) -> impl Iterator<Item = (&Vec<T>, &T)> {
        self.nu.iter().zip(&self.targets)
    }

    pub fn inputs(&self) -> &VecDeque<Vec<T>> {
        &self.nu
    }

    pub fn targets(&self) -> &VecDeque<T> {
        &self.targets
    }

    /// Whether the cached factor matches `hp` and the current points.
    pub fn is_fresh_for(&self, hp: &GpHyperparams<T>) -> bool {
        self.cache.as_ref().is_some_and(|c| &c.key == hp)
    }

    pub fn clear(&mut self) {
        self.nu.clear();
        self.targets.clear();
        self.cache = None;
    }

    /// Appends a pair, evicting the oldest one when full. Returns whether an
    /// eviction happened. The cached factor is updated in place.
    pub fn push(&mut self, nu: Vec<T>, target: T) -> bool {
        let evicted = self.nu.len() == self.capacity;
        if evicted {
            self.nu.pop_front();
            self.targets.pop_front();
            if let Some(c) = self.cache.as_mut() {
                c.chol.remove_first();
            }
        }
        if let Some(mut c) = self.cache.take() {
            let inv_sq = c.key.inv_sq_lengthscales();
            let a2 = c.key.signal_variance();
            let b: Vec<T> = self.nu.iter().map(|p| se_unchecked(&nu, p, &inv_sq, a2)).collect();
            c.updates += 1;
            // Periodic refactorization bounds round-off from repeated updates.
            if c.updates <= 4 * self.capacity && c.chol.append(&b, a2 + c.jitter).is_ok() {
                self.cache = Some(c);
            }
        }
        self.nu.push_back(nu);
        self.targets.push_back(target);
        evicted
    }

    fn kernel_matrix(&self, hp: &GpHyperparams<T>) -> Matrix<T> {
        let n = self.len();
        let inv_sq = hp.inv_sq_lengthscales();
        let a2 = hp.signal_variance();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = se_unchecked(&self.nu[i], &self.nu[j], &inv_sq, a2);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] = a2;
        }
        k
    }

    /// Factors `Σ₂ + jitter·I`, escalating the jitter on failure.
    fn factor(&self, hp: &GpHyperparams<T>) -> Result<(Cholesky<T>, T)> {
        if self.is_empty() {
            return Err(Error::InsufficientData("GP window is empty".into()));
        }
        if let Some(d) = self.nu.front().map(Vec::len) {
            if d != hp.dim() {
                return Err(Error::dim(hp.dim(), d, "GP window inputs"));
            }
        }
        let base = self.kernel_matrix(hp);
        let cap = T::lit(self.policy.cap_rel) * hp.signal_variance();
        let ten = T::lit(10.0);
        let mut jitter = hp.jitter();
        loop {
            let mut k = base.clone();
            k.add_diagonal(jitter);
            match Cholesky::factor(&k) {
                Ok(chol) => return Ok((chol, jitter)),
                Err(e) if jitter * ten > cap || !jitter.is_finite() => {
                    return Err(Error::NumericalFailure(format!(
                        "kernel matrix not positive definite (pivot {:e} at {}) with jitter {:e}",
                        e.pivot,
                        e.index,
                        jitter.as_f64()
                    )))
                }
                Err(_) => jitter *= ten,
            }
        }
    }

    fn ensure_factor(&mut self, hp: &GpHyperparams<T>) -> Result<&CachedFactor<T>> {
        if !self.is_fresh_for(hp) {
            let (chol, jitter) = self.factor(hp)?;
            self.cache = Some(CachedFactor {
                key: hp.clone(),
                jitter,
                chol,
                updates: 0,
            });
        }
        Ok(self.cache.as_ref().unwrap())
    }

    fn centered_targets(&self, offset: T) -> Vec<T> {
        self.targets.iter().map(|&t| t - offset).collect()
    }

    /// Posterior mean at `query` with targets shifted by `offset`.
    pub fn predict_centered(&mut self, hp: &GpHyperparams<T>, query: &[T], offset: T) -> Result<T> {
        if query.len() != hp.dim() {
            return Err(Error::dim(hp.dim(), query.len(), "GP query"));
        }
        let t = self.centered_targets(offset);
        let inv_sq = hp.inv_sq_lengthscales();
        let a2 = hp.signal_variance();
        let kstar: Vec<T> = self.nu.iter().map(|p| se_unchecked(query, p, &inv_sq, a2)).collect();
        let c = self.ensure_factor(hp)?;
        let weights = c.chol.solve(&t);
        let mean = dot(&kstar, &weights);
        if !mean.is_finite() {
            return Err(Error::NumericalFailure("non-finite GP posterior mean".into()));
        }
        Ok(mean)
    }

    /// Jitter actually used by the cached factor, after any escalation.
    pub fn effective_jitter(&self) -> Option<T> {
        self.cache.as_ref().map(|c| c.jitter)
    }
}

/// Posterior mean `Σ₁(query, ν)(Σ₂ + jitter·I)⁻¹ t`.
pub fn gp_fit_predict<T: Scalar>(window: &mut GpWindow<T>, hp: &GpHyperparams<T>, query: &[T]) -> Result<T> {
    window.predict_centered(hp, query, T::zero())
}

fn lml_from_factor<T: Scalar>(chol: &Cholesky<T>, t: &[T]) -> (T, Vec<T>) {
    let half = T::lit(0.5);
    let weights = chol.solve(t);
    let n = T::from_usize(t.len()).unwrap();
    let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let lml = -half * dot(t, &weights) - half * chol.log_det() - half * n * ln2pi;
    (lml, weights)
}

/// `−½ tᵀK⁻¹t − ½ log det K − (N/2) log 2π`, `K = Σ₂ + jitter·I`.
pub fn log_marginal_likelihood<T: Scalar>(window: &mut GpWindow<T>, hp: &GpHyperparams<T>) -> Result<T> {
    lml_centered(window, hp, T::zero())
}

fn lml_centered<T: Scalar>(window: &mut GpWindow<T>, hp: &GpHyperparams<T>, offset: T) -> Result<T> {
    let t = window.centered_targets(offset);
    let c = window.ensure_factor(hp)?;
    Ok(lml_from_factor(&c.chol, &t).0)
}

/// LML and its gradient with respect to `[log α, log ℓ…, log jitter]`.
/// Uses the requested jitter without escalation.
pub fn lml_with_gradient<T: Scalar>(window: &GpWindow<T>, hp: &GpHyperparams<T>) -> Result<(T, Vec<T>)> {
    lml_grad_centered(window, hp, T::zero())
}

fn lml_grad_centered<T: Scalar>(window: &GpWindow<T>, hp: &GpHyperparams<T>, offset: T) -> Result<(T, Vec<T>)> {
    let n = window.len();
    if n == 0 {
        return Err(Error::InsufficientData("GP window is empty".into()));
    }
    let se = window.kernel_matrix(hp);
    let mut k = se.clone();
    let jitter = hp.jitter();
    k.add_diagonal(jitter);
    let chol = Cholesky::factor(&k).map_err(|e| {
        Error::NumericalFailure(format!("kernel matrix not positive definite at {}", e.index))
    })?;
    let t = window.centered_targets(offset);
    let (lml, a) = lml_from_factor(&chol, &t);
    let kinv = chol.inverse();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let dim = hp.dim();
    let inv_sq = hp.inv_sq_lengthscales();
    let mut grad = vec![T::zero(); dim + 2];
    // W = ααᵀ − K⁻¹; ∂LML/∂θ = ½ Σ W ⊙ ∂K/∂θ. Off-diagonal terms are doubled.
    let mut dsq = vec![T::zero(); dim];
    for i in 0..n {
        let xi = &window.nu[i];
        for j in 0..i {
            let w = a[i] * a[j] - kinv[(i, j)];
            let kij = se[(i, j)];
            grad[0] += w * two * kij;
            let xj = &window.nu[j];
            for d in 0..dim {
                let diff = xi[d] - xj[d];
                dsq[d] = diff * diff * inv_sq[d];
                grad[1 + d] += w * kij * dsq[d];
            }
        }
    }
    for g in grad.iter_mut().take(dim + 1) {
        *g = *g * two * half;
    }
    let mut diag_w = T::zero();
    for i in 0..n {
        let w = a[i] * a[i] - kinv[(i, i)];
        grad[0] += half * w * two * se[(i, i)];
        diag_w += w;
    }
    grad[dim + 1] = half * diag_w * jitter;
    Ok((lml, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JitterMode {
    /// Jitter pinned to `rel · α²`.
    Relative { rel: f64 },
    /// Jitter optimized as a free hyperparameter, floored at `floor_rel · α²`.
    Learned { floor_rel: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub starts: usize,
    pub jitter: JitterMode,
    /// Box bound on every log-parameter.
    pub log_bound: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            starts: 3,
            jitter: JitterMode::Relative { rel: 1e-6 },
            log_bound: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome<T> {
    pub hyperparams: GpHyperparams<T>,
    pub lml: Option<T>,
    pub init_lml: Option<T>,
    /// No candidate (including the initial point) could be evaluated.
    pub failed: bool,
}

/// Free parameters for the optimizer and their mapping back to hyperparameters.
struct Parameterization {
    mode: JitterMode,
}

impl Parameterization {
    fn project<T: Scalar>(&self, hp: &GpHyperparams<T>, bound: T) -> GpHyperparams<T> {
        let mut hp = hp.clone();
        hp.log_alpha = hp.log_alpha.max(-bound).min(bound);
        for l in &mut hp.log_lengthscales {
            *l = l.max(-bound).min(bound);
        }
        match self.mode {
            JitterMode::Relative { rel } => hp.log_jitter = T::lit(rel.ln()) + hp.log_alpha + hp.log_alpha,
            JitterMode::Learned { floor_rel } => {
                let floor = T::lit(floor_rel.ln()) + hp.log_alpha + hp.log_alpha;
                hp.log_jitter = hp.log_jitter.max(floor).min(bound);
            }
        }
        hp
    }

    fn free<T: Scalar>(&self, hp: &GpHyperparams<T>) -> Vec<T> {
        let mut v = hp.to_vec();
        if matches!(self.mode, JitterMode::Relative { .. }) {
            v.pop();
        }
        v
    }

    fn rebuild<T: Scalar>(&self, x: &[T], template: &GpHyperparams<T>, bound: T) -> GpHyperparams<T> {
        let mut v = x.to_vec();
        if matches!(self.mode, JitterMode::Relative { .. }) {
            v.push(template.log_jitter);
        }
        self.project(&GpHyperparams::from_vec(&v), bound)
    }

    fn free_gradient<T: Scalar>(&self, g: Vec<T>) -> Vec<T> {
        match self.mode {
            JitterMode::Relative { .. } => {
                // log jitter = log rel + 2 log α.
                let mut g = g;
                let gj = g.pop().unwrap();
                g[0] += T::lit(2.0) * gj;
                g
            }
            JitterMode::Learned { .. } => g,
        }
    }
}

fn evaluate<T: Scalar>(window: &GpWindow<T>, hp: &GpHyperparams<T>, offset: T) -> Option<(T, Vec<T>)> {
    lml_grad_centered(window, hp, offset)
        .ok()
        .filter(|(l, g)| l.is_finite() && g.iter().all(|v| v.is_finite()))
}

/// Sign-based (iRprop−) ascent on the log marginal likelihood from each of
/// `starts` deterministic starting points; the best point visited wins, so
/// the returned LML is never below the initial one.
pub fn optimize_hyperparams<T: Scalar>(
    window: &GpWindow<T>,
    init: &GpHyperparams<T>,
    config: &OptimizerConfig,
) -> OptimizeOutcome<T> {
    optimize_centered(window, init, config, T::zero())
}

fn optimize_centered<T: Scalar>(
    window: &GpWindow<T>,
    init: &GpHyperparams<T>,
    config: &OptimizerConfig,
    offset: T,
) -> OptimizeOutcome<T> {
    let param = Parameterization { mode: config.jitter };
    let bound = T::lit(config.log_bound);
    let start = param.project(init, bound);
    let init_eval = evaluate(window, &start, offset);
    let init_lml = init_eval.as_ref().map(|e| e.0);
    let mut best: Option<(T, GpHyperparams<T>)> = init_lml.map(|l| (l, start.clone()));

    let spread = T::lit(3f64.ln());
    for s in 0..config.starts.max(1) {
        let mut hp0 = start.clone();
        // Starts: as given, then shorter and longer lengthscales.
        match s % 3 {
            1 => hp0.log_lengthscales.iter_mut().for_each(|l| *l -= spread),
            2 => hp0.log_lengthscales.iter_mut().for_each(|l| *l += spread),
            _ => {}
        }
        let hp0 = param.project(&hp0, bound);
        let first = if s == 0 { init_eval.clone() } else { evaluate(window, &hp0, offset) };
        let Some((mut f, g)) = first else { continue };
        let mut x = param.free(&hp0);
        let mut g = param.free_gradient(g);
        if best.as_ref().is_none_or(|b| f > b.0) {
            best = Some((f, hp0.clone()));
        }
        let mut steps = vec![T::lit(0.1); x.len()];
        let mut g_prev = vec![T::zero(); x.len()];
        let mut x_prev = x.clone();
        for _ in 0..config.iterations {
            for i in 0..x.len() {
                let prod = g[i] * g_prev[i];
                if prod > T::zero() {
                    steps[i] = (steps[i] * T::lit(1.2)).min(T::one());
                } else if prod < T::zero() {
                    steps[i] = (steps[i] * T::lit(0.5)).max(T::lit(1e-6));
                    g[i] = T::zero();
                }
            }
            x_prev.clone_from(&x);
            for i in 0..x.len() {
                if g[i] > T::zero() {
                    x[i] += steps[i];
                } else if g[i] < T::zero() {
                    x[i] -= steps[i];
                }
            }
            let hp = param.rebuild(&x, &hp0, bound);
            x = param.free(&hp);
            match evaluate(window, &hp, offset) {
                Some((fx, gx)) => {
                    f = fx;
                    g_prev = g;
                    g = param.free_gradient(gx);
                    if best.as_ref().is_none_or(|b| f > b.0) {
                        best = Some((f, hp));
                    }
                }
                None => {
                    // Step into an unfactorizable region: retreat and shrink.
                    x.clone_from(&x_prev);
                    steps.iter_mut().for_each(|s| *s *= T::lit(0.5));
                    g_prev.iter_mut().for_each(|v| *v = T::zero());
                }
            }
            if steps.iter().all(|&s| s < T::lit(1e-5)) {
                break;
            }
        }
        let _ = f;
    }

    match best {
        Some((lml, hyperparams)) => OptimizeOutcome {
            hyperparams,
            lml: Some(lml),
            init_lml,
            failed: false,
        },
        None => {
            log::warn!("GP hyperparameter optimization failed at every candidate; keeping initial values");
            OptimizeOutcome {
                hyperparams: init.clone(),
                lml: None,
                init_lml,
                failed: true,
            }
        }
    }
}

/// Data-driven starting point: `α` from the target spread, `ℓ_d` from the
/// spread of each input dimension.
pub fn initial_hyperparams<T: Scalar>(window: &GpWindow<T>, offset: T, mode: JitterMode) -> GpHyperparams<T> {
    let n = window.len().max(1);
    let nf = T::from_usize(n).unwrap();
    let dim = window.nu.front().map_or(0, Vec::len);
    let std_of = |vals: &mut dyn Iterator<Item = T>| {
        let v: Vec<T> = vals.collect();
        let m = v.iter().copied().sum::<T>() / nf;
        (v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / nf).sqrt()
    };
    let mut alpha = std_of(&mut window.targets.iter().map(|&t| t - offset));
    if !(alpha > T::zero()) {
        alpha = T::one();
    }
    let scale = T::from_usize(dim.max(1)).unwrap().sqrt();
    let lengthscales: Vec<T> = (0..dim)
        .map(|d| {
            let s = std_of(&mut window.nu.iter().map(|p| p[d]));
            if s > T::zero() { s * scale } else { T::one() }
        })
        .collect();
    let rel = match mode {
        JitterMode::Relative { rel } => rel,
        JitterMode::Learned { floor_rel } => floor_rel.max(1e-2),
    };
    GpHyperparams::new(alpha, &lengthscales, T::lit(rel) * alpha * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub n_re: usize,
    pub n_ry: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Retrain when `(k − k_min) % retrain_every == 0`.
    pub retrain_every: usize,
    /// Optimizer used the first time a channel is trained.
    pub optimizer: OptimizerConfig,
    /// Iterations of the warm-started single-start refinement on later retrains.
    pub refine_iterations: usize,
    pub jitter_cap_rel: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            n_re: 4,
            n_ry: 4,
            k_min: 25,
            k_max: 300,
            retrain_every: 1,
            optimizer: OptimizerConfig::default(),
            refine_iterations: 5,
            jitter_cap_rel: 1e-2,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_re == 0 {
            return Err(Error::config("gp.n_re", "must be at least 1"));
        }
        if self.k_max == 0 || self.k_min > self.k_max {
            return Err(Error::config("gp.k_max", "need 0 < k_max and k_min <= k_max"));
        }
        if self.retrain_every == 0 {
            return Err(Error::config("gp.retrain_every", "must be at least 1"));
        }
        match self.optimizer.jitter {
            JitterMode::Relative { rel } | JitterMode::Learned { floor_rel: rel } if !(rel > 0.0) => {
                return Err(Error::config("gp.optimizer.jitter", "must be positive"))
            }
            _ => {}
        }
        if !(self.jitter_cap_rel > 0.0) {
            return Err(Error::config("gp.jitter_cap_rel", "must be positive"));
        }
        Ok(())
    }

    pub fn nu_dim(&self) -> usize {
        self.n_re + self.n_ry + 1
    }

    pub fn retrain_due(&self, k: usize) -> bool {
        k >= self.k_min && (k - self.k_min) % self.retrain_every == 0
    }
}

/// One GP with its window and current hyperparameters.
#[derive(Debug, Clone)]
pub struct ChannelGp<T> {
    pub window: GpWindow<T>,
    pub hyperparams: Option<GpHyperparams<T>>,
    pub last_lml: Option<T>,
    /// Subtract the window's target mean before fitting (constant mean function).
    pub center_targets: bool,
}

impl<T: Scalar> ChannelGp<T> {
    pub fn new(config: &GpConfig, center_targets: bool) -> Self {
        Self {
            window: GpWindow::new(config.k_max).with_policy(JitterPolicy {
                cap_rel: config.jitter_cap_rel,
            }),
            hyperparams: None,
            last_lml: None,
            center_targets,
        }
    }

    fn offset(&self) -> T {
        if self.center_targets && !self.window.is_empty() {
            self.window.targets.iter().copied().sum::<T>() / T::from_usize(self.window.len()).unwrap()
        } else {
            T::zero()
        }
    }

    /// Full multi-start fit the first time, warm-started refinement afterwards.
    pub fn retrain(&mut self, config: &GpConfig) {
        if self.window.is_empty() {
            return;
        }
        let offset = self.offset();
        let (init, opt) = match &self.hyperparams {
            None => (initial_hyperparams(&self.window, offset, config.optimizer.jitter), config.optimizer),
            Some(hp) => (
                hp.clone(),
                OptimizerConfig {
                    iterations: config.refine_iterations,
                    starts: 1,
                    ..config.optimizer
                },
            ),
        };
        let out = optimize_centered(&self.window, &init, &opt, offset);
        if out.failed {
            log::warn!("GP retrain failed; keeping previous hyperparameters");
        }
        self.last_lml = out.lml;
        self.hyperparams = Some(out.hyperparams);
    }

    pub fn predict(&mut self, query: &[T]) -> Result<T> {
        let hp = self
            .hyperparams
            .clone()
            .ok_or(Error::NotCharacterized("GP hyperparameters"))?;
        let offset = self.offset();
        Ok(self.window.predict_centered(&hp, query, offset)? + offset)
    }

    pub fn lml(&mut self) -> Option<T> {
        let hp = self.hyperparams.clone()?;
        let offset = self.offset();
        lml_centered(&mut self.window, &hp, offset).ok()
    }
}

/// Record of one compensator step.
#[derive(Debug, Clone, PartialEq)]
pub struct FastStepLog<T> {
    pub k: usize,
    pub error: Vec<T>,
    /// `ê_s(k+1)`.
    pub prediction: Vec<T>,
    pub lml: Vec<Option<T>>,
    pub window_len: usize,
    pub retrained: bool,
    /// Channels whose prediction was held after a numerical failure.
    pub held: Vec<usize>,
}

/// The fast model `M_f`: per-channel GPs plus the lag buffers of `x_f`.
#[derive(Debug, Clone)]
pub struct GpCompensator<T> {
    pub config: GpConfig,
    channels: Vec<ChannelGp<T>>,
    /// `e_s(k), e_s(k−1), …` (front is most recent).
    errors: VecDeque<Vec<T>>,
    /// `y_s(k−1), y_s(k−2), …`.
    slow_outputs: VecDeque<Vec<T>>,
    prev_nu: Option<Vec<Vec<T>>>,
    prediction: Vec<T>,
    k: usize,
}

impl<T: Scalar> GpCompensator<T> {
    pub fn new(n_y: usize, config: GpConfig) -> Self {
        Self {
            config,
            channels: (0..n_y).map(|_| ChannelGp::new(&config, false)).collect(),
            errors: VecDeque::new(),
            slow_outputs: VecDeque::new(),
            prev_nu: None,
            prediction: vec![T::zero(); n_y],
            k: 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.channels.len()
    }

    /// Held prediction `ê_s(k)` for the upcoming step.
    pub fn prediction(&self) -> &[T] {
        &self.prediction
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn window_len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.window.len())
    }

    pub fn channel(&self, j: usize) -> &ChannelGp<T> {
        &self.channels[j]
    }

    /// Clears windows, lag buffers and hyperparameters; `ê` returns to zero.
    pub fn reset(&mut self) {
        *self = Self::new(self.channels.len(), self.config);
    }

    /// `x_f(k+1) = [ê(k+1), e(k) … e(k−n_re+2), y_s(k) … y_s(k−n_ry+1)]`,
    /// once enough history exists.
    pub fn state_vector(&self) -> Option<Vec<T>> {
        if self.errors.len() < self.config.n_re || self.slow_outputs.len() < self.config.n_ry {
            return None;
        }
        let mut x = self.prediction.clone();
        for e in self.errors.iter().take(self.config.n_re - 1) {
            x.extend_from_slice(e);
        }
        for y in self.slow_outputs.iter().take(self.config.n_ry) {
            x.extend_from_slice(y);
        }
        Some(x)
    }

    fn build_nu(&self, slow_now: &[T]) -> Option<Vec<Vec<T>>> {
        let (n_re, n_ry) = (self.config.n_re, self.config.n_ry);
        if self.errors.len() < n_re || self.slow_outputs.len() < n_ry {
            return None;
        }
        Some(
            (0..self.channels.len())
                .map(|j| {
                    let mut nu = Vec::with_capacity(n_re + n_ry + 1);
                    nu.extend(self.errors.iter().take(n_re).map(|e| e[j]));
                    nu.extend(self.slow_outputs.iter().take(n_ry).map(|y| y[j]));
                    nu.push(slow_now[j]);
                    nu
                })
                .collect(),
        )
    }

    /// One pass of the fast-learning loop at sample `k`: measure the slow
    /// model's error, extend the windows, optionally retrain, and predict
    /// `ê_s(k+1)`.
    pub fn step(&mut self, slow: &[T], measured: &[T], retrain: bool) -> Result<FastStepLog<T>> {
        let n_y = self.channels.len();
        if slow.len() != n_y || measured.len() != n_y {
            return Err(Error::dim(n_y, slow.len().min(measured.len()), "compensator step"));
        }
        let error: Vec<T> = measured.iter().zip(slow).map(|(&p, &s)| p - s).collect();
        if let Some(prev) = self.prev_nu.take() {
            for (ch, nu) in self.channels.iter_mut().zip(prev) {
                ch.window.push(nu, T::zero());
            }
            // Targets are filled per channel after the push to keep the pairing explicit.
            for (ch, &e) in self.channels.iter_mut().zip(&error) {
                *ch.window.targets.back_mut().unwrap() = e;
            }
        }
        self.errors.push_front(error.clone());
        self.errors.truncate(self.config.n_re);
        let nu_now = self.build_nu(slow);
        self.slow_outputs.push_front(slow.to_vec());
        self.slow_outputs.truncate(self.config.n_ry);

        let k = self.k;
        let active = k >= self.config.k_min && nu_now.is_some() && self.window_len() > 0;
        let mut retrained = false;
        let mut held = Vec::new();
        let mut lml = vec![None; n_y];
        if active {
            let query = nu_now.as_ref().unwrap();
            let config = self.config;
            let results: Vec<(Result<T>, Option<T>, bool)> = self
                .channels
                .par_iter_mut()
                .zip(query.par_iter())
                .map(|(ch, q)| {
                    let did = retrain || ch.hyperparams.is_none();
                    if did {
                        ch.retrain(&config);
                    }
                    let p = ch.predict(q);
                    let l = if did { ch.last_lml } else { None };
                    (p, l, did)
                })
                .collect();
            for (j, (p, l, did)) in results.into_iter().enumerate() {
                retrained |= did;
                lml[j] = l;
                match p {
                    Ok(v) => self.prediction[j] = v,
                    Err(e) => {
                        log::warn!("fast learner channel {j} at k={k}: {e}; holding previous correction");
                        held.push(j);
                    }
                }
            }
        }
        self.prev_nu = nu_now;
        self.k += 1;
        Ok(FastStepLog {
            k,
            error,
            prediction: self.prediction.clone(),
            lml,
            window_len: self.window_len(),
            retrained,
            held,
        })
    }

    /// Step with the configured retraining cadence.
    pub fn step_auto(&mut self, slow: &[T], measured: &[T]) -> Result<FastStepLog<T>> {
        let due = self.config.retrain_due(self.k);
        self.step(slow, measured, due)
    }
}

/// Stand-alone online GP mapping lagged inputs `[u(k) … u(k−n+1)]` directly
/// to the measured output, one GP per channel, constant mean.
#[derive(Debug, Clone)]
pub struct DirectGp<T> {
    pub config: GpConfig,
    lags: usize,
    channels: Vec<ChannelGp<T>>,
    inputs: VecDeque<Vec<T>>,
    k: usize,
}

impl<T: Scalar> DirectGp<T> {
    pub fn new(n_y: usize, lags: usize, config: GpConfig) -> Self {
        Self {
            config,
            lags: lags.max(1),
            channels: (0..n_y).map(|_| ChannelGp::new(&config, true)).collect(),
            inputs: VecDeque::new(),
            k: 0,
        }
    }

    /// Predicts `y(k)` from `u(k)` and past data, then learns from the
    /// measured `y_p(k)`.
    pub fn step(&mut self, u: &[T], measured: &[T]) -> Result<Vec<T>> {
        if measured.len() != self.channels.len() {
            return Err(Error::dim(self.channels.len(), measured.len(), "direct GP output"));
        }
        self.inputs.push_front(u.to_vec());
        self.inputs.truncate(self.lags);
        let nu: Option<Vec<T>> = (self.inputs.len() == self.lags).then(|| self.inputs.iter().flatten().copied().collect());
        let k = self.k;
        let retrain = self.config.retrain_due(k);
        let active = k >= self.config.k_min;
        let config = self.config;
        let preds: Vec<T> = self
            .channels
            .par_iter_mut()
            .map(|ch| {
                let fallback = ch.offset();
                match (&nu, active && !ch.window.is_empty()) {
                    (Some(q), true) => {
                        if retrain || ch.hyperparams.is_none() {
                            ch.retrain(&config);
                        }
                        ch.predict(q).unwrap_or(fallback)
                    }
                    _ => fallback,
                }
            })
            .collect();
        if let Some(q) = nu {
            for (ch, &y) in self.channels.iter_mut().zip(measured) {
                ch.window.push(q.clone(), y);
            }
        }
        self.k += 1;
        Ok(preds)
    }
}
