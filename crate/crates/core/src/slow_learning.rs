//! The slow-learning ensemble.
//!
//! Members are combined with weights inversely proportional to the T² of the
//! current input against each member's reference inputs. The ensemble is
//! characterized by an error chart (shared) and one input chart per member;
//! monitoring a batch against those charts yields one of three verdicts.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::base_models::{NarxModel, RegimeModel};
use crate::data::Dataset;
use crate::spc::{
    build_profile_with, empirical_ucl, in_control_fraction, mahalanobis, ControlChart,
    ProfileOptions, StatProfile,
};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowConfig {
    /// Chart percentile `j`.
    pub percentile_j: f64,
    /// Acceptance fraction for the in-control conditions.
    pub theta: f64,
    /// `ε_w` in `w = 1/max(T², ε_w)`.
    pub weight_floor: f64,
    /// Fraction of each dataset used as the reference block.
    pub split_ratio: f64,
    pub profile: ProfileOptions,
}

impl Default for SlowConfig {
    fn default() -> Self {
        Self {
            percentile_j: 99.73,
            theta: 0.99,
            weight_floor: 1e-8,
            split_ratio: 0.7,
            profile: ProfileOptions::default(),
        }
    }
}

impl SlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile_j > 0.0 && self.percentile_j < 100.0) {
            return Err(Error::config("slow.percentile_j", "must lie in (0, 100)"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::config("slow.theta", "must lie in (0, 1]"));
        }
        if !(self.weight_floor > 0.0) {
            return Err(Error::config("slow.weight_floor", "must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("slow.split_ratio", "must lie in (0, 1)"));
        }
        if !(self.profile.cov_reg >= 0.0) || !(self.profile.std_floor > 0.0) {
            return Err(Error::config("slow.profile", "cov_reg >= 0 and std_floor > 0 required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar, M: Serialize",
    deserialize = "T: Scalar, M: DeserializeOwned"
))]
pub struct EnsembleMember<T, M> {
    pub model: M,
    /// Profile of the member's reference-split inputs.
    pub input_profile: StatProfile<T>,
    /// `UCL_u` chart; built once, when the member is first characterized.
    pub input_chart: Option<ControlChart<T>>,
    pub dataset_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictTag {
    InControl,
    NewRegime,
    InternalChange,
}

impl std::fmt::Display for VerdictTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictTag::InControl => "InControl",
            VerdictTag::NewRegime => "NewRegime",
            VerdictTag::InternalChange => "InternalChange",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub tag: VerdictTag,
    /// Empirical `P(T²(ẽ_s) ≤ UCL_e)`.
    pub error_fraction: f64,
    /// Empirical `P(T²(ũ, u_ref^[i]) ≤ UCL_u^[i])` per member.
    pub input_fractions: Vec<f64>,
    pub matched_member: Option<usize>,
}

impl MonitorVerdict {
    /// The verdict as a function of the two sets of fractions. Ties between
    /// members resolve to the smallest index.
    pub fn decide(error_fraction: f64, input_fractions: Vec<f64>, theta: f64) -> Self {
        let matched = input_fractions.iter().position(|&f| f >= theta);
        let (tag, matched_member) = if error_fraction >= theta {
            (VerdictTag::InControl, None)
        } else if let Some(i) = matched {
            (VerdictTag::InternalChange, Some(i))
        } else {
            (VerdictTag::NewRegime, None)
        };
        Self {
            tag,
            error_fraction,
            input_fractions,
            matched_member,
        }
    }
}

/// Proximity weights `λ_i ∝ 1/max(T²_i, ε_w)`, summing to one.
pub fn weights_from_t2<T: Scalar>(t2: &[T], weight_floor: T) -> Result<Vec<T>> {
    if t2.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let w: Vec<T> = t2.iter().map(|&d| T::one() / d.max(weight_floor)).collect();
    let total: T = w.iter().copied().sum();
    let n = w.len();
    let mut lambda = Vec::with_capacity(n);
    let mut partial = T::zero();
    for &wi in &w[..n - 1] {
        let l = wi / total;
        partial += l;
        lambda.push(l);
    }
    lambda.push((T::one() - partial).max(T::zero()));
    Ok(lambda)
}

pub fn combination_weights<T: Scalar, M>(
    u: &[T],
    members: &[EnsembleMember<T, M>],
    weight_floor: T,
) -> Result<Vec<T>> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let t2 = members
        .iter()
        .map(|m| m.input_profile.t2(u))
        .collect::<Result<Vec<T>>>()?;
    weights_from_t2(&t2, weight_floor)
}

/// Per-member model states.
#[derive(Debug, Clone)]
pub struct EnsembleState<S> {
    pub members: Vec<S>,
}

/// One combined step.
#[derive(Debug, Clone)]
pub struct EnsembleStep<T> {
    pub output: Vec<T>,
    pub weights: Vec<T>,
    pub member_outputs: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar, M: Serialize",
    deserialize = "T: Scalar, M: DeserializeOwned"
))]
pub struct Ensemble<T, M = NarxModel<T>> {
    pub members: Vec<EnsembleMember<T, M>>,
    /// `D^[i]`, in member order.
    pub datasets: Vec<Dataset<T>>,
    pub error_profile: Option<StatProfile<T>>,
    pub error_chart: Option<ControlChart<T>>,
    pub config: SlowConfig,
}

/// Errors of a history-seeded ensemble run over one dataset.
struct DatasetErrors<T> {
    /// First row covered by `errors`.
    offset: usize,
    errors: Vec<Vec<T>>,
}

impl<T: Scalar, M: RegimeModel<T>> Ensemble<T, M> {
    pub fn new(config: SlowConfig) -> Self {
        Self {
            members: Vec::new(),
            datasets: Vec::new(),
            error_profile: None,
            error_chart: None,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_characterized(&self) -> bool {
        !self.members.is_empty()
            && self.error_chart.is_some()
            && self.members.iter().all(|m| m.input_chart.is_some())
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.members.first().map(|m| m.model.input_dim())
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.members.first().map(|m| m.model.output_dim())
    }

    pub fn history_len(&self) -> usize {
        self.members.iter().map(|m| m.model.history_len()).max().unwrap_or(0)
    }

    fn floor(&self) -> T {
        T::lit(self.config.weight_floor)
    }

    pub fn weights(&self, u: &[T]) -> Result<Vec<T>> {
        combination_weights(u, &self.members, self.floor())
    }

    pub fn cold_state(&self) -> EnsembleState<M::State> {
        EnsembleState {
            members: self.members.iter().map(|m| m.model.cold_state()).collect(),
        }
    }

    pub fn state_from_history(&self, outputs: &[Vec<T>], inputs: &[Vec<T>]) -> EnsembleState<M::State> {
        EnsembleState {
            members: self
                .members
                .iter()
                .map(|m| m.model.state_from_history(outputs, inputs))
                .collect(),
        }
    }

    /// Advances every member on its own prediction and blends the outputs.
    pub fn step(&self, state: &mut EnsembleState<M::State>, u: &[T]) -> Result<EnsembleStep<T>> {
        if self.members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if state.members.len() != self.members.len() {
            return Err(Error::dim(self.members.len(), state.members.len(), "ensemble state"));
        }
        let weights = self.weights(u)?;
        let member_outputs = self
            .members
            .iter()
            .zip(state.members.iter_mut())
            .map(|(m, s)| m.model.step(s, u))
            .collect::<Result<Vec<_>>>()?;
        let ny = member_outputs[0].len();
        let mut output = vec![T::zero(); ny];
        for (l, y) in weights.iter().zip(&member_outputs) {
            output.iter_mut().zip(y).for_each(|(o, &v)| *o += *l * v);
        }
        Ok(EnsembleStep {
            output,
            weights,
            member_outputs,
        })
    }

    /// Free-run ensemble prediction: `(y_s trajectory, λ trajectory)`.
    pub fn predict(
        &self,
        inputs: &[Vec<T>],
        init: &EnsembleState<M::State>,
    ) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
        let mut state = init.clone();
        let mut ys = Vec::with_capacity(inputs.len());
        let mut lambdas = Vec::with_capacity(inputs.len());
        for u in inputs {
            let s = self.step(&mut state, u)?;
            ys.push(s.output);
            lambdas.push(s.weights);
        }
        Ok((ys, lambdas))
    }

    /// Runs over `data[h..]` with the state seeded from `data[..h]`.
    fn dataset_errors(&self, data: &Dataset<T>) -> Result<DatasetErrors<T>> {
        let h = self.history_len().min(data.len());
        let init = self.state_from_history(&data.outputs[..h], &data.inputs[..h]);
        let (ys, _) = self.predict(&data.inputs[h..], &init)?;
        let errors = ys
            .iter()
            .zip(&data.outputs[h..])
            .map(|(s, p)| p.iter().zip(s).map(|(&a, &b)| a - b).collect())
            .collect();
        Ok(DatasetErrors { offset: h, errors })
    }

    /// Rebuilds the error chart over every dataset and builds the input chart
    /// of any member that does not have one yet.
    pub fn characterize(&self) -> Result<Self> {
        if self.members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut next = self.clone();
        let mut e_ref = Vec::new();
        let mut e_test = Vec::new();
        for data in &self.datasets {
            let split = data.split_point(self.config.split_ratio);
            let run = self.dataset_errors(data)?;
            for (i, e) in run.errors.into_iter().enumerate() {
                if run.offset + i < split {
                    e_ref.push(e);
                } else {
                    e_test.push(e);
                }
            }
        }
        if e_ref.len() < 2 || e_test.is_empty() {
            return Err(Error::InsufficientData(format!(
                "error split too small ({} reference, {} test rows)",
                e_ref.len(),
                e_test.len()
            )));
        }
        let profile = build_profile_with(&e_ref, self.config.profile)?;
        let chart = empirical_ucl(&mahalanobis(&profile, &e_test)?, self.config.percentile_j)?;
        next.error_profile = Some(profile);
        next.error_chart = Some(chart);

        for member in next.members.iter_mut().filter(|m| m.input_chart.is_none()) {
            let data = &self.datasets[member.dataset_id];
            let (_, test) = data.split(self.config.split_ratio);
            if test.is_empty() {
                return Err(Error::InsufficientData("empty input test split".into()));
            }
            let t2 = mahalanobis(&member.input_profile, &test.inputs)?;
            member.input_chart = Some(empirical_ucl(&t2, self.config.percentile_j)?);
        }
        Ok(next)
    }

    /// Fits a member on `data`, appends it and re-characterizes.
    /// Existing members are carried over untouched.
    pub fn add_member(&self, data: Dataset<T>, model_config: &M::Config) -> Result<Self> {
        data.validate()?;
        if let Some(nu) = self.input_dim() {
            if data.input_dim() != nu {
                return Err(Error::dim(nu, data.input_dim(), "new member inputs"));
            }
        }
        let model = M::fit(&data, model_config)?;
        let (reference, _) = data.split(self.config.split_ratio);
        let input_profile = build_profile_with(&reference.inputs, self.config.profile)?;
        let mut next = self.clone();
        next.members.push(EnsembleMember {
            model,
            input_profile,
            input_chart: None,
            dataset_id: next.datasets.len(),
        });
        next.datasets.push(data);
        next.characterize()
    }

    /// Discards every member, profile and chart.
    pub fn reset(&self) -> Self {
        Self::new(self.config)
    }

    /// Verdict from precomputed slow-model errors `ẽ_s = y_p − y_s`.
    pub fn monitor_errors(&self, inputs: &[Vec<T>], errors: &[Vec<T>], theta: f64) -> Result<MonitorVerdict> {
        let (Some(profile), Some(chart)) = (&self.error_profile, &self.error_chart) else {
            return Err(Error::NotCharacterized("missing error chart"));
        };
        if errors.is_empty() || inputs.is_empty() {
            return Err(Error::InsufficientData("empty monitoring batch".into()));
        }
        let error_fraction = in_control_fraction(&mahalanobis(profile, errors)?, chart)?;
        let input_fractions = self
            .members
            .iter()
            .map(|m| {
                let chart = m
                    .input_chart
                    .as_ref()
                    .ok_or(Error::NotCharacterized("missing input chart"))?;
                in_control_fraction(&mahalanobis(&m.input_profile, inputs)?, chart)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MonitorVerdict::decide(error_fraction, input_fractions, theta))
    }

    /// Verdict on a batch; the ensemble is seeded from the batch's first rows.
    pub fn monitor(&self, batch: &Dataset<T>, theta: f64) -> Result<MonitorVerdict> {
        if !self.is_characterized() {
            return Err(Error::NotCharacterized("ensemble"));
        }
        if batch.len() <= self.history_len() {
            return Err(Error::InsufficientData("monitoring batch shorter than model history".into()));
        }
        let run = self.dataset_errors(batch)?;
        self.monitor_errors(&batch.inputs[run.offset..], &run.errors, theta)
    }
}
