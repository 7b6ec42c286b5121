//! Lock-step orchestration of slow and fast learning over a plant run.
//!
//! Each sample: the ensemble produces `y_s(k)`, the compensator's held
//! prediction gives `y(k) = y_s(k) + ê_s(k)`, and only then is `y_p(k)`
//! handed to the learners. Monitoring batches of `n_mon` samples drive the
//! phase machine `Monitoring ⇄ Collecting`.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base_models::{LagState, NarxConfig, RegimeModel};
use crate::config::Config;
use crate::data::{format_sig9, Dataset};
use crate::fast_learning::{DirectGp, GpCompensator, GpConfig};
use crate::plant::{generate_excitation, Plant};
use crate::slow_learning::{Ensemble, EnsembleState, MonitorVerdict, VerdictTag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Collecting,
    Monitoring,
}

/// Why a dataset is being collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollectReason {
    Initial,
    NewRegime,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeConfig {
    pub n_mon: usize,
    pub theta: f64,
    pub collect_len: usize,
    pub narx: NarxConfig,
}

impl RuntimeConfig {
    pub fn from_config(c: &Config) -> Self {
        Self {
            n_mon: c.n_mon,
            theta: c.slow.theta,
            collect_len: c.collect_len,
            narx: c.narx,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeEvent {
    CollectStarted(CollectReason),
    MemberAdded { members: usize },
    Reset,
}

/// Everything emitted for one sample.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub k: usize,
    pub y: Vec<f64>,
    pub y_s: Option<Vec<f64>>,
    pub e_hat: Vec<f64>,
    pub weights: Vec<f64>,
    /// No ensemble existed: `y` is the measurement passed through.
    pub passthrough: bool,
    pub verdict: Option<MonitorVerdict>,
    pub events: Vec<RuntimeEvent>,
}

const HISTORY_ROWS: usize = 32;

/// The lifecycle state: ensemble, compensator, phase and buffers.
#[derive(Debug, Clone)]
pub struct RuntimeState {
    pub ensemble: Ensemble<f64>,
    pub compensator: GpCompensator<f64>,
    pub phase: Phase,
    pub reason: Option<CollectReason>,
    pub config: RuntimeConfig,
    pub k: usize,
    pending: Dataset<f64>,
    batch_inputs: Vec<Vec<f64>>,
    batch_errors: Vec<Vec<f64>>,
    slow_state: Option<EnsembleState<LagState<f64>>>,
    recent: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl RuntimeState {
    /// Starts collecting when `ensemble` is empty, monitoring otherwise.
    pub fn new(config: RuntimeConfig, n_y: usize, gp: GpConfig, ensemble: Ensemble<f64>) -> Self {
        let empty = ensemble.is_empty();
        Self {
            ensemble,
            compensator: GpCompensator::new(n_y, gp),
            phase: if empty { Phase::Collecting } else { Phase::Monitoring },
            reason: empty.then_some(CollectReason::Initial),
            config,
            k: 0,
            pending: Dataset::default(),
            batch_inputs: Vec::new(),
            batch_errors: Vec::new(),
            slow_state: None,
            recent: VecDeque::new(),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    fn seed_slow_state(&mut self) {
        let (inputs, outputs): (Vec<_>, Vec<_>) = self.recent.iter().cloned().unzip();
        self.slow_state = Some(self.ensemble.state_from_history(&outputs, &inputs));
        self.compensator.reset();
        self.batch_inputs.clear();
        self.batch_errors.clear();
    }

    fn start_collecting(&mut self, reason: CollectReason) {
        self.phase = Phase::Collecting;
        self.reason = Some(reason);
        self.pending = Dataset::default();
    }

    /// One sample of the combined model; see the module documentation for
    /// the ordering.
    pub fn step(&mut self, u: &[f64], y_p: &[f64]) -> Result<StepOutput> {
        let k = self.k;
        let mut out = StepOutput {
            k,
            y: y_p.to_vec(),
            y_s: None,
            e_hat: vec![0.0; y_p.len()],
            weights: Vec::new(),
            passthrough: true,
            verdict: None,
            events: Vec::new(),
        };
        if !self.ensemble.is_empty() {
            if self.slow_state.is_none() {
                self.slow_state = Some(self.ensemble.cold_state());
            }
            let s = self.ensemble.step(self.slow_state.as_mut().unwrap(), u)?;
            let e_hat = self.compensator.prediction().to_vec();
            out.y = s.output.iter().zip(&e_hat).map(|(a, b)| a + b).collect();
            out.e_hat = e_hat;
            out.weights = s.weights;
            out.passthrough = false;
            if let Err(e) = self.compensator.step_auto(&s.output, y_p) {
                log::warn!("fast learner failed at k={k}: {e}; correction held");
            }
            if self.phase == Phase::Monitoring {
                self.batch_inputs.push(u.to_vec());
                self.batch_errors.push(y_p.iter().zip(&s.output).map(|(a, b)| a - b).collect());
            }
            out.y_s = Some(s.output);
        }

        if self.phase == Phase::Collecting {
            self.pending.push(u.to_vec(), y_p.to_vec());
        }
        self.recent.push_back((u.to_vec(), y_p.to_vec()));
        if self.recent.len() > HISTORY_ROWS {
            self.recent.pop_front();
        }

        if self.phase == Phase::Monitoring && self.batch_errors.len() >= self.config.n_mon {
            let verdict = self
                .ensemble
                .monitor_errors(&self.batch_inputs, &self.batch_errors, self.config.theta)?;
            self.batch_inputs.clear();
            self.batch_errors.clear();
            match verdict.tag {
                VerdictTag::InControl => {}
                VerdictTag::NewRegime => {
                    log::info!("k={k}: new operating regime; collecting a new member dataset while the current ensemble keeps serving");
                    self.start_collecting(CollectReason::NewRegime);
                    out.events.push(RuntimeEvent::CollectStarted(CollectReason::NewRegime));
                }
                VerdictTag::InternalChange => {
                    log::info!("k={k}: internal plant change; resetting the ensemble");
                    self.ensemble = self.ensemble.reset();
                    self.slow_state = None;
                    self.compensator.reset();
                    self.start_collecting(CollectReason::Reset);
                    out.events.push(RuntimeEvent::Reset);
                    out.events.push(RuntimeEvent::CollectStarted(CollectReason::Reset));
                }
            }
            out.verdict = Some(verdict);
        } else if self.phase == Phase::Collecting && self.pending.len() >= self.config.collect_len {
            let data = std::mem::take(&mut self.pending);
            self.ensemble = self.ensemble.add_member(data, &self.config.narx)?;
            self.phase = Phase::Monitoring;
            self.reason = None;
            self.seed_slow_state();
            out.events.push(RuntimeEvent::MemberAdded {
                members: self.ensemble.len(),
            });
        }
        self.k += 1;
        Ok(out)
    }
}

/// Normalized fit per output and its mean over outputs with non-zero spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitIndex {
    pub per_output: Vec<Option<f64>>,
    pub mean: f64,
}

/// `FIT_j = 100·(1 − ‖ŷ_j − y_j‖ / ‖y_j − mean(y_j)‖)`.
pub fn fit_index(predicted: &[Vec<f64>], measured: &[Vec<f64>]) -> Result<FitIndex> {
    if predicted.len() != measured.len() {
        return Err(Error::dim(measured.len(), predicted.len(), "fit index samples"));
    }
    if measured.len() < 2 {
        return Err(Error::InsufficientData("fit index needs at least two samples".into()));
    }
    let n_y = measured[0].len();
    let n = measured.len() as f64;
    let mut per_output = Vec::with_capacity(n_y);
    for j in 0..n_y {
        let mean = measured.iter().map(|y| y[j]).sum::<f64>() / n;
        let dev = measured.iter().map(|y| (y[j] - mean).powi(2)).sum::<f64>().sqrt();
        let res = predicted
            .iter()
            .zip(measured)
            .map(|(p, y)| (p[j] - y[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        if dev > 0.0 {
            per_output.push(Some(100.0 * (1.0 - res / dev)));
        } else {
            log::warn!("output {j} has zero variance; excluded from the mean fit");
            per_output.push(None);
        }
    }
    let valid: Vec<f64> = per_output.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::InvalidData("every measured channel is constant".into()));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(FitIndex { per_output, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: String,
    pub fit: FitIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// Last sample of the batch.
    pub k: usize,
    pub segment: String,
    pub tag: VerdictTag,
    pub error_fraction: f64,
    pub input_fractions: Vec<f64>,
    pub matched_member: Option<usize>,
}

impl VerdictRecord {
    fn new(k: usize, segment: &str, v: &MonitorVerdict) -> Self {
        Self {
            k,
            segment: segment.into(),
            tag: v.tag,
            error_fraction: v.error_fraction,
            input_fractions: v.input_fractions.clone(),
            matched_member: v.matched_member,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEvent {
    pub k: usize,
    pub members: usize,
    pub event: String,
    /// Error-chart UCL after the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucl_error: Option<f64>,
    /// Input-chart UCL of each member after the event.
    #[serde(default)]
    pub ucl_inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: String,
    pub seed: u64,
    pub samples: usize,
    /// Scored window `[start, end)`.
    pub test_window: [usize; 2],
    pub fit: Vec<ModelFit>,
    pub verdicts: Vec<VerdictRecord>,
    /// Verdict of the final ensemble on the whole scored window.
    pub test_verdict: Option<VerdictRecord>,
    pub member_events: Vec<MemberEvent>,
    /// Regime each member was trained in.
    pub member_regimes: Vec<usize>,
    /// Share of scored samples whose largest weight belongs to the member of
    /// the active regime.
    pub attribution: Option<f64>,
    pub steps_log: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn model_fit(&self, name: &str) -> Option<f64> {
        self.fit.iter().find(|m| m.model == name).map(|m| m.fit.mean)
    }

    pub fn member_count(&self) -> usize {
        self.member_events.last().map_or(0, |e| e.members)
    }

    pub fn count(&self, tag: VerdictTag) -> usize {
        self.verdicts.iter().filter(|v| v.tag == tag).count()
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset {} seed {} ({} samples, scored {}..{})", self.preset, self.seed, self.samples, self.test_window[0], self.test_window[1])?;
        writeln!(f)?;
        writeln!(f, "{:<8} {:>9}", "model", "FIT [%]")?;
        for m in &self.fit {
            writeln!(f, "{:<8} {:>9.1}", m.model, m.fit.mean)?;
        }
        writeln!(f)?;
        writeln!(f, "{:>6}  {:<24} {:<15} {:>8}  inputs", "k", "segment", "verdict", "errors")?;
        for v in self.verdicts.iter().chain(self.test_verdict.iter()) {
            let inputs: Vec<String> = v.input_fractions.iter().map(|x| format!("{x:.3}")).collect();
            writeln!(f, "{:>6}  {:<24} {:<15} {:>8.3}  [{}]", v.k, v.segment, v.tag.to_string(), v.error_fraction, inputs.join(", "))?;
        }
        if let Some(a) = self.attribution {
            writeln!(f)?;
            writeln!(f, "regime attribution: {:.1} %", 100.0 * a)?;
        }
        if let Some(e) = &self.error {
            writeln!(f, "run aborted: {e}")?;
        }
        Ok(())
    }
}

/// One row of the per-step log.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub segment: usize,
    pub regime: usize,
    pub u: Vec<f64>,
    pub y_p: Vec<f64>,
    pub out: StepOutput,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub rows: Vec<StepRow>,
    pub ensemble: Ensemble<f64>,
}

fn segment_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Measured plant trajectory for the whole schedule.
pub fn simulate_schedule(config: &Config) -> Result<(Vec<(usize, usize)>, Dataset<f64>)> {
    let plant = Plant::new(config.plant.clone())?.with_noise_seed(segment_seed(config.seed, usize::MAX));
    let mut labels = Vec::new();
    let mut inputs = Vec::with_capacity(config.total_len());
    let mut k0 = 0;
    for (i, seg) in config.schedule.iter().enumerate() {
        let u = generate_excitation(&config.excitation, &config.plant, seg.regime, k0, seg.length, segment_seed(config.seed, i))?;
        labels.extend(std::iter::repeat_n((i, seg.regime), seg.length));
        inputs.extend(u);
        k0 += seg.length;
    }
    let mut state = plant.burn_in_state(&inputs[0]);
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut current = usize::MAX;
    for (u, &(_, regime)) in inputs.iter().zip(&labels) {
        if regime != current {
            plant.enter_regime(&mut state, regime)?;
            current = regime;
        }
        let (next, y) = plant.step(&state, u)?;
        state = next;
        outputs.push(y);
    }
    Ok((labels, Dataset::new(inputs, outputs)?))
}

struct Runner<'a> {
    config: &'a Config,
    rows: Vec<StepRow>,
    verdicts: Vec<VerdictRecord>,
    member_events: Vec<MemberEvent>,
    member_regimes: Vec<usize>,
}

impl Runner<'_> {
    fn record_members(&mut self, k: usize, event: &str, e: &Ensemble<f64>) {
        self.member_events.push(MemberEvent {
            k,
            members: e.len(),
            event: event.into(),
            ucl_error: e.error_chart.as_ref().map(|c| c.ucl),
            ucl_inputs: e.members.iter().filter_map(|m| m.input_chart.as_ref().map(|c| c.ucl)).collect(),
        });
    }
}

/// Runs the scripted scenario of `config`, optionally starting from a
/// previously built ensemble.
pub fn run_experiment(config: &Config, initial: Option<Ensemble<f64>>) -> Result<Experiment> {
    config.validate()?;
    let (labels, data) = simulate_schedule(config)?;
    let n_y = config.plant.n_y;
    let resumed = initial.as_ref().map_or(0, |e| e.len());
    let ensemble = initial.unwrap_or_else(|| Ensemble::new(config.slow));
    let mut rt = RuntimeState::new(RuntimeConfig::from_config(config), n_y, config.gp, ensemble);
    let mut runner = Runner {
        config,
        rows: Vec::with_capacity(data.len()),
        verdicts: Vec::new(),
        member_events: Vec::new(),
        member_regimes: Vec::new(),
    };
    if resumed > 0 {
        runner.record_members(0, "resumed", &rt.ensemble);
        runner.member_regimes = vec![usize::MAX; resumed];
    }

    for (k, ((u, y_p), &(segment, regime))) in data.inputs.iter().zip(&data.outputs).zip(&labels).enumerate() {
        let out = rt.step(u, y_p)?;
        let label = &config.schedule[segment].label;
        if let Some(v) = &out.verdict {
            runner.verdicts.push(VerdictRecord::new(k, label, v));
        }
        for ev in &out.events {
            match ev {
                RuntimeEvent::MemberAdded { .. } => {
                    runner.member_regimes.push(regime);
                    runner.record_members(k, "member added", &rt.ensemble);
                }
                RuntimeEvent::Reset => {
                    runner.member_regimes.clear();
                    runner.record_members(k, "reset", &rt.ensemble);
                }
                RuntimeEvent::CollectStarted(_) => {}
            }
        }
        runner.rows.push(StepRow {
            segment,
            regime,
            u: u.clone(),
            y_p: y_p.clone(),
            out,
        });
    }
    let report = score(&runner, &data, &labels, &rt.ensemble)?;
    Ok(Experiment {
        report,
        rows: runner.rows,
        ensemble: rt.ensemble,
    })
}

fn empty_report(config: &Config, samples: usize) -> ExperimentReport {
    ExperimentReport {
        preset: config.preset.to_string(),
        seed: config.seed,
        samples,
        test_window: [samples - config.test_len, samples],
        fit: Vec::new(),
        verdicts: Vec::new(),
        test_verdict: None,
        member_events: Vec::new(),
        member_regimes: Vec::new(),
        attribution: None,
        steps_log: STEPS_FILE.into(),
        error: None,
    }
}

fn score(runner: &Runner<'_>, data: &Dataset<f64>, labels: &[(usize, usize)], ensemble: &Ensemble<f64>) -> Result<ExperimentReport> {
    let config = runner.config;
    let n = data.len();
    let ts = n - config.test_len;
    let measured = &data.outputs[ts..];
    let test_rows = &runner.rows[ts..];
    let mut fit = Vec::new();

    let members: Vec<Vec<Vec<f64>>> = ensemble
        .members
        .iter()
        .map(|m| {
            let init = m.model.state_from_history(&data.outputs[..ts], &data.inputs[..ts]);
            m.model.simulate(&data.inputs[ts..], &init)
        })
        .collect::<Result<_>>()?;
    for (i, run) in members.iter().enumerate() {
        fit.push(ModelFit {
            model: format!("M[{}]", i + 1),
            fit: fit_index(run, measured)?,
        });
    }
    if !members.is_empty() {
        let avg: Vec<Vec<f64>> = (0..measured.len())
            .map(|k| {
                let mut y = vec![0.0; config.plant.n_y];
                for run in &members {
                    y.iter_mut().zip(&run[k]).for_each(|(a, b)| *a += b / members.len() as f64);
                }
                y
            })
            .collect();
        fit.push(ModelFit {
            model: "M_AVG".into(),
            fit: fit_index(&avg, measured)?,
        });
    }
    let slow: Option<Vec<Vec<f64>>> = test_rows.iter().map(|r| r.out.y_s.clone()).collect();
    if let Some(ys) = &slow {
        fit.push(ModelFit {
            model: "M_s".into(),
            fit: fit_index(ys, measured)?,
        });
    }
    if test_rows.iter().all(|r| !r.out.passthrough) {
        let y: Vec<Vec<f64>> = test_rows.iter().map(|r| r.out.y.clone()).collect();
        fit.push(ModelFit {
            model: "M".into(),
            fit: fit_index(&y, measured)?,
        });
    }
    let warm = ts.saturating_sub(config.gp.k_max);
    let mut gp = DirectGp::new(config.plant.n_y, config.baseline_lags, config.gp);
    let mut gp_pred = Vec::with_capacity(config.test_len);
    for k in warm..n {
        let p = gp.step(&data.inputs[k], &data.outputs[k])?;
        if k >= ts {
            gp_pred.push(p);
        }
    }
    fit.push(ModelFit {
        model: "M_GP".into(),
        fit: fit_index(&gp_pred, measured)?,
    });

    let test_verdict = match (&slow, ensemble.is_characterized()) {
        (Some(ys), true) => {
            let errors: Vec<Vec<f64>> = measured.iter().zip(ys).map(|(p, s)| p.iter().zip(s).map(|(a, b)| a - b).collect()).collect();
            let v = ensemble.monitor_errors(&data.inputs[ts..], &errors, config.slow.theta)?;
            Some(VerdictRecord::new(n - 1, "whole test", &v))
        }
        _ => None,
    };

    let attribution = if runner.member_regimes.iter().any(|&r| r != usize::MAX) {
        let scored: Vec<bool> = test_rows
            .iter()
            .zip(&labels[ts..])
            .filter(|(r, _)| !r.out.weights.is_empty())
            .map(|(r, &(_, regime))| {
                let best = r
                    .out
                    .weights
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc })
                    .0;
                runner.member_regimes.get(best) == Some(&regime)
            })
            .collect();
        (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64)
    } else {
        None
    };

    Ok(ExperimentReport {
        fit,
        verdicts: runner.verdicts.clone(),
        test_verdict,
        member_events: runner.member_events.clone(),
        member_regimes: runner.member_regimes.clone(),
        attribution,
        ..empty_report(config, n)
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const STEPS_FILE: &str = "steps.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const ENSEMBLE_DIR: &str = "ensemble";

/// Per-step log: inputs, measurements, slow and combined outputs,
/// corrections and weights.
pub fn write_steps_csv(rows: &[StepRow], config: &Config) -> Result<Vec<u8>> {
    let n_u = config.plant.n_u;
    let n_y = config.plant.n_y;
    let n_w = rows.iter().map(|r| r.out.weights.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string(), "segment".into(), "regime".into(), "passthrough".into()];
    header.extend((1..=n_u).map(|i| format!("u_{i}")));
    for p in ["y_p", "y_s", "e_hat", "y"] {
        header.extend((1..=n_y).map(|i| format!("{p}_{i}")));
    }
    header.extend((1..=n_w).map(|i| format!("lambda_{i}")));
    let csv_err = |e: csv::Error| Error::InvalidData(format!("steps log: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.out.k.to_string(),
            r.segment.to_string(),
            r.regime.to_string(),
            u8::from(r.out.passthrough).to_string(),
        ];
        rec.extend(r.u.iter().map(|&v| format_sig9(v)));
        rec.extend(r.y_p.iter().map(|&v| format_sig9(v)));
        match &r.out.y_s {
            Some(ys) => rec.extend(ys.iter().map(|&v| format_sig9(v))),
            None => rec.extend(std::iter::repeat_n(String::new(), n_y)),
        }
        rec.extend(r.out.e_hat.iter().map(|&v| format_sig9(v)));
        rec.extend(r.out.y.iter().map(|&v| format_sig9(v)));
        rec.extend((0..n_w).map(|i| r.out.weights.get(i).map(|&v| format_sig9(v)).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidData(format!("steps log: {e}")))
}

/// Runs the scenario and writes `report.json`, `steps.csv`, `config.toml`
/// and `ensemble/` under `out`. On failure a partial report carrying the
/// error is still written.
pub fn execute(config: &Config, out: &Path, initial: Option<Ensemble<f64>>) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    config.save(&out.join(CONFIG_FILE))?;
    match run_experiment(config, initial) {
        Ok(exp) => {
            crate::persist::write_atomic(&out.join(STEPS_FILE), &write_steps_csv(&exp.rows, config)?)?;
            crate::persist::save_ensemble(&exp.ensemble, &out.join(ENSEMBLE_DIR))?;
            write_report(&exp.report, &out.join(REPORT_FILE))?;
            Ok(exp.report)
        }
        Err(e) => {
            let mut report = empty_report(config, config.total_len());
            report.error = Some(e.to_string());
            write_report(&report, &out.join(REPORT_FILE))?;
            Err(e)
        }
    }
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::InvalidData(e.to_string()))?;
    s.push('\n');
    crate::persist::write_atomic(path, s.as_bytes())
}

pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    let path: PathBuf = dir.join(REPORT_FILE);
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(&path, e))
}
