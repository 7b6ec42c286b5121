//! Experiment configuration: TOML file format, presets and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::base_models::NarxConfig;
use crate::fast_learning::GpConfig;
use crate::plant::{ExcitationSpec, InternalChange, PlantConfig};
use crate::slow_learning::SlowConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Aroma,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Aroma => "aroma",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "aroma" => Ok(Preset::Aroma),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected desk or aroma)"))),
        }
    }
}

/// A stretch of samples during which the plant stays in one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub regime: usize,
    pub length: usize,
}

impl Segment {
    pub fn new(label: &str, regime: usize, length: usize) -> Self {
        Self {
            label: label.into(),
            regime,
            length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Samples per monitoring batch.
    pub n_mon: usize,
    /// Samples collected for each new member dataset.
    pub collect_len: usize,
    /// Trailing samples of the schedule scored for the model comparison.
    pub test_len: usize,
    /// Input lags of the stand-alone GP baseline.
    pub baseline_lags: usize,
    pub schedule: Vec<Segment>,
    pub plant: PlantConfig,
    pub excitation: ExcitationSpec,
    pub narx: NarxConfig,
    pub slow: SlowConfig,
    pub gp: GpConfig,
}

fn prefixed<T>(prefix: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { key, reason } if !key.starts_with(prefix) => Error::Config {
            key: format!("{prefix}.{key}"),
            reason,
        },
        other => other,
    })
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Aroma => Self::aroma(),
        }
    }

    /// Two-regime scenario: collect, monitor in regime, shift, collect the
    /// second member, then a two-day mixed test.
    pub fn desk() -> Self {
        let n_mon = 200;
        let collect = 2000;
        Self {
            preset: Preset::Desk,
            seed: 42,
            output_dir: PathBuf::from("runs/desk"),
            n_mon,
            collect_len: collect,
            test_len: 2 * n_mon,
            baseline_lags: 4,
            schedule: vec![
                Segment::new("collect D1", 0, collect),
                Segment::new("monitor regime 1", 0, n_mon),
                Segment::new("regime shift", 1, n_mon + collect),
                Segment::new("test day 1", 0, n_mon),
                Segment::new("test day 2", 1, n_mon),
            ],
            plant: PlantConfig::desk(),
            excitation: ExcitationSpec::desk(),
            narx: NarxConfig {
                quadratic_inputs: true,
                ..NarxConfig::default()
            },
            slow: SlowConfig {
                split_ratio: 0.5,
                ..SlowConfig::default()
            },
            gp: GpConfig {
                retrain_every: 10,
                ..GpConfig::default()
            },
        }
    }

    pub fn aroma() -> Self {
        let n_mon = 288;
        let collect = 7 * n_mon;
        Self {
            preset: Preset::Aroma,
            output_dir: PathBuf::from("runs/aroma"),
            n_mon,
            collect_len: collect,
            test_len: 2 * n_mon,
            schedule: vec![
                Segment::new("collect D1", 0, collect),
                Segment::new("monitor regime 1", 0, n_mon),
                Segment::new("regime shift", 1, n_mon + collect),
                Segment::new("test day 1", 0, n_mon),
                Segment::new("test day 2", 1, n_mon),
            ],
            plant: PlantConfig::aroma(),
            excitation: ExcitationSpec::aroma(),
            gp: GpConfig {
                retrain_every: 24,
                ..GpConfig::default()
            },
            ..Self::desk()
        }
    }

    /// Desk scenario with a plant-gain injection after the first in-regime
    /// batch, followed by recollection and a confirming batch.
    pub fn desk_internal_change() -> Self {
        let mut c = Self::desk();
        let (n_mon, collect) = (c.n_mon, c.collect_len);
        c.output_dir = PathBuf::from("runs/desk-internal-change");
        c.plant.internal_change = Some(InternalChange {
            at_step: collect + n_mon,
            gain: 1.3,
        });
        c.schedule = vec![
            Segment::new("collect D1", 0, collect),
            Segment::new("monitor regime 1", 0, n_mon),
            Segment::new("altered plant", 0, n_mon + collect),
            Segment::new("monitor after retrain", 0, n_mon),
        ];
        c.test_len = n_mon;
        c
    }

    pub fn total_len(&self) -> usize {
        self.schedule.iter().map(|s| s.length).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mon < 2 {
            return Err(Error::config("n_mon", "must be at least 2"));
        }
        if self.collect_len < 10 {
            return Err(Error::config("collect_len", "must be at least 10"));
        }
        if self.baseline_lags == 0 {
            return Err(Error::config("baseline_lags", "must be at least 1"));
        }
        if self.schedule.is_empty() {
            return Err(Error::config("schedule", "must contain at least one segment"));
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if s.length == 0 {
                return Err(Error::config(format!("schedule[{i}].length"), "must be positive"));
            }
            if s.regime >= self.plant.regimes.len() {
                return Err(Error::config(
                    format!("schedule[{i}].regime"),
                    format!("no regime {} (plant has {})", s.regime, self.plant.regimes.len()),
                ));
            }
        }
        if self.test_len < 2 || self.test_len > self.total_len() {
            return Err(Error::config("test_len", "must be at least 2 and fit inside the schedule"));
        }
        self.plant.validate()?;
        prefixed("excitation", self.excitation.validate())?;
        prefixed("narx", self.narx.validate())?;
        prefixed("slow", self.slow.validate())?;
        prefixed("gp", self.gp.validate())?;
        if self.excitation.control.min < self.plant.input_center[0] - 10.0 * self.plant.input_scale[0] {
            log::warn!("control excitation reaches far outside the plant's normalization range");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::parse(origin, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::write_atomic(path, self.to_toml_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for c in [Config::desk(), Config::aroma(), Config::desk_internal_change()] {
            c.validate().unwrap();
            let back = Config::from_toml_str(&c.to_toml_string(), Path::new("mem")).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn theta_above_one_names_key() {
        let mut c = Config::desk();
        c.slow.theta = 1.5;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "slow.theta"),
            other => panic!("{other:?}"),
        }
        let mut c = Config::desk();
        c.narx.n_b = 0;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "narx.n_b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_regime_checked() {
        let mut c = Config::desk();
        c.schedule[0].regime = 5;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "schedule[0].regime"));
    }
}
