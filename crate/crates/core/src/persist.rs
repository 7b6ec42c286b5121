//! On-disk formats: atomic writes and ensemble directories.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base_models::NarxModel;
use crate::data::Dataset;
use crate::slow_learning::{Ensemble, EnsembleMember, SlowConfig};
use crate::spc::{ControlChart, StatProfile};
use crate::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub model: String,
    pub dataset: String,
}

/// Index of an ensemble directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: SlowConfig,
    pub members: Vec<MemberEntry>,
    pub error_profile: Option<StatProfile<f64>>,
    pub error_chart: Option<ControlChart<f64>>,
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::InvalidData(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(path, e))
}

/// Writes members, datasets and charts; the manifest is written last so a
/// directory with a manifest is always complete.
pub fn save_ensemble(ensemble: &Ensemble<f64>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::with_capacity(ensemble.len());
    for (i, m) in ensemble.members.iter().enumerate() {
        let entry = MemberEntry {
            model: format!("member_{}.json", i + 1),
            dataset: format!("dataset_{}.csv", i + 1),
        };
        write_atomic(&dir.join(&entry.model), &to_json(m)?)?;
        ensemble.datasets[m.dataset_id].save_csv(&dir.join(&entry.dataset))?;
        members.push(entry);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        config: ensemble.config,
        members,
        error_profile: ensemble.error_profile.clone(),
        error_chart: ensemble.error_chart.clone(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &to_json(&manifest)?)
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble<f64>> {
    let manifest: Manifest = from_json(&dir.join(MANIFEST_FILE))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::parse(
            dir.join(MANIFEST_FILE),
            format!("unsupported format version {}", manifest.version),
        ));
    }
    let mut ensemble = Ensemble::new(manifest.config);
    for (i, entry) in manifest.members.iter().enumerate() {
        let mut member: EnsembleMember<f64, NarxModel<f64>> = from_json(&dir.join(&entry.model))?;
        member.dataset_id = i;
        ensemble.members.push(member);
        ensemble.datasets.push(Dataset::load_csv(&dir.join(&entry.dataset))?);
    }
    ensemble.error_profile = manifest.error_profile;
    ensemble.error_chart = manifest.error_chart;
    Ok(ensemble)
}
