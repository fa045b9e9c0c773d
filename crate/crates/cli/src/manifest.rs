//! Stage manifests: one JSON document per stage output directory. Paths are
//! relative to the manifest's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use woodvol_core::config::PipelineConfig;
use woodvol_core::dataset::SampleMethod;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "woodvol-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plots,
    Clouds,
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub method: SampleMethod,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    /// `"12"` for a base plot, `"12_r45"` for a rotated copy.
    pub id: String,
    pub plot_id: u64,
    pub seed: u64,
    pub rotation_tag: f64,
    pub width: f64,
    pub depth: f64,
    /// m³
    pub ground_truth_volume: f64,
    pub tree_count: usize,
    /// Base-plot meshes; rotated copies share them and apply `rotation_tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wood_mesh: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_mesh: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub stage: Stage,
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 of the upstream manifest file, absent for `plots`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    pub config: PipelineConfig,
    pub entries: Vec<Entry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A manifest loaded from disk with the directory its paths resolve against.
pub struct Loaded {
    pub manifest: Manifest,
    pub dir: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Accepts the manifest file or the directory holding it.
pub fn load(path: &Path, want: Stage) -> CliResult<Loaded> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let record = file.display().to_string();
    let bytes = std::fs::read(&file).map_err(|e| CliError::data(&record, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| CliError::data(&record, e))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::data(
            &record,
            format!("unsupported format `{}`, expected `{MANIFEST_FORMAT}`", manifest.format),
        ));
    }
    if manifest.stage != want {
        return Err(CliError::data(
            &record,
            format!("expected a {want:?} manifest, found {:?}", manifest.stage).to_lowercase(),
        ));
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        manifest,
        dir,
        hash: sha256_hex(&bytes),
    })
}

pub fn to_json(m: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}
