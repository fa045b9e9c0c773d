//! Pipeline configuration: one TOML document with a table per stage. Unknown
//! keys are rejected, and every error names the offending key path.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::biomass::DEFAULT_WOOD_DENSITY;
use crate::cloud::{DEFAULT_TILE_EDGE, DEFAULT_TILE_MIN_POINTS};
use crate::dataset::SampleMethod;
use crate::encoders::{Architecture, ModelSpec};
use crate::forest::{default_archetypes, PlotConfig};
use crate::lidar::ScannerConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ConfigError {
    /// Dotted key path, `.` for the document root.
    pub path: String,
    pub message: String,
    pub line: Option<usize>,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
            line: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced widths that train on one CPU core.
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub base_plots: u64,
    /// Adds the seven rotated copies of every base plot.
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            base_plots: 200,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub method: SampleMethod,
    pub num_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            method: SampleMethod::Fps,
            num_points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub preset: Preset,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Pointnetpp,
            preset: Preset::Desk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiomassConfig {
    /// kg/m³
    pub wood_density: f64,
    /// m
    pub tile_edge: f64,
    pub tile_min_points: usize,
}

impl Default for BiomassConfig {
    fn default() -> Self {
        Self {
            wood_density: DEFAULT_WOOD_DENSITY,
            tile_edge: DEFAULT_TILE_EDGE,
            tile_min_points: DEFAULT_TILE_MIN_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed for plot generation, scanning and sampling.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub forest: PlotConfig,
    pub scanner: ScannerConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub biomass: BiomassConfig,
}

impl Default for PipelineConfig {
    /// Desk scanner rate; every other section at its module default.
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            forest: PlotConfig::default(),
            scanner: ScannerConfig::default(),
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            biomass: BiomassConfig::default(),
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Deserializes a TOML document; errors carry the key path and line.
pub fn parse_toml<T: DeserializeOwned>(src: &str) -> Result<T, ConfigError> {
    let de = toml::Deserializer::parse(src).map_err(|e| ConfigError {
        path: ".".into(),
        message: e.message().to_string(),
        line: e.span().map(|s| line_of(src, s.start)),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError {
            path,
            message: inner.message().to_string(),
            line: inner.span().map(|s| line_of(src, s.start)),
        }
    })
}

impl PipelineConfig {
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse_toml(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(".", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dataset.base_plots == 0 {
            return Err(ConfigError::at("dataset.base_plots", "must be positive"));
        }
        self.forest
            .validate(default_archetypes().len())
            .map_err(|e| ConfigError::at("forest", e.to_string()))?;
        self.scanner
            .validate()
            .map_err(|e| ConfigError::at("scanner", e.to_string()))?;
        if self.sampling.num_points < 2 {
            return Err(ConfigError::at("sampling.num_points", "must be at least 2"));
        }
        self.training
            .validate()
            .map_err(|e| ConfigError::at("training", e.to_string()))?;
        self.model_spec()
            .validate()
            .map_err(|e| ConfigError::at("model", e.to_string()))?;
        let b = &self.biomass;
        if !(b.wood_density > 0.0 && b.wood_density.is_finite()) {
            return Err(ConfigError::at("biomass.wood_density", "must be positive"));
        }
        if !(b.tile_edge > 0.0 && b.tile_edge.is_finite()) {
            return Err(ConfigError::at("biomass.tile_edge", "must be positive"));
        }
        if b.tile_min_points == 0 {
            return Err(ConfigError::at("biomass.tile_min_points", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        let n = self.sampling.num_points;
        match self.model.preset {
            Preset::Desk => ModelSpec::desk(self.model.architecture, n),
            Preset::Full => ModelSpec::full(self.model.architecture, n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = PipelineConfig {
            seed: 9,
            ..PipelineConfig::default()
        };
        c.training.epochs = 3;
        c.model.architecture = Architecture::Dgcnn;
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_path() {
        let e = PipelineConfig::from_toml("seed = 1\n[training]\nepochs = 3\nepoch = 4\n").unwrap_err();
        assert_eq!(e.path, "training.epoch");
        assert!(e.message.contains("unknown field"), "{e}");
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn wrong_type_reports_path() {
        let e = PipelineConfig::from_toml("[scanner]\naltitude = \"high\"\n").unwrap_err();
        assert_eq!(e.path, "scanner.altitude");
        assert_eq!(e.line, Some(2));
        let e = PipelineConfig::from_toml("[model]\narchitecture = \"resnet\"\n").unwrap_err();
        assert_eq!(e.path, "model.architecture");
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let e = PipelineConfig::from_toml("[training]\nepochs = 0\n").unwrap_err();
        assert_eq!(e.path, "training");
        let e = PipelineConfig::from_toml("[biomass]\nwood_density = -1.0\n").unwrap_err();
        assert_eq!(e.path, "biomass.wood_density");
        let e =
            PipelineConfig::from_toml("[sampling]\nnum_points = 8\n[model]\narchitecture = \"dgcnn\"\n").unwrap_err();
        assert_eq!(e.path, "model");
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn syntax_error_has_line() {
        let e = PipelineConfig::from_toml("seed = 1\n[training\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }
}
