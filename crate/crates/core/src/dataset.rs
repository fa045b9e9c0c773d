//! Plots to training samples: generate, optionally rotate, scan, downsample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{farthest_point_sample, random_sample, CloudError, PointCloud};
use crate::forest::{generate_plot, plot_seed, rotate_augment, ForestError, ForestPlot, PlotConfig, TreeArchetype};
use crate::lidar::{scan_plot, ScanError, ScannerConfig};
use crate::seed;
use crate::training::Sample;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("plot {id}: {source}")]
    Cloud { id: String, source: CloudError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Rs,
    Fps,
}

impl SampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rs => "rs",
            Self::Fps => "fps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rs" => Some(Self::Rs),
            "fps" => Some(Self::Fps),
            _ => None,
        }
    }
}

/// `n` points by random sampling or farthest point sampling (random start).
pub fn downsample(cloud: &PointCloud, n: usize, method: SampleMethod, seed: u64) -> Result<PointCloud, CloudError> {
    let mut rng = seed::rng(seed, &[0x5A3]);
    match method {
        SampleMethod::Rs => random_sample(cloud, n, &mut rng),
        SampleMethod::Fps => farthest_point_sample(cloud, n, &mut rng),
    }
}

/// `"12"` for a base plot, `"12_r45"` for its rotated copies.
pub fn sample_id(plot: &ForestPlot) -> String {
    sample_id_of(plot.plot_id, plot.rotation_tag)
}

pub fn sample_id_of(plot_id: u64, rotation_tag: f64) -> String {
    if rotation_tag == 0.0 {
        format!("{plot_id}")
    } else {
        format!("{plot_id}_r{rotation_tag}")
    }
}

/// Seed of the downsampling draw for one (possibly rotated) plot.
pub fn sample_seed(master_seed: u64, plot_id: u64, rotation_tag: f64) -> u64 {
    seed::derive(master_seed, &[plot_id, rotation_tag.to_bits()])
}

/// Base plots `0..count`, each followed by its rotated copies when `augment`.
pub fn generate_plots(
    config: &PlotConfig,
    archetypes: &[TreeArchetype],
    count: u64,
    master_seed: u64,
    augment: bool,
) -> Result<Vec<ForestPlot>, ForestError> {
    let mut out = Vec::new();
    for id in 0..count {
        let base = generate_plot(config, archetypes, id, plot_seed(master_seed, id))?;
        let rotated = if augment { rotate_augment(&base)? } else { Vec::new() };
        out.push(base);
        out.extend(rotated);
    }
    Ok(out)
}

/// Scans one plot and reduces it to a fixed-size sample labelled with its wood volume.
pub fn plot_sample(
    plot: &ForestPlot,
    scanner: &ScannerConfig,
    n: usize,
    method: SampleMethod,
    master_seed: u64,
) -> Result<Sample, DatasetError> {
    let id = sample_id(plot);
    let scan = scan_plot(plot, scanner, true)?;
    let sub_seed = sample_seed(master_seed, plot.plot_id, plot.rotation_tag);
    let cloud = downsample(&scan.cloud, n, method, sub_seed)
        .map_err(|source| DatasetError::Cloud { id: id.clone(), source })?;
    Ok(Sample {
        id,
        group: plot.plot_id,
        label: plot.ground_truth_volume,
        points: cloud.points,
    })
}

pub fn plot_samples(
    plots: &[ForestPlot],
    scanner: &ScannerConfig,
    n: usize,
    method: SampleMethod,
    master_seed: u64,
) -> Result<Vec<Sample>, DatasetError> {
    plots
        .iter()
        .map(|p| plot_sample(p, scanner, n, method, master_seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::default_archetypes;

    #[test]
    fn rotated_copies_share_group_and_label() {
        let plots = generate_plots(&PlotConfig::default(), &default_archetypes(), 2, 4, true).unwrap();
        assert_eq!(plots.len(), 16);
        let s = plot_samples(&plots[..8], &ScannerConfig::default(), 64, SampleMethod::Fps, 4).unwrap();
        assert!(s
            .iter()
            .all(|x| x.group == 0 && x.label == s[0].label && x.points.len() == 64));
        assert_eq!(s[0].id, "0");
        assert_eq!(s[1].id, "0_r45");
        assert_ne!(s[0].points, s[1].points);
        let again = plot_sample(&plots[1], &ScannerConfig::default(), 64, SampleMethod::Fps, 4).unwrap();
        assert_eq!(again, s[1]);
    }

    #[test]
    fn method_names() {
        for m in [SampleMethod::Rs, SampleMethod::Fps] {
            assert_eq!(SampleMethod::parse(m.name()), Some(m));
        }
        assert_eq!(SampleMethod::parse("grid"), None);
    }
}
