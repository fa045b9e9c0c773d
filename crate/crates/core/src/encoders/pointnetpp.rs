//! PointNet++: set-abstraction levels (FPS centroids, ball query, local
//! PointNet on relative coordinates), then a global group-all level.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use woodvol_autodiff::{ParamStore, SharedMlp, Tape, Var};

use super::{relative_group, Batch, EncoderError, Result};
use crate::cloud::{farthest_point_indices, KdTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaLevel {
    pub centroids: usize,
    /// m
    pub radius: f64,
    pub neighbors: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointNetPpSpec {
    pub levels: Vec<SaLevel>,
    /// Widths of the global group-all level.
    pub global: Vec<usize>,
}

impl PointNetPpSpec {
    pub fn desk(num_points: usize) -> Self {
        Self {
            levels: vec![
                SaLevel {
                    centroids: (num_points / 4).max(2),
                    radius: 2.0,
                    neighbors: 16,
                    widths: vec![16, 16, 32],
                },
                SaLevel {
                    centroids: (num_points / 16).max(1),
                    radius: 5.0,
                    neighbors: 16,
                    widths: vec![32, 32, 64],
                },
            ],
            global: vec![64, 128],
        }
    }

    pub fn full(num_points: usize) -> Self {
        Self {
            levels: vec![
                SaLevel {
                    centroids: (num_points / 4).max(2),
                    radius: 1.0,
                    neighbors: 32,
                    widths: vec![64, 64, 128],
                },
                SaLevel {
                    centroids: (num_points / 16).max(1),
                    radius: 4.0,
                    neighbors: 64,
                    widths: vec![128, 128, 256],
                },
            ],
            global: vec![256, 512, 1024],
        }
    }

    pub fn validate(&self, num_points: usize) -> Result<()> {
        let bad = |m: String| Err(EncoderError::InvalidSpec(m));
        let mut prev = num_points;
        for (i, l) in self.levels.iter().enumerate() {
            if l.centroids == 0 || l.centroids > prev || (i > 0 && l.centroids >= prev) {
                return bad(format!(
                    "level {i}: centroid counts must be positive and strictly decreasing ({} after {prev})",
                    l.centroids
                ));
            }
            if !(l.radius > 0.0) || l.neighbors == 0 || l.widths.is_empty() || l.widths.contains(&0) {
                return bad(format!("level {i}: radius, neighbors and widths must be positive"));
            }
            prev = l.centroids;
        }
        if self.global.is_empty() || self.global.contains(&0) {
            return bad("global widths must be non-empty and positive".into());
        }
        Ok(())
    }
}

/// The `k` nearest points within `radius` of each centre (ties by index),
/// padded by repeating the nearest. The centre is itself a member of
/// `points`, so every group is non-empty.
pub fn ball_query(points: &[[f64; 3]], centers: &[usize], radius: f64, k: usize) -> Vec<usize> {
    let tree = KdTree::build(points);
    let mut out = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        let found = tree.within(&points[c], radius, k);
        let first = found.first().map_or(c, |f| f.1);
        for r in 0..k {
            out.push(found.get(r).map_or(first, |f| f.1));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct PointNetPp {
    levels: Vec<(SaLevel, SharedMlp)>,
    global: SharedMlp,
}

impl PointNetPp {
    pub fn new(spec: &PointNetPpSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut levels = Vec::new();
        let mut feat = 0;
        for (i, l) in spec.levels.iter().enumerate() {
            let mlp = SharedMlp::new(store, &format!("sa{i}"), 3 + feat, &l.widths, rng)?;
            feat = mlp.output_width().expect("non-empty");
            levels.push((l.clone(), mlp));
        }
        let global = SharedMlp::new(store, "global", 3 + feat, &spec.global, rng)?;
        Ok(Self { levels, global })
    }

    pub fn output_width(&self) -> usize {
        self.global.output_width().expect("non-empty")
    }

    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        let mut pos: Vec<Vec<[f64; 3]>> = batch.clouds.clone();
        let mut n = batch.n;
        let mut feats: Option<Var> = None;
        for (level, mlp) in &self.levels {
            let m = level.centroids;
            let k = level.neighbors;
            let mut members = Vec::with_capacity(batch.len() * m * k);
            let mut all_coords = Vec::with_capacity(batch.len() * n);
            let mut centers = Vec::with_capacity(batch.len() * m);
            let mut next_pos = Vec::with_capacity(batch.len());
            for (c, p) in pos.iter().enumerate() {
                // lowest canonical point first
                let cent = farthest_point_indices(p, m, 0).expect("m <= n");
                let grp = ball_query(p, &cent, level.radius, k);
                members.extend(grp.into_iter().map(|j| c * n + j));
                all_coords.extend_from_slice(p);
                let cp: Vec<[f64; 3]> = cent.iter().map(|&i| p[i]).collect();
                centers.extend_from_slice(&cp);
                next_pos.push(cp);
            }
            let x = relative_group(&mut tape.graph, &all_coords, &centers, &members, k, feats)?;
            let h = mlp.forward(tape, x)?;
            feats = Some(tape.graph.segment_max(h, k)?);
            pos = next_pos;
            n = m;
        }
        // group-all on absolute canonical coordinates of the last centroids
        let coords: Vec<[f64; 3]> = pos.iter().flatten().copied().collect();
        let origin = vec![[0.0; 3]; batch.len()];
        let members: Vec<usize> = (0..coords.len()).collect();
        let x = relative_group(&mut tape.graph, &coords, &origin, &members, n, feats)?;
        let h = self.global.forward(tape, x)?;
        Ok(tape.graph.segment_max(h, n)?)
    }
}
