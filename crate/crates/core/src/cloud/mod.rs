//! Point clouds: sampling, spatial metrics, jitter and tiling.

pub mod io;
pub mod kdtree;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

pub use kdtree::KdTree;

pub const DEFAULT_JITTER_SIGMA: f64 = 0.02;
pub const DEFAULT_JITTER_CLIP: f64 = 0.06;
pub const DEFAULT_TILE_EDGE: f64 = 17.0;
pub const DEFAULT_TILE_MIN_POINTS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("requested {requested} points from a cloud of {available}")]
    TooFewPoints { requested: usize, available: usize },
    #[error("bounding box is degenerate along {axis} (zero extent)")]
    DegenerateAxis { axis: char },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("return metadata length {found} does not match {expected} points")]
    ReturnLength { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub return_number: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, CloudError> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        Ok(Self {
            points,
            return_number: None,
        })
    }

    pub fn with_returns(points: Vec<[f64; 3]>, returns: Vec<u8>) -> Result<Self, CloudError> {
        if returns.len() != points.len() {
            return Err(CloudError::ReturnLength {
                expected: points.len(),
                found: returns.len(),
            });
        }
        let mut c = Self::new(points)?;
        c.return_number = Some(returns);
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud in the given index order, carrying return metadata along.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            return_number: self.return_number.as_ref().map(|r| idx.iter().map(|&i| r[i]).collect()),
        }
    }

    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            (lo, hi)
        }))
    }
}

/// `n` distinct indices uniformly without replacement, returned in input order.
pub fn random_sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>, CloudError> {
    if n > len {
        return Err(CloudError::TooFewPoints {
            requested: n,
            available: len,
        });
    }
    let mut idx = rand::seq::index::sample(rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn random_sample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud, CloudError> {
    Ok(cloud.select(&random_sample_indices(cloud.len(), n, rng)?))
}

/// Greedy max-min selection starting at `start`, in selection order.
/// Ties in the max-min distance go to the lowest index.
pub fn farthest_point_indices(points: &[[f64; 3]], n: usize, start: usize) -> Result<Vec<usize>, CloudError> {
    if n > points.len() {
        return Err(CloudError::TooFewPoints {
            requested: n,
            available: points.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(CloudError::InvalidArgument(format!(
            "start index {start} out of range for {} points",
            points.len()
        )));
    }
    let mut selected = Vec::with_capacity(n);
    let mut mind = vec![f64::INFINITY; points.len()];
    let mut cur = start;
    selected.push(cur);
    mind[cur] = -1.0;
    for _ in 1..n {
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let m = &mut mind[i];
            if *m < 0.0 {
                continue;
            }
            let d = kdtree::dist2(p, &c);
            if d < *m {
                *m = d;
            }
            if *m > best_d {
                best_d = *m;
                best = i;
            }
        }
        cur = best;
        mind[cur] = -1.0;
        selected.push(cur);
    }
    Ok(selected)
}

/// Farthest point sampling with a seeded uniform start index.
pub fn farthest_point_sample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud, CloudError> {
    if n > cloud.len() {
        return Err(CloudError::TooFewPoints {
            requested: n,
            available: cloud.len(),
        });
    }
    if n == 0 {
        return Ok(cloud.select(&[]));
    }
    let start = rng.random_range(0..cloud.len());
    Ok(cloud.select(&farthest_point_indices(&cloud.points, n, start)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialMetrics {
    pub area: f64,
    pub volume: f64,
    pub density_area: f64,
    pub density_volume: f64,
    pub avg_spacing: f64,
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nn_distance(points: &[[f64; 3]]) -> f64 {
    let tree = KdTree::build(points);
    let sum: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| tree.nearest(p, Some(i)).map_or(0.0, |(d2, _)| d2.sqrt()))
        .sum();
    sum / points.len() as f64
}

pub fn spatial_metrics(cloud: &PointCloud) -> Result<SpatialMetrics, CloudError> {
    if cloud.len() < 2 {
        return Err(CloudError::TooFewPoints {
            requested: 2,
            available: cloud.len(),
        });
    }
    let (lo, hi) = cloud.bounds().expect("non-empty");
    for (k, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
        if !(hi[k] - lo[k] > 0.0) {
            return Err(CloudError::DegenerateAxis { axis });
        }
    }
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let volume = area * (hi[2] - lo[2]);
    let n = cloud.len() as f64;
    Ok(SpatialMetrics {
        area,
        volume,
        density_area: n / area,
        density_volume: n / volume,
        avg_spacing: mean_nn_distance(&cloud.points),
    })
}

/// Adds independent clipped Gaussian noise to every coordinate.
pub fn jitter<R: Rng + ?Sized>(
    cloud: &PointCloud,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> Result<PointCloud, CloudError> {
    if !(sigma >= 0.0 && clip >= 0.0) {
        return Err(CloudError::InvalidArgument(format!(
            "jitter needs sigma, clip >= 0 (got {sigma}, {clip})"
        )));
    }
    let mut out = cloud.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    for p in &mut out.points {
        for c in p.iter_mut() {
            *c += normal.sample(rng).clamp(-clip, clip);
        }
    }
    Ok(out)
}

/// In-place jitter of flat `[x, y, z]` rows.
pub fn jitter_in_place<R: Rng + ?Sized>(points: &mut [[f64; 3]], sigma: f64, clip: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    for p in points {
        for c in p.iter_mut() {
            *c += normal.sample(rng).clamp(-clip, clip);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub ix: usize,
    pub iy: usize,
    pub cloud: PointCloud,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tiling {
    pub tiles: Vec<Tile>,
    /// `(ix, iy, point count)` for tiles under the point threshold.
    pub dropped: Vec<(usize, usize, usize)>,
}

/// Square grid anchored at the footprint minimum, half-open cells; points on
/// the far edge fall into the last cell.
pub fn tile(cloud: &PointCloud, edge: f64, min_points: usize) -> Result<Tiling, CloudError> {
    if !(edge > 0.0) || !edge.is_finite() {
        return Err(CloudError::InvalidArgument(format!(
            "tile edge must be positive, got {edge}"
        )));
    }
    let Some((lo, hi)) = cloud.bounds() else {
        return Ok(Tiling::default());
    };
    let cells = |k: usize| (((hi[k] - lo[k]) / edge).ceil() as usize).max(1);
    let (nx, ny) = (cells(0), cells(1));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (i, p) in cloud.points.iter().enumerate() {
        let ix = (((p[0] - lo[0]) / edge).floor() as usize).min(nx - 1);
        let iy = (((p[1] - lo[1]) / edge).floor() as usize).min(ny - 1);
        members[iy * nx + ix].push(i);
    }
    let mut out = Tiling::default();
    for (cell, idx) in members.into_iter().enumerate() {
        let (ix, iy) = (cell % nx, cell / nx);
        if idx.is_empty() {
            continue;
        }
        if idx.len() < min_points {
            out.dropped.push((ix, iy, idx.len()));
            continue;
        }
        out.tiles.push(Tile {
            ix,
            iy,
            cloud: cloud.select(&idx),
            area: edge * edge,
        });
    }
    Ok(out)
}
