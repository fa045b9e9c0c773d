//! Procedural eucalypt-like trees and rectangular plots with exact wood-volume labels.

use nalgebra::{Point3, Unit, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::primitives::{quad, tapered_stack};
use crate::mesh::{MeshError, TriangleMesh};
use crate::seed;

/// Rotation angles (degrees) applied by [`rotate_augment`].
pub const AUGMENT_ANGLES: [f64; 7] = [45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("plot {plot_id}: placed {placed} of {requested} trees before exhausting {retries} retries")]
    Placement {
        plot_id: u64,
        placed: usize,
        requested: usize,
        retries: u32,
    },
    #[error("plot {0} is already rotated ({1} degrees)")]
    AlreadyRotated(u64, f64),
    #[error("unknown archetype {0}")]
    UnknownArchetype(u8),
    #[error("tree base ({x}, {y}) lies outside the {width} x {depth} m plot")]
    OutsidePlot { x: f64, y: f64, width: f64, depth: f64 },
    #[error("invalid plot config: {0}")]
    Config(String),
    #[error("plot volume must be positive, got {0}")]
    NonPositiveVolume(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeArchetype {
    pub id: u8,
    /// m
    pub trunk_height_range: (f64, f64),
    /// m, at 1.3 m above ground
    pub dbh_range: (f64, f64),
    pub branch_depth: u32,
    pub branch_count_range: (u32, u32),
    /// top radius over base radius
    pub taper_ratio: f64,
    /// leaf quads per terminal branch tip
    pub leaf_density: u32,
    /// fraction of height where the crown starts
    pub crown_base: f64,
}

impl TreeArchetype {
    pub fn validate(&self) -> Result<(), ForestError> {
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        let bad = |m: &str| Err(ForestError::Config(format!("archetype {}: {m}", self.id)));
        if !ok_range(self.trunk_height_range) || self.trunk_height_range.0 < 2.0 {
            return bad("trunk height range must be positive, ordered and at least 2 m");
        }
        if !ok_range(self.dbh_range) {
            return bad("dbh range must be positive and ordered");
        }
        let (bl, bh) = self.branch_count_range;
        if bl > bh || (self.branch_depth > 0 && bl == 0) {
            return bad("branch count range must be ordered and positive");
        }
        if !(self.taper_ratio > 0.0 && self.taper_ratio <= 1.0) {
            return bad("taper ratio must be in (0, 1]");
        }
        if !(self.crown_base > 0.0 && self.crown_base < 0.9) {
            return bad("crown base must be in (0, 0.9)");
        }
        Ok(())
    }
}

fn arch(
    id: u8,
    h: (f64, f64),
    dbh: (f64, f64),
    depth: u32,
    count: (u32, u32),
    taper: f64,
    leaves: u32,
    crown: f64,
) -> TreeArchetype {
    TreeArchetype {
        id,
        trunk_height_range: h,
        dbh_range: dbh,
        branch_depth: depth,
        branch_count_range: count,
        taper_ratio: taper,
        leaf_density: leaves,
        crown_base: crown,
    }
}

/// The seven shipped archetypes, spanning 8 to 30 m.
pub fn default_archetypes() -> Vec<TreeArchetype> {
    vec![
        arch(0, (8.0, 12.0), (0.12, 0.22), 1, (4, 6), 0.25, 8, 0.35),
        arch(1, (10.0, 15.0), (0.15, 0.30), 2, (3, 4), 0.22, 5, 0.40),
        arch(2, (12.0, 18.0), (0.18, 0.36), 2, (3, 5), 0.20, 4, 0.45),
        arch(3, (15.0, 22.0), (0.22, 0.45), 2, (3, 4), 0.20, 5, 0.50),
        arch(4, (18.0, 25.0), (0.28, 0.55), 2, (2, 4), 0.18, 5, 0.55),
        arch(5, (22.0, 28.0), (0.35, 0.70), 2, (3, 5), 0.16, 4, 0.55),
        arch(6, (25.0, 30.0), (0.45, 0.85), 2, (3, 4), 0.15, 5, 0.60),
    ]
}

/// Tessellation of generated solids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeDetail {
    pub trunk_segments: usize,
    pub branch_segments: usize,
    pub trunk_rings: usize,
}

impl Default for TreeDetail {
    fn default() -> Self {
        Self {
            trunk_segments: 12,
            branch_segments: 6,
            trunk_rings: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub archetype: u8,
    pub seed: u64,
    pub height: f64,
    pub dbh: f64,
    /// Trunk and branch solids, each closed.
    pub wood: TriangleMesh,
    /// Open leaf quads; scanned but never counted as volume.
    pub leaves: TriangleMesh,
    /// Trunk rings `(height, radius)`, useful as an analytic oracle.
    pub trunk_rings: Vec<(f64, f64)>,
}

const MIN_BRANCH_RADIUS: f64 = 0.01;
const MIN_BRANCH_LENGTH: f64 = 0.3;
const LEAF_SIZE: f64 = 0.35;
const BREAST_HEIGHT: f64 = 1.3;

fn lerp((lo, hi): (f64, f64), t: f64) -> f64 {
    lo + (hi - lo) * t
}

fn perpendicular_frame(d: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = d.cross(&helper).normalize();
    (u, d.cross(&u))
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    a: &'a TreeArchetype,
    detail: TreeDetail,
    wood: TriangleMesh,
    leaves: TriangleMesh,
}

impl Builder<'_> {
    /// Branch along `dir` from `base`; recurses while `depth > 0`.
    fn branch(&mut self, base: Point3<f64>, dir: Unit<Vector3<f64>>, len: f64, r0: f64, depth: u32) {
        let r1 = (r0 * self.a.taper_ratio.max(0.3)).max(MIN_BRANCH_RADIUS);
        let solid = tapered_stack(
            base,
            dir.into_inner(),
            &[(0.0, r0), (len, r1)],
            self.detail.branch_segments,
        );
        self.wood.append(&solid);
        if depth == 0 {
            self.leaves_at(base + dir.into_inner() * len);
            return;
        }
        self.children(base, dir, len, |t| r0 + (r1 - r0) * t / len, (0.3, 0.9), depth - 1);
    }

    fn children(
        &mut self,
        base: Point3<f64>,
        dir: Unit<Vector3<f64>>,
        len: f64,
        radius_at: impl Fn(f64) -> f64,
        span: (f64, f64),
        depth: u32,
    ) {
        let (lo, hi) = self.a.branch_count_range;
        let n = self.rng.random_range(lo..=hi);
        let (u, v) = perpendicular_frame(&dir);
        let az0 = self.rng.random_range(0.0..std::f64::consts::TAU);
        for k in 0..n {
            let t = len * lerp(span, (k as f64 + self.rng.random_range(0.2..0.8)) / n as f64);
            let az = az0 + k as f64 * 2.399_963 + self.rng.random_range(-0.3..0.3);
            let elev = self.rng.random_range(0.6..1.1_f64);
            let side = u * az.cos() + v * az.sin();
            let child = Unit::new_normalize(dir.into_inner() * elev.cos() + side * elev.sin());
            let child_len = ((len - t) * self.rng.random_range(0.45..0.75)).max(MIN_BRANCH_LENGTH);
            let child_r = (radius_at(t) * self.rng.random_range(0.45..0.65)).max(MIN_BRANCH_RADIUS);
            self.branch(base + dir.into_inner() * t, child, child_len, child_r, depth);
        }
    }

    fn leaves_at(&mut self, tip: Point3<f64>) {
        for _ in 0..self.a.leaf_density {
            let off = Vector3::new(
                self.rng.random_range(-0.6..0.6),
                self.rng.random_range(-0.6..0.6),
                self.rng.random_range(-0.3..0.5),
            );
            let normal = Vector3::new(self.rng.random_range(-0.5..0.5), self.rng.random_range(-0.5..0.5), 1.0);
            let spin = self.rng.random_range(0.0..std::f64::consts::TAU);
            let size = LEAF_SIZE * self.rng.random_range(0.7..1.3);
            self.leaves.append(&quad(tip + off, normal, spin, size));
        }
    }
}

pub fn generate_tree(a: &TreeArchetype, seed: u64) -> Tree {
    generate_tree_with(a, seed, TreeDetail::default())
}

/// Deterministic in `(archetype, seed, detail)`. The tree stands at the origin on +z.
pub fn generate_tree_with(a: &TreeArchetype, seed: u64, detail: TreeDetail) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    let height = lerp(a.trunk_height_range, u);
    let du = (u + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
    let dbh = lerp(a.dbh_range, du);
    // linear taper through r(1.3 m) = dbh / 2
    let k = 1.0 - a.taper_ratio;
    let r_base = (dbh / 2.0) / (1.0 - k * BREAST_HEIGHT / height);
    let radius_at = move |t: f64| r_base * (1.0 - k * t / height);
    let rings: Vec<(f64, f64)> = (0..=detail.trunk_rings)
        .map(|i| {
            let t = height * i as f64 / detail.trunk_rings as f64;
            (t, radius_at(t))
        })
        .collect();
    let trunk = tapered_stack(Point3::origin(), Vector3::z(), &rings, detail.trunk_segments);

    let mut b = Builder {
        rng,
        a,
        detail,
        wood: trunk,
        leaves: TriangleMesh::empty(),
    };
    if a.branch_depth > 0 {
        b.children(
            Point3::origin(),
            Vector3::z_axis(),
            height,
            radius_at,
            (a.crown_base, 0.92),
            a.branch_depth - 1,
        );
    } else {
        b.leaves_at(Point3::new(0.0, 0.0, height));
    }
    Tree {
        archetype: a.id,
        seed,
        height,
        dbh,
        wood: b.wood,
        leaves: b.leaves,
        trunk_rings: rings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub tree_count_range: (u32, u32),
    /// m², mapped linearly from tree count
    pub area_range: (f64, f64),
    /// width / depth
    pub aspect_range: (f64, f64),
    pub archetype_weights: Vec<f64>,
    /// m between trunk bases
    pub min_spacing: f64,
    pub max_retries: u32,
    /// m kept clear at the plot border
    pub edge_margin: f64,
    pub leaves: bool,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            tree_count_range: (2, 15),
            area_range: (220.0, 380.0),
            aspect_range: (0.75, 1.33),
            archetype_weights: vec![1.0; 7],
            min_spacing: 1.0,
            max_retries: 1000,
            edge_margin: 0.5,
            leaves: true,
        }
    }
}

impl PlotConfig {
    pub fn validate(&self, archetypes: usize) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::Config(m));
        let (tl, th) = self.tree_count_range;
        if tl == 0 || tl > th {
            return bad(format!(
                "tree_count_range must satisfy 1 <= min <= max, got ({tl}, {th})"
            ));
        }
        let (al, ah) = self.area_range;
        if !(al > 0.0 && al <= ah) {
            return bad(format!("area_range must be positive and ordered, got ({al}, {ah})"));
        }
        let (rl, rh) = self.aspect_range;
        if !(rl > 0.0 && rl <= rh) {
            return bad(format!("aspect_range must be positive and ordered, got ({rl}, {rh})"));
        }
        if self.archetype_weights.len() != archetypes
            || self.archetype_weights.iter().any(|w| !(*w >= 0.0))
            || !(self.archetype_weights.iter().sum::<f64>() > 0.0)
        {
            return bad(format!(
                "archetype_weights needs {archetypes} non-negative entries with a positive sum"
            ));
        }
        if !(self.min_spacing >= 0.0 && self.edge_margin >= 0.0) {
            return bad("min_spacing and edge_margin must be non-negative".into());
        }
        Ok(())
    }
}

/// An explicit tree placement in plot coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub archetype: u8,
    pub seed: u64,
    pub x: f64,
    pub y: f64,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeInstance {
    pub placement: Placement,
    pub height: f64,
    pub dbh: f64,
    pub volume: f64,
    pub wood: TriangleMesh,
    pub leaves: TriangleMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestPlot {
    pub plot_id: u64,
    pub width: f64,
    pub depth: f64,
    /// degrees about the plot centre, 0 for base plots
    pub rotation_tag: f64,
    pub trees: Vec<TreeInstance>,
    /// m³, wood only
    pub ground_truth_volume: f64,
}

impl ForestPlot {
    pub fn center(&self) -> (f64, f64) {
        (self.width / 2.0, self.depth / 2.0)
    }

    /// Plot rectangle corners, rotated with the plot.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (cx, cy) = self.center();
        let (s, c) = crate::mesh::sin_cos_deg(self.rotation_tag);
        [
            [0.0, 0.0],
            [self.width, 0.0],
            [self.width, self.depth],
            [0.0, self.depth],
        ]
        .map(|[x, y]| {
            let (dx, dy) = (x - cx, y - cy);
            [c * dx - s * dy + cx, s * dx + c * dy + cy]
        })
    }

    pub fn area(&self) -> f64 {
        self.width * self.depth
    }

    /// Every scannable surface: wood solids then leaves.
    pub fn scene(&self) -> Vec<&TriangleMesh> {
        self.trees
            .iter()
            .map(|t| &t.wood)
            .chain(self.trees.iter().map(|t| &t.leaves))
            .filter(|m| !m.is_empty())
            .collect()
    }

    /// All wood solids merged into one mesh.
    pub fn wood_mesh(&self) -> TriangleMesh {
        let mut m = TriangleMesh::empty();
        for t in &self.trees {
            m.append(&t.wood);
        }
        m
    }

    pub fn leaf_mesh(&self) -> TriangleMesh {
        let mut m = TriangleMesh::empty();
        for t in &self.trees {
            m.append(&t.leaves);
        }
        m
    }

    /// Recomputes the label from the meshes instead of returning the stored one.
    pub fn recompute_volume(&self) -> Result<f64, MeshError> {
        self.trees.iter().map(|t| t.wood.signed_volume()).sum()
    }
}

fn place_tree(a: &TreeArchetype, p: Placement, leaves: bool) -> Result<TreeInstance, ForestError> {
    let tree = generate_tree(a, p.seed);
    let shift = Vector3::new(p.x, p.y, 0.0);
    let wood = tree.wood.transform(p.rotation_deg, shift, 1.0)?;
    let leaves = if leaves {
        tree.leaves.transform(p.rotation_deg, shift, 1.0)?
    } else {
        TriangleMesh::empty()
    };
    let volume = wood.signed_volume()?;
    Ok(TreeInstance {
        placement: p,
        height: tree.height,
        dbh: tree.dbh,
        volume,
        wood,
        leaves,
    })
}

/// Builds a base plot from explicit placements.
pub fn compose_plot(
    plot_id: u64,
    width: f64,
    depth: f64,
    placements: &[Placement],
    archetypes: &[TreeArchetype],
    leaves: bool,
) -> Result<ForestPlot, ForestError> {
    let mut trees = Vec::with_capacity(placements.len());
    for p in placements {
        if !(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= depth) {
            return Err(ForestError::OutsidePlot {
                x: p.x,
                y: p.y,
                width,
                depth,
            });
        }
        let a = archetypes
            .iter()
            .find(|a| a.id == p.archetype)
            .ok_or(ForestError::UnknownArchetype(p.archetype))?;
        trees.push(place_tree(a, *p, leaves)?);
    }
    let ground_truth_volume: f64 = trees.iter().map(|t| t.volume).sum();
    if !(ground_truth_volume > 0.0) {
        return Err(ForestError::NonPositiveVolume(ground_truth_volume));
    }
    Ok(ForestPlot {
        plot_id,
        width,
        depth,
        rotation_tag: 0.0,
        trees,
        ground_truth_volume,
    })
}

/// Plot dimensions and placements, before any mesh work.
pub fn plan_plot(
    config: &PlotConfig,
    archetypes: &[TreeArchetype],
    plot_id: u64,
    seed: u64,
) -> Result<(f64, f64, Vec<Placement>), ForestError> {
    config.validate(archetypes.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tl, th) = config.tree_count_range;
    let n = rng.random_range(tl..=th);
    let frac = if th > tl {
        (n - tl) as f64 / (th - tl) as f64
    } else {
        0.0
    };
    let area = lerp(config.area_range, frac);
    let aspect = lerp(config.aspect_range, rng.random());
    let width = (area * aspect).sqrt();
    let depth = area / width;

    let total: f64 = config.archetype_weights.iter().sum();
    let m = config.edge_margin.min(width / 2.0).min(depth / 2.0);
    let mut placements: Vec<Placement> = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let mut retries = 0;
        let (x, y) = loop {
            let x = rng.random_range(m..=width - m);
            let y = rng.random_range(m..=depth - m);
            let clear = placements
                .iter()
                .all(|p| (p.x - x).powi(2) + (p.y - y).powi(2) >= config.min_spacing * config.min_spacing);
            if clear {
                break (x, y);
            }
            retries += 1;
            if retries >= config.max_retries {
                return Err(ForestError::Placement {
                    plot_id,
                    placed: placements.len(),
                    requested: n as usize,
                    retries,
                });
            }
        };
        let mut pick = rng.random_range(0.0..total);
        let mut idx = 0;
        for (i, w) in config.archetype_weights.iter().enumerate() {
            if pick < *w {
                idx = i;
                break;
            }
            pick -= w;
            idx = i;
        }
        placements.push(Placement {
            archetype: archetypes[idx].id,
            seed: rng.random(),
            x,
            y,
            rotation_deg: rng.random_range(0.0..360.0),
        });
    }
    Ok((width, depth, placements))
}

/// Random plot whose tree count, size and placements derive from `seed` alone.
pub fn generate_plot(
    config: &PlotConfig,
    archetypes: &[TreeArchetype],
    plot_id: u64,
    seed: u64,
) -> Result<ForestPlot, ForestError> {
    let (width, depth, placements) = plan_plot(config, archetypes, plot_id, seed)?;
    compose_plot(plot_id, width, depth, &placements, archetypes, config.leaves)
}

/// Seed of base plot `plot_id` in a dataset with the given master seed.
pub fn plot_seed(master: u64, plot_id: u64) -> u64 {
    seed::derive(master, &[plot_id])
}

/// Rotates a base plot about its centre by `angle` degrees; the label is copied.
pub fn rotate_plot(plot: &ForestPlot, angle: f64) -> Result<ForestPlot, ForestError> {
    if plot.rotation_tag != 0.0 {
        return Err(ForestError::AlreadyRotated(plot.plot_id, plot.rotation_tag));
    }
    let (cx, cy) = plot.center();
    let (s, c) = crate::mesh::sin_cos_deg(angle);
    let trees = plot
        .trees
        .iter()
        .map(|t| {
            let (dx, dy) = (t.placement.x - cx, t.placement.y - cy);
            TreeInstance {
                placement: Placement {
                    x: c * dx - s * dy + cx,
                    y: s * dx + c * dy + cy,
                    rotation_deg: (t.placement.rotation_deg + angle).rem_euclid(360.0),
                    ..t.placement
                },
                wood: t.wood.rotate_about(angle, cx, cy),
                leaves: t.leaves.rotate_about(angle, cx, cy),
                ..t.clone()
            }
        })
        .collect();
    Ok(ForestPlot {
        rotation_tag: angle,
        trees,
        ..plot.clone()
    })
}

/// The seven rotated copies of a base plot.
pub fn rotate_augment(plot: &ForestPlot) -> Result<Vec<ForestPlot>, ForestError> {
    AUGMENT_ANGLES.iter().map(|&a| rotate_plot(plot, a)).collect()
}
