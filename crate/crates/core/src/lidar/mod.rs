//! Discrete-return airborne scan simulation by ray casting.
//!
//! Parallel flight lines run along +y at a fixed altitude. Each pulse leaves
//! the sensor at an across-track angle that sweeps the swath as a triangular
//! wave, and records every surface it crosses, gated by a minimum range
//! separation and truncated to the configured number of returns.

pub mod bvh;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::forest::ForestPlot;
use crate::mesh::TriangleMesh;
pub use bvh::Bvh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("scanner config: {0}")]
    Config(String),
    #[error("footprint is empty")]
    EmptyFootprint,
    #[error("scan produced no returns inside the footprint")]
    NoReturns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScannerConfig {
    /// m above ground
    pub altitude: f64,
    /// m/s
    pub flight_speed: f64,
    /// Hz
    pub pulse_rate: f64,
    /// Hz, full sweep cycles per second
    pub scan_frequency: f64,
    pub max_returns: u8,
    /// degrees, full swath
    pub scan_angle: f64,
    /// m
    pub min_return_separation: f64,
    /// m
    pub flight_line_spacing: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            altitude: 35.0,
            flight_speed: 2.0,
            pulse_rate: 2500.0,
            scan_frequency: 80.0,
            max_returns: 5,
            scan_angle: 180.0,
            min_return_separation: 0.5,
            flight_line_spacing: 30.0,
        }
    }
}

impl ScannerConfig {
    /// Same acquisition geometry at the full survey pulse rate. The default
    /// cuts the pulse budget for desk runs.
    pub fn full() -> Self {
        Self {
            pulse_rate: 200e3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let positive = [
            ("altitude", self.altitude),
            ("flight_speed", self.flight_speed),
            ("pulse_rate", self.pulse_rate),
            ("scan_frequency", self.scan_frequency),
            ("min_return_separation", self.min_return_separation),
            ("flight_line_spacing", self.flight_line_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ScanError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=360.0).contains(&self.scan_angle) {
            return Err(ScanError::Config(format!(
                "scan_angle must be in [0, 360], got {}",
                self.scan_angle
            )));
        }
        if self.max_returns == 0 {
            return Err(ScanError::Config("max_returns must be at least 1".into()));
        }
        Ok(())
    }

    /// Across-track angle in degrees at time `t` seconds, starting at `-scan_angle / 2`.
    pub fn sweep_angle(&self, t: f64) -> f64 {
        let s = t * self.scan_frequency;
        let tri = 4.0 * (s - (s + 0.5).floor()).abs() - 1.0; // [-1, 1], period 1
        tri * self.scan_angle / 2.0
    }
}

/// Axis-aligned scan area `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Footprint {
    pub fn bounding(poly: &[[f64; 2]]) -> Self {
        let mut f = Footprint {
            x0: f64::INFINITY,
            y0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in poly {
            f.x0 = f.x0.min(p[0]);
            f.x1 = f.x1.max(p[0]);
            f.y0 = f.y0.min(p[1]);
            f.y1 = f.y1.max(p[1]);
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub line: u32,
    pub pulse_id: u64,
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

/// Flight lines centred over the footprint, spaced `flight_line_spacing` apart.
pub fn flight_line_xs(config: &ScannerConfig, fp: &Footprint) -> Vec<f64> {
    let width = fp.x1 - fp.x0;
    let n = ((width / config.flight_line_spacing).ceil() as usize).max(1);
    let cx = (fp.x0 + fp.x1) / 2.0;
    (0..n)
        .map(|k| cx + (k as f64 - (n as f64 - 1.0) / 2.0) * config.flight_line_spacing)
        .collect()
}

pub fn pulses_per_line(config: &ScannerConfig, fp: &Footprint) -> u64 {
    ((fp.y1 - fp.y0) / config.flight_speed * config.pulse_rate).round() as u64
}

pub fn plan_pulses(config: &ScannerConfig, fp: &Footprint) -> Result<Vec<Ray>, ScanError> {
    config.validate()?;
    if !(fp.x1 >= fp.x0 && fp.y1 > fp.y0) {
        return Err(ScanError::EmptyFootprint);
    }
    let per_line = pulses_per_line(config, fp);
    let mut rays = Vec::with_capacity(per_line as usize);
    let mut id = 0u64;
    for (line, x) in flight_line_xs(config, fp).into_iter().enumerate() {
        for k in 0..per_line {
            let t = k as f64 / config.pulse_rate;
            let (s, c) = crate::mesh::sin_cos_deg(config.sweep_angle(t));
            rays.push(Ray {
                line: line as u32,
                pulse_id: id,
                origin: [x, fp.y0 + config.flight_speed * t, config.altitude],
                direction: [s, 0.0, -c],
            });
            id += 1;
        }
    }
    Ok(rays)
}

/// Scene prepared for repeated casting.
pub struct Scene {
    bvh: Bvh,
    ground: bool,
}

impl Scene {
    pub fn new<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>, ground: bool) -> Self {
        Self {
            bvh: Bvh::build(meshes),
            ground,
        }
    }
}

/// Sorted, separation-gated, truncated hit points `(range, point)` of one ray.
pub fn cast_pulse(ray: &Ray, scene: &Scene, config: &ScannerConfig) -> Vec<(f64, [f64; 3])> {
    let mut ts = Vec::new();
    cast_into(ray, scene, config, &mut ts)
}

fn cast_into(ray: &Ray, scene: &Scene, config: &ScannerConfig, ts: &mut Vec<f64>) -> Vec<(f64, [f64; 3])> {
    ts.clear();
    let (o, d) = (&ray.origin, &ray.direction);
    let mut t_max = f64::INFINITY;
    if scene.ground && d[2] < 0.0 {
        let tg = -o[2] / d[2];
        if tg > 0.0 {
            ts.push(tg);
            t_max = tg; // nothing below the ground is visible
        }
    }
    scene.bvh.all_hits(o, d, t_max, ts);
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, [f64; 3])> = Vec::new();
    for &t in ts.iter() {
        if out.len() == config.max_returns as usize {
            break;
        }
        if let Some(&(last, _)) = out.last() {
            if t - last < config.min_return_separation {
                continue;
            }
        }
        out.push((t, [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]));
    }
    out
}

/// Point-in-convex-polygon test, boundary inclusive; vertices in either order.
pub fn inside_convex(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub cloud: PointCloud,
    pub pulse_id: Vec<u64>,
    pub pulse_count: u64,
}

/// Scans any scene, keeping returns whose xy falls inside `polygon`.
pub fn scan_scene(
    meshes: &[&TriangleMesh],
    polygon: &[[f64; 2]],
    config: &ScannerConfig,
    ground: bool,
) -> Result<ScanResult, ScanError> {
    let fp = Footprint::bounding(polygon);
    let rays = plan_pulses(config, &fp)?;
    let scene = Scene::new(meshes.iter().copied(), ground);
    let mut points = Vec::new();
    let mut returns = Vec::new();
    let mut pulse_id = Vec::new();
    let mut ts = Vec::new();
    for ray in &rays {
        for (k, (_, p)) in cast_into(ray, &scene, config, &mut ts).into_iter().enumerate() {
            if inside_convex(polygon, p[0], p[1]) {
                points.push(p);
                returns.push(k as u8 + 1);
                pulse_id.push(ray.pulse_id);
            }
        }
    }
    if points.is_empty() {
        return Err(ScanError::NoReturns);
    }
    Ok(ScanResult {
        cloud: PointCloud::with_returns(points, returns).expect("finite hits"),
        pulse_id,
        pulse_count: rays.len() as u64,
    })
}

pub fn scan_plot(plot: &ForestPlot, config: &ScannerConfig, ground: bool) -> Result<ScanResult, ScanError> {
    scan_scene(&plot.scene(), &plot.footprint(), config, ground)
}
