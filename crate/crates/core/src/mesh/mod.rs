//! Indexed triangle meshes: watertightness, exact enclosed volume, placement transforms.

mod obj;
pub mod primitives;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use obj::{read_obj, write_obj, ObjError};

/// Faces whose area is at or below this are rejected at construction (m²).
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("face {face} is degenerate (area {area:e} m²)")]
    DegenerateFace { face: usize, area: f64 },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFiniteVertex(usize),
    #[error("mesh is not watertight: {} boundary edges, {} non-manifold or misoriented edges", .0.boundary_edges.len(), .0.bad_edges.len())]
    NotWatertight(WatertightReport),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Result of an edge-incidence check.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WatertightReport {
    pub watertight: bool,
    /// Directed edges `(a, b)` used by exactly one face.
    pub boundary_edges: Vec<(u32, u32)>,
    /// Undirected edges used by more than two faces, or twice in the same direction.
    pub bad_edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
}

fn face_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriangleMesh {
    /// Validates indices, finiteness and face area.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if let Some(i) = vertices
            .iter()
            .position(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(MeshError::NonFiniteVertex(i));
        }
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx as usize >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        count: vertices.len(),
                    });
                }
            }
            let area = face_area(
                &vertices[f[0] as usize],
                &vertices[f[1] as usize],
                &vertices[f[2] as usize],
            );
            if area <= DEGENERATE_AREA {
                return Err(MeshError::DegenerateFace { face: fi, area });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Appends another mesh as a disjoint component.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    }

    pub fn without_face(&self, f: usize) -> TriangleMesh {
        let mut out = self.clone();
        out.faces.remove(f);
        out
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    /// Every undirected edge must be used by exactly two faces, once in each direction.
    pub fn check_watertight(&self) -> WatertightReport {
        let mut directed: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut boundary = Vec::new();
        let mut bad = BTreeSet::new();
        for (&(a, b), &n_ab) in &directed {
            let n_ba = directed.get(&(b, a)).copied().unwrap_or(0);
            match (n_ab, n_ba) {
                (1, 1) => {}
                (1, 0) => boundary.push((a, b)),
                _ => {
                    bad.insert((a.min(b), a.max(b)));
                }
            }
        }
        WatertightReport {
            watertight: boundary.is_empty() && bad.is_empty(),
            boundary_edges: boundary,
            bad_edges: bad.into_iter().collect(),
        }
    }

    /// Enclosed volume by the divergence theorem: the sum of signed tetrahedra
    /// spanned by each face and a reference point. Positive for outward winding.
    ///
    /// The reference point is the vertex centroid, which leaves the exact result
    /// unchanged and keeps the terms small for meshes far from the origin.
    pub fn signed_volume(&self) -> Result<f64, MeshError> {
        let report = self.check_watertight();
        if !report.watertight {
            return Err(MeshError::NotWatertight(report));
        }
        Ok(self.signed_volume_unchecked())
    }

    /// Signed volume without the watertightness precondition.
    pub fn signed_volume_unchecked(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let centroid =
            self.vertices.iter().fold(Vector3::zeros(), |acc, v| acc + v.coords) / self.vertices.len() as f64;
        let sum: f64 = self
            .faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0] as usize].coords - centroid;
                let b = self.vertices[f[1] as usize].coords - centroid;
                let c = self.vertices[f[2] as usize].coords - centroid;
                a.dot(&b.cross(&c))
            })
            .sum();
        sum / 6.0
    }

    /// Maps every vertex by scale, then rotation about +z, then translation.
    pub fn transform(
        &self,
        rotation_z_deg: f64,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<TriangleMesh, MeshError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(MeshError::NonPositiveScale(scale));
        }
        let (s, c) = sin_cos_deg(rotation_z_deg);
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let p = v.coords * scale;
                Point3::new(
                    c * p.x - s * p.y + translation.x,
                    s * p.x + c * p.y + translation.y,
                    p.z + translation.z,
                )
            })
            .collect();
        Ok(TriangleMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Rotation about a vertical axis through `(cx, cy)`.
    pub fn rotate_about(&self, rotation_z_deg: f64, cx: f64, cy: f64) -> TriangleMesh {
        let (s, c) = sin_cos_deg(rotation_z_deg);
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let (x, y) = (v.x - cx, v.y - cy);
                Point3::new(c * x - s * y + cx, s * x + c * y + cy, v.z)
            })
            .collect();
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
        }
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Sum of component volumes. Each component must be watertight.
pub fn total_volume<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>) -> Result<f64, MeshError> {
    meshes.into_iter().map(|m| m.signed_volume()).sum()
}
