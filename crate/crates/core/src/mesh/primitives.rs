//! Closed primitive solids with outward winding, and open leaf quads.

use nalgebra::{Point3, Unit, Vector3};

use super::TriangleMesh;

pub fn unit_cube() -> TriangleMesh {
    cuboid(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
}

/// Axis-aligned box as 8 vertices and 12 outward-wound triangles.
pub fn cuboid(lo: Point3<f64>, hi: Point3<f64>) -> TriangleMesh {
    let v = vec![
        Point3::new(lo.x, lo.y, lo.z),
        Point3::new(hi.x, lo.y, lo.z),
        Point3::new(hi.x, hi.y, lo.z),
        Point3::new(lo.x, hi.y, lo.z),
        Point3::new(lo.x, lo.y, hi.z),
        Point3::new(hi.x, lo.y, hi.z),
        Point3::new(hi.x, hi.y, hi.z),
        Point3::new(lo.x, hi.y, hi.z),
    ];
    let f = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom
        [4, 5, 6],
        [4, 6, 7], // top
        [0, 1, 5],
        [0, 5, 4], // front (y = lo)
        [1, 2, 6],
        [1, 6, 5], // right
        [2, 3, 7],
        [2, 7, 6], // back
        [3, 0, 4],
        [3, 4, 7], // left
    ];
    TriangleMesh::new(v, f).expect("cuboid with positive extent")
}

/// Closed cylinder on the +z axis from `z = 0` to `z = height`.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    tapered_stack(
        Point3::origin(),
        Vector3::z(),
        &[(0.0, radius), (height, radius)],
        segments,
    )
}

/// Orthonormal pair perpendicular to `axis`.
fn frame(axis: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (u, v)
}

/// A single closed solid made of stacked frusta along a straight axis.
///
/// `rings` lists `(distance along axis, radius)` pairs in increasing distance;
/// consecutive rings share vertices, and both ends are closed with triangle fans.
pub fn tapered_stack(
    base: Point3<f64>,
    direction: Vector3<f64>,
    rings: &[(f64, f64)],
    segments: usize,
) -> TriangleMesh {
    assert!(rings.len() >= 2 && segments >= 3);
    let axis = Unit::new_normalize(direction);
    let (u, v) = frame(&axis);
    let n = segments as u32;
    let mut vertices = Vec::with_capacity(rings.len() * segments + 2);
    for &(t, r) in rings {
        let c = base + axis.into_inner() * t;
        for k in 0..segments {
            let phi = std::f64::consts::TAU * k as f64 / segments as f64;
            let (s, co) = phi.sin_cos();
            vertices.push(c + (u * co + v * s) * r);
        }
    }
    let bottom = vertices.len() as u32;
    vertices.push(base + axis.into_inner() * rings[0].0);
    let top = vertices.len() as u32;
    vertices.push(base + axis.into_inner() * rings[rings.len() - 1].0);

    let mut faces = Vec::with_capacity(2 * segments * rings.len());
    for k in 0..n {
        let k1 = (k + 1) % n;
        faces.push([bottom, k1, k]);
    }
    for ring in 0..rings.len() as u32 - 1 {
        let lo = ring * n;
        let hi = (ring + 1) * n;
        for k in 0..n {
            let k1 = (k + 1) % n;
            faces.push([lo + k, lo + k1, hi + k1]);
            faces.push([lo + k, hi + k1, hi + k]);
        }
    }
    let last = (rings.len() as u32 - 1) * n;
    for k in 0..n {
        let k1 = (k + 1) % n;
        faces.push([top, last + k, last + k1]);
    }
    TriangleMesh::new(vertices, faces).expect("stack with positive radii and lengths")
}

/// Open square of edge `size` centred at `center` with unit normal `normal`.
pub fn quad(center: Point3<f64>, normal: Vector3<f64>, spin: f64, size: f64) -> TriangleMesh {
    let n = Unit::new_normalize(normal);
    let (u0, v0) = frame(&n);
    let (s, c) = spin.sin_cos();
    let u = u0 * c + v0 * s;
    let v = n.cross(&u);
    let h = size / 2.0;
    let vertices = vec![
        center - u * h - v * h,
        center + u * h - v * h,
        center + u * h + v * h,
        center - u * h + v * h,
    ];
    TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).expect("quad with positive size")
}

/// Horizontal open rectangle at height `z` (normal +z).
pub fn horizontal_rect(x0: f64, y0: f64, x1: f64, y1: f64, z: f64) -> TriangleMesh {
    let vertices = vec![
        Point3::new(x0, y0, z),
        Point3::new(x1, y0, z),
        Point3::new(x1, y1, z),
        Point3::new(x0, y1, z),
    ];
    TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).expect("rect with positive area")
}

/// Volume of a frustum stack whose cross-sections are regular `segments`-gons
/// inscribed in the given radii.
pub fn faceted_stack_volume(rings: &[(f64, f64)], segments: usize) -> f64 {
    let k = segments as f64 / 2.0 * (std::f64::consts::TAU / segments as f64).sin();
    rings
        .windows(2)
        .map(|w| {
            let h = w[1].0 - w[0].0;
            let (r1, r2) = (w[0].1, w[1].1);
            k * h / 3.0 * (r1 * r1 + r1 * r2 + r2 * r2)
        })
        .sum()
}
