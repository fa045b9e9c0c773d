//! Bounding-volume hierarchy over triangles for all-hits ray queries.

use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: &[f64; 3]) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    /// Slab test against `[0, t_max]`.
    fn hit(&self, o: &[f64; 3], inv: &[f64; 3], t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - o[k]) * inv[k];
            let b = (self.hi[k] - o[k]) * inv[k];
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf (ray in the slab plane) must not reject
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// children for inner nodes; triangle range for leaves
    a: u32,
    b: u32,
    leaf: bool,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[[f64; 3]; 3]>,
    nodes: Vec<Node>,
}

const LEAF_TRIS: usize = 4;
const EPS: f64 = 1e-12;

/// Möller–Trumbore, double sided. Returns the ray parameter of the hit.
pub fn intersect(o: &[f64; 3], d: &[f64; 3], tri: &[[f64; 3]; 3]) -> Option<f64> {
    let sub = |a: &[f64; 3], b: &[f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: &[f64; 3], b: &[f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let e1 = sub(&tri[1], &tri[0]);
    let e2 = sub(&tri[2], &tri[0]);
    let p = cross(d, &e2);
    let det = dot(&e1, &p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, &tri[0]);
    let u = dot(&s, &p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = cross(&s, &e1);
    let v = dot(d, &q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = dot(&e2, &q) * inv;
    (t > EPS).then_some(t)
}

impl Bvh {
    pub fn build<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>) -> Self {
        let mut tris = Vec::new();
        for m in meshes {
            for f in 0..m.faces().len() {
                let t = m.triangle(f);
                tris.push(t.map(|p| [p.x, p.y, p.z]));
            }
        }
        let mut bvh = Bvh {
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let n = bvh.tris.len();
            bvh.build_node(0, n);
        }
        bvh
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for t in &self.tris[start..end] {
            for p in t {
                bounds.grow(p);
            }
            cb.grow(&centroid(t));
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            bounds,
            a: start as u32,
            b: end as u32,
            leaf: true,
        });
        if end - start <= LEAF_TRIS {
            return id;
        }
        let axis = (0..3)
            .max_by(|&i, &j| (cb.hi[i] - cb.lo[i]).total_cmp(&(cb.hi[j] - cb.lo[j])))
            .unwrap_or(0);
        if cb.hi[axis] - cb.lo[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.tris[start..end]
            .select_nth_unstable_by(mid - start, |x, y| centroid(x)[axis].total_cmp(&centroid(y)[axis]));
        let l = self.build_node(start, mid);
        let r = self.build_node(mid, end);
        let n = &mut self.nodes[id as usize];
        n.a = l;
        n.b = r;
        n.leaf = false;
        id
    }

    /// Ray parameters of every triangle hit with `t <= t_max`, unsorted.
    pub fn all_hits(&self, o: &[f64; 3], d: &[f64; 3], t_max: f64, out: &mut Vec<f64>) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = d.map(|x| 1.0 / x);
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i as usize];
            if !n.bounds.hit(o, &inv, t_max) {
                continue;
            }
            if n.leaf {
                for t in &self.tris[n.a as usize..n.b as usize] {
                    if let Some(h) = intersect(o, d, t) {
                        if h <= t_max {
                            out.push(h);
                        }
                    }
                }
            } else {
                stack.push(n.a);
                stack.push(n.b);
            }
        }
    }
}

fn centroid(t: &[[f64; 3]; 3]) -> [f64; 3] {
    [
        (t[0][0] + t[1][0] + t[2][0]) / 3.0,
        (t[0][1] + t[1][1] + t[2][1]) / 3.0,
        (t[0][2] + t[1][2] + t[2][2]) / 3.0,
    ]
}
