//! Static k-d tree over `D`-dimensional points.
//!
//! Neighbours are ordered by `(squared distance, index)`, the same rule the
//! brute-force references use, so results agree exactly including ties.

use std::cmp::Ordering;

#[derive(Debug, Clone)]
struct Node {
    /// Range into `order` for leaves; split data for inner nodes.
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    left: u32,
    right: u32,
}

const LEAF: u32 = u32::MAX;
const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree<'a, const D: usize> {
    points: &'a [[f64; D]],
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
pub fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Less) => true,
        Some(Ordering::Equal) => a.1 < b.1,
        _ => false,
    }
}

impl<'a, const D: usize> KdTree<'a, D> {
    pub fn build(points: &'a [[f64; D]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start,
            end,
            axis: 0,
            split: 0.0,
            left: LEAF,
            right: LEAF,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        // split on the widest axis at the median
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in &self.order[start..end] {
            let p = &self.points[i as usize];
            for k in 0..D {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let axis = (0..D)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            return id; // all points coincide
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis])
        });
        let split = pts[self.order[mid] as usize][axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        let n = &mut self.nodes[id as usize];
        n.axis = axis;
        n.split = split;
        n.left = left;
        n.right = right;
        id
    }

    /// The `k` nearest points to `query`, sorted by `(d², index)`, optionally
    /// skipping one index (the query point itself).
    pub fn knn(&self, query: &[f64; D], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        self.search(0, query, k, exclude, &mut best);
        best
    }

    pub fn nearest(&self, query: &[f64; D], exclude: Option<usize>) -> Option<(f64, usize)> {
        self.knn(query, 1, exclude).into_iter().next()
    }

    fn search(&self, node: u32, q: &[f64; D], k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        let n = &self.nodes[node as usize];
        if n.left == LEAF {
            for &i in &self.order[n.start..n.end] {
                let i = i as usize;
                if Some(i) == exclude {
                    continue;
                }
                let cand = (dist2(q, &self.points[i]), i);
                if best.len() < k || better(cand, best[best.len() - 1]) {
                    let pos = best.partition_point(|&b| better(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            return;
        }
        let diff = q[n.axis] - n.split;
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, k, exclude, best);
        // `<=` keeps equal-distance candidates with lower indices reachable
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.search(far, q, k, exclude, best);
        }
    }

    /// Indices within `radius` of `query`, sorted by `(d², index)`, at most `cap`.
    pub fn within(&self, query: &[f64; D], radius: f64, cap: usize) -> Vec<(f64, usize)> {
        let r2 = radius * radius;
        self.knn(query, cap, None)
            .into_iter()
            .take_while(|&(d, _)| d <= r2)
            .collect()
    }
}

/// O(n·k) reference with the same ordering rule.
pub fn brute_knn<const D: usize>(
    points: &[[f64; D]],
    query: &[f64; D],
    k: usize,
    exclude: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (dist2(query, p), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // lattice points give many exact ties
        let pts: Vec<[f64; 3]> = (0..600)
            .map(|_| {
                [
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..3) as f64,
                ]
            })
            .collect();
        let tree = KdTree::build(&pts);
        for (i, p) in pts.iter().enumerate().step_by(7) {
            for k in [1, 2, 5, 17] {
                assert_eq!(tree.knn(p, k, Some(i)), brute_knn(&pts, p, k, Some(i)));
                assert_eq!(tree.knn(p, k, None), brute_knn(&pts, p, k, None));
            }
        }
    }

    #[test]
    fn two_dimensional_and_radius() {
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [i as f64, 0.0]).collect();
        let tree = KdTree::build(&pts);
        let got: Vec<usize> = tree.within(&[10.2, 0.0], 2.0, 10).iter().map(|x| x.1).collect();
        assert_eq!(got, vec![10, 11, 9, 12]);
        assert_eq!(tree.within(&[10.2, 0.0], 2.0, 2).len(), 2);
    }
}
