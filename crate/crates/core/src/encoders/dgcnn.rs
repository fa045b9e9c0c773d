//! DGCNN: edge convolutions over a kNN graph rebuilt in each block's input space.
//!
//! An edge layer on `concat(h_i, h_j - h_i)` with weight `[W1; W2]` equals
//! `h_i (W1 - W2) + h_j W2 + b`, so it is evaluated per point and gathered per
//! edge instead of materialising the concatenated edge features.

use ndarray::{s, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use woodvol_autodiff::{BatchNorm, Linear, ParamStore, SharedMlp, Tape, Var};

use super::{Batch, EncoderError, Result};
use crate::cloud::KdTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgcnnSpec {
    pub k: usize,
    pub edge_widths: Vec<usize>,
    /// Width of the layer applied to the concatenated block outputs.
    pub embed: usize,
}

impl DgcnnSpec {
    pub fn desk() -> Self {
        Self {
            k: 10,
            edge_widths: vec![16, 16, 32],
            embed: 64,
        }
    }

    pub fn full() -> Self {
        Self {
            k: 20,
            edge_widths: vec![64, 64, 128, 256],
            embed: 1024,
        }
    }

    pub fn validate(&self, num_points: usize) -> Result<()> {
        if self.k == 0 || self.k >= num_points {
            return Err(EncoderError::InvalidSpec(format!(
                "k = {} must satisfy 1 <= k < point count {num_points}",
                self.k
            )));
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) || self.embed == 0 {
            return Err(EncoderError::InvalidSpec("dgcnn widths must be positive".into()));
        }
        Ok(())
    }
}

/// `k` nearest other rows of `h` for every row, ordered by `(d², index)`,
/// flattened row-major. Three-column inputs use a k-d tree; wider ones a Gram
/// matrix.
pub fn knn_graph(h: ArrayView2<f64>, k: usize) -> Vec<usize> {
    let n = h.nrows();
    let mut out = Vec::with_capacity(n * k);
    if h.ncols() == 3 {
        let pts: Vec<[f64; 3]> = h.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
        let tree = KdTree::build(&pts);
        for (i, p) in pts.iter().enumerate() {
            out.extend(tree.knn(p, k, Some(i)).into_iter().map(|x| x.1));
        }
        return out;
    }
    let gram = h.dot(&h.t());
    let gram = gram.as_slice().expect("owned");
    let sq: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let g = &gram[i * n..(i + 1) * n];
        cand.clear();
        cand.extend(
            g.iter()
                .zip(&sq)
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, (&gij, &sj))| (sq[i] + sj - 2.0 * gij, j)),
        );
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
        }
        let top = &mut cand[..k];
        top.sort_unstable_by(order);
        out.extend(top.iter().map(|x| x.1));
    }
    out
}

#[derive(Debug, Clone)]
struct EdgeConv {
    /// `(2 * c_in) x width`: the weight of the literal concatenated form
    weight: Linear,
    bn: BatchNorm,
    c_in: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Dgcnn {
    k: usize,
    blocks: Vec<EdgeConv>,
    embed: SharedMlp,
}

/// Per-edge `(i, j)` global row indices for a batch.
fn edges(h: &Array2<f64>, n: usize, clouds: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ii = Vec::with_capacity(clouds * n * k);
    let mut jj = Vec::with_capacity(clouds * n * k);
    for c in 0..clouds {
        let block = h.slice(s![c * n..(c + 1) * n, ..]);
        let nb = knn_graph(block, k);
        for (e, j) in nb.into_iter().enumerate() {
            ii.push(c * n + e / k);
            jj.push(c * n + j);
        }
    }
    (ii, jj)
}

impl Dgcnn {
    pub fn new(spec: &DgcnnSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for (b, &w) in spec.edge_widths.iter().enumerate() {
            blocks.push(EdgeConv {
                weight: Linear::new(store, &format!("edge{b}.linear"), 2 * c_in, w, false, rng)?,
                bn: BatchNorm::new(store, &format!("edge{b}.bn"), w)?,
                c_in,
            });
            c_in = w;
        }
        let total: usize = spec.edge_widths.iter().sum();
        let embed = SharedMlp::new(store, "embed", total, &[spec.embed], rng)?;
        Ok(Self {
            k: spec.k,
            blocks,
            embed,
        })
    }

    pub fn output_width(&self) -> usize {
        self.embed.output_width().expect("one layer")
    }

    /// Pre-activation edge features in factored form.
    fn edge_features(&self, tape: &mut Tape<'_>, b: &EdgeConv, h: Var, ii: Vec<usize>, jj: Vec<usize>) -> Result<Var> {
        let w = tape.param(b.weight.weight);
        let bias = b.weight.bias.map(|x| tape.param(x));
        let g = &mut tape.graph;
        let w1 = g.gather_rows(w, (0..b.c_in).collect())?;
        let w2 = g.gather_rows(w, (b.c_in..2 * b.c_in).collect())?;
        let wc = g.sub(w1, w2)?;
        let a = g.affine(h, wc, bias)?;
        let bb = g.matmul(h, w2)?;
        let ai = g.gather_rows(a, ii)?;
        let bj = g.gather_rows(bb, jj)?;
        Ok(g.add(ai, bj)?)
    }

    /// Same quantity built from explicit `concat(h_i, h_j - h_i)` rows.
    fn edge_features_literal(
        &self,
        tape: &mut Tape<'_>,
        b: &EdgeConv,
        h: Var,
        ii: Vec<usize>,
        jj: Vec<usize>,
    ) -> Result<Var> {
        let hi = tape.graph.gather_rows(h, ii)?;
        let hj = tape.graph.gather_rows(h, jj)?;
        let diff = tape.graph.sub(hj, hi)?;
        let cat = tape.graph.concat_cols(&[hi, diff])?;
        Ok(b.weight.forward(tape, cat)?)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        self.forward_with(tape, batch, false)
    }

    fn forward_with(&self, tape: &mut Tape<'_>, batch: &Batch, literal: bool) -> Result<Var> {
        let n = batch.n;
        let mut h = tape.graph.constant(batch.coords());
        let mut outs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (ii, jj) = edges(tape.graph.value(h), n, batch.len(), self.k);
            let e = if literal {
                self.edge_features_literal(tape, b, h, ii, jj)?
            } else {
                self.edge_features(tape, b, h, ii, jj)?
            };
            let e = b.bn.forward_relu(tape, e)?;
            h = tape.graph.segment_max(e, self.k)?;
            outs.push(h);
        }
        let cat = tape.graph.concat_cols(&outs)?;
        let z = self.embed.forward(tape, cat)?;
        Ok(tape.graph.segment_max(z, n)?)
    }
}
