//! Tape-based reverse-mode differentiation over row-major `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix. Point sets are stored as stacked
//! rows (one row per point, one column per feature channel), so batches of
//! clouds become tall matrices and set-level pooling is a reduction over
//! contiguous row segments.
//!
//! Nodes are appended in evaluation order, which makes the tape its own
//! topological order: `backward` walks it once from the end.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{AutodiffError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch normalization uses batch statistics or frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-column statistics measured by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased (population) variance over the rows of the batch.
    pub var: Array1<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    /// `y = xhat * gamma + beta` where `xhat = (x - mean) * inv_std`.
    /// In training mode `mean`/`inv_std` depend on `x`; in eval mode they are constants.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        train: bool,
        /// Output rectified in the same node.
        relu: bool,
    },
    SegmentMax {
        x: Var,
        argmax: Array2<usize>,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMatMul {
        x: Var,
        m: Var,
        seg: usize,
    },
    Mse {
        pred: Var,
        target: Array2<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass: values, their provenance, and (after `backward`) gradients.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_of(a: &Array2<f64>) -> Vec<usize> {
    a.shape().to_vec()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// A leaf whose gradient is tracked (a trainable parameter or an input under test).
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A detached leaf: gradients never flow into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.node(v).value
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.node(v).grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Array2<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let d = self.node(v).value.dim();
        [d.0, d.1]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: shape_of(self.value(a)),
            rhs: shape_of(self.value(b)),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = va.dot(vb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(self.mismatch("add", a, b));
        }
        let out = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(self.mismatch("sub", a, b));
        }
        let out = self.value(a) - self.value(b);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// `x + bias` with a `1 x C` bias broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(self.mismatch("add_row", x, bias));
        }
        let out = vx + &vb.row(0);
        let rg = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// `x W + b`, the per-point shared affine map (a 1x1 convolution over a point set).
    pub fn affine(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x) * factor;
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Batch normalization over rows with batch statistics.
    ///
    /// Returns the output and the measured statistics so the caller can fold them
    /// into its running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        self.bn_train(x, gamma, beta, eps, false)
    }

    /// `relu(batch_norm_train(..))` as one node.
    pub fn batch_norm_relu_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        self.bn_train(x, gamma, beta, eps, true)
    }

    fn bn_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, relu: bool) -> Result<(Var, BatchStats)> {
        self.check_bn_params(x, gamma, beta)?;
        let vx = self.value(x);
        let n = vx.nrows();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument("batch_norm over an empty batch".into()));
        }
        let c = vx.ncols();
        let xs = vx.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut mean = vec![0.0; c];
        for row in xs.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in xs.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(xs, c, &mean, &inv_std, gamma, beta, relu);
        let rg = self.needs(&[x, gamma, beta]);
        let stats = BatchStats {
            mean: Array1::from(mean),
            var: Array1::from(var),
        };
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: Array1::from(inv_std),
                train: true,
                relu,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// `xhat = (x - mean) * inv_std`, `out = xhat * gamma + beta`, optionally rectified.
    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        xs: &[f64],
        c: usize,
        mean: &[f64],
        inv_std: &[f64],
        gamma: Var,
        beta: Var,
        relu: bool,
    ) -> (Array2<f64>, Array2<f64>) {
        let n = xs.len() / c;
        let gam = self.value(gamma).row(0).to_vec();
        let bet = self.value(beta).row(0).to_vec();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ((row, hr), or) in xs
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                hr[j] = h;
                let y = h * gam[j] + bet[j];
                or[j] = if relu && y <= 0.0 { 0.0 } else { y };
            }
        }
        (
            Array2::from_shape_vec((n, c), xhat).expect("n x c"),
            Array2::from_shape_vec((n, c), out).expect("n x c"),
        )
    }

    /// Batch normalization with frozen statistics: a fixed per-column affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
    ) -> Result<Var> {
        self.bn_eval(x, gamma, beta, running_mean, running_var, eps, false)
    }

    /// `relu(batch_norm_eval(..))` as one node.
    pub fn batch_norm_relu_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
    ) -> Result<Var> {
        self.bn_eval(x, gamma, beta, running_mean, running_var, eps, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
        relu: bool,
    ) -> Result<Var> {
        self.check_bn_params(x, gamma, beta)?;
        let c = self.value(x).ncols();
        if running_mean.len() != c || running_var.len() != c {
            return Err(AutodiffError::ShapeMismatch {
                op: "batch_norm_eval",
                lhs: shape_of(self.value(x)),
                rhs: vec![running_mean.len()],
            });
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let (xhat, out) = {
            let xs = self.value(x).as_standard_layout();
            self.normalize(
                xs.as_slice().expect("standard layout"),
                c,
                &mean,
                &inv_std,
                gamma,
                beta,
                relu,
            )
        };
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: Array1::from(inv_std),
                train: false,
                relu,
            },
            rg,
        ))
    }

    fn check_bn_params(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let c = self.value(x).ncols();
        for p in [gamma, beta] {
            let vp = self.value(p);
            if vp.nrows() != 1 || vp.ncols() != c {
                return Err(self.mismatch("batch_norm", x, p));
            }
        }
        Ok(())
    }

    /// Column-wise max over consecutive row segments of length `seg`.
    ///
    /// Ties resolve to the earliest row, and only that row receives gradient.
    pub fn segment_max(&mut self, x: Var, seg: usize) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.dim();
        if seg == 0 || rows % seg != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_max",
                lhs: vec![rows, cols],
                rhs: vec![seg],
            });
        }
        let groups = rows / seg;
        let xs = vx.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(groups * cols);
        let mut argmax = Vec::with_capacity(groups * cols);
        for g in 0..groups {
            let base = g * seg;
            out.extend_from_slice(&xs[base * cols..(base + 1) * cols]);
            argmax.extend(std::iter::repeat_n(base, cols));
            let best = &mut out[g * cols..];
            let arg = &mut argmax[g * cols..];
            for r in base + 1..base + seg {
                let row = &xs[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    if row[c] > best[c] {
                        best[c] = row[c];
                        arg[c] = r;
                    }
                }
            }
        }
        let out = Array2::from_shape_vec((groups, cols), out).expect("groups x cols");
        let argmax = Array2::from_shape_vec((groups, cols), argmax).expect("groups x cols");
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SegmentMax { x, argmax }, rg))
    }

    /// Max over all rows: `1 x C`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let rows = self.value(x).nrows();
        self.segment_max(x, rows)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of zero tensors".into()))?;
        let rows = self.value(first).nrows();
        for p in parts {
            if self.value(*p).nrows() != rows {
                return Err(self.mismatch("concat_cols", first, *p));
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| AutodiffError::InvalidArgument(e.to_string()))?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row gather: `out[i] = x[idx[i]]`. Indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        let rows = vx.nrows();
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: *bad, len: rows });
        }
        let c = vx.ncols();
        let xs = vx.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        let out = Array2::from_shape_vec((idx.len(), c), out).expect("rows x c");
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::GatherRows { x, idx }, rg))
    }

    /// Applies a separate `d x e` matrix to each segment of `seg` rows.
    ///
    /// `x` is `(B*seg) x d`; `m` is `B x (d*e)` holding each matrix in row-major order.
    pub fn segment_matmul(&mut self, x: Var, m: Var, seg: usize) -> Result<Var> {
        let (vx, vm) = (self.value(x), self.value(m));
        let (rows, d) = vx.dim();
        let b = vm.nrows();
        if seg == 0 || rows != b * seg || vm.ncols() % d.max(1) != 0 || d == 0 {
            return Err(self.mismatch("segment_matmul", x, m));
        }
        let e = vm.ncols() / d;
        let mut out = Array2::<f64>::zeros((rows, e));
        for bi in 0..b {
            let mat = vm
                .row(bi)
                .to_owned()
                .into_shape_with_order((d, e))
                .expect("row length d*e");
            let xs = vx.slice(s![bi * seg..(bi + 1) * seg, ..]);
            out.slice_mut(s![bi * seg..(bi + 1) * seg, ..]).assign(&xs.dot(&mat));
        }
        let rg = self.needs(&[x, m]);
        Ok(self.push(out, Op::SegmentMatMul { x, m, seg }, rg))
    }

    /// Mean squared error against a constant target, as a `1 x 1` matrix.
    pub fn mse(&mut self, pred: Var, target: Array2<f64>) -> Result<Var> {
        let vp = self.value(pred);
        if vp.dim() != target.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse",
                lhs: shape_of(vp),
                rhs: shape_of(&target),
            });
        }
        if vp.is_empty() {
            return Err(AutodiffError::InvalidArgument("mse of empty tensors".into()));
        }
        let n = vp.len() as f64;
        let loss = Zip::from(vp)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
            / n;
        let rg = self.needs(&[pred]);
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::Mse { pred, target }, rg))
    }

    /// Back-propagates from a scalar (`1 x 1`) node, accumulating gradients into
    /// every reachable node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).dim() != (1, 1) {
            return Err(AutodiffError::NotScalar(shape_of(self.value(loss))));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(gy) = node.grad.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            propagate(before, node, gy)?;
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], v: Var, g: Array2<f64>) {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return;
    }
    match &mut n.grad {
        Some(acc) => *acc += &g,
        None => n.grad = Some(g),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn propagate(nodes: &mut [Node], node: &Node, gy: &Array2<f64>) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if wants(nodes, *a) {
                let g = gy.dot(&nodes[b.0].value.t());
                accumulate(nodes, *a, g);
            }
            if wants(nodes, *b) {
                let g = nodes[a.0].value.t().dot(gy);
                accumulate(nodes, *b, g);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, gy.clone());
            accumulate(nodes, *b, gy.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, *a, gy.clone());
            accumulate(nodes, *b, -gy);
        }
        Op::AddRow(x, bias) => {
            accumulate(nodes, *x, gy.clone());
            if wants(nodes, *bias) {
                let g = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                accumulate(nodes, *bias, g);
            }
        }
        Op::Relu(x) => {
            let mut g = gy.clone();
            Zip::from(&mut g).and(&node.value).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
            accumulate(nodes, *x, g);
        }
        Op::Scale(x, f) => accumulate(nodes, *x, gy * *f),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
            relu,
        } => {
            let masked;
            let gy = if *relu {
                let mut g = gy.clone();
                Zip::from(&mut g).and(&node.value).for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                });
                masked = g;
                &masked
            } else {
                gy
            };
            let (n, c) = gy.dim();
            let gys = gy.as_standard_layout();
            let gys = gys.as_slice().expect("standard layout");
            let xh = xhat.as_slice().expect("owned");
            // column sums of dy and dy * xhat feed gamma, beta and the train-mode dx
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (gr, hr) in gys.chunks_exact(c).zip(xh.chunks_exact(c)) {
                for j in 0..c {
                    sum_g[j] += gr[j];
                    sum_gx[j] += gr[j] * hr[j];
                }
            }
            if wants(nodes, *gamma) {
                let g = Array2::from_shape_vec((1, c), sum_gx.clone()).expect("1 x c");
                accumulate(nodes, *gamma, g);
            }
            if wants(nodes, *beta) {
                let g = Array2::from_shape_vec((1, c), sum_g.clone()).expect("1 x c");
                accumulate(nodes, *beta, g);
            }
            if wants(nodes, *x) {
                let gam = nodes[gamma.0].value.row(0).to_vec();
                let inv_std = inv_std.as_slice().expect("owned");
                let mut g = vec![0.0; n * c];
                if *train {
                    let nf = n as f64;
                    let k: Vec<f64> = (0..c).map(|j| gam[j] * inv_std[j] / nf).collect();
                    for ((dst, gr), hr) in g.chunks_exact_mut(c).zip(gys.chunks_exact(c)).zip(xh.chunks_exact(c)) {
                        for j in 0..c {
                            dst[j] = k[j] * (gr[j] * nf - sum_g[j] - hr[j] * sum_gx[j]);
                        }
                    }
                } else {
                    for (dst, gr) in g.chunks_exact_mut(c).zip(gys.chunks_exact(c)) {
                        for j in 0..c {
                            dst[j] = gr[j] * gam[j] * inv_std[j];
                        }
                    }
                }
                let g = Array2::from_shape_vec((n, c), g).expect("n x c");
                accumulate(nodes, *x, g);
            }
        }
        Op::SegmentMax { x, argmax } => {
            if wants(nodes, *x) {
                let (rows, cols) = nodes[x.0].value.dim();
                let mut g = vec![0.0; rows * cols];
                let gys = gy.as_standard_layout();
                let am = argmax.as_slice().expect("owned");
                for (e, (&r, &v)) in am.iter().zip(gys.iter()).enumerate() {
                    g[r * cols + e % cols] += v;
                }
                let g = Array2::from_shape_vec((rows, cols), g).expect("rows x cols");
                accumulate(nodes, *x, g);
            }
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for p in parts {
                let w = nodes[p.0].value.ncols();
                if wants(nodes, *p) {
                    let g = gy.slice(s![.., start..start + w]).to_owned();
                    accumulate(nodes, *p, g);
                }
                start += w;
            }
        }
        Op::GatherRows { x, idx } => {
            if wants(nodes, *x) {
                let (rows, cols) = nodes[x.0].value.dim();
                let mut g = vec![0.0; rows * cols];
                let gys = gy.as_standard_layout();
                let gys = gys.as_slice().expect("standard layout");
                for (src, &r) in gys.chunks_exact(cols.max(1)).zip(idx) {
                    for (d, &v) in g[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                        *d += v;
                    }
                }
                let g = Array2::from_shape_vec((rows, cols), g).expect("rows x cols");
                accumulate(nodes, *x, g);
            }
        }
        Op::SegmentMatMul { x, m, seg } => {
            let seg = *seg;
            let d = nodes[x.0].value.ncols();
            let b = nodes[m.0].value.nrows();
            let e = nodes[m.0].value.ncols() / d;
            let want_x = wants(nodes, *x);
            let want_m = wants(nodes, *m);
            let mut gx = want_x.then(|| Array2::<f64>::zeros((b * seg, d)));
            let mut gm = want_m.then(|| Array2::<f64>::zeros((b, d * e)));
            for bi in 0..b {
                let rows = bi * seg..(bi + 1) * seg;
                let gys = gy.slice(s![rows.clone(), ..]);
                if let Some(gx) = gx.as_mut() {
                    let mat = nodes[m.0]
                        .value
                        .row(bi)
                        .to_owned()
                        .into_shape_with_order((d, e))
                        .expect("row length d*e");
                    gx.slice_mut(s![rows.clone(), ..]).assign(&gys.dot(&mat.t()));
                }
                if let Some(gm) = gm.as_mut() {
                    let xs = nodes[x.0].value.slice(s![rows, ..]);
                    let gmat = xs.t().dot(&gys);
                    gm.row_mut(bi).assign(&gmat.into_shape_with_order(d * e).expect("d*e"));
                }
            }
            if let Some(g) = gx {
                accumulate(nodes, *x, g);
            }
            if let Some(g) = gm {
                accumulate(nodes, *m, g);
            }
        }
        Op::Mse { pred, target } => {
            if wants(nodes, *pred) {
                let n = target.len() as f64;
                let scale = 2.0 * gy[[0, 0]] / n;
                let g = (&nodes[pred.0].value - target) * scale;
                accumulate(nodes, *pred, g);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn max_gradient_goes_to_dominant_element_only() {
        let mut g = Graph::new();
        let x = g.variable(array![[1.0], [5.0], [2.0], [-3.0]]);
        let m = g.max_rows(x).unwrap();
        let loss = g.mse(m, array![[0.0]]).unwrap();
        g.backward(loss).unwrap();
        let gx = g.grad(x).unwrap();
        assert_eq!(gx.column(0).to_vec(), vec![0.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_passes_positive_and_zeroes_negative() {
        let mut g = Graph::new();
        let x = g.variable(array![[2.0, -1.5]]);
        let y = g.relu(x);
        let w = g.constant(array![[1.0], [1.0]]);
        let s = g.matmul(y, w).unwrap();
        let loss = g.mse(s, array![[0.0]]).unwrap();
        g.backward(loss).unwrap();
        // d/dx (relu(x0) + relu(x1))^2 = 2 * 2 * [1, 0]
        assert_eq!(g.grad(x).unwrap(), &array![[4.0, 0.0]]);
    }

    #[test]
    fn detached_inputs_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, 2.0]]);
        let w = g.variable(array![[0.5], [0.25]]);
        let y = g.matmul(x, w).unwrap();
        let loss = g.mse(y, array![[0.0]]).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
        assert!(g.grad(w).is_some());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, AutodiffError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.variable(Array2::zeros((2, 1)));
        assert!(matches!(g.backward(a), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn segment_max_ties_pick_first_row() {
        let mut g = Graph::new();
        let x = g.variable(array![[1.0], [1.0], [0.0], [3.0]]);
        let m = g.segment_max(x, 2).unwrap();
        assert_eq!(g.value(m), &array![[1.0], [3.0]]);
        let loss = g.mse(m, array![[0.0], [0.0]]).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().column(0).to_vec(), vec![1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn eval_batch_norm_is_affine() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, 2.0], [3.0, -4.0]]);
        let gamma = g.constant(array![[2.0, 0.5]]);
        let beta = g.constant(array![[0.1, -0.1]]);
        let mean = array![1.0, 0.0];
        let var = array![4.0, 1.0];
        let y = g.batch_norm_eval(x, gamma, beta, &mean, &var, 0.0).unwrap();
        let expect = array![[0.1, 0.9], [2.1, -2.1]];
        for (a, b) in g.value(y).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
