//! Point-set regression encoders: PointNet, PointNet++ and DGCNN.
//!
//! Every cloud is canonicalized before it reaches a network: points are sorted
//! lexicographically, the xy centroid is moved to the origin and the lowest
//! point to `z = 0`. Nothing is rescaled, because absolute size carries the
//! volume signal. Since all internal sampling and neighbour searches run on the
//! sorted cloud with index tie-breaking, each encoder is exactly invariant to
//! the input order.

mod dgcnn;
mod pointnet;
mod pointnetpp;

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use woodvol_autodiff::gradcheck::{check_params, Mismatch, Tolerance};
use woodvol_autodiff::{AutodiffError, Graph, Linear, Mode, ParamId, ParamStore, SharedMlp, Tape, Var};

pub use dgcnn::{knn_graph, DgcnnSpec};
pub use pointnet::PointNetSpec;
pub use pointnetpp::{ball_query, PointNetPpSpec, SaLevel};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("expected {expected} points per cloud, got {found}")]
    PointCount { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("gradient mismatch at {0}")]
    Gradient(Mismatch),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Pointnet,
    Pointnetpp,
    Dgcnn,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::Pointnet, Self::Pointnetpp, Self::Dgcnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pointnet => "pointnet",
            Self::Pointnetpp => "pointnetpp",
            Self::Dgcnn => "dgcnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderSpec {
    Pointnet(PointNetSpec),
    Pointnetpp(PointNetPpSpec),
    Dgcnn(DgcnnSpec),
}

/// Full architecture descriptor: encoder, regression head and input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub num_points: usize,
    pub encoder: EncoderSpec,
    /// Hidden widths of the head; a final linear layer maps to one output.
    pub head: Vec<usize>,
}

impl ModelSpec {
    pub fn architecture(&self) -> Architecture {
        match self.encoder {
            EncoderSpec::Pointnet(_) => Architecture::Pointnet,
            EncoderSpec::Pointnetpp(_) => Architecture::Pointnetpp,
            EncoderSpec::Dgcnn(_) => Architecture::Dgcnn,
        }
    }

    /// Reduced widths for single-core training.
    pub fn desk(arch: Architecture, num_points: usize) -> Self {
        let encoder = match arch {
            Architecture::Pointnet => EncoderSpec::Pointnet(PointNetSpec::desk()),
            Architecture::Pointnetpp => EncoderSpec::Pointnetpp(PointNetPpSpec::desk(num_points)),
            Architecture::Dgcnn => EncoderSpec::Dgcnn(DgcnnSpec::desk()),
        };
        Self {
            num_points,
            encoder,
            head: vec![32, 16],
        }
    }

    /// Canonical architecture widths.
    pub fn full(arch: Architecture, num_points: usize) -> Self {
        let encoder = match arch {
            Architecture::Pointnet => EncoderSpec::Pointnet(PointNetSpec::full()),
            Architecture::Pointnetpp => EncoderSpec::Pointnetpp(PointNetPpSpec::full(num_points)),
            Architecture::Dgcnn => EncoderSpec::Dgcnn(DgcnnSpec::full()),
        };
        Self {
            num_points,
            encoder,
            head: vec![512, 256],
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn toy(arch: Architecture, num_points: usize) -> Self {
        let encoder = match arch {
            Architecture::Pointnet => EncoderSpec::Pointnet(PointNetSpec {
                t_net: true,
                t_net_mlp: vec![4],
                t_net_head: vec![4],
                mlp: vec![4, 6],
            }),
            Architecture::Pointnetpp => EncoderSpec::Pointnetpp(PointNetPpSpec {
                levels: vec![
                    SaLevel {
                        centroids: num_points / 4,
                        radius: 0.6,
                        neighbors: 4,
                        widths: vec![4, 5],
                    },
                    SaLevel {
                        centroids: num_points / 8,
                        radius: 1.2,
                        neighbors: 3,
                        widths: vec![5],
                    },
                ],
                global: vec![6],
            }),
            Architecture::Dgcnn => EncoderSpec::Dgcnn(DgcnnSpec {
                k: 4,
                edge_widths: vec![4, 5],
                embed: 6,
            }),
        };
        Self {
            num_points,
            encoder,
            head: vec![4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EncoderError::InvalidSpec(m));
        if self.num_points < 2 {
            return bad("num_points must be at least 2".into());
        }
        if self.head.contains(&0) {
            return bad("head widths must be positive".into());
        }
        match &self.encoder {
            EncoderSpec::Pointnet(s) => s.validate(),
            EncoderSpec::Pointnetpp(s) => s.validate(self.num_points),
            EncoderSpec::Dgcnn(s) => s.validate(self.num_points),
        }
    }
}

/// Sorted, xy-centred, ground-at-zero copy of a cloud.
pub fn canonicalize(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    if p.is_empty() {
        return p;
    }
    let n = p.len() as f64;
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / n;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / n;
    let z0 = p.iter().map(|q| q[2]).fold(f64::INFINITY, f64::min);
    for q in &mut p {
        q[0] -= cx;
        q[1] -= cy;
        q[2] -= z0;
    }
    p
}

/// Canonical clouds of equal size, stacked as rows `cloud * n + point`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub clouds: Vec<Vec<[f64; 3]>>,
    pub n: usize,
}

impl Batch {
    pub fn new(raw: &[&[[f64; 3]]], n: usize) -> Result<Self> {
        if raw.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let clouds = raw
            .iter()
            .map(|c| {
                if c.len() != n {
                    Err(EncoderError::PointCount {
                        expected: n,
                        found: c.len(),
                    })
                } else {
                    Ok(canonicalize(c))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clouds, n })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn coords(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.clouds.len() * self.n, 3));
        for (c, cloud) in self.clouds.iter().enumerate() {
            for (i, p) in cloud.iter().enumerate() {
                for k in 0..3 {
                    a[[c * self.n + i, k]] = p[k];
                }
            }
        }
        a
    }
}

/// Hidden `linear -> bn -> relu` layers, then a linear scalar output mapped
/// to label units by a fixed `shift + scale * y` (training-label mean and std).
#[derive(Debug, Clone)]
pub(crate) struct Head {
    hidden: SharedMlp,
    out: Linear,
    shift: ParamId,
    scale: ParamId,
}

impl Head {
    fn new(store: &mut ParamStore, input: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let hidden = SharedMlp::new(store, "head", input, widths, rng)?;
        let last = hidden.output_width().unwrap_or(input);
        let out = Linear::new(store, "head.out", last, 1, true, rng)?;
        let shift = store.add_buffer("head.label_shift", Array2::zeros((1, 1)))?;
        let scale = store.add_buffer("head.label_scale", Array2::ones((1, 1)))?;
        Ok(Self {
            hidden,
            out,
            shift,
            scale,
        })
    }

    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let y = self.out.forward(tape, h)?;
        let scale = tape.store().get(self.scale)[[0, 0]];
        let shift = tape.store().get(self.shift).clone();
        let shift = tape.graph.constant(shift);
        let y = tape.graph.scale(y, scale);
        Ok(tape.graph.add_row(y, shift)?)
    }
}

#[derive(Debug, Clone)]
enum Net {
    Pointnet(pointnet::PointNet),
    Pointnetpp(pointnetpp::PointNetPp),
    Dgcnn(dgcnn::Dgcnn),
}

/// Parameters plus architecture; the store holds every trainable tensor and
/// batch-norm buffer under a stable name.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    net: Net,
    head: Head,
}

impl EncoderModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (net, width) = match &spec.encoder {
            EncoderSpec::Pointnet(s) => {
                let n = pointnet::PointNet::new(s, &mut store, &mut rng)?;
                let w = n.output_width();
                (Net::Pointnet(n), w)
            }
            EncoderSpec::Pointnetpp(s) => {
                let n = pointnetpp::PointNetPp::new(s, &mut store, &mut rng)?;
                let w = n.output_width();
                (Net::Pointnetpp(n), w)
            }
            EncoderSpec::Dgcnn(s) => {
                let n = dgcnn::Dgcnn::new(s, &mut store, &mut rng)?;
                let w = n.output_width();
                (Net::Dgcnn(n), w)
            }
        };
        let head = Head::new(&mut store, width, &spec.head, &mut rng)?;
        Ok(Self { spec, store, net, head })
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture()
    }

    /// Output mapping `mean + std * y`; the raw output bias starts at zero so a
    /// fresh model predicts roughly the label mean.
    pub fn set_label_stats(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(EncoderError::InvalidSpec(format!(
                "label statistics must be finite with positive spread, got mean {mean}, std {std}"
            )));
        }
        self.store.get_mut(self.head.shift).fill(mean);
        self.store.get_mut(self.head.scale).fill(std);
        if let Some(b) = self.head.out.bias {
            self.store.get_mut(b).fill(0.0);
        }
        Ok(())
    }

    pub fn label_stats(&self) -> (f64, f64) {
        (
            self.store.get(self.head.shift)[[0, 0]],
            self.store.get(self.head.scale)[[0, 0]],
        )
    }

    /// Zeroes the output weights, making the model a constant function of its bias.
    pub fn zero_output_weights(&mut self) {
        self.store.get_mut(self.head.out.weight).fill(0.0);
    }

    pub fn batch(&self, raw: &[&[[f64; 3]]]) -> Result<Batch> {
        Batch::new(raw, self.spec.num_points)
    }

    /// Predictions as a `B × 1` variable on the tape.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        if batch.n != self.spec.num_points {
            return Err(EncoderError::PointCount {
                expected: self.spec.num_points,
                found: batch.n,
            });
        }
        let features = match &self.net {
            Net::Pointnet(n) => n.forward(tape, batch)?,
            Net::Pointnetpp(n) => n.forward(tape, batch)?,
            Net::Dgcnn(n) => n.forward(tape, batch)?,
        };
        self.head.forward(tape, features)
    }

    /// Training-mode MSE gradients of every trainable parameter against
    /// central finite differences.
    pub fn check_gradients(&self, batch: &Batch, target: &Array2<f64>, tol: Tolerance) -> Result<usize> {
        let loss = |store: &ParamStore| -> Result<(f64, Vec<Option<Array2<f64>>>)> {
            let mut tape = Tape::new(store, Mode::Train);
            let out = self.forward(&mut tape, batch)?;
            let l = tape.graph.mse(out, target.clone())?;
            let value = tape.graph.value(l)[[0, 0]];
            tape.graph.backward(l)?;
            Ok((value, tape.param_grads()))
        };
        let (_, analytic) = loss(&self.store)?;
        check_params(&self.store, &analytic, |s| loss(s).map_or(f64::NAN, |r| r.0), tol).map_err(EncoderError::Gradient)
    }

    /// Evaluation-mode predictions (raw head output, possibly negative).
    pub fn predict_raw(&self, raw: &[&[[f64; 3]]]) -> Result<Vec<f64>> {
        let batch = self.batch(raw)?;
        let mut tape = Tape::new(&self.store, Mode::Eval);
        let out = self.forward(&mut tape, &batch)?;
        Ok(tape.graph.value(out).column(0).to_vec())
    }

    /// Evaluation-mode predictions clamped at zero, with the number clamped.
    pub fn predict(&self, raw: &[&[[f64; 3]]]) -> Result<(Vec<f64>, usize)> {
        let mut v = self.predict_raw(raw)?;
        let mut clamped = 0;
        for x in &mut v {
            if *x < 0.0 {
                *x = 0.0;
                clamped += 1;
            }
        }
        Ok((v, clamped))
    }

    /// Layer table: parameter name, kind, shape and size.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "architecture {} | points {} | head {:?}",
            self.architecture().name(),
            self.spec.num_points,
            self.spec.head
        );
        let _ = writeln!(s, "{:<40} {:<9} {:>10} {:>8}", "tensor", "kind", "shape", "size");
        let mut total = 0;
        for (_, e) in self.store.iter() {
            let kind = match e.kind {
                woodvol_autodiff::ParamKind::Trainable => "param",
                woodvol_autodiff::ParamKind::Buffer => "buffer",
            };
            if e.kind == woodvol_autodiff::ParamKind::Trainable {
                total += e.value.len();
            }
            let shape = format!("{}x{}", e.value.nrows(), e.value.ncols());
            let _ = writeln!(s, "{:<40} {:<9} {:>10} {:>8}", e.name, kind, shape, e.value.len());
        }
        let _ = writeln!(s, "trainable parameters: {total}");
        s
    }
}

/// Rows `[p_j - c, f_j]` gathered by global index, as a graph constant plus
/// optional gathered feature columns.
pub(crate) fn relative_group(
    g: &mut Graph,
    coords: &[[f64; 3]],
    centers: &[[f64; 3]],
    members: &[usize],
    per_group: usize,
    features: Option<Var>,
) -> Result<Var> {
    let mut rel = Array2::zeros((members.len(), 3));
    for (r, &j) in members.iter().enumerate() {
        let c = centers[r / per_group];
        for k in 0..3 {
            rel[[r, k]] = coords[j][k] - c[k];
        }
    }
    let rel = g.constant(rel);
    match features {
        None => Ok(rel),
        Some(f) => {
            let gathered = g.gather_rows(f, members.to_vec())?;
            Ok(g.concat_cols(&[rel, gathered])?)
        }
    }
}
