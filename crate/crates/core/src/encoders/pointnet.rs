//! PointNet: optional learned 3x3 input transform, shared MLP, global max pool.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use woodvol_autodiff::{Linear, ParamStore, SharedMlp, Tape, Var};

use super::{Batch, EncoderError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointNetSpec {
    pub t_net: bool,
    pub t_net_mlp: Vec<usize>,
    pub t_net_head: Vec<usize>,
    pub mlp: Vec<usize>,
}

impl PointNetSpec {
    pub fn desk() -> Self {
        Self {
            t_net: true,
            t_net_mlp: vec![16, 32],
            t_net_head: vec![16],
            mlp: vec![16, 32, 64, 128],
        }
    }

    pub fn full() -> Self {
        Self {
            t_net: true,
            t_net_mlp: vec![64, 128, 1024],
            t_net_head: vec![512, 256],
            mlp: vec![64, 64, 64, 128, 1024],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp.is_empty() || self.mlp.contains(&0) {
            return Err(EncoderError::InvalidSpec(
                "pointnet mlp widths must be non-empty and positive".into(),
            ));
        }
        if self.t_net && (self.t_net_mlp.is_empty() || self.t_net_mlp.contains(&0) || self.t_net_head.contains(&0)) {
            return Err(EncoderError::InvalidSpec("t-net widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TNet {
    mlp: SharedMlp,
    head: SharedMlp,
    out: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct PointNet {
    t_net: Option<TNet>,
    mlp: SharedMlp,
}

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

impl PointNet {
    pub fn new(spec: &PointNetSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let t_net = if spec.t_net {
            let mlp = SharedMlp::new(store, "tnet.mlp", 3, &spec.t_net_mlp, rng)?;
            let w = mlp.output_width().unwrap_or(3);
            let head = SharedMlp::new(store, "tnet.head", w, &spec.t_net_head, rng)?;
            let hw = head.output_width().unwrap_or(w);
            let out = Linear::new(store, "tnet.out", hw, 9, true, rng)?;
            // start as the identity transform
            store.get_mut(out.weight).fill(0.0);
            if let Some(b) = out.bias {
                store.get_mut(b).fill(0.0);
            }
            Some(TNet { mlp, head, out })
        } else {
            None
        };
        let mlp = SharedMlp::new(store, "mlp", 3, &spec.mlp, rng)?;
        Ok(Self { t_net, mlp })
    }

    pub fn output_width(&self) -> usize {
        self.mlp.output_width().expect("non-empty mlp")
    }

    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        let x = tape.graph.constant(batch.coords());
        let x = match &self.t_net {
            Some(t) => {
                let h = t.mlp.forward(tape, x)?;
                let h = tape.graph.segment_max(h, batch.n)?;
                let h = t.head.forward(tape, h)?;
                let m = t.out.forward(tape, h)?;
                let eye = tape
                    .graph
                    .constant(Array2::from_shape_vec((1, 9), IDENTITY.to_vec()).expect("1x9"));
                let m = tape.graph.add_row(m, eye)?;
                tape.graph.segment_matmul(x, m, batch.n)?
            }
            None => x,
        };
        let h = self.mlp.forward(tape, x)?;
        Ok(tape.graph.segment_max(h, batch.n)?)
    }
}
