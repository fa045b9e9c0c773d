//! Layers built from graph primitives.

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Mode, Var};
use crate::params::{BnUpdate, ParamId, ParamStore, Tape};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Fully connected layer `x W + b`, applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let weight = store.add_param(&format!("{name}.weight"), w)?;
        let bias = if bias {
            let b = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound));
            Some(store.add_param(&format!("{name}.bias"), b)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.graph.affine(x, w, b)
    }
}

/// Batch normalization over rows, with running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub width: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), Array2::ones((1, width)))?,
            beta: store.add_param(&format!("{name}.beta"), Array2::zeros((1, width)))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Array2::zeros((1, width)))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Array2::ones((1, width)))?,
            width,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.apply(tape, x, false)
    }

    /// Batch norm followed by ReLU, fused into one node.
    pub fn forward_relu(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.apply(tape, x, true)
    }

    fn apply(&self, tape: &mut Tape<'_>, x: Var, relu: bool) -> Result<Var> {
        let gamma = tape.param(self.gamma);
        let beta = tape.param(self.beta);
        match tape.mode() {
            Mode::Train => {
                let (y, stats) = if relu {
                    tape.graph.batch_norm_relu_train(x, gamma, beta, BN_EPS)?
                } else {
                    tape.graph.batch_norm_train(x, gamma, beta, BN_EPS)?
                };
                tape.record_bn(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: BN_MOMENTUM,
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = tape.buffer_row(self.running_mean);
                let var = tape.buffer_row(self.running_var);
                if relu {
                    tape.graph.batch_norm_relu_eval(x, gamma, beta, &mean, &var, BN_EPS)
                } else {
                    tape.graph.batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPS)
                }
            }
        }
    }
}

/// Shared per-row MLP: `linear -> batch norm -> relu` for every layer. The
/// linear maps carry no bias, since batch norm would cancel it.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub layers: Vec<(Linear, BatchNorm)>,
}

impl SharedMlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let lin = Linear::new(store, &format!("{name}.{i}.linear"), fan_in, w, false, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.{i}.bn"), w)?;
            layers.push((lin, bn));
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|(l, _)| l.fan_out)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var) -> Result<Var> {
        for (lin, bn) in &self.layers {
            let y = lin.forward(tape, x)?;
            x = bn.forward_relu(tape, y)?;
        }
        Ok(x)
    }
}
