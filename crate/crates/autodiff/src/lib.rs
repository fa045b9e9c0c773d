//! Minimal reverse-mode automatic differentiation for point-set networks.
//!
//! Values are dense `f64` matrices recorded on a [`Graph`] tape. The primitive
//! set covers what shared-MLP point encoders need: matrix products, row-wise
//! affine maps, ReLU, batch normalization, segment max pooling, column
//! concatenation and row gathers. [`nn`] builds layers on top of those, and
//! [`optim`] / [`schedule`] provide AdamW and cosine annealing with warm restarts.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod schedule;

pub use error::{AutodiffError, Result};
pub use graph::{BatchStats, Graph, Mode, Var};
pub use nn::{BatchNorm, Linear, SharedMlp};
pub use optim::{adamw_step, AdamWConfig, OptimizerRecord, OptimizerState};
pub use params::{BnUpdate, ParamEntry, ParamId, ParamKind, ParamStore, Tape, TensorRecord};
pub use schedule::CosineWarmRestarts;
