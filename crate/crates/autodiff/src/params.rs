//! Named parameter storage, shared between forward passes, the optimizer and checkpoints.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::graph::{BatchStats, Graph, Mode, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried between passes but not trained (running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Array2<f64>,
}

/// A tensor in checkpoint form: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorRecord {
    pub fn from_array(name: impl Into<String>, a: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            shape: a.shape().to_vec(),
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let [r, c] = self.shape[..] else {
            return Err(AutodiffError::InvalidArgument(format!(
                "tensor `{}` must be 2-D, got shape {:?}",
                self.name, self.shape
            )));
        };
        Array2::from_shape_vec((r, c), self.values.clone()).map_err(|_| AutodiffError::ParameterShape {
            name: self.name.clone(),
            expected: self.shape.clone(),
            found: vec![self.values.len()],
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, kind: ParamKind, value: Array2<f64>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            kind,
            value,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add_param(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        self.insert(name, ParamKind::Trainable, value)
    }

    pub fn add_buffer(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        self.insert(name, ParamKind::Buffer, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.entries
            .iter()
            .map(|e| TensorRecord::from_array(e.name.clone(), &e.value))
            .collect()
    }

    /// Overwrites values from records. Every stored tensor must be present with its exact shape.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<()> {
        let by_name: BTreeMap<&str, &TensorRecord> = records.iter().map(|r| (r.name.as_str(), r)).collect();
        let mut loaded = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let rec = by_name
                .get(e.name.as_str())
                .ok_or_else(|| AutodiffError::UnknownParameter(e.name.clone()))?;
            let arr = rec.to_array()?;
            if arr.dim() != e.value.dim() {
                return Err(AutodiffError::ParameterShape {
                    name: e.name.clone(),
                    expected: e.value.shape().to_vec(),
                    found: arr.shape().to_vec(),
                });
            }
            loaded.push(arr);
        }
        if records.len() != self.entries.len() {
            let extra = records
                .iter()
                .find(|r| !self.by_name.contains_key(&r.name))
                .map(|r| r.name.clone())
                .unwrap_or_default();
            return Err(AutodiffError::UnknownParameter(extra));
        }
        for (e, v) in self.entries.iter_mut().zip(loaded) {
            e.value = v;
        }
        Ok(())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let m = u.momentum;
            let mean = self.get_mut(u.running_mean);
            for (r, b) in mean.row_mut(0).iter_mut().zip(u.stats.mean.iter()) {
                *r = m * *r + (1.0 - m) * b;
            }
            let var = self.get_mut(u.running_var);
            for (r, b) in var.row_mut(0).iter_mut().zip(u.stats.var.iter()) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }
}

/// Pending running-statistic update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats,
}

/// One forward pass bound to a parameter store.
///
/// Parameters are copied onto the graph the first time they are used, as
/// gradient-tracked leaves.
pub struct Tape<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    bn_updates: Vec<BnUpdate>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.variable(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer_row(&self, id: ParamId) -> Array1<f64> {
        self.store.get(id).row(0).to_owned()
    }

    pub fn record_bn(&mut self, u: BnUpdate) {
        self.bn_updates.push(u);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradients indexed by [`ParamId`]; `None` where a parameter was unused or is a buffer.
    pub fn param_grads(&mut self) -> Vec<Option<Array2<f64>>> {
        let mut out = vec![None; self.bound.len()];
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                out[i] = self.graph.take_grad(*v);
            }
        }
        out
    }
}
