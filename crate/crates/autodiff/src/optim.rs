//! AdamW with decoupled weight decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::{ParamKind, ParamStore, TensorRecord};
use crate::schedule::CosineWarmRestarts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates and step counter for every parameter in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    /// Learning rate used by the next step; the trainer sets it from `scheduler`.
    pub learning_rate: f64,
    pub step: u64,
    pub scheduler: CosineWarmRestarts,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig, scheduler: CosineWarmRestarts) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|(_, e)| Array2::zeros(e.value.dim())).collect();
        Self {
            config,
            learning_rate: config.learning_rate,
            step: 0,
            scheduler,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Array2<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Array2<f64>] {
        &self.second_moment
    }

    pub fn to_record(&self, store: &ParamStore) -> OptimizerRecord {
        let names: Vec<&str> = store.iter().map(|(_, e)| e.name.as_str()).collect();
        OptimizerRecord {
            config: self.config,
            learning_rate: self.learning_rate,
            step: self.step,
            scheduler: self.scheduler,
            first_moment: names
                .iter()
                .zip(&self.first_moment)
                .map(|(n, a)| TensorRecord::from_array(*n, a))
                .collect(),
            second_moment: names
                .iter()
                .zip(&self.second_moment)
                .map(|(n, a)| TensorRecord::from_array(*n, a))
                .collect(),
        }
    }

    pub fn from_record(store: &ParamStore, rec: &OptimizerRecord) -> Result<Self> {
        let load = |records: &[TensorRecord]| -> Result<Vec<Array2<f64>>> {
            if records.len() != store.len() {
                return Err(AutodiffError::InvalidArgument(format!(
                    "optimizer holds {} moments for {} parameters",
                    records.len(),
                    store.len()
                )));
            }
            store
                .iter()
                .zip(records)
                .map(|((_, e), r)| {
                    let a = r.to_array()?;
                    if r.name != e.name || a.dim() != e.value.dim() {
                        return Err(AutodiffError::ParameterShape {
                            name: r.name.clone(),
                            expected: e.value.shape().to_vec(),
                            found: a.shape().to_vec(),
                        });
                    }
                    Ok(a)
                })
                .collect()
        };
        Ok(Self {
            config: rec.config,
            learning_rate: rec.learning_rate,
            step: rec.step,
            scheduler: rec.scheduler,
            first_moment: load(&rec.first_moment)?,
            second_moment: load(&rec.second_moment)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamWConfig,
    pub learning_rate: f64,
    pub step: u64,
    pub scheduler: CosineWarmRestarts,
    pub first_moment: Vec<TensorRecord>,
    pub second_moment: Vec<TensorRecord>,
}

/// One AdamW update:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
///
/// `grads` is indexed like the store. Buffers and parameters without a gradient
/// are left untouched. Any non-finite gradient aborts the step before anything
/// is modified.
pub fn adamw_step(store: &mut ParamStore, grads: &[Option<Array2<f64>>], state: &mut OptimizerState) -> Result<()> {
    if grads.len() != store.len() || state.first_moment.len() != store.len() {
        return Err(AutodiffError::InvalidArgument(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.first_moment.len(),
            store.len()
        )));
    }
    for ((_, e), g) in store.iter().zip(grads) {
        if let Some(g) = g {
            if g.dim() != e.value.dim() {
                return Err(AutodiffError::ParameterShape {
                    name: e.name.clone(),
                    expected: e.value.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient(e.name.clone()));
            }
        }
    }

    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
        ..
    } = state.config;
    let lr = state.learning_rate;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.kind)).collect();
    for (id, kind) in ids {
        let i = id.index();
        let Some(g) = &grads[i] else { continue };
        if kind != ParamKind::Trainable {
            continue;
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let theta = store.get_mut(id);
        ndarray::Zip::from(theta).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
        });
    }
    Ok(())
}
