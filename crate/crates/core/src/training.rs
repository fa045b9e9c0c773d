//! K-fold training of point-set regressors: AdamW, cosine warm restarts stepped
//! once per epoch, optional point jitter, best-epoch checkpointing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use woodvol_autodiff::{
    adamw_step, AdamWConfig, AutodiffError, CosineWarmRestarts, Mode, OptimizerRecord, OptimizerState, Tape,
    TensorRecord,
};

use crate::cloud::{jitter_in_place, CloudError, DEFAULT_JITTER_CLIP, DEFAULT_JITTER_SIGMA};
use crate::encoders::{EncoderError, EncoderModel, ModelSpec};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "woodvol-checkpoint/1";
pub const CURVE_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_mape";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {truth} targets, {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("target {index} is zero; percentage error undefined")]
    ZeroTarget { index: usize },
    #[error("{groups} groups cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("fold {fold}, epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        fold: usize,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn check_pairs(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(TrainError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(TrainError::Empty);
    }
    Ok(())
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(truth, pred)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (p - t) * (p - t)).sum();
    Ok(s / truth.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(truth, pred)?;
    if let Some(index) = truth.iter().position(|&t| t == 0.0) {
        return Err(TrainError::ZeroTarget { index });
    }
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| ((p - t) / t).abs()).sum();
    Ok(100.0 * s / truth.len() as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Every sample sharing a group id (a base plot and its rotated copies)
    /// lands in the same fold.
    Grouped,
    Ungrouped,
}

/// Validation indices of each fold, sorted. Folds have equal size up to one
/// unit, where the unit is a sample (ungrouped) or a group (grouped).
pub fn make_folds(groups: &[u64], folds: usize, mode: FoldMode, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let units: Vec<Vec<usize>> = match mode {
        FoldMode::Ungrouped => (0..groups.len()).map(|i| vec![i]).collect(),
        FoldMode::Grouped => {
            let ids: BTreeSet<u64> = groups.iter().copied().collect();
            ids.into_iter()
                .map(|g| (0..groups.len()).filter(|&i| groups[i] == g).collect())
                .collect()
        }
    };
    if units.len() < folds {
        return Err(TrainError::TooFewGroups {
            groups: units.len(),
            folds,
        });
    }
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut seed::rng(seed, &[0xF01D]));
    let base = units.len() / folds;
    let extra = units.len() % folds;
    let mut out = Vec::with_capacity(folds);
    let mut at = 0;
    for f in 0..folds {
        let take = base + usize::from(f < extra);
        let mut v: Vec<usize> = order[at..at + take]
            .iter()
            .flat_map(|&u| units[u].iter().copied())
            .collect();
        v.sort_unstable();
        out.push(v);
        at += take;
    }
    Ok(out)
}

/// Complement of a fold's validation indices.
pub fn train_indices(n: usize, val: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = val.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

/// One training example: a fixed-size cloud and its plot wood volume (m³).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub group: u64,
    pub label: f64,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// First restart period, in epochs.
    pub t0: u64,
    pub t_mult: u64,
    pub eta_min: f64,
    pub folds: usize,
    pub fold_mode: FoldMode,
    pub jitter: bool,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            t0: 200,
            t_mult: 1,
            eta_min: 1e-6,
            folds: 5,
            fold_mode: FoldMode::Grouped,
            jitter: true,
            jitter_sigma: DEFAULT_JITTER_SIGMA,
            jitter_clip: DEFAULT_JITTER_CLIP,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (batch norm needs two rows)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.t0 == 0 || self.t_mult == 0 {
            return bad("t0 and t_mult must be positive");
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.learning_rate) {
            return bad("eta_min must lie in [0, learning_rate]");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return bad("jitter sigma and clip must be non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn scheduler(&self) -> CosineWarmRestarts {
        CosineWarmRestarts {
            base_lr: self.learning_rate,
            t0: self.t0,
            t_mult: self.t_mult,
            eta_min: self.eta_min,
        }
    }
}

/// Shuffled mini-batches; a trailing batch of one joins the batch before it.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(|c| c.to_vec()).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mape: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub curve: Vec<EpochRecord>,
    /// Epoch with the lowest validation loss (training loss without a validation set).
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub best_val_mape: Option<f64>,
    /// Validation MAPE of always predicting the training-label mean.
    pub baseline_val_mape: Option<f64>,
    pub model: EncoderModel,
    pub optimizer: OptimizerRecord,
}

/// Evaluation-mode predictions for `idx`, in order.
pub fn evaluate(model: &EncoderModel, data: &[Sample], idx: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let refs: Vec<&[[f64; 3]]> = chunk.iter().map(|&i| data[i].points.as_slice()).collect();
        out.extend(model.predict_raw(&refs)?);
    }
    Ok(out)
}

fn labels(data: &[Sample], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| data[i].label).collect()
}

/// Trains one fold from a fresh initialisation. `val` may be empty, in which
/// case the kept model is the one with the lowest training loss.
pub fn train_fold(
    spec: &ModelSpec,
    data: &[Sample],
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    fold: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FoldResult> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(TrainError::Config(format!(
            "fold {fold} has {} training samples; need at least 2",
            train.len()
        )));
    }
    let y_train = labels(data, train);
    if let Some(bad) = y_train.iter().find(|v| !v.is_finite()) {
        return Err(TrainError::Config(format!("non-finite label {bad}")));
    }
    let (mean, _) = mean_std(&y_train);
    let spread = {
        let n = y_train.len() as f64;
        (y_train.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt()
    };

    let mut model = EncoderModel::new(spec.clone(), seed::derive(cfg.seed, &[fold as u64, 0]))?;
    model.set_label_stats(mean, if spread > 0.0 { spread } else { 1.0 })?;
    let mut opt = OptimizerState::new(&model.store, cfg.optimizer(), cfg.scheduler());

    let y_val = labels(data, val);
    let baseline_val_mape = if val.is_empty() {
        None
    } else {
        Some(mape(&y_val, &vec![mean; val.len()])?)
    };

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Option<f64>, EncoderModel, OptimizerRecord)> = None;
    for epoch in 0..cfg.epochs {
        opt.learning_rate = opt.scheduler.lr_at(epoch as u64);
        let mut rng = seed::rng(cfg.seed, &[fold as u64, 1, epoch as u64]);
        let mut order = train.to_vec();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let mut clouds: Vec<Vec<[f64; 3]>> = idx.iter().map(|&i| data[i].points.clone()).collect();
            if cfg.jitter {
                for c in &mut clouds {
                    jitter_in_place(c, cfg.jitter_sigma, cfg.jitter_clip, &mut rng);
                }
            }
            let refs: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
            let batch = model.batch(&refs)?;
            let target = Array2::from_shape_vec((idx.len(), 1), labels(data, &idx)).expect("B x 1");
            let (loss, grads, bn) = {
                let mut tape = Tape::new(&model.store, Mode::Train);
                let out = model.forward(&mut tape, &batch)?;
                let l = tape.graph.mse(out, target)?;
                let loss = tape.graph.value(l)[[0, 0]];
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        fold,
                        epoch,
                        batch: b,
                        detail: format!(
                            "loss is {loss} at learning rate {:e}; label mean {mean:.4}, spread {spread:.4}",
                            opt.learning_rate
                        ),
                    });
                }
                tape.graph.backward(l)?;
                (loss, tape.param_grads(), tape.take_bn_updates())
            };
            if let Err(e) = adamw_step(&mut model.store, &grads, &mut opt) {
                return Err(match e {
                    AutodiffError::NonFiniteGradient(name) => TrainError::NonFinite {
                        fold,
                        epoch,
                        batch: b,
                        detail: format!("non-finite gradient for `{name}` (loss {loss})"),
                    },
                    other => other.into(),
                });
            }
            model.store.apply_bn_updates(&bn);
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let (val_loss, val_mape) = if val.is_empty() {
            (None, None)
        } else {
            let pred = evaluate(&model, data, val, cfg.batch_size)?;
            (Some(mse(&y_val, &pred)?), Some(mape(&y_val, &pred)?))
        };
        let rec = EpochRecord {
            epoch,
            learning_rate: opt.learning_rate,
            train_loss,
            val_loss,
            val_mape,
        };
        on_epoch(&rec);
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(TrainError::NonFinite {
                fold,
                epoch,
                batch: 0,
                detail: format!("validation loss is {score}"),
            });
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, val_mape, model.clone(), opt.to_record(&model.store)));
        }
        curve.push(rec);
    }
    let (score, best_epoch, best_val_mape, model, optimizer) = best.expect("epochs > 0");
    Ok(FoldResult {
        fold,
        train: train.to_vec(),
        val: val.to_vec(),
        curve,
        best_epoch,
        best_val_loss: (!val.is_empty()).then_some(score),
        best_val_mape,
        baseline_val_mape,
        model,
        optimizer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self { mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub val_loss: MeanStd,
    pub val_mape: MeanStd,
    pub baseline_val_mape: MeanStd,
}

/// Cross-validation over `data` with the configured fold layout.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<CvReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let groups: Vec<u64> = data.iter().map(|s| s.group).collect();
    let folds = make_folds(&groups, cfg.folds, cfg.fold_mode, cfg.seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, val) in folds.iter().enumerate() {
        let train = train_indices(data.len(), val);
        results.push(train_fold(spec, data, &train, val, cfg, f, |r| on_epoch(f, r))?);
    }
    let pick = |g: fn(&FoldResult) -> Option<f64>| -> Vec<f64> { results.iter().filter_map(g).collect() };
    Ok(CvReport {
        val_loss: MeanStd::of(&pick(|r| r.best_val_loss)),
        val_mape: MeanStd::of(&pick(|r| r.best_val_mape)),
        baseline_val_mape: MeanStd::of(&pick(|r| r.baseline_val_mape)),
        folds: results,
    })
}

/// Per-epoch learning curve as CSV; empty validation columns when absent.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in curve {
        let _ = writeln!(
            s,
            "{},{:.9e},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_mape)
        );
    }
    s
}

/// Where a checkpoint sits in its run; with the master seed this fixes every
/// random stream the trainer would draw next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub master_seed: u64,
    pub fold: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub params: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerRecord>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn new(model: &EncoderModel, optimizer: Option<OptimizerRecord>, rng: RngState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: model.spec.clone(),
            params: model.store.to_records(),
            optimizer,
            rng,
        }
    }

    pub fn from_fold(r: &FoldResult, master_seed: u64) -> Self {
        Self::new(
            &r.model,
            Some(r.optimizer.clone()),
            RngState {
                master_seed,
                fold: r.fold,
                epoch: r.best_epoch,
            },
        )
    }

    pub fn model(&self) -> Result<EncoderModel> {
        let mut m = EncoderModel::new(self.spec.clone(), 0)?;
        m.store.load_records(&self.params)?;
        if let Some(o) = &self.optimizer {
            OptimizerState::from_record(&m.store, o)?;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format `{}`, expected `{CHECKPOINT_FORMAT}`",
                c.format
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&[10.0, 20.0], &[11.0, 18.0]).unwrap(), 2.5);
        assert_eq!(mape(&[10.0, 20.0], &[11.0, 18.0]).unwrap(), 10.0);
        assert_eq!(mape(&[10.0, 20.0], &[10.5, 21.0]).unwrap(), 5.0);
        assert!(matches!(mse(&[], &[]), Err(TrainError::Empty)));
        assert!(matches!(mape(&[], &[]), Err(TrainError::Empty)));
        assert!(matches!(
            mape(&[1.0, 0.0], &[1.0, 1.0]),
            Err(TrainError::ZeroTarget { index: 1 })
        ));
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(TrainError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ungrouped_folds_of_two() {
        let groups: Vec<u64> = (0..10).collect();
        let f = make_folds(&groups, 5, FoldMode::Ungrouped, 3).unwrap();
        assert_eq!(f.len(), 5);
        assert!(f.iter().all(|v| v.len() == 2));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let groups: Vec<u64> = (0..13u64).flat_map(|g| std::iter::repeat_n(g, 8)).collect();
        let f = make_folds(&groups, 5, FoldMode::Grouped, 9).unwrap();
        for v in &f {
            assert!(v.len() == 16 || v.len() == 24);
            for &i in v {
                let g = groups[i];
                assert!((0..groups.len()).filter(|&j| groups[j] == g).all(|j| v.contains(&j)));
            }
        }
        assert!(matches!(
            make_folds(&groups[..32], 5, FoldMode::Grouped, 9),
            Err(TrainError::TooFewGroups { groups: 4, folds: 5 })
        ));
        assert!(make_folds(&groups, 1, FoldMode::Grouped, 9).is_err());
    }

    #[test]
    fn singleton_batch_is_merged() {
        let order: Vec<usize> = (0..33).collect();
        let b = batches(&order, 16);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 17]);
        let b = batches(&order, 11);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![11, 11, 11]);
        assert_eq!(batches(&[4], 16), vec![vec![4]]);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let ms = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(ms.mean, 5.0);
        assert!((ms.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    fn toy_data(n: usize, points: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let h = rng.random_range(1.0..4.0);
                let pts = (0..points)
                    .map(|_| {
                        [
                            rng.random_range(0.0..2.0),
                            rng.random_range(0.0..2.0),
                            rng.random_range(0.0..h),
                        ]
                    })
                    .collect();
                Sample {
                    id: format!("s{i}"),
                    group: i as u64,
                    label: 2.0 * h,
                    points: pts,
                }
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let data = toy_data(12, 32, 1);
        let spec = ModelSpec::toy(Architecture::Pointnet, 32);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            folds: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = cross_validate(&spec, &data, &cfg, |_, _| {}).unwrap();
        let b = cross_validate(&spec, &data, &cfg, |_, _| {}).unwrap();
        assert_eq!(a.folds.len(), 3);
        for (x, y) in a.folds.iter().zip(&b.folds) {
            assert_eq!(curve_csv(&x.curve), curve_csv(&y.curve));
            assert_eq!(x.model.store.to_records(), y.model.store.to_records());
        }
        let f = &a.folds[0];
        let best = f
            .curve
            .iter()
            .map(|r| r.val_loss.unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(f.best_val_loss, Some(best));

        let ck = Checkpoint::from_fold(f, cfg.seed);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let m = back.model().unwrap();
        let p1 = evaluate(&f.model, &data, &f.val, 4).unwrap();
        let p2 = evaluate(&m, &data, &f.val, 4).unwrap();
        assert_eq!(p1, p2);

        let mut bad = ck.clone();
        bad.format = "other/2".into();
        assert!(Checkpoint::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let s = curve_csv(&[EpochRecord {
            epoch: 0,
            learning_rate: 1e-3,
            train_loss: 2.0,
            val_loss: None,
            val_mape: Some(5.0),
        }]);
        assert_eq!(
            s,
            "epoch,train_loss,val_loss,val_mape\n0,2.000000000e0,,5.000000000e0\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for c in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 1,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                eta_min: 1.0,
                ..Default::default()
            },
            TrainConfig {
                folds: 1,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let s = TrainConfig::default().scheduler();
        assert_eq!((s.base_lr, s.t0, s.t_mult, s.eta_min), (1e-3, 200, 1, 1e-6));
    }
}
