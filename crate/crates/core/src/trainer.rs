//! Mini-batch training of the projection and classifier heads.
//!
//! Training is single-threaded and fully determined by the data and
//! `TrainConfig::seed`: parameters are initialized from the seed and the
//! batch of step `t` is drawn from a ChaCha stream keyed by `(seed, t)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{fuzzy_knn_classify, KnnConfig};
use crate::corpus::{AuthorClass, CorpusDataset, LabelCodes, Split};
use crate::encoder::BaseEmbedding;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::index::VectorIndex;
use crate::loss::{loss_gradients, LossConfig, LEVELS};
use crate::model::{init_params, project, ModelDims, ModelParams};
use crate::optim::{adamw_step, AdamState, AdamWHyper};
use crate::pipeline::{index_entry, BaseEncoder};

/// Keeps the batch sampler's streams apart from parameter initialization.
const BATCH_SEED_SALT: u64 = 0x6261_7463_6865_7321;

/// Warmup is specified for a 4000-step schedule and shrinks proportionally
/// on shorter runs.
const REFERENCE_STEPS: u64 = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// Global L2 norm the gradient is clipped to.
    pub grad_clip: f64,
    /// Set from the top-level `seed` of a configuration file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 50,
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 2000,
            grad_clip: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.grad_clip > 0.0) {
            return bad("eps and grad_clip must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_size: usize) -> usize {
        (train_size / self.batch_size).max(1)
    }

    pub fn effective_warmup(&self, total_steps: u64) -> u64 {
        if total_steps < REFERENCE_STEPS {
            (self.warmup_steps as u128 * total_steps as u128 / REFERENCE_STEPS as u128) as u64
        } else {
            self.warmup_steps
        }
    }

    fn hyper(&self, total_steps: u64) -> AdamWHyper {
        AdamWHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            warmup_steps: self.effective_warmup(total_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub base: BaseEmbedding,
    pub codes: LabelCodes,
}

/// Encoded training and validation examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl TrainData {
    /// Encodes the train and val splits; test records are left out.
    pub fn from_corpus(dataset: &CorpusDataset, encoder: &BaseEncoder) -> Result<Self> {
        let mut out = Self::default();
        for r in &dataset.records {
            let slot = match r.split {
                Split::Train => &mut out.train,
                Split::Val => &mut out.val,
                Split::Test => continue,
            };
            slot.push(Example { base: encoder.encode_record(r)?, codes: dataset.codes(r) });
        }
        Ok(out)
    }
}

/// Draws the batch for one step.
///
/// Up to two examples of every (class, family) group are required, taken
/// round-robin so that every group gets one before any gets a second; this
/// covers two per coarse class whenever the batch is large enough. The rest
/// of the batch is filled uniformly without replacement, or with
/// replacement once the split is exhausted.
pub fn sample_batch(codes: &[LabelCodes], batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    let classes: HashSet<AuthorClass> = codes.iter().map(|c| c.class()).collect();
    if classes.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training split covers {} author class(es), need at least 2",
            classes.len()
        )));
    }
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_SEED_SALT);
    rng.set_stream(step);

    // (class, z) sorts human after every llm and collab group
    let mut groups: BTreeMap<(AuthorClass, u16), Vec<usize>> = BTreeMap::new();
    for (i, c) in codes.iter().enumerate() {
        groups.entry((c.class(), c.z_raw())).or_default().push(i);
    }
    let picks: Vec<Vec<usize>> = groups
        .values()
        .map(|members| sample(&mut rng, members.len(), members.len().min(2)).into_iter().map(|j| members[j]).collect())
        .collect();
    let mut batch = Vec::with_capacity(batch_size);
    for round in 0..2 {
        for p in &picks {
            if let Some(&i) = p.get(round) {
                if batch.len() < batch_size {
                    batch.push(i);
                }
            }
        }
    }

    let taken: HashSet<usize> = batch.iter().copied().collect();
    let rest: Vec<usize> = (0..codes.len()).filter(|i| !taken.contains(i)).collect();
    let fill = (batch_size - batch.len()).min(rest.len());
    batch.extend(sample(&mut rng, rest.len(), fill).into_iter().map(|j| rest[j]));
    while batch.len() < batch_size {
        batch.push(rng.gen_range(0..codes.len()));
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub mcl: f64,
    pub levels: [f64; LEVELS],
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_f1_macro: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "step,loss,ce,mcl,level1,level2,level3,level4,level5,skipped";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = write!(out, "{},{},{},{}", s.step, s.loss, s.ce, s.mcl);
            for l in s.levels {
                let _ = write!(out, ",{l}");
            }
            let _ = writeln!(out, ",{}", s.skipped);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) {
    let sq: f64 = grads.arrays().iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for a in grads.arrays_mut() {
            a.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Fuzzy-kNN accuracy and macro-F1 of `val` against an index of `train`.
fn validate_epoch(params: &ModelParams, train: &[Example], val: &[Example]) -> Result<(f64, f64)> {
    let entries = train
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut e = index_entry(params, &ex.base, ex.codes)?;
            e.id = format!("train-{i}");
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let index = VectorIndex::build(entries)?;
    let knn = KnnConfig::default();
    let mut predicted = Vec::with_capacity(val.len());
    for ex in val {
        predicted.push(fuzzy_knn_classify(&index, &project(params, &ex.base)?, &knn)?.predicted);
    }
    let gold: Vec<AuthorClass> = val.iter().map(|ex| ex.codes.class()).collect();
    let report = evaluate(&predicted, &gold)?;
    Ok((report.metrics.accuracy, report.metrics.f1_macro))
}

/// Trains from freshly initialized parameters.
///
/// Every epoch runs `max(1, |train| / batch_size)` steps and, when a
/// validation split is present, records fuzzy-kNN metrics on it. The final
/// parameters are rounded to `f32` so that they survive a save/load cycle
/// unchanged.
pub fn train(data: &TrainData, dims: ModelDims, cfg: &TrainConfig, loss_cfg: &LossConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut params = init_params(dims, cfg.seed)?;
    if let Some(ex) = data.train.iter().chain(&data.val).find(|ex| ex.base.dim() != dims.input_dim) {
        return Err(Error::DimMismatch { expected: dims.input_dim, found: ex.base.dim() });
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history });
    }
    if data.train.is_empty() {
        return Err(Error::InsufficientData("training split is empty".into()));
    }
    let codes: Vec<LabelCodes> = data.train.iter().map(|ex| ex.codes).collect();
    let per_epoch = cfg.steps_per_epoch(data.train.len());
    let total = (cfg.epochs * per_epoch) as u64;
    let hyper = cfg.hyper(total);
    let mut state = AdamState::new(&params);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..per_epoch {
            step += 1;
            let batch = sample_batch(&codes, cfg.batch_size, cfg.seed, step)?;
            let bases: Vec<&BaseEmbedding> = batch.iter().map(|&i| &data.train[i].base).collect();
            let bcodes: Vec<LabelCodes> = batch.iter().map(|&i| codes[i]).collect();
            let (loss, mut grads) = loss_gradients(&bases, &bcodes, &params, loss_cfg)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NumericalDivergence { step });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            adamw_step(&mut params, &grads, &mut state, &hyper, step)?;
            if !params.is_finite() {
                return Err(Error::NumericalDivergence { step });
            }
            loss_sum += loss.total;
            history.steps.push(StepRecord {
                step,
                epoch,
                loss: loss.total,
                ce: loss.ce,
                mcl: loss.mcl.total,
                levels: loss.mcl.levels,
                skipped: loss.mcl.skipped,
            });
        }
        let (val_accuracy, val_f1_macro) = if data.val.is_empty() {
            (None, None)
        } else {
            let (a, f) = validate_epoch(&params, &data.train, &data.val)?;
            (Some(a), Some(f))
        };
        history.epochs.push(EpochRecord { epoch, mean_loss: loss_sum / per_epoch as f64, val_accuracy, val_f1_macro });
    }
    params.round_to_f32();
    Ok(TrainOutcome { params, history })
}
