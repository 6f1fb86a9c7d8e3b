use serde::{Deserialize, Serialize};

use super::agop::lm_agop_metrics;
use super::corpus::{eval_windows, sample_train_batch, ByteCorpus};
use super::model::{TinyConfig, TinyTransformer};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, ProjectionMatrix};
use crate::lmshape::ShapeConfig;
use crate::numkernel::{adamw_step, lr_at, AdamWConfig, LrSchedule, OptimState};

/// Step budget and optimizer recipe for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    /// Training bytes, `60 * target_n`.
    pub bytes: u64,
    pub base_steps: u64,
    pub max_steps: u64,
    pub batch: usize,
    pub eval_every: u64,
    pub patience: usize,
    pub warmup: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Optional cap on evaluation windows per split; `None` uses every window.
    pub eval_windows_cap: Option<usize>,
}

impl TrainBudget {
    /// `D = 60 P` bytes, `S0 = max(200, floor(D / context / batch))`, up to `1.5 S0` steps.
    pub fn for_budget(target_n: usize, context: usize) -> Self {
        let batch = 64;
        let bytes = 60 * target_n as u64;
        let base_steps = (bytes / context as u64 / batch as u64).max(200);
        TrainBudget {
            bytes,
            base_steps,
            max_steps: base_steps * 3 / 2,
            batch,
            eval_every: 200,
            patience: 3,
            warmup: 300,
            lr: 3e-4,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            eval_windows_cap: None,
        }
    }
}

/// One trained shape: its solved dimensions, losses, interaction metrics and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: String,
    pub target_n: usize,
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub active_n: usize,
    pub depth_width_ratio: f64,
    pub seed: u64,
    pub initial_loss: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub aofe: f64,
    pub aofe_ratio: f64,
    pub steps: u64,
    pub best_step: u64,
    pub diverged: bool,
    pub note: String,
}

impl TrialRecord {
    fn new(shape: &ShapeConfig, seed: u64) -> Self {
        TrialRecord {
            id: shape.id.clone(),
            target_n: shape.target_n,
            depth: shape.depth,
            d_model: shape.d_model,
            n_heads: shape.n_heads,
            d_ff: shape.d_ff,
            active_n: shape.active_n,
            depth_width_ratio: shape.depth_width_ratio,
            seed,
            initial_loss: f64::NAN,
            train_loss: f64::NAN,
            val_loss: f64::NAN,
            test_loss: f64::NAN,
            aofe: f64::NAN,
            aofe_ratio: f64::NAN,
            steps: 0,
            best_step: 0,
            diverged: false,
            note: String::new(),
        }
    }
}

/// Interaction-metric settings applied after training.
#[derive(Clone, Debug)]
pub struct MetricSpec {
    pub projection: ProjectionMatrix,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValCheck {
    pub step: u64,
    pub val_loss: f64,
}

pub struct LmTrial {
    pub model: TinyTransformer,
    pub record: TrialRecord,
    pub history: Vec<ValCheck>,
}

/// Mean cross-entropy over the split's evaluation windows, 32 windows at a time.
pub fn split_loss(model: &TinyTransformer, split: &[u8], cap: Option<usize>) -> Result<f64> {
    let seq = model.config.context;
    let mut windows = eval_windows(split, seq);
    if let Some(c) = cap {
        windows.truncate(c);
    }
    if windows.is_empty() {
        return Err(Error::Corpus(format!(
            "split of {} bytes has no full window",
            split.len()
        )));
    }
    let mut total = 0.0;
    for chunk in windows.chunks(32) {
        let flat: Vec<u8> = chunk.concat();
        total += model.loss(&flat, seq)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Trains from scratch, restores the best validation checkpoint, then scores losses and interaction metrics.
pub fn train_lm(
    shape: &ShapeConfig,
    corpus: &ByteCorpus,
    budget: &TrainBudget,
    metrics: Option<&MetricSpec>,
    seed: u64,
) -> Result<LmTrial> {
    let config = TinyConfig::from_shape(shape);
    corpus.check_context(config.context)?;
    let mut model = TinyTransformer::new(config, seed)?;
    let mut record = TrialRecord::new(shape, seed);
    let mut history = Vec::new();
    let seq = config.context;
    let n = model.num_params();
    let mut state = OptimState::new(
        n,
        AdamWConfig {
            weight_decay: budget.weight_decay,
            clip_norm: Some(budget.clip_norm),
            ..AdamWConfig::default()
        },
    );
    let schedule = LrSchedule::new(budget.lr, budget.warmup.min(budget.max_steps), budget.max_steps)?;
    let mut grads = vec![0.0; n];
    let mut best: Option<(f64, u64, Vec<f64>)> = None;
    let mut since_best = 0usize;

    let mut step = 0u64;
    while step < budget.max_steps {
        let windows = sample_train_batch(corpus, seq, budget.batch, seed, step);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let loss = model.loss_and_grad(&windows, seq, &mut grads)?;
        if step == 0 {
            record.initial_loss = loss;
        }
        if !loss.is_finite() {
            record.diverged = true;
            record.steps = step;
            record.note = format!("non-finite training loss at step {step}");
            return Ok(LmTrial { model, record, history });
        }
        let lr = lr_at(&schedule, step + 1);
        match adamw_step(model.params_mut(), &mut grads, &mut state, lr) {
            Ok(_) => {}
            Err(Error::Diverged(msg)) => {
                record.diverged = true;
                record.steps = step;
                record.note = msg;
                return Ok(LmTrial { model, record, history });
            }
            Err(e) => return Err(e),
        }
        step += 1;

        if step.is_multiple_of(budget.eval_every) || step == budget.max_steps {
            let val = split_loss(&model, &corpus.valid, budget.eval_windows_cap)?;
            history.push(ValCheck { step, val_loss: val });
            log::debug!("{} step {step} val {val:.4}", shape.id);
            if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
                best = Some((val, step, model.params().to_vec()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if step >= budget.base_steps && since_best >= budget.patience {
                break;
            }
        }
    }
    record.steps = step;
    if let Some((val, best_step, params)) = best {
        model.params_mut().copy_from_slice(&params);
        record.best_step = best_step;
        record.val_loss = val;
    } else {
        record.val_loss = split_loss(&model, &corpus.valid, budget.eval_windows_cap)?;
        record.best_step = step;
    }
    record.train_loss = split_loss(&model, &corpus.train, Some(budget.eval_windows_cap.unwrap_or(512)))?;
    record.test_loss = split_loss(&model, &corpus.test, budget.eval_windows_cap)?;
    if ![record.train_loss, record.val_loss, record.test_loss]
        .iter()
        .all(|v| v.is_finite())
    {
        record.diverged = true;
        record.note = "non-finite evaluation loss".into();
        return Ok(LmTrial { model, record, history });
    }
    if let Some(spec) = metrics {
        match lm_agop_metrics(&model, &corpus.test, &spec.projection, &spec.estimator, spec.seed) {
            Ok(m) => {
                record.aofe = m.aofe;
                record.aofe_ratio = m.aofe_ratio;
            }
            Err(e @ (Error::DegenerateAgop(_) | Error::Diverged(_))) => record.note = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Ok(LmTrial { model, record, history })
}
