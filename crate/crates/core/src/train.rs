//! Mini-batch training with Adam.
//!
//! Runs are deterministic for a fixed seed regardless of thread count. The
//! epoch order comes from a seeded shuffle, and dropout masks come from a
//! stream keyed by `(epoch, position)`. Instances of a batch run in parallel,
//! but their gradients are summed in batch order.

use cicd_tensor::{AdamConfig, AdamState, ParamGrads, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{encode_instance, ClaimInstance, EncodeParams, EncodedInstance, Vocab};
use crate::dual_view::{forward, predict, Dropout, Prediction};
use crate::error::{DataError, ModelError};
use crate::metrics::{evaluate, Metrics};
use crate::model::Model;

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss over the epoch's training instances.
    pub loss: f64,
    pub ce: f64,
    /// Mean inconsistency term; absent when only one view is enabled.
    pub inconsistency: Option<f64>,
    pub dev_micro_f1: Option<f64>,
    pub dev_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best dev micro-F1 (earliest on ties);
    /// the final parameters when there is no dev set.
    pub best: Model,
    pub best_epoch: usize,
    pub final_model: Model,
    pub trace: Vec<EpochRecord>,
}

/// Builds the vocabulary from the training instances and initialises a model.
pub fn init_model(config: ModelConfig, train: &[ClaimInstance]) -> Result<Model, ModelError> {
    config.validate()?;
    let vocab = Vocab::build(train, config.min_freq)?;
    Model::new(config, vocab)
}

pub fn encode_all(model: &Model, instances: &[ClaimInstance]) -> Result<Vec<EncodedInstance>, DataError> {
    let params = EncodeParams::from(&model.config);
    instances.iter().map(|i| encode_instance(i, &model.vocab, params)).collect()
}

/// Splits off the last `round(n·fraction)` instances as a dev set.
pub fn split_dev(mut instances: Vec<ClaimInstance>, fraction: f64) -> (Vec<ClaimInstance>, Vec<ClaimInstance>) {
    let n_dev = ((instances.len() as f64) * fraction).round() as usize;
    let dev = instances.split_off(instances.len() - n_dev.min(instances.len()));
    (instances, dev)
}

/// Evaluation-mode predictions, in input order.
pub fn predict_all(model: &Model, data: &[EncodedInstance]) -> Result<Vec<Prediction>, ModelError> {
    data.par_iter().map(|inst| predict(model, inst)).collect()
}

pub fn evaluate_model(model: &Model, data: &[EncodedInstance]) -> Result<(Vec<Prediction>, Metrics), ModelError> {
    let preds = predict_all(model, data)?;
    let gold: Vec<usize> = data.iter().map(|i| i.label).collect();
    let predicted: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
    let metrics = evaluate(&gold, &predicted, model.config.labels.names())?;
    Ok((preds, metrics))
}

struct StepResult {
    grads: ParamGrads,
    loss: f64,
    ce: f64,
    inconsistency: Option<f64>,
}

fn step_instance(model: &Model, inst: &EncodedInstance, mut dropout: Dropout) -> Result<StepResult, ModelError> {
    let mut tape = Tape::new();
    let pass = forward(&mut tape, model, inst, &mut dropout)?;
    let loss = tape.value(pass.loss).item();
    let ce = tape.value(pass.ce).item();
    let inconsistency = pass.inconsistency.map(|v| tape.value(v).item());
    let grads = tape.backward(pass.loss)?.into_param_grads(model.params.len());
    Ok(StepResult {
        grads,
        loss,
        ce,
        inconsistency,
    })
}

/// Dropout stream for the instance at `position` of epoch `epoch` (1-based).
/// Shuffle streams use the low range `0..2^32`, so the two never collide.
fn dropout_stream(epoch: usize, position: usize) -> u64 {
    ((epoch as u64) << 32) | position as u64
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    mut model: Model,
    train_set: &[EncodedInstance],
    dev_set: &[EncodedInstance],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ModelError> {
    if train_set.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let cfg = model.config.clone();
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        },
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut per_instance: Vec<Option<(f64, f64, Option<f64>)>> = vec![None; train_set.len()];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = b * cfg.batch_size;
            let results: Vec<StepResult> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let dropout = Dropout::new(cfg.dropout, cfg.seed, dropout_stream(epoch, base + j));
                    step_instance(&model, &train_set[idx], dropout)
                })
                .collect::<Result<_, _>>()?;
            let mut sum = ParamGrads(vec![None; model.params.len()]);
            for (r, &idx) in results.iter().zip(batch) {
                sum.add_assign(&r.grads);
                per_instance[idx] = Some((r.loss, r.ce, r.inconsistency));
            }
            model.params.accumulate(&sum, 1.0 / batch.len() as f64);
            model.params.ensure_grads();
            adam.step(&mut model.params)?;
        }

        let n = train_set.len() as f64;
        let (mut loss, mut ce, mut inc) = (0.0, 0.0, None::<f64>);
        for (l, c, i) in per_instance.into_iter().flatten() {
            loss += l;
            ce += c;
            if let Some(i) = i {
                *inc.get_or_insert(0.0) += i;
            }
        }
        let dev_metrics = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, dev_set)?.1)
        };
        let record = EpochRecord {
            epoch,
            loss: loss / n,
            ce: ce / n,
            inconsistency: inc.map(|v| v / n),
            dev_micro_f1: dev_metrics.as_ref().map(|m| m.micro_f1),
            dev_macro_f1: dev_metrics.as_ref().map(|m| m.macro_f1),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} ce {:.4} dev micF1 {}",
            record.loss,
            record.ce,
            record.dev_micro_f1.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        on_epoch(&record);
        let score = record.dev_micro_f1.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
        trace.push(record);
    }

    let (best_epoch, best) = match best {
        Some((_, e, m)) if !dev_set.is_empty() => (e, m),
        _ => (cfg.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_model: model,
        trace,
    })
}
