//! Loss, RMSProp, the warm-restart schedule, the training loop and grid search.

mod checkpoint;
mod grid;
mod loss;
mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grid::{grid_search, rank_cells, GridCell, GridReport, GridSpec};
pub use loss::{loss, loss_on_tape};
pub use optim::{CalraSchedule, RmsProp};

use crate::data::{Sample, SampleSet};
use crate::error::{Error, Result};
use crate::graph::{NormalizationMode, RoadGraph};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{LocGcLstmModel, ModelConfig, ModelKind, Scaler};
use crate::numerics::{backward, seeded_rng, SeededRng, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub calra_cycles: usize,
    pub bias_l2_lambda: f64,
    pub seed: u64,
    pub normalization: NormalizationMode,
    pub gcn_units: usize,
    pub gcn_steps: usize,
    pub lstm_units: usize,
    pub lstm_layers: usize,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::LocGclstm,
            epochs: 600,
            batch_size: 64,
            lr_max: 2.4e-5,
            lr_min: 1.5e-5,
            calra_cycles: 4,
            bias_l2_lambda: 0.01,
            seed: 0,
            normalization: NormalizationMode::Dynamic,
            gcn_units: 128,
            gcn_steps: 1,
            lstm_units: 256,
            lstm_layers: 2,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_owned()));
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return bad("need lr_max >= lr_min > 0");
        }
        if self.calra_cycles == 0 {
            return bad("calra_cycles must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) || self.rmsprop_eps <= 0.0 || self.bias_l2_lambda < 0.0 {
            return bad("rmsprop_rho must be in [0, 1), rmsprop_eps > 0, bias_l2_lambda >= 0");
        }
        Ok(())
    }

    pub fn schedule(&self) -> CalraSchedule {
        CalraSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            epochs: self.epochs,
            cycles: self.calra_cycles,
        }
    }

    pub fn model_config(&self, node_count: usize, feature_count: usize, lags: usize, horizon: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            node_count,
            feature_count,
            lags,
            horizon,
            gcn_units: self.gcn_units,
            gcn_steps: self.gcn_steps,
            lstm_units: vec![self.lstm_units; self.lstm_layers],
            normalization: self.normalization,
        }
    }
}

/// Learning rate for `epoch` under the config's warm-restart schedule.
pub fn calra_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.schedule().lr(epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub validation: Option<MetricsReport>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,val_RMSE,val_MAE,val_MAPE";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let (rmse, mae, mape) = match &r.validation {
            Some(v) => (
                v.rmse.to_string(),
                v.mae.to_string(),
                v.mape.map_or_else(|| "undefined".into(), |m| m.to_string()),
            ),
            None => Default::default(),
        };
        out.push_str(&format!("{},{},{},{rmse},{mae},{mape}\n", r.epoch, r.lr, r.train_loss));
    }
    out
}

pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest validation RMSE; equals `last` when no validation set is given.
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// One optimizer step on `samples`; returns the batch loss.
pub fn train_step(
    model: &mut LocGcLstmModel,
    optimizer: &mut RmsProp,
    samples: &[&Sample],
    lr: f64,
    lambda: f64,
) -> Result<f64> {
    let batch = model.make_batch(samples)?;
    let mut tape = Tape::new();
    let bindings = model.params.bind(&mut tape);
    let pred = model.forward_on_tape(&mut tape, &bindings, &batch)?;
    let truth = tape.constant(batch.targets);
    let biases: Vec<_> = model.lstm_bias_names().iter().map(|n| bindings.get(n)).collect();
    let loss = loss_on_tape(&mut tape, pred, truth, &biases, lambda)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    backward(loss, &tape, &mut model.params, &bindings)?;
    optimizer.step(&mut model.params, lr)?;
    Ok(value)
}

/// Raw-unit metrics of `model` over every sample of `set`.
pub fn evaluate_model(model: &LocGcLstmModel, set: &SampleSet) -> Result<MetricsReport> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let pred = model.predict_indices(set, &indices)?;
    let truth: Vec<f64> = indices.iter().flat_map(|&i| set.get(i).target.iter().copied()).collect();
    evaluate(&pred.concat(), &truth)
}

/// Trains on `set[train]` with shuffled mini-batches and the warm-restart
/// schedule. `validation` is only ever evaluated, once per epoch, to pick the
/// best checkpoint.
pub fn train(
    mut model: LocGcLstmModel,
    set: &SampleSet,
    train: &[usize],
    validation: Option<&SampleSet>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if !model.config.matches(&set.layout) {
        return Err(Error::Validation("model shape does not match the sample layout".into()));
    }
    let schedule = cfg.schedule();
    let mut optimizer = RmsProp::new(cfg.rmsprop_rho, cfg.rmsprop_eps);
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| set.get(i)).collect();
            let batch_loss = match train_step(&mut model, &mut optimizer, &samples, lr, cfg.bias_l2_lambda) {
                Err(Error::Numeric(msg)) => {
                    log::error!("epoch {epoch} batch {b}: {msg}");
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                other => other?,
            };
            weighted += batch_loss * chunk.len() as f64;
        }
        let train_loss = weighted / order.len() as f64;
        let validation_report = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_model(&model, v)?),
            _ => None,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {train_loss:.6}{}",
            validation_report.map_or(String::new(), |r| format!(" val RMSE {:.4}", r.rmse))
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            validation: validation_report,
        });
        if let Some(r) = validation_report {
            if best.as_ref().map_or(true, |(rmse, _)| r.rmse < *rmse) {
                best = Some((r.rmse, Checkpoint::capture(&model, cfg, &history)));
            }
        }
    }
    let last = Checkpoint::capture(&model, cfg, &history);
    let best = match best {
        Some((_, mut ckpt)) => {
            ckpt.history = history.clone();
            ckpt
        }
        None => last.clone(),
    };
    Ok(TrainOutcome { last, best, history })
}

/// Fits the scaler on `set[train]`, initializes a model from `cfg.seed`, and
/// trains it.
pub fn fit(
    cfg: &TrainConfig,
    graph: &RoadGraph,
    set: &SampleSet,
    train: &[usize],
    validation: Option<&SampleSet>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let l = &set.layout;
    let model_config = cfg.model_config(l.node_count, l.feature_count(), l.lags, l.horizon);
    let scaler = Scaler::fit(set, train)?;
    let mut rng = seeded_rng(cfg.seed);
    let model = LocGcLstmModel::new(model_config, graph.clone(), scaler, &mut rng)?;
    self::train(model, set, train, validation, cfg, &mut rng)
}
