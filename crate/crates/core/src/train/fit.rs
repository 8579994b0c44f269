use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::metrics::{MetricsAccumulator, MetricsReport};
use super::optim::{clip_global_norm, Adam};
use crate::data::{chronological_split, Batch, FlowDataset, RoadGraph, SampleIndex, Split, TimeRange, Windower};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::model::{batch_loss, forward, predict_raw, ModelParams};
use crate::rng::{fnv1a64, mix, Rng};

/// Seed of the stream `purpose` for the given counters.
pub fn stream_seed(seed: u64, purpose: &str, parts: &[u64]) -> u64 {
    mix(seed ^ fnv1a64(purpose.as_bytes()), parts)
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitStatus {
    Completed,
    /// Training stopped; the returned parameters are the last good checkpoint.
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters of the epoch with the lowest validation MAE.
    pub params: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub status: FitStatus,
}

/// A dataset, its graph and a training config bound together.
pub struct Experiment<'a> {
    pub cfg: TrainingConfig,
    pub windower: Windower<'a>,
    pub split: Split,
}

impl<'a> Experiment<'a> {
    pub fn new(data: &'a FlowDataset, graph: &RoadGraph, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let windower = Windower::new(data, graph, cfg.window_config())?;
        let split = chronological_split(data.len(), cfg.split, cfg.window + cfg.horizon)?;
        Ok(Experiment { cfg, windower, split })
    }

    /// Mean and population deviation of every raw reading in the training
    /// slice, or `(0, 1)` when flow scaling is off.
    pub fn flow_scaling(&self) -> (f64, f64) {
        if !self.cfg.normalize_flows {
            return (0.0, 1.0);
        }
        let data = self.windower.data();
        let n = data.node_count();
        let vals = &data.values()[self.split.train.start * n..self.split.train.end * n];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let std = var.sqrt();
        (mean, if std > 0.0 { std } else { 1.0 })
    }

    pub fn init_params(&self) -> Result<ModelParams> {
        let (mean, std) = self.flow_scaling();
        ModelParams::init(&self.cfg.model_config(mean, std), &mut Rng::derive(self.cfg.seed, "init"))
    }

    pub fn eval_stream(&self) -> u64 {
        stream_seed(self.cfg.seed, "eval-neighbors", &[])
    }

    /// Metrics over every window of `range`, neighbors drawn from the fixed
    /// evaluation stream.
    pub fn evaluate(&self, params: &ModelParams, range: TimeRange) -> Result<MetricsReport> {
        self.evaluate_with(range, |batch| predict_raw(params, batch))
    }

    /// Like [`Experiment::evaluate`] for any predictor of raw flows.
    pub fn evaluate_with<F>(&self, range: TimeRange, mut predict: F) -> Result<MetricsReport>
    where
        F: FnMut(&Batch) -> Result<Vec<f64>>,
    {
        let idx = self.windower.indices(range)?;
        let mut acc = MetricsAccumulator::new(self.cfg.horizon, self.cfg.mape_floor);
        let stream = self.eval_stream();
        for chunk in idx.chunks(self.cfg.batch_size) {
            let batch = self.windower.batch(chunk, stream)?;
            let y_hat = predict(&batch)?;
            let skip = self.cfg.exclude_imputed.then_some(batch.target_imputed.as_slice());
            acc.add(&batch.targets, &y_hat, skip)?;
        }
        acc.finish()
    }

    /// Shuffled training order of one epoch.
    pub fn epoch_order(&self, epoch: usize) -> Result<Vec<SampleIndex>> {
        let mut idx = self.windower.indices(self.split.train)?;
        Rng::new(stream_seed(self.cfg.seed, "shuffle", &[epoch as u64])).shuffle(&mut idx);
        Ok(idx)
    }

    pub fn fit(&self) -> Result<FitOutcome> {
        self.fit_from(self.init_params()?)
    }

    /// Epoch loop from given starting parameters.
    pub fn fit_from(&self, mut params: ModelParams) -> Result<FitOutcome> {
        let cfg = &self.cfg;
        let mut adam = Adam::new(&params.tensors, cfg.learning_rate);
        let mut best: Option<(f64, usize, ModelParams)> = None;
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut status = FitStatus::Completed;
        'epochs: for epoch in 1..=cfg.epochs {
            let order = self.epoch_order(epoch)?;
            let neighbors = stream_seed(cfg.seed, "neighbors", &[epoch as u64]);
            let mut dropout = Rng::new(stream_seed(cfg.seed, "dropout", &[epoch as u64]));
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = self.windower.batch(chunk, neighbors)?;
                match train_step(&mut params, &mut adam, &batch, cfg, &mut dropout) {
                    Ok(loss) => {
                        loss_sum += loss * batch.size as f64;
                        seen += batch.size;
                    }
                    Err(Error::NonFinite(reason)) => {
                        status = FitStatus::Diverged { epoch, reason };
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
            let val = match self.evaluate(&params, self.split.val) {
                Ok(v) => v,
                Err(Error::NonFinite(reason)) => {
                    status = FitStatus::Diverged { epoch, reason };
                    break;
                }
                Err(e) => return Err(e),
            };
            history.push(EpochRecord {
                epoch,
                train_loss: loss_sum / seen.max(1) as f64,
                val_mae: val.mae,
                val_rmse: val.rmse,
                val_mape: val.mape_percent,
            });
            if best.as_ref().map_or(true, |(mae, _, _)| val.mae < *mae) {
                best = Some((val.mae, epoch, params.clone()));
            }
        }
        let (best_epoch, params) = match best {
            Some((_, e, p)) => (Some(e), p),
            None => (None, params),
        };
        Ok(FitOutcome { params, best_epoch, history, status })
    }
}

/// Forward, backward and one Adam update on a batch. Returns the loss.
pub fn train_step(params: &mut ModelParams, adam: &mut Adam, batch: &Batch, cfg: &TrainingConfig, rng: &mut Rng) -> Result<f64> {
    let (loss, mut grads) = {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, params, batch, true, rng)?;
        let loss = batch_loss(&mut tape, &params.config, &pass, batch, cfg.huber_beta, cfg.literal_eq9)?;
        let g = tape.backward(loss)?;
        (tape.scalar(loss), pass.params.iter().map(|&v| g.wrt(v)).collect::<Vec<_>>())
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    if let Some(c) = cfg.clip {
        clip_global_norm(&mut grads, c);
    }
    adam.step(&mut params.tensors, &grads, &params.names)?;
    Ok(loss)
}

/// History as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
