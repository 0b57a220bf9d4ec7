use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{PluginError, PluginExample, PluginModel, PluginSpec, QueryTable};
use crate::autodiff::gradcheck::{check, Differentiable, GradCheckReport};
use crate::autodiff::{seeded_rng, Adam, ParamStore, SeededRng, Tape, Tensor};
use crate::config::Config;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a dev improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions::from_config(&Config::default(), 1)
    }
}

impl TrainOptions {
    pub fn from_config(cfg: &Config, seed: u64) -> Self {
        TrainOptions {
            lr: cfg.lr,
            epochs: cfg.epochs,
            patience: cfg.patience,
            batch_size: cfg.batch_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
}

/// Initialises a plugin from `train` and fits it. The returned model holds
/// the parameters of the epoch with the best dev accuracy (train accuracy
/// when `dev` is empty).
pub fn train_plugin(
    spec: PluginSpec,
    train: &[PluginExample],
    dev: &[PluginExample],
    opts: &TrainOptions,
    table: Option<&QueryTable>,
) -> Result<(PluginModel, TrainReport), PluginError> {
    if train.is_empty() {
        return Err(PluginError::EmptySplit("train"));
    }
    let mut model = PluginModel::new(spec, train, opts.seed)?;
    // Shuffling uses a stream separate from initialisation.
    let mut rng = seeded_rng(opts.seed.wrapping_add(0x5eed));
    let report = fit(&mut model, train, dev, opts, table, &mut rng)?;
    Ok((model, report))
}

/// Trains `model` in place with Adam on mean cross-entropy.
pub fn fit(
    model: &mut PluginModel,
    train: &[PluginExample],
    dev: &[PluginExample],
    opts: &TrainOptions,
    table: Option<&QueryTable>,
    rng: &mut SeededRng,
) -> Result<TrainReport, PluginError> {
    if train.is_empty() {
        return Err(PluginError::EmptySplit("train"));
    }
    for ex in train {
        ex.gold()?;
    }
    let selection = if dev.is_empty() { train } else { dev };
    let mut adam = Adam::new(&model.params, opts.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::with_capacity(opts.epochs);
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
            let batch: Vec<&PluginExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let (loss, _) = model.batch_loss(&mut tape, &bound, &batch, table)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(PluginError::NonFinite {
                    epoch,
                    batch: b,
                    loss: value,
                    ids: batch.iter().take(5).map(|e| e.instance.id.clone()).collect(),
                });
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = model.params.gradients(&bound, &grads);
            adam.step(&mut model.params, &grads);
        }
        let dev_accuracy = model.accuracy(selection, table)?;
        history.push(EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            dev_accuracy,
        });
        log::debug!("{} epoch {epoch}: loss {:.5} dev acc {dev_accuracy:.4}", model.kind(), total / train.len() as f64);
        if best.as_ref().is_none_or(|(acc, _, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                stopped_early = epoch < opts.epochs;
                break;
            }
        }
    }
    model.trained = true;
    let (best_dev_accuracy, best_epoch) = match best {
        Some((acc, epoch, params)) => {
            model.params = params;
            (acc, epoch)
        }
        None => (model.accuracy(selection, table)?, 0),
    };
    Ok(TrainReport {
        history,
        best_epoch,
        best_dev_accuracy,
        stopped_early,
    })
}

struct Probe<'a> {
    model: PluginModel,
    batch: &'a [PluginExample],
}

impl Probe<'_> {
    fn loss_and_grads(&self) -> Result<(f64, Vec<Tensor>), PluginError> {
        let refs: Vec<&PluginExample> = self.batch.iter().collect();
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let (loss, _) = self.model.batch_loss(&mut tape, &bound, &refs, None)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), self.model.params.gradients(&bound, &grads)))
    }
}

impl Differentiable for Probe<'_> {
    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.model.params]
    }

    fn loss(&mut self) -> f64 {
        self.loss_and_grads().expect("forward pass").0
    }
}

/// Compares tape gradients of the batch loss with central differences over
/// every trainable parameter of `model`.
pub fn grad_check_plugin(model: &PluginModel, batch: &[PluginExample], eps: f64) -> Result<GradCheckReport, PluginError> {
    if batch.is_empty() {
        return Err(PluginError::EmptySplit("grad-check"));
    }
    let mut probe = Probe {
        model: model.clone(),
        batch,
    };
    let (_, grads) = probe.loss_and_grads()?;
    Ok(check(&mut probe, &[grads], eps))
}

/// Tape gradients of the batch loss, one tensor per parameter.
pub fn plugin_gradients(model: &PluginModel, batch: &[PluginExample]) -> Result<Vec<Tensor>, PluginError> {
    let probe = Probe {
        model: model.clone(),
        batch,
    };
    Ok(probe.loss_and_grads()?.1)
}
