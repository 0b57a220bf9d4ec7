use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{HubError, HubModel, MicroLm};
use crate::autodiff::gradcheck::{check, Differentiable, GradCheckReport};
use crate::autodiff::{seeded_rng, softmax_slice, Adam, Bound, Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::corpus::{AbsaInstance, Polarity};
use crate::knowledge::KnowledgeBundle;
use crate::plugin::{argmax, EpochStats, PluginExample, PluginModel, PluginSpec, TrainOptions};

/// An instance with one bundle per plugin, in plugin order.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedExample {
    pub instance: AbsaInstance,
    pub bundles: Vec<KnowledgeBundle>,
}

/// Plugins and hub trained through a frozen micro LM. `lm_hash` pins the LM
/// checkpoint the model was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedModel {
    pub plugins: Vec<PluginModel>,
    pub hub: HubModel,
    pub lm_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
    /// L2 norm of the hub gradient for every optimisation step.
    pub hub_grad_norms: Vec<f64>,
    pub lm_hash: String,
}

struct Bindings {
    plugins: Vec<Bound>,
    hub: Bound,
    lm: Bound,
}

/// `h^P` appended to the prompt embeddings, then polarity logits at the last position.
pub fn fuse_and_forward(lm: &MicroLm, prompt: &[usize], hp: &[f64]) -> Result<[f64; 3], HubError> {
    if hp.len() != lm.config.dim {
        return Err(HubError::WidthMismatch {
            expected: lm.config.dim,
            found: hp.len(),
        });
    }
    let mut tape = Tape::new();
    let bound = lm.params.bind(&mut tape);
    let extra = tape.constant(Tensor::matrix(1, hp.len(), hp.to_vec())?);
    let hidden = lm.hidden(&mut tape, &bound, prompt, Some(extra))?;
    let logits = lm.polarity_logits(&mut tape, &bound, hidden)?;
    let v = tape.value(logits).data();
    Ok([v[0], v[1], v[2]])
}

impl FusedModel {
    /// One plugin per spec, vocabularies from `train`, hub from the summed plugin
    /// widths to the LM width.
    pub fn new(specs: &[PluginSpec], lm: &MicroLm, train: &[FusedExample], seed: u64) -> Result<Self, HubError> {
        if specs.is_empty() || specs.len() > 3 {
            return Err(HubError::PluginCount(specs.len()));
        }
        let mut plugins = Vec::with_capacity(specs.len());
        for (u, spec) in specs.iter().enumerate() {
            let examples = plugin_view(train, u);
            plugins.push(PluginModel::new(*spec, &examples, seed.wrapping_add(u as u64))?);
        }
        let input = specs.iter().map(|s| s.dim).sum();
        let mut rng = seeded_rng(seed.wrapping_add(0x4ab));
        Ok(FusedModel {
            plugins,
            hub: HubModel::new(input, lm.config.dim, &mut rng),
            lm_hash: lm.checkpoint_hash(),
        })
    }

    fn validate(&self, examples: &[FusedExample]) -> Result<(), HubError> {
        for ex in examples {
            if ex.bundles.len() != self.plugins.len() {
                return Err(HubError::BundleCount {
                    id: ex.instance.id.clone(),
                    expected: self.plugins.len(),
                    found: ex.bundles.len(),
                });
            }
            for (p, b) in self.plugins.iter().zip(&ex.bundles) {
                if p.kind() != b.kind {
                    return Err(HubError::Plugin(crate::plugin::PluginError::KindMismatch {
                        id: b.id.clone(),
                        expected: p.kind(),
                        found: b.kind,
                    }));
                }
            }
        }
        Ok(())
    }

    fn bind(&self, lm: &MicroLm, tape: &mut Tape) -> Bindings {
        Bindings {
            plugins: self.plugins.iter().map(|p| p.params.bind(tape)).collect(),
            hub: self.hub.params.bind(tape),
            lm: lm.params.bind(tape),
        }
    }

    /// `[B, d_lm]` hub outputs for a batch.
    fn hub_outputs(&self, tape: &mut Tape, b: &Bindings, batch: &[&FusedExample]) -> Result<Var, HubError> {
        let instances: Vec<&AbsaInstance> = batch.iter().map(|e| &e.instance).collect();
        let mut outs = Vec::with_capacity(self.plugins.len());
        for (u, plugin) in self.plugins.iter().enumerate() {
            let bundles: Vec<&KnowledgeBundle> = batch.iter().map(|e| &e.bundles[u]).collect();
            let queries = plugin.encode_batch(tape, &b.plugins[u], &instances, None)?;
            let (o, _) = plugin.attend_batch(tape, &b.plugins[u], queries, &bundles)?;
            outs.push(o);
        }
        let x = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        self.hub.forward(tape, &b.hub, x)
    }

    fn logits(&self, lm: &MicroLm, tape: &mut Tape, b: &Bindings, batch: &[&FusedExample]) -> Result<Vec<Var>, HubError> {
        let hp = self.hub_outputs(tape, b, batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let (ids, _) = lm.prompt_ids(&ex.instance);
            let extra = tape.slice_rows(hp, i, i + 1)?;
            let hidden = lm.hidden(tape, &b.lm, &ids, Some(extra))?;
            out.push(lm.polarity_logits(tape, &b.lm, hidden)?);
        }
        Ok(out)
    }

    fn loss(&self, lm: &MicroLm, tape: &mut Tape, b: &Bindings, batch: &[&FusedExample]) -> Result<Var, HubError> {
        let logits = self.logits(lm, tape, b, batch)?;
        let mut losses = Vec::with_capacity(batch.len());
        for (l, ex) in logits.into_iter().zip(batch) {
            let gold = ex
                .instance
                .gold
                .ok_or_else(|| HubError::MissingGold(ex.instance.id.clone()))?;
            losses.push(tape.cross_entropy(l, gold.index())?);
        }
        let total = tape.sum(&losses)?;
        Ok(tape.scale(total, 1.0 / batch.len() as f64))
    }

    /// Class distributions under the frozen LM.
    pub fn predict_batch(&self, lm: &MicroLm, examples: &[FusedExample]) -> Result<Vec<[f64; 3]>, HubError> {
        self.check_lm(lm)?;
        self.validate(examples)?;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            let refs: Vec<&FusedExample> = chunk.iter().collect();
            let mut tape = Tape::new();
            let b = self.bind(lm, &mut tape);
            for l in self.logits(lm, &mut tape, &b, &refs)? {
                let mut probs = [0.0; 3];
                softmax_slice(tape.value(l).data(), &mut probs);
                out.push(probs);
            }
        }
        Ok(out)
    }

    pub fn predict_labels(&self, lm: &MicroLm, examples: &[FusedExample]) -> Result<Vec<Polarity>, HubError> {
        Ok(self
            .predict_batch(lm, examples)?
            .iter()
            .map(|p| Polarity::from_index(argmax(p)).expect("three classes"))
            .collect())
    }

    pub fn accuracy(&self, lm: &MicroLm, examples: &[FusedExample]) -> Result<f64, HubError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let labels = self.predict_labels(lm, examples)?;
        let correct = labels
            .iter()
            .zip(examples)
            .filter(|(l, e)| Some(**l) == e.instance.gold)
            .count();
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Fails unless `lm` serialises to the checkpoint this model was built for.
    pub fn check_lm(&self, lm: &MicroLm) -> Result<(), HubError> {
        let found = lm.checkpoint_hash();
        if found != self.lm_hash {
            return Err(HubError::LmHashMismatch {
                expected: self.lm_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Parameter fingerprints of every trainable store, plugins first.
    pub fn fingerprints(&self) -> Vec<String> {
        self.plugins
            .iter()
            .map(|p| &p.params)
            .chain([&self.hub.params])
            .map(ParamStore::fingerprint)
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = json!({
            "type": "fused",
            "lm_hash": self.lm_hash,
            "hub": self.hub.header(),
            "plugins": self.plugins.iter().map(|p| p.header()).collect::<Vec<_>>(),
        });
        let mut records = Vec::new();
        for (u, p) in self.plugins.iter().enumerate() {
            records.extend(p.to_records(&format!("plugin{u}.")));
        }
        records.extend(self.hub.params.to_records("hub."));
        Checkpoint::new(header, records)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, HubError> {
        let bad = |m: &str| HubError::Checkpoint(m.to_string());
        if ckpt.header.get("type").and_then(|t| t.as_str()) != Some("fused") {
            return Err(bad("not a fused checkpoint"));
        }
        let headers = ckpt
            .header
            .get("plugins")
            .and_then(|p| p.as_array())
            .ok_or_else(|| bad("header missing plugin list"))?;
        let plugins = headers
            .iter()
            .enumerate()
            .map(|(u, h)| PluginModel::from_parts(h, &ckpt.params, &format!("plugin{u}.")))
            .collect::<Result<Vec<_>, _>>()?;
        let hub = HubModel::from_parts(
            ckpt.header.get("hub").ok_or_else(|| bad("header missing hub"))?,
            &ckpt.params,
            "hub.",
        )?;
        Ok(FusedModel {
            plugins,
            hub,
            lm_hash: ckpt.header_str("lm_hash")?.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HubError> {
        self.to_checkpoint()
            .save(path)
            .map_err(|e| HubError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HubError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn plugin_view(examples: &[FusedExample], u: usize) -> Vec<PluginExample> {
    examples
        .iter()
        .filter_map(|e| {
            e.bundles.get(u).map(|b| PluginExample {
                instance: e.instance.clone(),
                bundle: b.clone(),
            })
        })
        .collect()
}

/// Strategy 1: optimises plugin and hub parameters on polarity cross-entropy
/// read through the frozen `lm`. Keeps the best-dev parameters. Any change to
/// the LM checkpoint hash over the run is a hard error.
pub fn train_strategy1(
    lm: &MicroLm,
    model: &mut FusedModel,
    train: &[FusedExample],
    dev: &[FusedExample],
    opts: &TrainOptions,
) -> Result<FusedReport, HubError> {
    if train.is_empty() {
        return Err(HubError::EmptySplit("train"));
    }
    if lm.params.iter().any(|p| p.trainable) {
        return Err(HubError::LmNotFrozen);
    }
    model.check_lm(lm)?;
    model.validate(train)?;
    model.validate(dev)?;
    let before = lm.checkpoint_hash();
    let selection = if dev.is_empty() { train } else { dev };
    let mut rng = seeded_rng(opts.seed.wrapping_add(0x5eed));
    let mut plugin_opt: Vec<Adam> = model.plugins.iter().map(|p| Adam::new(&p.params, opts.lr)).collect();
    let mut hub_opt = Adam::new(&model.hub.params, opts.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, FusedModel)> = None;
    let mut history = Vec::new();
    let mut hub_grad_norms = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
            let batch: Vec<&FusedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let b = model.bind(lm, &mut tape);
            let loss = model.loss(lm, &mut tape, &b, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(HubError::NonFinite {
                    epoch,
                    batch: bi,
                    loss: value,
                });
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            for (u, plugin) in model.plugins.iter_mut().enumerate() {
                let g = plugin.params.gradients(&b.plugins[u], &grads);
                plugin_opt[u].step(&mut plugin.params, &g);
            }
            let g = model.hub.params.gradients(&b.hub, &grads);
            hub_grad_norms.push(g.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt());
            hub_opt.step(&mut model.hub.params, &g);
        }
        let dev_accuracy = model.accuracy(lm, selection)?;
        history.push(EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            dev_accuracy,
        });
        log::debug!("fused epoch {epoch}: loss {:.5} dev acc {dev_accuracy:.4}", total / train.len() as f64);
        if best.as_ref().is_none_or(|(acc, _, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                stopped_early = epoch < opts.epochs;
                break;
            }
        }
    }
    let after = lm.checkpoint_hash();
    if after != before {
        return Err(HubError::LmMutated { before, after });
    }
    let (best_dev_accuracy, best_epoch) = match best {
        Some((acc, epoch, snapshot)) => {
            *model = snapshot;
            (acc, epoch)
        }
        None => (model.accuracy(lm, selection)?, 0),
    };
    for p in &mut model.plugins {
        p.trained = true;
    }
    Ok(FusedReport {
        history,
        best_epoch,
        best_dev_accuracy,
        stopped_early,
        hub_grad_norms,
        lm_hash: after,
    })
}

struct Probe<'a> {
    lm: MicroLm,
    model: FusedModel,
    batch: &'a [FusedExample],
}

impl Probe<'_> {
    fn loss_and_grads(&self) -> Result<(f64, Vec<Vec<Tensor>>), HubError> {
        let refs: Vec<&FusedExample> = self.batch.iter().collect();
        let mut tape = Tape::new();
        let b = self.model.bind(&self.lm, &mut tape);
        let loss = self.model.loss(&self.lm, &mut tape, &b, &refs)?;
        let grads = tape.backward(loss)?;
        let mut all: Vec<Vec<Tensor>> = self
            .model
            .plugins
            .iter()
            .zip(&b.plugins)
            .map(|(p, bound)| p.params.gradients(bound, &grads))
            .collect();
        all.push(self.model.hub.params.gradients(&b.hub, &grads));
        all.push(self.lm.params.gradients(&b.lm, &grads));
        Ok((tape.value(loss).item(), all))
    }
}

impl Differentiable for Probe<'_> {
    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let mut out: Vec<&mut ParamStore> = self.model.plugins.iter_mut().map(|p| &mut p.params).collect();
        out.push(&mut self.model.hub.params);
        out.push(&mut self.lm.params);
        out
    }

    fn loss(&mut self) -> f64 {
        self.loss_and_grads().expect("forward pass").0
    }
}

/// Finite-difference check of the Strategy-1 loss over plugin and hub
/// parameters; the frozen LM is skipped.
pub fn grad_check_fused(lm: &MicroLm, model: &FusedModel, batch: &[FusedExample], eps: f64) -> Result<GradCheckReport, HubError> {
    if batch.is_empty() {
        return Err(HubError::EmptySplit("grad-check"));
    }
    let mut probe = Probe {
        lm: lm.clone(),
        model: model.clone(),
        batch,
    };
    let (_, grads) = probe.loss_and_grads()?;
    Ok(check(&mut probe, &grads, eps))
}

/// Tape gradients of the Strategy-1 loss for the hub parameters.
pub fn hub_gradients(lm: &MicroLm, model: &FusedModel, batch: &[FusedExample]) -> Result<Vec<Tensor>, HubError> {
    let probe = Probe {
        lm: lm.clone(),
        model: model.clone(),
        batch,
    };
    let (_, mut grads) = probe.loss_and_grads()?;
    grads.pop();
    Ok(grads.pop().expect("hub gradients"))
}
