use std::collections::{BTreeSet, HashMap};

use serde_json::json;

use super::attention::AttentionRecord;
use super::{Combine, PluginError, PluginExample, QueryTable, Vocab};
use crate::autodiff::{
    scaled_uniform, seeded_rng, softmax_slice, uniform, Bound, Checkpoint, ParamId, ParamRecord,
    ParamStore, SeededRng, Tape, Tensor, Var, EMBEDDING_INIT,
};
use crate::corpus::{AbsaInstance, Polarity};
use crate::knowledge::{KnowledgeBundle, KnowledgeKind};

/// Separator placed between the sentence and the aspect in the query input.
pub const SEP: &str = "[SEP]";

/// Shape-level settings of one plugin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PluginSpec {
    pub kind: KnowledgeKind,
    pub dim: usize,
    pub memory: usize,
    pub combine: Combine,
}

impl PluginSpec {
    pub fn new(kind: KnowledgeKind, dim: usize, memory: usize) -> Self {
        PluginSpec {
            kind,
            dim,
            memory,
            combine: Combine::Concat,
        }
    }

    /// Input width of the classifier.
    pub fn classifier_width(&self) -> usize {
        match self.combine {
            Combine::Concat => 2 * self.dim,
            Combine::Sum => self.dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ids {
    word_emb: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    key_emb: ParamId,
    value_emb: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
}

impl Ids {
    fn lookup(store: &ParamStore) -> Result<Self, PluginError> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| PluginError::Checkpoint(format!("missing parameter {name:?}")))
        };
        Ok(Ids {
            word_emb: get("word_emb")?,
            proj_w: get("proj_w")?,
            proj_b: get("proj_b")?,
            key_emb: get("key_emb")?,
            value_emb: get("value_emb")?,
            cls_w: get("cls_w")?,
            cls_b: get("cls_b")?,
        })
    }
}

/// Key-value memory plugin: a mean-pool query encoder over `X [SEP] A`, two
/// embedding tables for keys and values, and an affine 3-way classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct PluginModel {
    pub spec: PluginSpec,
    pub words: Vocab,
    pub keys: Vocab,
    pub values: Vocab,
    pub params: ParamStore,
    pub trained: bool,
    ids: Ids,
}

/// Class distribution and attention for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 3],
    pub label: Polarity,
    pub attention: AttentionRecord,
}

/// Tape handles produced by one batched forward pass.
pub struct Forward {
    /// `[B, d]` query vectors.
    pub queries: Var,
    /// `[B, d]` memory read-outs.
    pub outputs: Var,
    /// Attention weights `[m]` per instance, `None` for empty bundles.
    pub weights: Vec<Option<Var>>,
}

impl PluginModel {
    /// Builds vocabularies from the training examples (sentence and aspect
    /// tokens for the encoder; bundle keys and values for the memory) and
    /// initialises parameters from `seed`.
    pub fn new(spec: PluginSpec, train: &[PluginExample], seed: u64) -> Result<Self, PluginError> {
        let mut words = BTreeSet::new();
        let mut keys = BTreeSet::new();
        let mut values = BTreeSet::new();
        words.insert(SEP.to_string());
        for ex in train {
            if ex.bundle.kind != spec.kind {
                return Err(PluginError::KindMismatch {
                    id: ex.bundle.id.clone(),
                    expected: spec.kind,
                    found: ex.bundle.kind,
                });
            }
            words.extend(ex.instance.tokens.iter().cloned());
            for (k, v) in &ex.bundle.entries {
                keys.insert(k.clone());
                values.insert(v.clone());
            }
        }
        let mut rng = seeded_rng(seed);
        Ok(Self::with_vocabs(
            spec,
            Vocab::from_symbols(words),
            Vocab::from_symbols(keys),
            Vocab::from_symbols(values),
            &mut rng,
        ))
    }

    pub fn with_vocabs(spec: PluginSpec, words: Vocab, keys: Vocab, values: Vocab, rng: &mut SeededRng) -> Self {
        let d = spec.dim;
        let mut params = ParamStore::new();
        params.add("word_emb", uniform(&[words.len(), d], EMBEDDING_INIT, rng), true);
        params.add("proj_w", scaled_uniform(d, d, rng), true);
        params.add("proj_b", Tensor::zeros(&[d]), true);
        params.add("key_emb", uniform(&[keys.len(), d], EMBEDDING_INIT, rng), true);
        params.add("value_emb", uniform(&[values.len(), d], EMBEDDING_INIT, rng), true);
        params.add("cls_w", scaled_uniform(spec.classifier_width(), 3, rng), true);
        params.add("cls_b", Tensor::zeros(&[3]), true);
        let ids = Ids::lookup(&params).expect("all parameters added");
        PluginModel {
            spec,
            words,
            keys,
            values,
            params,
            trained: false,
            ids,
        }
    }

    pub fn kind(&self) -> KnowledgeKind {
        self.spec.kind
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.id(name).map(|id| self.params.value(id))
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), PluginError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| PluginError::Checkpoint(format!("no parameter {name:?}")))?;
        self.params.set_value(id, value)?;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(id) = self.params.id(name) {
            self.params.set_trainable(id, trainable);
        }
    }

    /// Encoder input ids for `X [SEP] A`.
    pub fn query_ids(&self, inst: &AbsaInstance) -> Vec<usize> {
        inst.tokens
            .iter()
            .map(|t| self.words.id(t))
            .chain(std::iter::once(self.words.id(SEP)))
            .chain(inst.aspect_tokens().iter().map(|t| self.words.id(t)))
            .collect()
    }

    /// Bundle entries as `(key ids, value ids)`, truncated to the memory size.
    pub fn entry_ids(&self, bundle: &KnowledgeBundle) -> (Vec<usize>, Vec<usize>) {
        bundle
            .entries
            .iter()
            .take(self.spec.memory)
            .map(|(k, v)| (self.keys.id(k), self.values.id(v)))
            .unzip()
    }

    /// `[B, d]` query vectors: projected mean of the `X [SEP] A` embeddings,
    /// or rows of `table` when precomputed vectors are supplied.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        instances: &[&AbsaInstance],
        table: Option<&QueryTable>,
    ) -> Result<Var, PluginError> {
        let b = instances.len();
        let d = self.spec.dim;
        if let Some(table) = table {
            let mut data = Vec::with_capacity(b * d);
            for inst in instances {
                data.extend_from_slice(table.vector(&inst.id, d)?);
            }
            return Ok(tape.constant(Tensor::matrix(b, d, data)?));
        }
        let mut all = Vec::new();
        let mut spans = Vec::with_capacity(b);
        for inst in instances {
            let ids = self.query_ids(inst);
            spans.push((all.len(), ids.len()));
            all.extend(ids);
        }
        let n = all.len();
        let mut avg = vec![0.0; b * n];
        for (row, &(start, len)) in spans.iter().enumerate() {
            let w = 1.0 / len as f64;
            avg[row * n + start..row * n + start + len].fill(w);
        }
        let emb = tape.embedding(bound.var(self.ids.word_emb), &all)?;
        let avg = tape.constant(Tensor::matrix(b, n, avg)?);
        let pooled = tape.matmul(avg, emb)?;
        let projected = tape.matmul(pooled, bound.var(self.ids.proj_w))?;
        Ok(tape.add_row(projected, bound.var(self.ids.proj_b))?)
    }

    /// Memory read-out for every row of `queries` against its bundle.
    pub fn attend_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        queries: Var,
        bundles: &[&KnowledgeBundle],
    ) -> Result<(Var, Vec<Option<Var>>), PluginError> {
        let d = self.spec.dim;
        let mut key_ids = Vec::new();
        let mut value_ids = Vec::new();
        let mut spans = Vec::with_capacity(bundles.len());
        for b in bundles {
            let (k, v) = self.entry_ids(b);
            spans.push((key_ids.len(), k.len()));
            key_ids.extend(k);
            value_ids.extend(v);
        }
        let tables = if key_ids.is_empty() {
            None
        } else {
            Some((
                tape.embedding(bound.var(self.ids.key_emb), &key_ids)?,
                tape.embedding(bound.var(self.ids.value_emb), &value_ids)?,
            ))
        };
        let mut rows = Vec::with_capacity(bundles.len());
        let mut weights = Vec::with_capacity(bundles.len());
        for (i, &(start, m)) in spans.iter().enumerate() {
            let Some((keys, values)) = tables.filter(|_| m > 0) else {
                rows.push(tape.constant(Tensor::zeros(&[1, d])));
                weights.push(None);
                continue;
            };
            let h = tape.slice_rows(queries, i, i + 1)?;
            let h = tape.reshape(h, &[d, 1])?;
            let k = tape.slice_rows(keys, start, start + m)?;
            let v = tape.slice_rows(values, start, start + m)?;
            let scores = tape.matmul(k, h)?;
            let scores = tape.reshape(scores, &[m])?;
            let p = tape.softmax(scores)?;
            let p_row = tape.reshape(p, &[1, m])?;
            rows.push(tape.matmul(p_row, v)?);
            weights.push(Some(p));
        }
        Ok((tape.concat(&rows, 0)?, weights))
    }

    /// `[B, 3]` classifier logits from read-outs and queries.
    pub fn classify(&self, tape: &mut Tape, bound: &Bound, outputs: Var, queries: Var) -> Result<Var, PluginError> {
        let z = match self.spec.combine {
            Combine::Concat => tape.concat(&[outputs, queries], 1)?,
            Combine::Sum => tape.add(outputs, queries)?,
        };
        let logits = tape.matmul(z, bound.var(self.ids.cls_w))?;
        Ok(tape.add_row(logits, bound.var(self.ids.cls_b))?)
    }

    /// Query encoding and memory read-out for a batch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&PluginExample],
        table: Option<&QueryTable>,
    ) -> Result<Forward, PluginError> {
        for ex in batch {
            if ex.bundle.kind != self.spec.kind {
                return Err(PluginError::KindMismatch {
                    id: ex.bundle.id.clone(),
                    expected: self.spec.kind,
                    found: ex.bundle.kind,
                });
            }
        }
        let instances: Vec<&AbsaInstance> = batch.iter().map(|e| &e.instance).collect();
        let bundles: Vec<&KnowledgeBundle> = batch.iter().map(|e| &e.bundle).collect();
        let queries = self.encode_batch(tape, bound, &instances, table)?;
        let (outputs, weights) = self.attend_batch(tape, bound, queries, &bundles)?;
        Ok(Forward {
            queries,
            outputs,
            weights,
        })
    }

    /// Mean cross-entropy over the batch, plus the `[B, 3]` logits.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&PluginExample],
        table: Option<&QueryTable>,
    ) -> Result<(Var, Var), PluginError> {
        let f = self.forward(tape, bound, batch, table)?;
        let logits = self.classify(tape, bound, f.outputs, f.queries)?;
        let mut losses = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let gold = ex.gold()?;
            let row = tape.row(logits, i)?;
            losses.push(tape.cross_entropy(row, gold.index())?);
        }
        let total = tape.sum(&losses)?;
        Ok((tape.scale(total, 1.0 / batch.len() as f64), logits))
    }

    /// `h_XA` for one instance.
    pub fn encode_query(&self, inst: &AbsaInstance) -> Result<Vec<f64>, PluginError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let h = self.encode_batch(&mut tape, &bound, &[inst], None)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Key and value embedding rows for the (truncated) bundle, each `[m, d]`.
    pub fn memory_rows(&self, bundle: &KnowledgeBundle) -> (Tensor, Tensor) {
        let (k, v) = self.entry_ids(bundle);
        let gather = |table: &Tensor, ids: &[usize]| {
            let d = table.cols();
            let data: Vec<f64> = ids.iter().flat_map(|&i| table.row(i).to_vec()).collect();
            Tensor::new(vec![ids.len(), d], data).expect("gathered rows")
        };
        (
            gather(self.params.value(self.ids.key_emb), &k),
            gather(self.params.value(self.ids.value_emb), &v),
        )
    }

    pub fn predict(&self, ex: &PluginExample, table: Option<&QueryTable>) -> Result<Prediction, PluginError> {
        Ok(self.predict_batch(std::slice::from_ref(ex), table)?.remove(0))
    }

    /// Forward pass without gradients, in chunks of 64.
    pub fn predict_batch(&self, examples: &[PluginExample], table: Option<&QueryTable>) -> Result<Vec<Prediction>, PluginError> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            let refs: Vec<&PluginExample> = chunk.iter().collect();
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let f = self.forward(&mut tape, &bound, &refs, table)?;
            let logits = self.classify(&mut tape, &bound, f.outputs, f.queries)?;
            let lv = tape.value(logits);
            let ov = tape.value(f.outputs);
            for (i, w) in f.weights.iter().enumerate() {
                let mut probs = [0.0; 3];
                softmax_slice(lv.row(i), &mut probs);
                let label = Polarity::from_index(argmax(&probs)).expect("three classes");
                let attention = AttentionRecord {
                    weights: w.map(|w| tape.value(w).data().to_vec()).unwrap_or_default(),
                    output: ov.row(i).to_vec(),
                    empty: w.is_none(),
                };
                out.push(Prediction {
                    probs,
                    label,
                    attention,
                });
            }
        }
        Ok(out)
    }

    /// Fraction of examples whose argmax matches the gold label.
    pub fn accuracy(&self, examples: &[PluginExample], table: Option<&QueryTable>) -> Result<f64, PluginError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_batch(examples, table)?;
        let mut correct = 0;
        for (p, ex) in preds.iter().zip(examples) {
            if p.label == ex.gold()? {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    pub fn header(&self) -> serde_json::Value {
        json!({
            "type": "plugin",
            "kind": self.spec.kind,
            "dim": self.spec.dim,
            "memory": self.spec.memory,
            "combine": self.spec.combine,
            "encoder": "mean-pool",
            "trained": self.trained,
            "word_vocab_hash": self.words.fingerprint(),
            "key_vocab_hash": self.keys.fingerprint(),
            "value_vocab_hash": self.values.fingerprint(),
            "word_vocab": self.words.symbols(),
            "key_vocab": self.keys.symbols(),
            "value_vocab": self.values.symbols(),
        })
    }

    pub fn to_records(&self, prefix: &str) -> Vec<ParamRecord> {
        self.params.to_records(prefix)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.header(), self.to_records(""))
    }

    /// Rebuilds a plugin from a header and the records under `prefix`.
    pub fn from_parts(header: &serde_json::Value, records: &[ParamRecord], prefix: &str) -> Result<Self, PluginError> {
        let bad = |m: String| PluginError::Checkpoint(m);
        if header.get("type").and_then(|t| t.as_str()) != Some("plugin") {
            return Err(bad("not a plugin checkpoint".into()));
        }
        let field = |key: &str| header.get(key).ok_or_else(|| bad(format!("header missing {key:?}")));
        let kind: KnowledgeKind = serde_json::from_value(field("kind")?.clone()).map_err(|e| bad(e.to_string()))?;
        let combine: Combine = serde_json::from_value(field("combine")?.clone()).map_err(|e| bad(e.to_string()))?;
        let number = |key: &str| {
            field(key)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| bad(format!("header field {key:?} is not an integer")))
        };
        let spec = PluginSpec {
            kind,
            dim: number("dim")?,
            memory: number("memory")?,
            combine,
        };
        let vocab = |name: &str| -> Result<Vocab, PluginError> {
            let list: Vec<String> =
                serde_json::from_value(field(&format!("{name}_vocab"))?.clone()).map_err(|e| bad(e.to_string()))?;
            let v = Vocab::from_list(list).map_err(bad)?;
            let hash = field(&format!("{name}_vocab_hash"))?.as_str().unwrap_or_default();
            if v.fingerprint() != hash {
                return Err(bad(format!("{name} vocabulary does not match its recorded hash")));
            }
            Ok(v)
        };
        let params = ParamStore::from_records(records, prefix)?;
        let ids = Ids::lookup(&params)?;
        let (words, keys, values) = (vocab("word")?, vocab("key")?, vocab("value")?);
        let expect = |id: ParamId, shape: [usize; 2]| {
            let got = params.value(id).shape();
            if got != shape {
                return Err(bad(format!("{} has shape {got:?}, expected {shape:?}", params.get(id).name)));
            }
            Ok(())
        };
        expect(ids.word_emb, [words.len(), spec.dim])?;
        expect(ids.key_emb, [keys.len(), spec.dim])?;
        expect(ids.value_emb, [values.len(), spec.dim])?;
        expect(ids.proj_w, [spec.dim, spec.dim])?;
        expect(ids.cls_w, [spec.classifier_width(), 3])?;
        Ok(PluginModel {
            spec,
            words,
            keys,
            values,
            params,
            trained: header.get("trained").and_then(|t| t.as_bool()).unwrap_or(false),
            ids,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PluginError> {
        Self::from_parts(&ckpt.header, &ckpt.params, "")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PluginError> {
        self.to_checkpoint()
            .save(path)
            .map_err(|e| PluginError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PluginError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Joins instances with their bundles by id.
pub fn pair_examples(
    instances: &[AbsaInstance],
    bundles: &[KnowledgeBundle],
) -> Result<Vec<PluginExample>, PluginError> {
    let by_id: HashMap<&str, &KnowledgeBundle> = bundles.iter().map(|b| (b.id.as_str(), b)).collect();
    instances
        .iter()
        .map(|inst| {
            let bundle = by_id
                .get(inst.id.as_str())
                .ok_or_else(|| PluginError::MissingBundle(inst.id.clone()))?;
            Ok(PluginExample {
                instance: inst.clone(),
                bundle: (*bundle).clone(),
            })
        })
        .collect()
}
