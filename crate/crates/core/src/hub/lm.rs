use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HubError;
use crate::autodiff::{
    hex, scaled_uniform, seeded_rng, uniform, Bound, Checkpoint, ParamId, ParamStore, Tape, Tensor, Var,
    EMBEDDING_INIT,
};
use crate::corpus::AbsaInstance;
use crate::plugin::{Vocab, SEP};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    /// Longest input including the fused position.
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            dim: 32,
            heads: 2,
            layers: 2,
            ffn: 64,
            max_len: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct LmIds {
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    word_head: ParamId,
    pol_w: ParamId,
    pol_b: ParamId,
}

/// Small pre-LayerNorm causal transformer with a word head and a dedicated
/// 3-way polarity head. Every parameter is frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroLm {
    pub config: LmConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    ids: LmIds,
}

/// The `max_size - 2` most frequent tokens (ties broken alphabetically) plus `[SEP]`.
pub fn lm_vocab(instances: &[AbsaInstance], max_size: usize) -> Vocab {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for inst in instances {
        for t in &inst.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(2));
    Vocab::from_symbols(ranked.into_iter().map(|(w, _)| w).chain([SEP]))
}

impl MicroLm {
    /// Random initialisation from `seed`; parameters are created frozen.
    pub fn new(config: LmConfig, vocab: Vocab, seed: u64) -> Result<Self, HubError> {
        if config.dim == 0 || config.heads == 0 || config.dim % config.heads != 0 {
            return Err(HubError::Config(format!(
                "LM width {} must be a positive multiple of the head count {}",
                config.dim, config.heads
            )));
        }
        if config.max_len < 2 {
            return Err(HubError::Config("LM max_len must be at least 2".into()));
        }
        let mut rng = seeded_rng(seed);
        let (d, f, v) = (config.dim, config.ffn, vocab.len());
        let mut p = ParamStore::new();
        p.add("tok_emb", uniform(&[v, d], EMBEDDING_INIT, &mut rng), false);
        p.add("pos_emb", uniform(&[config.max_len, d], EMBEDDING_INIT, &mut rng), false);
        for l in 0..config.layers {
            p.add(format!("l{l}.ln1_g"), Tensor::filled(&[d], 1.0), false);
            p.add(format!("l{l}.ln1_b"), Tensor::zeros(&[d]), false);
            for w in ["wq", "wk", "wv", "wo"] {
                p.add(format!("l{l}.{w}"), scaled_uniform(d, d, &mut rng), false);
            }
            p.add(format!("l{l}.ln2_g"), Tensor::filled(&[d], 1.0), false);
            p.add(format!("l{l}.ln2_b"), Tensor::zeros(&[d]), false);
            p.add(format!("l{l}.ff1_w"), scaled_uniform(d, f, &mut rng), false);
            p.add(format!("l{l}.ff1_b"), Tensor::zeros(&[f]), false);
            p.add(format!("l{l}.ff2_w"), scaled_uniform(f, d, &mut rng), false);
            p.add(format!("l{l}.ff2_b"), Tensor::zeros(&[d]), false);
        }
        p.add("lnf_g", Tensor::filled(&[d], 1.0), false);
        p.add("lnf_b", Tensor::zeros(&[d]), false);
        p.add("word_head", scaled_uniform(d, v, &mut rng), false);
        p.add("pol_w", scaled_uniform(d, 3, &mut rng), false);
        p.add("pol_b", Tensor::zeros(&[3]), false);
        Self::from_store(config, vocab, p)
    }

    fn from_store(config: LmConfig, vocab: Vocab, mut params: ParamStore) -> Result<Self, HubError> {
        let get = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| HubError::Checkpoint(format!("LM parameter {name:?} missing")))
        };
        let layers = (0..config.layers)
            .map(|l| {
                let g = |n: &str| get(&format!("l{l}.{n}"));
                Ok(LayerIds {
                    ln1_g: g("ln1_g")?,
                    ln1_b: g("ln1_b")?,
                    wq: g("wq")?,
                    wk: g("wk")?,
                    wv: g("wv")?,
                    wo: g("wo")?,
                    ln2_g: g("ln2_g")?,
                    ln2_b: g("ln2_b")?,
                    ff1_w: g("ff1_w")?,
                    ff1_b: g("ff1_b")?,
                    ff2_w: g("ff2_w")?,
                    ff2_b: g("ff2_b")?,
                })
            })
            .collect::<Result<Vec<_>, HubError>>()?;
        let ids = LmIds {
            tok_emb: get("tok_emb")?,
            pos_emb: get("pos_emb")?,
            layers,
            lnf_g: get("lnf_g")?,
            lnf_b: get("lnf_b")?,
            word_head: get("word_head")?,
            pol_w: get("pol_w")?,
            pol_b: get("pol_b")?,
        };
        let expect = |id: ParamId, shape: &[usize]| {
            let got = params.value(id).shape();
            if got != shape {
                return Err(HubError::Checkpoint(format!(
                    "LM parameter {} has shape {got:?}, expected {shape:?}",
                    params.get(id).name
                )));
            }
            Ok(())
        };
        expect(ids.tok_emb, &[vocab.len(), config.dim])?;
        expect(ids.pos_emb, &[config.max_len, config.dim])?;
        expect(ids.word_head, &[config.dim, vocab.len()])?;
        params.freeze_all();
        Ok(MicroLm {
            config,
            vocab,
            params,
            ids,
        })
    }

    /// Prompt ids for `X [SEP] A`, keeping the last `max_len - 1` tokens so the
    /// fused position always fits. The second value counts unknown tokens.
    pub fn prompt_ids(&self, inst: &AbsaInstance) -> (Vec<usize>, usize) {
        let words: Vec<&str> = inst
            .tokens
            .iter()
            .map(String::as_str)
            .chain([SEP])
            .chain(inst.aspect_tokens().iter().map(String::as_str))
            .collect();
        let unknown = words.iter().filter(|w| !self.vocab.contains(w)).count();
        let keep = self.config.max_len - 1;
        let start = words.len().saturating_sub(keep);
        (words[start..].iter().map(|w| self.vocab.id(w)).collect(), unknown)
    }

    /// Final-layer hidden states `[n(+1), d]` for `ids`, with `extra` (`[1, d]`)
    /// appended after the token embeddings when given.
    pub fn hidden(&self, tape: &mut Tape, bound: &Bound, ids: &[usize], extra: Option<Var>) -> Result<Var, HubError> {
        let n = ids.len();
        if n == 0 {
            return Err(HubError::EmptyPrompt);
        }
        if n + extra.is_some() as usize > self.config.max_len {
            return Err(HubError::Config(format!(
                "sequence of {} positions exceeds max_len {}",
                n + extra.is_some() as usize,
                self.config.max_len
            )));
        }
        let d = self.config.dim;
        let tok = tape.embedding(bound.var(self.ids.tok_emb), ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.embedding(bound.var(self.ids.pos_emb), &positions)?;
        let mut x = tape.add(tok, pos)?;
        if let Some(e) = extra {
            x = tape.concat(&[x, e], 0)?;
        }
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &self.ids.layers {
            let v = |id: ParamId| bound.var(id);
            let h = tape.layernorm(x, v(l.ln1_g), v(l.ln1_b), LN_EPS)?;
            let q = tape.matmul(h, v(l.wq))?;
            let k = tape.matmul(h, v(l.wk))?;
            let val = tape.matmul(h, v(l.wv))?;
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let (a, b) = (head * dh, (head + 1) * dh);
                let qh = tape.slice_cols(q, a, b)?;
                let kh = tape.slice_cols(k, a, b)?;
                let vh = tape.slice_cols(val, a, b)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.causal_softmax(scores)?;
                outs.push(tape.matmul(attn, vh)?);
            }
            let cat = tape.concat(&outs, 1)?;
            let proj = tape.matmul(cat, v(l.wo))?;
            x = tape.add(x, proj)?;
            let h = tape.layernorm(x, v(l.ln2_g), v(l.ln2_b), LN_EPS)?;
            let f = tape.matmul(h, v(l.ff1_w))?;
            let f = tape.add_row(f, v(l.ff1_b))?;
            let f = tape.relu(f);
            let f = tape.matmul(f, v(l.ff2_w))?;
            let f = tape.add_row(f, v(l.ff2_b))?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layernorm(x, bound.var(self.ids.lnf_g), bound.var(self.ids.lnf_b), LN_EPS)?)
    }

    /// Polarity logits `[3]` read at the last position of `hidden`.
    pub fn polarity_logits(&self, tape: &mut Tape, bound: &Bound, hidden: Var) -> Result<Var, HubError> {
        let last = tape.value(hidden).rows() - 1;
        let h = tape.slice_rows(hidden, last, last + 1)?;
        let y = tape.matmul(h, bound.var(self.ids.pol_w))?;
        let y = tape.add_row(y, bound.var(self.ids.pol_b))?;
        Ok(tape.reshape(y, &[3])?)
    }

    /// Next-word logits `[|V|]` at the last position of `hidden`.
    pub fn word_logits(&self, tape: &mut Tape, bound: &Bound, hidden: Var) -> Result<Var, HubError> {
        let last = tape.value(hidden).rows() - 1;
        let h = tape.slice_rows(hidden, last, last + 1)?;
        let y = tape.matmul(h, bound.var(self.ids.word_head))?;
        Ok(tape.reshape(y, &[self.vocab.len()])?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = serde_json::json!({
            "type": "micro-lm",
            "config": self.config,
            "vocab": self.vocab.symbols(),
            "vocab_hash": self.vocab.fingerprint(),
        });
        Checkpoint::new(header, self.params.to_records(""))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, HubError> {
        let bad = |m: String| HubError::Checkpoint(m);
        if ckpt.header.get("type").and_then(|t| t.as_str()) != Some("micro-lm") {
            return Err(bad("not a micro-LM checkpoint".into()));
        }
        let config: LmConfig = serde_json::from_value(ckpt.header.get("config").cloned().unwrap_or_default())
            .map_err(|e| bad(format!("LM config: {e}")))?;
        let list: Vec<String> = serde_json::from_value(ckpt.header.get("vocab").cloned().unwrap_or_default())
            .map_err(|e| bad(format!("LM vocab: {e}")))?;
        let vocab = Vocab::from_list(list).map_err(bad)?;
        if ckpt.header_str("vocab_hash")? != vocab.fingerprint() {
            return Err(bad("LM vocabulary does not match its recorded hash".into()));
        }
        Self::from_store(config, vocab, ParamStore::from_records(&ckpt.params, "")?)
    }

    /// SHA-256 of the serialised checkpoint bytes.
    pub fn checkpoint_hash(&self) -> String {
        hex(&Sha256::digest(self.to_checkpoint().to_bytes()))
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
