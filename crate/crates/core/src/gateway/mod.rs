//! Prompting an external chat-completion endpoint with plugin predictions.
//!
//! A [`PromptTemplate`] is filled with the sentence, the aspect and one
//! predicted label per `{plugin:<kind>}` slot; the prompt goes to a
//! [`ChatBackend`] and the reply is decoded with [`parse_label`]. Every call
//! made through [`infer`] can be written to an [`AuditLog`], and a
//! [`ReplayBackend`] built from that log answers the same requests offline.

mod audit;
mod client;
mod label;
pub mod mock;
mod template;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{read_audit_log, AuditEntry, AuditLog};
pub use client::{
    completions_url, extract_text, ChatBackend, ChatExchange, ChatRequest, HttpBackend, Message, ReplayBackend,
    RetryPolicy, API_KEY_ENV, CHAT_ROUTE,
};
pub use label::{parse_label, LabelParse};
pub use template::{PromptTemplate, Rendered, PLUGIN_TEMPLATE, ZERO_KNOWLEDGE_TEMPLATE};

use crate::corpus::{AbsaInstance, Polarity};
use crate::knowledge::KnowledgeKind;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("template offset {offset}: {message}")]
    Template { offset: usize, message: String },
    #[error("no prediction for slot {{plugin:{slot}}}")]
    MissingPrediction { slot: KnowledgeKind },
    #[error("authentication failed (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts; last failure: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("network: {0}")]
    Network(String),
    #[error("request not present in the replay log")]
    NotRecorded,
    #[error("{0}")]
    Io(String),
    #[error("{instances} instances but {predictions} plugin prediction maps")]
    LengthMismatch { instances: usize, predictions: usize },
}

impl GatewayError {
    /// Failures caused by the remote service rather than local inputs.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth { .. }
                | GatewayError::Status { .. }
                | GatewayError::RetriesExhausted { .. }
                | GatewayError::Malformed(_)
                | GatewayError::Network(_)
                | GatewayError::NotRecorded
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub concurrency: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: 16,
            concurrency: 4,
        }
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// `None` when the reply could not be decoded.
    pub prediction: Option<Polarity>,
    pub gold: Option<Polarity>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plugins: BTreeMap<KnowledgeKind, Polarity>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOutput {
    pub records: Vec<PredictionRecord>,
    /// `(instance id, kinds)` for predictions the template had no slot for.
    pub unused_predictions: Vec<(String, Vec<KnowledgeKind>)>,
}

/// Sends every request with at most `concurrency` in flight. Results keep
/// input order. The first failure stops further dispatch and is returned.
pub fn complete_all(
    backend: &dyn ChatBackend,
    requests: &[ChatRequest],
    concurrency: usize,
    audit: Option<&AuditLog>,
) -> Result<Vec<ChatExchange>, GatewayError> {
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<ChatExchange, GatewayError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let workers = concurrency.max(1).min(requests.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let mut result = backend.complete(&requests[i]);
                if let (Ok(ex), Some(log)) = (&result, audit) {
                    if let Err(e) = log.append(&ex.audit_entry()) {
                        result = Err(e);
                    }
                }
                if result.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().unwrap_or_else(|p| p.into_inner());
    let mut out = Vec::with_capacity(requests.len());
    let mut first_err = None;
    for r in slots.into_iter().flatten() {
        match r {
            Ok(ex) => out.push(ex),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Renders, sends and decodes one prompt per instance.
pub fn infer(
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    instances: &[AbsaInstance],
    plugin_predictions: &[BTreeMap<KnowledgeKind, Polarity>],
    settings: &InferenceSettings,
    audit: Option<&AuditLog>,
) -> Result<InferenceOutput, GatewayError> {
    if instances.len() != plugin_predictions.len() {
        return Err(GatewayError::LengthMismatch {
            instances: instances.len(),
            predictions: plugin_predictions.len(),
        });
    }
    let mut requests = Vec::with_capacity(instances.len());
    let mut unused_predictions = Vec::new();
    for (inst, preds) in instances.iter().zip(plugin_predictions) {
        let r = template.render(inst, preds)?;
        if !r.unused_predictions.is_empty() {
            log::warn!(
                "instance {}: template has no slot for {:?}",
                inst.id,
                r.unused_predictions.iter().map(|k| k.as_str()).collect::<Vec<_>>()
            );
            unused_predictions.push((inst.id.clone(), r.unused_predictions));
        }
        requests.push(ChatRequest::user(
            &settings.model,
            &r.text,
            settings.temperature,
            settings.max_tokens,
        ));
    }
    let exchanges = complete_all(backend, &requests, settings.concurrency, audit)?;
    let records = instances
        .iter()
        .zip(plugin_predictions)
        .zip(exchanges)
        .map(|((inst, preds), ex)| {
            let parsed = parse_label(&ex.text);
            PredictionRecord {
                id: inst.id.clone(),
                prediction: parsed.label(),
                gold: inst.gold,
                parse_failure: parsed.failure_reason(),
                reply: ex.text,
                plugins: preds.clone(),
            }
        })
        .collect();
    Ok(InferenceOutput {
        records,
        unused_predictions,
    })
}

pub fn write_predictions<W: Write>(mut w: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>, GatewayError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GatewayError::Io(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
