use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Polarity;
use crate::plugin::{memory_attend, PluginExample, PluginModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub key: String,
    pub value: String,
    pub weight: f64,
}

/// Memory weights for one instance, heaviest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub id: String,
    pub sentence: String,
    pub aspect: String,
    pub prediction: Polarity,
    pub gold: Option<Polarity>,
    pub entries: Vec<AttentionEntry>,
}

/// Reports for `examples`, plus warnings (an untrained model is reported but
/// flagged).
pub fn attention_reports(
    model: &PluginModel,
    examples: &[PluginExample],
) -> Result<(Vec<AttentionReport>, Vec<String>), EvalError> {
    let mut warnings = Vec::new();
    if !model.trained {
        warnings.push("model has not been trained; attention weights are from the initialisation".to_string());
    }
    let preds = model.predict_batch(examples, None)?;
    let mut out = Vec::with_capacity(examples.len());
    for (ex, pred) in examples.iter().zip(preds) {
        let h = model.encode_query(&ex.instance)?;
        let (k, v) = model.memory_rows(&ex.bundle);
        let rec = memory_attend(&h, &k, &v);
        let bundle = ex.bundle.truncated(model.spec.memory);
        let mut entries: Vec<AttentionEntry> = bundle
            .entries
            .iter()
            .zip(&rec.weights)
            .map(|((key, value), &weight)| AttentionEntry {
                key: key.clone(),
                value: value.clone(),
                weight,
            })
            .collect();
        entries.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        out.push(AttentionReport {
            id: ex.instance.id.clone(),
            sentence: ex.instance.sentence_text(),
            aspect: ex.instance.aspect_text(),
            prediction: pred.label,
            gold: ex.instance.gold,
            entries,
        });
    }
    Ok((out, warnings))
}

pub fn write_attention_jsonl<W: Write>(mut w: W, reports: &[AttentionReport]) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_attention_jsonl<R: BufRead>(r: R) -> Result<Vec<AttentionReport>, EvalError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| EvalError::Io(e.to_string()))?);
        }
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained HTML page; cell shade tracks the weight.
pub fn render_attention_html(reports: &[AttentionReport]) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Memory attention</title>\n<style>\
body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin-bottom:1.5em}\
td,th{border:1px solid #ccc;padding:3px 8px;text-align:left}.w{font-family:monospace}\
</style></head><body>\n",
    );
    for r in reports {
        let gold = r.gold.map(|g| g.as_str()).unwrap_or("-");
        html.push_str(&format!(
            "<h3>{}</h3>\n<p>{}<br>aspect: <b>{}</b>; predicted {}; gold {}</p>\n<table><tr><th>key</th><th>value</th><th>weight</th></tr>\n",
            escape(&r.id),
            escape(&r.sentence),
            escape(&r.aspect),
            r.prediction,
            gold
        ));
        if r.entries.is_empty() {
            html.push_str("<tr><td colspan=\"3\">(empty memory)</td></tr>\n");
        }
        for e in &r.entries {
            html.push_str(&format!(
                "<tr style=\"background:rgba(200,40,40,{:.3})\"><td>{}</td><td>{}</td><td class=\"w\">{:.4}</td></tr>\n",
                e.weight.clamp(0.0, 1.0),
                escape(&e.key),
                escape(&e.value),
                e.weight
            ));
        }
        html.push_str("</table>\n");
    }
    html.push_str("</body></html>\n");
    html
}

/// Writes `attention.jsonl` and `attention.html` into `dir`.
pub fn dump_attention(
    model: &PluginModel,
    examples: &[PluginExample],
    dir: &Path,
) -> Result<(Vec<AttentionReport>, Vec<String>), EvalError> {
    let (reports, warnings) = attention_reports(model, examples)?;
    std::fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut buf = Vec::new();
    write_attention_jsonl(&mut buf, &reports).map_err(|e| EvalError::Io(e.to_string()))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| EvalError::Io(format!("{}: {e}", p.display())))
    };
    write("attention.jsonl", &buf)?;
    write("attention.html", render_attention_html(&reports).as_bytes())?;
    Ok((reports, warnings))
}
