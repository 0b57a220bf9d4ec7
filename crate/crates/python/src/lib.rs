//! Python bindings for synplug: corpora, knowledge extraction, plugin
//! training and inference, metrics and prompt rendering.
//!
//! Structured results (metrics, training reports, attention) come back as
//! plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use synplug::autodiff::Tensor;
use synplug::corpus::load_split;
use synplug::eval::{attention_reports, evaluate_plugin};
use synplug::gateway::PromptTemplate;
use synplug::knowledge::{extract_dep_pairs, extract_split, ExtractConfig, KnowledgeBundle};
use synplug::plugin::{memory_attend, pair_examples, train_plugin, PluginExample, PluginModel, PluginSpec, TrainOptions};
use synplug::synthetic::{bar_service_example, planted_corpus, PlantedRule};
use synplug::{KnowledgeKind, ParsedInstance, Polarity};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_kind(s: &str) -> PyResult<KnowledgeKind> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown knowledge kind {s:?}")))
}

/// An ABSA instance together with whichever parses it carries.
#[pyclass(name = "Instance", module = "synplug_py", from_py_object)]
#[derive(Clone)]
pub struct PyInstance {
    inner: ParsedInstance,
}

#[pymethods]
impl PyInstance {
    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.instance.tokens.clone()
    }

    /// Half-open `(start, end)` token range.
    #[getter]
    fn aspect(&self) -> (usize, usize) {
        (self.inner.instance.aspect.start, self.inner.instance.aspect.end)
    }

    #[getter]
    fn gold(&self) -> Option<&'static str> {
        self.inner.instance.gold.map(Polarity::as_str)
    }

    fn sentence(&self) -> String {
        self.inner.instance.sentence_text()
    }

    /// `(word, rel, order, position)` for every pair one or two arcs from the aspect.
    fn dep_pairs(&self) -> PyResult<Vec<(String, String, u8, usize)>> {
        Ok(extract_dep_pairs(&self.inner)
            .map_err(value_err)?
            .into_iter()
            .map(|p| (p.word, p.rel, p.order, p.position))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(id={:?}, aspect={:?}, gold={:?})",
            self.inner.id(),
            self.inner.instance.aspect_text(),
            self.gold()
        )
    }
}

/// Key/value memory entries of one kind for one instance.
#[pyclass(name = "Bundle", module = "synplug_py", from_py_object)]
#[derive(Clone)]
pub struct PyBundle {
    inner: KnowledgeBundle,
}

#[pymethods]
impl PyBundle {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn entries(&self) -> Vec<(String, String)> {
        self.inner.entries.clone()
    }

    #[getter]
    fn fallback(&self) -> bool {
        self.inner.fallback
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Bundle(id={:?}, kind={}, entries={:?})", self.inner.id, self.inner.kind, self.inner.entries)
    }
}

fn wrap(split: Vec<ParsedInstance>) -> Vec<PyInstance> {
    split.into_iter().map(|inner| PyInstance { inner }).collect()
}

fn unwrap(split: &[PyInstance]) -> Vec<ParsedInstance> {
    split.iter().map(|i| i.inner.clone()).collect()
}

fn examples(instances: &[PyInstance], bundles: &[PyBundle]) -> PyResult<Vec<PluginExample>> {
    let plain: Vec<_> = instances.iter().map(|i| i.inner.instance.clone()).collect();
    let bundles: Vec<_> = bundles.iter().map(|b| b.inner.clone()).collect();
    pair_examples(&plain, &bundles).map_err(value_err)
}

/// Reads `<dir>/<split>.jsonl` and its sidecar parses.
#[pyfunction]
fn load_corpus(dir: PathBuf, split: &str) -> PyResult<Vec<PyInstance>> {
    Ok(wrap(load_split(&dir, split).map_err(value_err)?))
}

/// Planted-rule synthetic corpus as `(train, dev)`.
#[pyfunction]
#[pyo3(signature = (rule = "presence", n_train = 2000, n_dev = 500, seed = 1))]
fn planted(rule: &str, n_train: usize, n_dev: usize, seed: u64) -> PyResult<(Vec<PyInstance>, Vec<PyInstance>)> {
    let rule: PlantedRule = rule.parse().map_err(PyValueError::new_err)?;
    let c = planted_corpus(rule, n_train, n_dev, seed);
    Ok((wrap(c.train), wrap(c.dev)))
}

/// The annotated "bar service" example sentence.
#[pyfunction]
fn example() -> PyInstance {
    PyInstance {
        inner: bar_service_example(),
    }
}

/// Bundles of `kind` for `split`, ranking dependency pairs by counts in `train`.
#[pyfunction]
#[pyo3(signature = (kind, train, split, memory = 5))]
fn extract(kind: &str, train: Vec<PyInstance>, split: Vec<PyInstance>, memory: usize) -> PyResult<Vec<PyBundle>> {
    let cfg = ExtractConfig {
        memory,
        ..ExtractConfig::default()
    };
    let bundles = extract_split(parse_kind(kind)?, &unwrap(&train), &unwrap(&split), &cfg).map_err(value_err)?;
    Ok(bundles.into_iter().map(|inner| PyBundle { inner }).collect())
}

/// A trained key-value memory plugin.
#[pyclass(name = "Plugin", module = "synplug_py")]
pub struct PyPlugin {
    inner: PluginModel,
}

#[pymethods]
impl PyPlugin {
    /// Trains a plugin and returns it with its training report.
    #[staticmethod]
    #[pyo3(signature = (
        kind, train, train_bundles, dev, dev_bundles,
        dim = 32, memory = 5, lr = 1e-3, epochs = 50, patience = 10, batch_size = 16, seed = 1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        kind: &str,
        train: Vec<PyInstance>,
        train_bundles: Vec<PyBundle>,
        dev: Vec<PyInstance>,
        dev_bundles: Vec<PyBundle>,
        dim: usize,
        memory: usize,
        lr: f64,
        epochs: usize,
        patience: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<(PyPlugin, Py<PyAny>)> {
        let spec = PluginSpec::new(parse_kind(kind)?, dim, memory);
        let train = examples(&train, &train_bundles)?;
        let dev = examples(&dev, &dev_bundles)?;
        let opts = TrainOptions {
            lr,
            epochs,
            patience,
            batch_size,
            seed,
        };
        let (model, report) = py
            .detach(|| train_plugin(spec, &train, &dev, &opts, None))
            .map_err(value_err)?;
        Ok((PyPlugin { inner: model }, to_py(py, &report)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyPlugin> {
        Ok(PyPlugin {
            inner: PluginModel::load(&path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(value_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.spec.dim
    }

    #[getter]
    fn memory(&self) -> usize {
        self.inner.spec.memory
    }

    /// `(label, [p_positive, p_neutral, p_negative])` per instance.
    fn predict(&self, instances: Vec<PyInstance>, bundles: Vec<PyBundle>) -> PyResult<Vec<(&'static str, [f64; 3])>> {
        let ex = examples(&instances, &bundles)?;
        Ok(self
            .inner
            .predict_batch(&ex, None)
            .map_err(value_err)?
            .into_iter()
            .map(|p| (p.label.as_str(), p.probs))
            .collect())
    }

    /// Accuracy, macro-F1, per-class scores and confusion matrix.
    fn evaluate(&self, py: Python<'_>, instances: Vec<PyInstance>, bundles: Vec<PyBundle>) -> PyResult<Py<PyAny>> {
        let m = evaluate_plugin(&self.inner, &examples(&instances, &bundles)?, None).map_err(value_err)?;
        to_py(py, &m)
    }

    /// Per-instance memory entries with their attention weights, highest first.
    fn attention(&self, py: Python<'_>, instances: Vec<PyInstance>, bundles: Vec<PyBundle>) -> PyResult<Py<PyAny>> {
        let (reports, _) = attention_reports(&self.inner, &examples(&instances, &bundles)?).map_err(value_err)?;
        to_py(py, &reports)
    }

    fn __repr__(&self) -> String {
        format!(
            "Plugin(kind={}, dim={}, memory={})",
            self.inner.kind(),
            self.inner.spec.dim,
            self.inner.spec.memory
        )
    }
}

/// Metrics for predicted labels against gold labels. Predictions that are
/// `None` or not a polarity word count as wrong.
#[pyfunction]
fn evaluate(py: Python<'_>, predictions: Vec<Option<String>>, golds: Vec<String>) -> PyResult<Py<PyAny>> {
    let preds: Vec<Option<Polarity>> = predictions
        .iter()
        .map(|p| p.as_deref().and_then(|s| s.parse().ok()))
        .collect();
    let golds = golds
        .iter()
        .map(|g| g.parse::<Polarity>().map_err(|s| PyValueError::new_err(format!("bad gold label {s:?}"))))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &synplug::eval::evaluate(&preds, &golds).map_err(value_err)?)
}

/// Fills `template` for `instance`; `predictions` maps kind to label.
#[pyfunction]
#[pyo3(signature = (template, instance, predictions = BTreeMap::new()))]
fn render_prompt(template: &str, instance: &PyInstance, predictions: BTreeMap<String, String>) -> PyResult<String> {
    let t = PromptTemplate::parse(template).map_err(value_err)?;
    let mut preds = BTreeMap::new();
    for (k, v) in &predictions {
        let label: Polarity = v
            .parse()
            .map_err(|s| PyValueError::new_err(format!("bad label {s:?}")))?;
        preds.insert(parse_kind(k)?, label);
    }
    Ok(t.render(&instance.inner.instance, &preds).map_err(value_err)?.text)
}

/// The single polarity word in a model reply, if there is exactly one.
#[pyfunction]
fn parse_label(text: &str) -> Option<&'static str> {
    synplug::gateway::parse_label(text).label().map(Polarity::as_str)
}

/// Attention weights `softmax(K h)` and read-out `p V`.
#[pyfunction]
fn attend(h: Vec<f64>, keys: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let matrix = |rows: Vec<Vec<f64>>, name: &str| -> PyResult<Tensor> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err(format!("{name}: ragged rows")));
        }
        Tensor::matrix(rows.len(), cols, rows.concat()).map_err(value_err)
    };
    if keys.len() != values.len() {
        return Err(PyValueError::new_err("one value row per key row"));
    }
    if keys.first().is_some_and(|k| k.len() != h.len()) {
        return Err(PyValueError::new_err("key width must match the query"));
    }
    let r = memory_attend(&h, &matrix(keys, "keys")?, &matrix(values, "values")?);
    Ok((r.weights, r.output))
}

#[pymodule]
fn synplug_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyPlugin>()?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(planted, m)?)?;
    m.add_function(wrap_pyfunction!(example, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(attend, m)?)?;
    Ok(())
}
