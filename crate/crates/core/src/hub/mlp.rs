use serde_json::json;

use super::HubError;
use crate::autodiff::{scaled_uniform, Bound, ParamId, ParamRecord, ParamStore, SeededRng, Tape, Tensor, Var};

/// One-hidden-layer relu MLP from concatenated plugin outputs to the LM width.
#[derive(Clone, Debug, PartialEq)]
pub struct HubModel {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: ParamStore,
    ids: [ParamId; 4],
}

impl HubModel {
    /// Hidden width defaults to twice the output width.
    pub fn new(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let hidden = 2 * output;
        let mut params = ParamStore::new();
        params.add("w1", scaled_uniform(input, hidden, rng), true);
        params.add("b1", Tensor::zeros(&[hidden]), true);
        params.add("w2", scaled_uniform(hidden, output, rng), true);
        params.add("b2", Tensor::zeros(&[output]), true);
        Self::from_store(input, hidden, output, params).expect("fresh hub")
    }

    /// Square hub computing the identity: `relu(x) - relu(-x) = x`.
    pub fn identity(d: usize) -> Self {
        let mut w1 = Tensor::zeros(&[d, 2 * d]);
        let mut w2 = Tensor::zeros(&[2 * d, d]);
        for i in 0..d {
            w1.data_mut()[i * 2 * d + i] = 1.0;
            w1.data_mut()[i * 2 * d + d + i] = -1.0;
            w2.data_mut()[i * d + i] = 1.0;
            w2.data_mut()[(d + i) * d + i] = -1.0;
        }
        let mut params = ParamStore::new();
        params.add("w1", w1, true);
        params.add("b1", Tensor::zeros(&[2 * d]), true);
        params.add("w2", w2, true);
        params.add("b2", Tensor::zeros(&[d]), true);
        Self::from_store(d, 2 * d, d, params).expect("identity hub")
    }

    fn from_store(input: usize, hidden: usize, output: usize, params: ParamStore) -> Result<Self, HubError> {
        let mut ids = Vec::with_capacity(4);
        for (name, shape) in [
            ("w1", vec![input, hidden]),
            ("b1", vec![hidden]),
            ("w2", vec![hidden, output]),
            ("b2", vec![output]),
        ] {
            let id = params
                .id(name)
                .ok_or_else(|| HubError::Checkpoint(format!("hub parameter {name:?} missing")))?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(HubError::Checkpoint(format!(
                    "hub parameter {name:?} has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            ids.push(id);
        }
        Ok(HubModel {
            input,
            hidden,
            output,
            params,
            ids: [ids[0], ids[1], ids[2], ids[3]],
        })
    }

    /// `[B, input] -> [B, output]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, HubError> {
        let width = tape.value(x).cols();
        if width != self.input {
            return Err(HubError::WidthMismatch {
                expected: self.input,
                found: width,
            });
        }
        let [w1, b1, w2, b2] = self.ids.map(|id| bound.var(id));
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let y = tape.matmul(h, w2)?;
        Ok(tape.add_row(y, b2)?)
    }

    /// `h^P` for already concatenated plugin outputs.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, HubError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Concatenates the per-plugin outputs, checking each width against `widths`.
    pub fn apply_parts(&self, parts: &[&[f64]], widths: &[usize]) -> Result<Vec<f64>, HubError> {
        if parts.is_empty() || parts.len() > 3 {
            return Err(HubError::PluginCount(parts.len()));
        }
        if parts.len() != widths.len() {
            return Err(HubError::PluginCount(parts.len()));
        }
        for (p, &w) in parts.iter().zip(widths) {
            if p.len() != w {
                return Err(HubError::WidthMismatch {
                    expected: w,
                    found: p.len(),
                });
            }
        }
        self.apply(&parts.concat())
    }

    pub fn header(&self) -> serde_json::Value {
        json!({"input": self.input, "hidden": self.hidden, "output": self.output})
    }

    pub fn from_parts(header: &serde_json::Value, records: &[ParamRecord], prefix: &str) -> Result<Self, HubError> {
        let get = |k: &str| {
            header
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| HubError::Checkpoint(format!("hub header missing {k:?}")))
        };
        let params = ParamStore::from_records(records, prefix)?;
        Self::from_store(get("input")?, get("hidden")?, get("output")?, params)
    }
}
