use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::ParamRecord;
use super::{Gradients, Tape, Tensor, TensorError, Var};

/// Seeded generator used for every initialisation and shuffle.
///
/// ChaCha8 keyed from a 64-bit seed: the stream is fixed for a given seed
/// across platforms and crate builds.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-bound, bound)`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Glorot-scaled uniform initialisation for a `[fan_in, fan_out]` weight.
pub fn scaled_uniform(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], bound, rng)
}

pub const EMBEDDING_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensor with a trainable flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of parameters belonging to one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate {name}");
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `tape`; frozen ones do not track gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.trainable))
            .collect();
        Bound { vars }
    }

    /// Gradient per parameter in store order; frozen parameters get zeros.
    pub fn gradients(&self, bound: &Bound, grads: &Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, v)| {
                if p.trainable {
                    grads.wrt(*v)
                } else {
                    Tensor::zeros(p.value.shape())
                }
            })
            .collect()
    }

    pub fn to_records(&self, prefix: &str) -> Vec<ParamRecord> {
        self.params
            .iter()
            .map(|p| ParamRecord::encode(&format!("{prefix}{}", p.name), &p.value, p.trainable))
            .collect()
    }

    /// Rebuilds a store from the records whose names start with `prefix`.
    pub fn from_records(records: &[ParamRecord], prefix: &str) -> Result<Self, TensorError> {
        let mut store = ParamStore::new();
        for r in records.iter().filter(|r| r.name.starts_with(prefix)) {
            let (value, trainable) = r.decode()?;
            store.add(&r.name[prefix.len()..], value, trainable);
        }
        Ok(store)
    }

    /// Copies values (not flags) from `other`, matched by name.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| TensorError::MissingParameter(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load",
                    left: p.value.shape().to_vec(),
                    right: src.value.shape().to_vec(),
                });
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes, flags and the little-endian bytes of every value.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update([p.trainable as u8]);
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        super::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_parameter_reports_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0]), true);
        let b = store.add("b", Tensor::vector(vec![3.0, 4.0]), false);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = tape.dot(bound.var(a), bound.var(b)).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = store.gradients(&bound, &grads);
        assert_eq!(g[a.index()].data(), &[3.0, 4.0]);
        assert!(g[b.index()].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_init() {
        let a = uniform(&[4, 3], 0.1, &mut seeded_rng(9));
        let b = uniform(&[4, 3], 0.1, &mut seeded_rng(9));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]), true);
        let before = store.fingerprint();
        store.get_mut(id).value.data_mut()[0] = 1.0 + f64::EPSILON;
        assert_ne!(before, store.fingerprint());
    }
}
