//! Central finite-difference checks against tape gradients.

use super::{ParamStore, Tensor};

/// Denominator floor for the relative error so that near-zero gradient pairs
/// are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Something with trainable stores and a scalar loss over them.
pub trait Differentiable {
    fn stores_mut(&mut self) -> Vec<&mut ParamStore>;
    fn loss(&mut self) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[s][p]` (one tensor per parameter of store `s`) against
/// central differences of `model.loss()` for every trainable element.
pub fn check<M: Differentiable>(model: &mut M, analytic: &[Vec<Tensor>], eps: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let layout: Vec<Vec<(bool, usize, String)>> = model
        .stores_mut()
        .iter()
        .map(|s| {
            s.iter()
                .map(|p| (p.trainable, p.value.len(), p.name.clone()))
                .collect()
        })
        .collect();
    for (s, params) in layout.iter().enumerate() {
        for (p, (trainable, len, name)) in params.iter().enumerate() {
            if !trainable {
                continue;
            }
            for j in 0..*len {
                let original = nudge(model, s, p, j, None);
                nudge(model, s, p, j, Some(original + eps));
                let plus = model.loss();
                nudge(model, s, p, j, Some(original - eps));
                let minus = model.loss();
                nudge(model, s, p, j, Some(original));
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[s][p].data()[j];
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((name.clone(), j, a, numeric));
                }
            }
        }
    }
    report
}

fn nudge<M: Differentiable>(model: &mut M, s: usize, p: usize, j: usize, value: Option<f64>) -> f64 {
    let mut stores = model.stores_mut();
    let store = &mut stores[s];
    let id = store.ids().nth(p).expect("parameter index");
    let slot = &mut store.get_mut(id).value.data_mut()[j];
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}
