use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_slice, Tensor};

/// Weights over the memory entries and the value read-out they produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
    /// True when the bundle had no entries; `output` is then all zeros.
    pub empty: bool,
}

/// `p = softmax(K h)`, `o = p V` for `K`, `V` of shape `[m, d]` and `h` of width `d`.
///
/// An empty memory (`m = 0`) yields zero output and no weights.
pub fn memory_attend(h: &[f64], keys: &Tensor, values: &Tensor) -> AttentionRecord {
    let d = h.len();
    let m = if keys.is_empty() { 0 } else { keys.rows() };
    if m == 0 {
        return AttentionRecord {
            weights: Vec::new(),
            output: vec![0.0; if values.ndim() == 2 { values.cols() } else { d }],
            empty: true,
        };
    }
    assert_eq!(keys.cols(), d, "key width");
    assert_eq!(values.rows(), m, "one value per key");
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            let mut s = 0.0;
            for (k, x) in keys.row(i).iter().zip(h) {
                s += k * x;
            }
            s
        })
        .collect();
    let mut weights = vec![0.0; m];
    softmax_slice(&scores, &mut weights);
    let mut output = vec![0.0; values.cols()];
    for (i, p) in weights.iter().enumerate() {
        for (o, v) in output.iter_mut().zip(values.row(i)) {
            *o += p * v;
        }
    }
    AttentionRecord {
        weights,
        output,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        let c = rows[0].len();
        Tensor::matrix(rows.len(), c, rows.concat()).unwrap()
    }

    #[test]
    fn equal_scores_split_evenly() {
        let r = memory_attend(&[1.0, 0.0], &mat(&[&[2.0, 1.0], &[2.0, -1.0]]), &mat(&[&[1.0], &[3.0]]));
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert_eq!(r.output, vec![2.0]);
    }

    #[test]
    fn hand_softmax_two_thirds() {
        let v = mat(&[&[3.0, 0.0], &[0.0, 3.0]]);
        let r = memory_attend(&[1.0, 0.0], &mat(&[&[2f64.ln(), 0.0], &[0.0, 0.0]]), &v);
        assert!((r.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.output[0] - 2.0).abs() < 1e-14);
        assert!((r.output[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_hot_selects_value() {
        let r = memory_attend(&[1.0], &mat(&[&[1000.0], &[0.0]]), &mat(&[&[4.0, 5.0], &[7.0, 8.0]]));
        assert_eq!(r.weights, vec![1.0, 0.0]);
        assert_eq!(r.output, vec![4.0, 5.0]);
    }

    #[test]
    fn empty_memory_is_zero() {
        let r = memory_attend(&[1.0, 2.0], &Tensor::zeros(&[0, 2]), &Tensor::zeros(&[0, 2]));
        assert!(r.empty);
        assert!(r.weights.is_empty());
        assert_eq!(r.output, vec![0.0, 0.0]);
    }
}
