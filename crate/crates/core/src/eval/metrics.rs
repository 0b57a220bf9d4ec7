use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Polarity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Polarity,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
    /// Instances predicted as this class.
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Pooled over classes: precision over parseable predictions, recall
    /// over all instances. Equals accuracy when nothing is unparseable.
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Predictions that were not a label at all; scored as wrong.
    pub unparseable: usize,
    /// `confusion[gold][predicted]`, parseable predictions only.
    pub confusion: [[usize; 3]; 3],
}

impl Metrics {
    pub fn class(&self, label: Polarity) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-class and macro-averaged precision/recall/F1. Classes
/// that appear neither in `golds` nor in `preds` are left out of the macro
/// mean.
pub fn evaluate(preds: &[Option<Polarity>], golds: &[Polarity]) -> Result<Metrics, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut unparseable = 0;
    for (p, g) in preds.iter().zip(golds) {
        match p {
            Some(p) => confusion[g.index()][p.index()] += 1,
            None => unparseable += 1,
        }
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(3);
    let mut f1s = Vec::new();
    for label in Polarity::ALL {
        let c = label.index();
        let tp = confusion[c][c];
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        let support = golds.iter().filter(|&&g| g == label).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 || predicted > 0 {
            f1s.push(f1);
        }
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    let macro_f1 = if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    };
    let micro_p = ratio(correct, golds.len() - unparseable);
    let micro_r = ratio(correct, golds.len());
    let micro_f1 = if micro_p + micro_r > 0.0 {
        2.0 * micro_p * micro_r / (micro_p + micro_r)
    } else {
        0.0
    };
    Ok(Metrics {
        total: golds.len(),
        correct,
        accuracy: ratio(correct, golds.len()),
        macro_f1,
        micro_f1,
        per_class,
        unparseable,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::*;

    #[test]
    fn perfect_balanced() {
        let g = [Positive, Neutral, Negative];
        let p: Vec<_> = g.iter().map(|&x| Some(x)).collect();
        let m = evaluate(&p, &g).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_positive_predictions() {
        // gold: 2 pos, 1 neg, 1 neu; every prediction positive.
        let g = [Positive, Positive, Negative, Neutral];
        let p = [Some(Positive); 4];
        let m = evaluate(&p, &g).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.micro_f1, 0.5);
        // pos: P = 2/4, R = 1, F1 = 2/3; neu and neg: F1 = 0.
        assert!((m.class(Positive).f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - (2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unparseable_counts_as_wrong() {
        let g = [Positive, Negative];
        let m = evaluate(&[Some(Positive), None], &g).unwrap();
        assert_eq!(m.unparseable, 1);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.class(Negative).recall, 0.0);
        // P = 1/1, R = 1/2.
        assert!((m.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        let g = [Positive, Negative];
        let m = evaluate(&[Some(Positive), Some(Negative)], &g).unwrap();
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            evaluate(&[None], &[]),
            Err(EvalError::LengthMismatch { preds: 1, golds: 0 })
        ));
    }
}
