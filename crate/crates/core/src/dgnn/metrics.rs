use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
}

/// Micro-F1 over pooled counts and Macro-F1 averaged over the classes
/// present in `truth`.
pub fn f1_scores(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<F1Scores> {
    if truth.len() != pred.len() {
        return Err(Error::shape("f1_scores", &[truth.len()], &[pred.len()]));
    }
    if truth.is_empty() {
        return Err(Error::EmptySet("evaluation mask".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&y, &p) in truth.iter().zip(pred) {
        if y >= num_classes || p >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: y.max(p),
                len: num_classes,
            });
        }
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let micro = correct as f64 / truth.len() as f64;
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..num_classes {
        if tp[c] + fn_[c] == 0 {
            continue;
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    Ok(F1Scores {
        micro,
        macro_: sum / present as f64,
    })
}
