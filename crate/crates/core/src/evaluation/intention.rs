//! Intention accuracy variants and the six-class confusion matrix.

use serde::{Deserialize, Serialize};

use crate::scenario::IntentionLabel;

use super::EvalError;

/// Confusion-matrix classes, lane changes folded into `Straight`.
pub const CONFUSION_CLASSES: [IntentionLabel; 6] = [
    IntentionLabel::Straight,
    IntentionLabel::LeftTurn,
    IntentionLabel::RightTurn,
    IntentionLabel::LeftUTurn,
    IntentionLabel::RightUTurn,
    IntentionLabel::Stationary,
];

pub fn confusion_class(l: IntentionLabel) -> usize {
    let m = l.merged();
    CONFUSION_CLASSES.iter().position(|&c| c == m).expect("merged label is a confusion class")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionEvalResult {
    pub n: usize,
    pub acc_first: f64,
    pub acc_any: f64,
    pub acc_merged: f64,
    pub classes: Vec<IntentionLabel>,
    /// Rows are ground truth, columns the first predicted intention.
    pub confusion: Vec<Vec<u64>>,
}

impl IntentionEvalResult {
    pub fn empty() -> Self {
        IntentionEvalResult {
            n: 0,
            acc_first: 0.0,
            acc_any: 0.0,
            acc_merged: 0.0,
            classes: CONFUSION_CLASSES.to_vec(),
            confusion: vec![vec![0; CONFUSION_CLASSES.len()]; CONFUSION_CLASSES.len()],
        }
    }
}

pub fn intention_accuracy(preds: &[Vec<IntentionLabel>], gts: &[IntentionLabel]) -> Result<IntentionEvalResult, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch { predictions: preds.len(), ground_truth: gts.len() });
    }
    let mut r = IntentionEvalResult::empty();
    if preds.is_empty() {
        return Ok(r);
    }
    let (mut first, mut any, mut merged) = (0usize, 0usize, 0usize);
    for (i, (p, &gt)) in preds.iter().zip(gts).enumerate() {
        let head = *p.first().ok_or(EvalError::EmptyPrediction(i))?;
        first += usize::from(head == gt);
        any += usize::from(p.contains(&gt));
        merged += usize::from(p.iter().any(|l| l.merged() == gt.merged()));
        r.confusion[confusion_class(gt)][confusion_class(head)] += 1;
    }
    let n = preds.len() as f64;
    r.n = preds.len();
    r.acc_first = first as f64 / n;
    r.acc_any = any as f64 / n;
    r.acc_merged = merged as f64 / n;
    Ok(r)
}
