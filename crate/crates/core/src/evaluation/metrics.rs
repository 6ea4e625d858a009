use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions at or above this probability count as positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_at_threshold(probs: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// One table cell: AUC plus thresholded precision/recall/F1.
///
/// Precision or recall with a zero denominator is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn precision_recall_f1(c: &ConfusionCounts) -> MetricsRow {
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricsRow {
        auc: None,
        f1,
        precision,
        recall,
        precision_undefined,
        recall_undefined,
    }
}

/// Full metrics row at the default threshold. AUC is `None` when the labels
/// hold a single class.
pub fn evaluate(probs: &[f64], labels: &[bool]) -> Result<MetricsRow> {
    let c = confusion_at_threshold(probs, labels, DEFAULT_THRESHOLD)?;
    let mut row = precision_recall_f1(&c);
    row.auc = match super::roc_auc(probs, labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_basic() {
        let c = confusion_at_threshold(&[0.9, 0.2], &[true, false], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
    }

    #[test]
    fn half_is_positive() {
        let c = confusion_at_threshold(&[0.5], &[false], 0.5).unwrap();
        assert_eq!(c.fp, 1);
    }

    #[test]
    fn all_negative() {
        let c = confusion_at_threshold(&[0.1, 0.4, 0.3], &[false; 3], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 0 });
        assert!(confusion_at_threshold(&[0.1], &[false, true], 0.5).is_err());
    }

    #[test]
    fn single_class_row_has_no_auc() {
        let m = evaluate(&[0.9, 0.2], &[false, false]).unwrap();
        assert_eq!(m.auc, None);
        assert!(m.precision_undefined || m.precision == 0.0);
        assert!(m.recall_undefined);
        assert!(evaluate(&[0.9, 0.2], &[true, false]).unwrap().auc == Some(1.0));
    }

    #[test]
    fn hand_counted_row() {
        let c = confusion_at_threshold(&[1.0, 1.0, 0.0], &[true, false, true], 0.5).unwrap();
        let m = precision_recall_f1(&c);
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = precision_recall_f1(&ConfusionCounts { tp: 4, fp: 0, tn: 0, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = precision_recall_f1(&ConfusionCounts { tp: 0, fp: 0, tn: 2, fn_: 3 });
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined);
        assert!(!m.recall_undefined);
    }
}
