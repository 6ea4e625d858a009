use crate::error::{Error, Result};

fn check(probs: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if let Some(i) = probs.iter().position(|p| p.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("ROC AUC"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve by trapezoid integration over distinct score
/// thresholds.
///
/// Equal scores form one threshold step, so a tied positive/negative pair
/// contributes exactly one half, matching the concordance statistic. Counts
/// are integrated in integer arithmetic and divided once at the end.
pub fn roc_auc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(probs, labels)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));

    // Twice the area in units of (1/pos)(1/neg): sum over steps of
    // dFP * (TP_before + TP_after).
    let mut doubled: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let score = probs[order[i]];
        let (mut dtp, mut dfp) = (0u128, 0u128);
        while i < order.len() && probs[order[i]] == score {
            if labels[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        doubled += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
    }
    debug_assert_eq!((tp, fp), (pos as u128, neg as u128));
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Brute-force concordance: concordant pairs plus half the ties, over P·N.
pub fn auc_pairwise_oracle(probs: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(probs, labels)?;
    let mut doubled: u128 = 0;
    for (i, &pi) in probs.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &pj) in probs.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if pi > pj {
                doubled += 2;
            } else if pi == pj {
                doubled += 1;
            }
        }
    }
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}
