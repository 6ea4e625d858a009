use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` when the bin is empty.
    pub mean_pred: Option<f64>,
    pub obs_frac: Option<f64>,
}

/// Equal-width reliability curve on [0, 1] with its expected calibration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

impl CalibrationCurve {
    pub fn occupied(&self) -> impl Iterator<Item = &CalibrationBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }
}

/// Bins are `[k/n, (k+1)/n)` except the last, which also holds 1.0.
pub fn calibration_curve(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibrationCurve> {
    if n_bins < 2 {
        return Err(Error::validation("n_bins", format!("{n_bins} < 2")));
    }
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("calibration input"));
    }
    let mut sum_pred = vec![0.0; n_bins];
    let mut positives = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation("probability", format!("{p} at position {i} outside [0, 1]")));
        }
        let k = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_pred[k] += p;
        positives[k] += usize::from(y);
        counts[k] += 1;
    }
    let n = probs.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|k| {
            let (mean_pred, obs_frac) = if counts[k] == 0 {
                (None, None)
            } else {
                let c = counts[k] as f64;
                let (mp, of) = (sum_pred[k] / c, positives[k] as f64 / c);
                ece += c / n * (mp - of).abs();
                (Some(mp), Some(of))
            };
            CalibrationBin {
                lo: k as f64 / n_bins as f64,
                hi: (k + 1) as f64 / n_bins as f64,
                count: counts[k],
                mean_pred,
                obs_frac,
            }
        })
        .collect();
    Ok(CalibrationCurve { bins, ece })
}
