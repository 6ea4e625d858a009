use serde::{Deserialize, Serialize};

use super::{bce_from_logit, sigmoid, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::schema::{LabeledMatrix, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: [f64; N_FEATURES],
    pub intercept: f64,
}

impl Default for LogisticModel {
    fn default() -> Self {
        LogisticModel {
            weights: [0.0; N_FEATURES],
            intercept: 0.0,
        }
    }
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept
    }

    pub fn probability(&self, x: &[f64; N_FEATURES]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn flatten(&self) -> ParamVector {
        let mut values = self.weights.to_vec();
        values.push(self.intercept);
        ParamVector {
            values,
            layout: Layout::logistic(),
        }
    }

    pub fn unflatten(pv: &ParamVector) -> Result<Self> {
        pv.ensure_layout(&Layout::logistic())?;
        let mut weights = [0.0; N_FEATURES];
        weights.copy_from_slice(&pv.values[..N_FEATURES]);
        Ok(LogisticModel {
            weights,
            intercept: pv.values[N_FEATURES],
        })
    }
}

pub fn lr_predict(model: &LogisticModel, x: &[f64; N_FEATURES]) -> Result<f64> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(model.probability(x))
}

/// Mean binary cross-entropy and its gradient (smooth part only).
pub fn lr_loss_and_grad(model: &LogisticModel, batch: &LabeledMatrix) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; N_FEATURES + 1];
    for (x, &y) in batch.rows.iter().zip(&batch.labels) {
        let z = model.logit(x);
        loss += bce_from_logit(z, y);
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        for (g, v) in grad.iter_mut().zip(x) {
            *g += r * v;
        }
        grad[N_FEATURES] += r;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, ParamVector { values: grad, layout: Layout::logistic() }))
}

pub fn soft_threshold(w: f64, t: f64) -> f64 {
    if w > t {
        w - t
    } else if w < -t {
        w + t
    } else {
        0.0
    }
}

/// Soft-thresholds the weights of a logistic parameter vector; the intercept
/// is left alone.
pub fn prox_l1(p: &ParamVector, threshold: f64) -> Result<ParamVector> {
    if !(threshold >= 0.0) {
        return Err(Error::validation("threshold", format!("{threshold} is negative")));
    }
    p.ensure_layout(&Layout::logistic())?;
    let mut out = p.clone();
    for w in &mut out.values[..N_FEATURES] {
        *w = soft_threshold(*w, threshold);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(b: f64) -> LogisticModel {
        LogisticModel { weights: [0.0; N_FEATURES], intercept: b }
    }

    #[test]
    fn predict_examples() {
        let x = [3.0; N_FEATURES];
        assert_eq!(lr_predict(&model(0.0), &x).unwrap(), 0.5);
        assert!((lr_predict(&model(3f64.ln()), &x).unwrap() - 0.75).abs() < 1e-15);
        let p = lr_predict(&model(-1000.0), &x).unwrap();
        assert!(p >= 0.0 && !p.is_nan());
        let mut bad = x;
        bad[2] = f64::NAN;
        assert!(matches!(lr_predict(&model(0.0), &bad), Err(Error::NonFinite(2))));
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let batch = LabeledMatrix::new(vec![[1.5; N_FEATURES], [-2.0; N_FEATURES]], vec![true, false]).unwrap();
        let (loss, _) = lr_loss_and_grad(&model(0.0), &batch).unwrap();
        assert_eq!(loss, std::f64::consts::LN_2);
    }

    #[test]
    fn intercept_gradient_single_sample() {
        let batch = LabeledMatrix::new(vec![[0.0; N_FEATURES]], vec![true]).unwrap();
        let (_, g) = lr_loss_and_grad(&model(0.0), &batch).unwrap();
        assert_eq!(g.values[N_FEATURES], -0.5);
        assert!(lr_loss_and_grad(&model(0.0), &LabeledMatrix::default()).is_err());
    }

    #[test]
    fn prox_examples() {
        let mut m = model(5.0);
        m.weights[0] = 0.5;
        m.weights[1] = -0.2;
        let out = prox_l1(&m.flatten(), 0.3).unwrap();
        assert!((out.values[0] - 0.2).abs() < 1e-15);
        assert_eq!(out.values[1], 0.0);
        assert_eq!(out.values[N_FEATURES], 5.0);
        assert_eq!(prox_l1(&m.flatten(), 0.0).unwrap(), m.flatten());
        assert!(prox_l1(&m.flatten(), -1.0).is_err());
    }

    #[test]
    fn flatten_order() {
        let mut m = model(15.0);
        for (i, w) in m.weights.iter_mut().enumerate() {
            *w = (i + 1) as f64;
        }
        let pv = m.flatten();
        assert_eq!(pv.values, (1..=15).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(LogisticModel::unflatten(&pv).unwrap(), m);
        let wrong = ParamVector::zeros(Layout::mlp(&[2]));
        assert!(LogisticModel::unflatten(&wrong).is_err());
    }
}
