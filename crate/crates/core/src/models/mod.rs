//! The two model families, their flat parameter vectors, and the trainers.
//!
//! Both families exchange parameters as a [`ParamVector`]: a flat `f64`
//! vector plus the [`Layout`] that gives it meaning.
//!
//! Flatten order:
//! - logistic: `w[0..14]`, then the intercept;
//! - MLP: for each layer in order, its weight matrix row-major
//!   (`out x in`, one row per output unit), then its bias vector.

mod adam;
mod fitted;
mod logistic;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fitted::{read_checkpoint, write_checkpoint, FittedModel, Preprocessing};
pub use logistic::{lr_loss_and_grad, lr_predict, prox_l1, soft_threshold, LogisticModel};
pub use mlp::{glorot_init, mlp_forward, mlp_loss_and_grad, MlpCache, MlpModel};
pub use train::{fit, train_logistic, train_mlp, FitOutcome, LocalTrainer, TrainConfig};

use crate::error::{Error, Result};
use crate::schema::{LabeledMatrix, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Logistic,
    Mlp,
}

impl ModelFamily {
    pub fn tag(self) -> &'static str {
        match self {
            ModelFamily::Logistic => "lr",
            ModelFamily::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(ModelFamily::Logistic),
            "mlp" => Ok(ModelFamily::Mlp),
            _ => Err(Error::validation("model family", format!("`{s}` (expected lr or mlp)"))),
        }
    }
}

/// Shape descriptor for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Logistic { inputs: usize },
    Mlp { inputs: usize, hidden: Vec<usize> },
}

impl Layout {
    pub fn logistic() -> Self {
        Layout::Logistic { inputs: N_FEATURES }
    }

    pub fn mlp(hidden: &[usize]) -> Self {
        Layout::Mlp {
            inputs: N_FEATURES,
            hidden: hidden.to_vec(),
        }
    }

    pub fn for_family(family: ModelFamily, hidden: &[usize]) -> Self {
        match family {
            ModelFamily::Logistic => Layout::logistic(),
            ModelFamily::Mlp => Layout::mlp(hidden),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            Layout::Logistic { .. } => ModelFamily::Logistic,
            Layout::Mlp { .. } => ModelFamily::Mlp,
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Layout::Logistic { inputs } | Layout::Mlp { inputs, .. } => *inputs,
        }
    }

    /// `(fan_in, fan_out)` of each dense layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        match self {
            Layout::Logistic { inputs } => vec![(*inputs, 1)],
            Layout::Mlp { inputs, hidden } => {
                let mut dims = vec![*inputs];
                dims.extend_from_slice(hidden);
                dims.push(1);
                dims.windows(2).map(|w| (w[0], w[1])).collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mask of entries that are weights (as opposed to biases/intercepts).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.len());
        for (i, o) in self.layers() {
            mask.extend(std::iter::repeat_n(true, i * o));
            mask.extend(std::iter::repeat_n(false, o));
        }
        mask
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Logistic { inputs } => write!(f, "logistic({inputs})"),
            Layout::Mlp { inputs, hidden } => write!(f, "mlp({inputs}->{hidden:?}->1)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: format!("{layout} with {} values", layout.len()),
                found: format!("{} values", values.len()),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_layout(&self, layout: &Layout) -> Result<()> {
        if &self.layout != layout || self.values.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: layout.to_string(),
                found: self.layout.to_string(),
            });
        }
        Ok(())
    }

    /// FNV-1a over the little-endian bytes of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mean loss and gradient for either family. `l2_alpha` only affects the MLP.
pub fn loss_and_grad(params: &ParamVector, batch: &LabeledMatrix, l2_alpha: f64) -> Result<(f64, Vec<f64>)> {
    match &params.layout {
        Layout::Logistic { .. } => {
            let model = LogisticModel::unflatten(params)?;
            let (loss, grad) = lr_loss_and_grad(&model, batch)?;
            Ok((loss, grad.values))
        }
        Layout::Mlp { .. } => {
            let model = MlpModel::from_params(params.clone())?;
            let (loss, grad) = mlp_loss_and_grad(&model, batch, l2_alpha)?;
            Ok((loss, grad.values))
        }
    }
}

/// Positive-class probabilities for every row.
pub fn predict_proba(params: &ParamVector, rows: &[[f64; N_FEATURES]]) -> Result<Vec<f64>> {
    for (i, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
    }
    match &params.layout {
        Layout::Logistic { .. } => {
            let m = LogisticModel::unflatten(params)?;
            Ok(rows.iter().map(|r| m.probability(r)).collect())
        }
        Layout::Mlp { .. } => {
            let m = MlpModel::from_params(params.clone())?;
            Ok(m.predict_batch(rows))
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy from a logit: `-[y ln p + (1-y) ln(1-p)]`.
pub(crate) fn bce_from_logit(z: f64, y: bool) -> f64 {
    softplus(z) - if y { z } else { 0.0 }
}
