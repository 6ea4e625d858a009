use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::soft_threshold;
use super::mlp::loss_and_grad_raw;
use super::{
    adam_step, glorot_init, lr_loss_and_grad, AdamConfig, AdamState, Layout, LogisticModel, MlpModel, ModelFamily,
    ParamVector,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{LabeledMatrix, N_FEATURES};

/// Hyperparameters shared by both trainers.
///
/// `learning_rate` and `epochs` default per family when unset: 0.001 and 20
/// for the MLP (Adam), 0.1 and 200 for logistic regression (proximal SGD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: Option<f64>,
    pub l2_alpha: f64,
    /// Inverse L1 strength for logistic regression.
    pub l1_c: f64,
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub adam: AdamConfig,
    /// Stop once the epoch loss fails to improve by `tol` for
    /// `n_iter_no_change` consecutive epochs. `None` always runs `epochs`.
    pub tol: Option<f64>,
    pub n_iter_no_change: usize,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: None,
            l2_alpha: 0.01,
            l1_c: 1.0,
            batch_size: 200,
            epochs: None,
            adam: AdamConfig::default(),
            tol: Some(1e-4),
            n_iter_no_change: 10,
            hidden_layers: vec![128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, family: ModelFamily) -> f64 {
        self.learning_rate.unwrap_or(match family {
            ModelFamily::Logistic => 0.1,
            ModelFamily::Mlp => 0.001,
        })
    }

    pub fn epochs(&self, family: ModelFamily) -> usize {
        self.epochs.unwrap_or(match family {
            ModelFamily::Logistic => 200,
            ModelFamily::Mlp => 20,
        })
    }

    pub fn layout(&self, family: ModelFamily) -> Layout {
        Layout::for_family(family, &self.hidden_layers)
    }

    pub fn validate(&self, family: ModelFamily) -> Result<()> {
        let lr = self.learning_rate(family);
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::validation("learning_rate", format!("{lr} must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.epochs(family) == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if !(self.l1_c > 0.0) {
            return Err(Error::validation("l1_c", "must be positive"));
        }
        if self.l2_alpha < 0.0 {
            return Err(Error::validation("l2_alpha", "must be non-negative"));
        }
        if family == ModelFamily::Mlp && self.hidden_layers.contains(&0) {
            return Err(Error::validation("hidden_layers", "sizes must be positive"));
        }
        Ok(())
    }

    /// Starting parameters: zeros for logistic regression, seeded
    /// Glorot-uniform for the MLP.
    pub fn initial_params(&self, family: ModelFamily) -> ParamVector {
        match family {
            ModelFamily::Logistic => ParamVector::zeros(Layout::logistic()),
            ModelFamily::Mlp => glorot_init(&self.hidden_layers, &mut rng::stream(self.seed, "init")).flatten(),
        }
    }
}

/// Epoch-level optimizer shared by centralized training and federated
/// clients. Keeps its own shuffle stream and (for the MLP) Adam moments, so
/// repeated calls continue one trajectory.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    family: ModelFamily,
    cfg: TrainConfig,
    shuffle: ChaCha8Rng,
    adam: Option<AdamState>,
    steps: u64,
}

impl LocalTrainer {
    /// `stream` selects the shuffle substream; centralized training uses 0.
    pub fn new(family: ModelFamily, cfg: TrainConfig, stream: u64) -> Self {
        let shuffle = rng::substream(cfg.seed, "shuffle", stream);
        LocalTrainer {
            family,
            cfg,
            shuffle,
            adam: None,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One pass of shuffled mini-batches. Returns the sample-weighted mean
    /// loss (plus the L1 term for logistic regression).
    pub fn epoch(&mut self, params: &mut ParamVector, data: &LabeledMatrix) -> Result<f64> {
        if params.layout.family() != self.family {
            return Err(Error::LayoutMismatch {
                expected: self.family.to_string(),
                found: params.layout.to_string(),
            });
        }
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let n = data.len();
        let lr = self.cfg.learning_rate(self.family);
        let batch_size = self.cfg.batch_size.clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle);

        let mut total = 0.0;
        match self.family {
            ModelFamily::Logistic => {
                let threshold = lr / (self.cfg.l1_c * n as f64);
                for chunk in order.chunks(batch_size) {
                    let batch = data.select(chunk);
                    let model = LogisticModel::unflatten(params)?;
                    let (loss, grad) = lr_loss_and_grad(&model, &batch)?;
                    for (p, g) in params.values.iter_mut().zip(&grad.values) {
                        *p -= lr * g;
                    }
                    for w in &mut params.values[..N_FEATURES] {
                        *w = soft_threshold(*w, threshold);
                    }
                    self.steps += 1;
                    total += loss * chunk.len() as f64;
                }
                let l1: f64 = params.values[..N_FEATURES].iter().map(|w| w.abs()).sum();
                Ok(total / n as f64 + l1 / (self.cfg.l1_c * n as f64))
            }
            ModelFamily::Mlp => {
                let dims = params.layout.layers();
                let len = params.len();
                let state = self.adam.get_or_insert_with(|| AdamState::new(len));
                for chunk in order.chunks(batch_size) {
                    let batch = data.select(chunk);
                    let (loss, grad) = loss_and_grad_raw(&params.values, &dims, &batch, self.cfg.l2_alpha)?;
                    adam_step(state, &grad, &mut params.values, lr, &self.cfg.adam)?;
                    self.steps += 1;
                    total += loss * chunk.len() as f64;
                }
                Ok(total / n as f64)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ParamVector,
    pub epochs_run: usize,
    pub steps: u64,
    pub losses: Vec<f64>,
    pub adam: Option<AdamState>,
}

/// Trains a model from its initializer on `data`.
pub fn fit(family: ModelFamily, data: &LabeledMatrix, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate(family)?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if !data.has_both_classes() {
        return Err(Error::SingleClass("training"));
    }
    let mut params = cfg.initial_params(family);
    let mut trainer = LocalTrainer::new(family, cfg.clone(), 0);
    let epochs = cfg.epochs(family);
    let mut losses = Vec::with_capacity(epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..epochs {
        let loss = trainer.epoch(&mut params, data)?;
        losses.push(loss);
        if let Some(tol) = cfg.tol {
            if loss > best - tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(loss);
            if stale >= cfg.n_iter_no_change {
                break;
            }
        }
    }
    Ok(FitOutcome {
        params,
        epochs_run: losses.len(),
        steps: trainer.steps,
        losses,
        adam: trainer.adam,
    })
}

/// Proximal mini-batch SGD with soft-threshold `lr / (C * n)` after each step.
pub fn train_logistic(data: &LabeledMatrix, cfg: &TrainConfig) -> Result<LogisticModel> {
    LogisticModel::unflatten(&fit(ModelFamily::Logistic, data, cfg)?.params)
}

/// Adam on mini-batches from a Glorot-uniform start.
pub fn train_mlp(data: &LabeledMatrix, cfg: &TrainConfig) -> Result<MlpModel> {
    MlpModel::from_params(fit(ModelFamily::Mlp, data, cfg)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = [0.0; N_FEATURES];
                r[0] = (i as f64 / n as f64) * 4.0 - 2.0;
                r[1] = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
                r
            })
            .collect::<Vec<_>>();
        let labels = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.0).collect();
        LabeledMatrix::new(rows, labels).unwrap()
    }

    #[test]
    fn config_validation() {
        let data = toy(20);
        let bad = [
            TrainConfig { epochs: Some(0), ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: Some(0.0), ..Default::default() },
        ];
        for cfg in bad {
            assert!(fit(ModelFamily::Logistic, &data, &cfg).is_err());
        }
    }

    #[test]
    fn single_class_rejected() {
        let mut data = toy(10);
        data.labels.iter_mut().for_each(|y| *y = true);
        assert!(matches!(
            fit(ModelFamily::Mlp, &data, &TrainConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn one_epoch_step_count() {
        let data = toy(450);
        let cfg = TrainConfig {
            epochs: Some(1),
            hidden_layers: vec![8, 8],
            ..Default::default()
        };
        let out = fit(ModelFamily::Mlp, &data, &cfg).unwrap();
        assert_eq!(out.steps, 3);
        assert_eq!(out.adam.unwrap().t, 3);
    }

    #[test]
    fn tiny_c_zeroes_weights() {
        let data = toy(200);
        let cfg = TrainConfig {
            l1_c: 1e-4,
            epochs: Some(50),
            ..Default::default()
        };
        let m = train_logistic(&data, &cfg).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        // intercept still moves toward the base rate
        assert!(m.intercept.abs() > 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy(300);
        let cfg = TrainConfig {
            epochs: Some(5),
            hidden_layers: vec![16, 16],
            seed: 42,
            ..Default::default()
        };
        let a = fit(ModelFamily::Mlp, &data, &cfg).unwrap();
        let b = fit(ModelFamily::Mlp, &data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let c = fit(ModelFamily::Mlp, &data, &TrainConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn tolerance_stop_fires() {
        let data = toy(200);
        let cfg = TrainConfig {
            epochs: Some(5000),
            tol: Some(1e-4),
            ..Default::default()
        };
        let out = fit(ModelFamily::Logistic, &data, &cfg).unwrap();
        assert!(out.epochs_run < 5000);
        let cfg = TrainConfig { epochs: Some(30), tol: None, ..cfg };
        assert_eq!(fit(ModelFamily::Logistic, &data, &cfg).unwrap().epochs_run, 30);
    }
}
