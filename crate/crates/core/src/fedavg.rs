//! Federated averaging over simulated provincial clients.
//!
//! The server side only ever sees [`ParamVector`]s. Client data lives behind
//! the [`FederatedClient`] trait, whose interface has no way to hand a
//! matrix back:
//!
//! ```compile_fail
//! use fedprov::fedavg::ClientState;
//! fn peek(c: &ClientState) -> usize {
//!     c.data.len()
//! }
//! ```

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AdamState, LocalTrainer, ModelFamily, ParamVector, TrainConfig};
use crate::par::Execution;
use crate::rng;
use crate::schema::{LabeledMatrix, Province, Standardizer};

/// Stop early once the global-test AUC has gained less than `min_delta` over
/// the last `window` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Plateau {
    pub min_delta: f64,
    pub window: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            min_delta: 1e-3,
            window: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    /// Clients drawn per round.
    pub participants: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Evaluate the global model every this many rounds (needs an evaluator).
    pub eval_every: Option<usize>,
    pub plateau: Option<Plateau>,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            participants: 2,
            rounds: 100,
            local_epochs: 1,
            eval_every: None,
            plateau: None,
            execution: Execution::default(),
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, total_clients: usize) -> Result<()> {
        if self.participants == 0 || self.participants > total_clients {
            return Err(Error::validation(
                "participants",
                format!("{} not in 1..={total_clients}", self.participants),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::validation("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::validation("local_epochs", "must be at least 1"));
        }
        if self.eval_every == Some(0) {
            return Err(Error::validation("eval_every", "must be at least 1"));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 {
                return Err(Error::validation("plateau.window", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// What the server may ask of a client.
pub trait FederatedClient: Send {
    fn id(&self) -> String;

    fn n_samples(&self) -> usize;

    /// Resets local optimizer state for a new run. `index` picks the
    /// client's shuffle substream.
    fn begin(&mut self, family: ModelFamily, cfg: &TrainConfig, index: u64);

    /// Runs `epochs` local epochs from `global` and returns the new
    /// parameters. `global` itself is left untouched.
    fn client_update(&mut self, global: &ParamVector, epochs: usize) -> Result<ParamVector>;
}

/// One province holding its own standardized training matrix.
#[derive(Debug, Clone)]
pub struct ClientState {
    province: Province,
    data: LabeledMatrix,
    standardizer: Standardizer,
    trainer: Option<LocalTrainer>,
}

impl ClientState {
    /// Fits a local standardizer on `raw` and keeps the scaled copy.
    pub fn new(province: Province, raw: LabeledMatrix) -> Result<Self> {
        let standardizer = if raw.is_empty() {
            Standardizer::identity()
        } else {
            Standardizer::fit(&raw)?
        };
        let data = standardizer.apply(&raw);
        Ok(ClientState {
            province,
            data,
            standardizer,
            trainer: None,
        })
    }

    pub fn province(&self) -> Province {
        self.province
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.trainer.as_ref().and_then(|t| t.adam_state())
    }

    pub fn steps(&self) -> u64 {
        self.trainer.as_ref().map_or(0, |t| t.steps())
    }
}

impl FederatedClient for ClientState {
    fn id(&self) -> String {
        self.province.code().to_string()
    }

    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn begin(&mut self, family: ModelFamily, cfg: &TrainConfig, index: u64) {
        self.trainer = Some(LocalTrainer::new(family, cfg.clone(), index));
    }

    fn client_update(&mut self, global: &ParamVector, epochs: usize) -> Result<ParamVector> {
        let trainer = self
            .trainer
            .as_mut()
            .ok_or_else(|| Error::Config(format!("client {} used before begin()", self.province)))?;
        let mut params = global.clone();
        for _ in 0..epochs {
            trainer.epoch(&mut params, &self.data)?;
        }
        Ok(params)
    }
}

/// Uniform `n`-subset of `0..k`, sorted ascending.
pub fn select_participants<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > k {
        return Err(Error::validation("participants", format!("{n} not in 1..={k}")));
    }
    let mut picked = rand::seq::index::sample(rng, k, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Elementwise arithmetic mean, accumulated in list order as offsets from the
/// elementwise minimum. Identical inputs come back unchanged and two inputs
/// average the same way in either order.
pub fn aggregate(updates: &[ParamVector]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::Empty("update list"))?;
    for u in &updates[1..] {
        u.ensure_layout(&first.layout)?;
    }
    let n = updates.len() as f64;
    let values = (0..first.len())
        .map(|j| {
            let lo = updates.iter().map(|u| u.values[j]).fold(f64::INFINITY, f64::min);
            let offset: f64 = updates.iter().map(|u| u.values[j] - lo).sum();
            lo + offset / n
        })
        .collect();
    ParamVector::new(values, first.layout.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<String>,
    pub checksum: u64,
    pub global_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoundHistory {
    pub rounds: Vec<RoundRecord>,
}

impl RoundHistory {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("round,selected,checksum,global_auc\n");
        for r in &self.rounds {
            let auc = r.global_auc.map(|a| format!("{a}")).unwrap_or_default();
            out.push_str(&format!("{},{},{:016x},{auc}\n", r.round, r.selected.join(";"), r.checksum));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub params: ParamVector,
    pub history: RoundHistory,
}

/// Scores a broadcast model on held-out data, returning its AUC.
pub type Evaluator<'a> = &'a (dyn Fn(&ParamVector) -> Result<f64> + Sync);

/// Runs FedAvg. `train` supplies the local step rule; its seed is replaced by
/// `fed.seed`, which also drives initialization and client selection.
pub fn run_fedavg<C: FederatedClient>(
    clients: &mut [C],
    family: ModelFamily,
    fed: &FedConfig,
    train: &TrainConfig,
    evaluator: Option<Evaluator<'_>>,
) -> Result<FedOutcome> {
    fed.validate(clients.len())?;
    if clients.iter().all(|c| c.n_samples() == 0) {
        return Err(Error::Empty("every client dataset"));
    }
    let local = TrainConfig {
        seed: fed.seed,
        ..train.clone()
    };
    for (i, c) in clients.iter_mut().enumerate() {
        c.begin(family, &local, i as u64);
    }
    let mut global = local.initial_params(family);
    let mut select_rng = rng::stream(fed.seed, "select");
    let mut history = RoundHistory::default();
    let mut aucs = Vec::new();

    for round in 1..=fed.rounds {
        let selected = select_participants(clients.len(), fed.participants, &mut select_rng)?;
        let current = &global;
        let results: Vec<(String, usize)> = clients.iter().map(|c| (c.id(), c.n_samples())).collect();
        let mut chosen = vec![false; clients.len()];
        for &i in &selected {
            if results[i].1 == 0 {
                log::warn!("round {round}: client {} has no data, skipped", results[i].0);
            } else {
                chosen[i] = true;
            }
        }
        let mut indexed: Vec<(usize, &mut C)> = clients.iter_mut().enumerate().collect();
        let updates = fed.execution.map_mut(&mut indexed, |(i, c)| {
            chosen[*i].then(|| c.client_update(current, fed.local_epochs))
        });
        let updates = updates.into_iter().flatten().collect::<Result<Vec<_>>>()?;
        if updates.is_empty() {
            log::warn!("round {round}: no participant had data; global model unchanged");
        } else {
            global = aggregate(&updates)?;
        }

        let due = fed.eval_every.is_some_and(|k| round % k == 0) || fed.plateau.is_some();
        let global_auc = match evaluator {
            Some(eval) if due => Some(eval(&global)?),
            _ => None,
        };
        history.rounds.push(RoundRecord {
            round,
            selected: selected.iter().map(|&i| results[i].0.clone()).collect(),
            checksum: global.checksum(),
            global_auc,
        });
        if let (Some(p), Some(auc)) = (fed.plateau, global_auc) {
            aucs.push(auc);
            if aucs.len() > p.window {
                let split = aucs.len() - p.window;
                let before = aucs[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let after = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if after - before < p.min_delta {
                    log::info!("plateau reached after round {round}");
                    break;
                }
            }
        }
    }
    Ok(FedOutcome { params: global, history })
}
