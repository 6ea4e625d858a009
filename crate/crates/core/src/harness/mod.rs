//! Experiment matrix: local, centralized, and federated models per seed,
//! family, and resampling strategy, scored on the pooled global test set and
//! on the less-sampled provincial test sets.

mod plot;
mod published;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use plot::{calibration_svg, emit_calibration};
pub use published::{published_cross, published_global};
pub use report::{emit_report, ReportFormat};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, roc_auc, MetricsRow, Resample};
use crate::fedavg::{run_fedavg, ClientState, FedConfig, RoundHistory};
use crate::impute::{mice_impute, MiceConfig};
use crate::models::{fit, FittedModel, ModelFamily, Preprocessing, TrainConfig};
use crate::par::Execution;
use crate::rng::derive_seed;
use crate::schema::{partition_by_province, split_train_test, LabeledMatrix, Province, Standardizer};
use crate::synth::{generate_cohort, GeneratorConfig};

/// Sources scored on the less-sampled provincial test sets.
pub const CROSS_TEST_SOURCES: [Source; 4] = [
    Source::Local(Province::AB),
    Source::Local(Province::ON),
    Source::Cml,
    Source::Fl,
];

/// The less-sampled provinces used as extra test sets.
pub const CROSS_TEST_SETS: [Province; 4] = [Province::BC, Province::MB, Province::NS, Province::QC];

/// Where a model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Source {
    Local(Province),
    Cml,
    Fl,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Local(p) => write!(f, "{p}"),
            Source::Cml => f.write_str("CML"),
            Source::Fl => f.write_str("FL"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CML" => Ok(Source::Cml),
            "FL" => Ok(Source::Fl),
            _ => Ok(Source::Local(s.parse()?)),
        }
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Source {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TestSet {
    Global,
    Province(Province),
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestSet::Global => f.write_str("GLOBAL"),
            TestSet::Province(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for TestSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GLOBAL" => Ok(TestSet::Global),
            _ => Ok(TestSet::Province(s.parse()?)),
        }
    }
}

impl From<TestSet> for String {
    fn from(t: TestSet) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for TestSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub families: Vec<ModelFamily>,
    pub strategies: Vec<Resample>,
    /// Training share of each province's records.
    pub split_fraction: f64,
    /// Train one model per province as well as CML and FL.
    pub include_local: bool,
    pub calibration_bins: usize,
    pub execution: Execution,
    pub output_dir: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub mice: MiceConfig,
    pub logistic: TrainConfig,
    pub mlp: TrainConfig,
    pub fed: FedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1],
            families: vec![ModelFamily::Logistic, ModelFamily::Mlp],
            strategies: vec![Resample::None, Resample::Downsample],
            split_fraction: 0.7,
            include_local: true,
            calibration_bins: 10,
            execution: Execution::default(),
            output_dir: None,
            generator: GeneratorConfig::default(),
            mice: MiceConfig::default(),
            logistic: TrainConfig::default(),
            mlp: TrainConfig::default(),
            fed: FedConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed is required"));
        }
        if self.families.is_empty() {
            return Err(Error::validation("families", "at least one model family is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::validation("strategies", "at least one strategy is required"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::validation("split_fraction", format!("{} not in (0, 1)", self.split_fraction)));
        }
        if self.calibration_bins < 2 {
            return Err(Error::validation("calibration_bins", "must be at least 2"));
        }
        if self.mice.n_iterations == 0 {
            return Err(Error::validation("mice.n_iterations", "must be at least 1"));
        }
        self.generator.validate()?;
        self.fed.validate(self.generator.provinces.len())?;
        self.logistic.validate(ModelFamily::Logistic)?;
        self.mlp.validate(ModelFamily::Mlp)?;
        Ok(())
    }

    pub fn train_config(&self, family: ModelFamily) -> &TrainConfig {
        match family {
            ModelFamily::Logistic => &self.logistic,
            ModelFamily::Mlp => &self.mlp,
        }
    }
}

/// One province's imputed (unscaled) train and test matrices.
#[derive(Debug, Clone)]
pub struct ProvinceSplit {
    pub province: Province,
    pub train: LabeledMatrix,
    pub test: LabeledMatrix,
}

#[derive(Debug, Clone)]
pub struct PreparedSeed {
    pub seed: u64,
    pub provinces: Vec<ProvinceSplit>,
}

impl PreparedSeed {
    /// Union of the provincial test sets and each row's province.
    pub fn global_test(&self) -> (LabeledMatrix, Vec<Province>) {
        let m = LabeledMatrix::concat(self.provinces.iter().map(|p| &p.test));
        let provinces = self
            .provinces
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.province, p.test.len()))
            .collect();
        (m, provinces)
    }

    fn test_for(&self, province: Province) -> Option<&LabeledMatrix> {
        self.provinces.iter().find(|p| p.province == province).map(|p| &p.test)
    }
}

/// Generates the cohort for `seed`, splits each province, and imputes train
/// and test separately per province.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedSeed> {
    let cohort = generate_cohort(&cfg.generator, seed)?;
    let partition = partition_by_province(&cohort.dataset);
    let mut provinces = Vec::new();
    for (province, ds) in &partition.parts {
        let (train, test) = split_train_test(ds, cfg.split_fraction, derive_seed(seed, &format!("split/{province}")))?;
        let impute = |part: &crate::schema::Dataset, tag: &str| {
            let mice = MiceConfig {
                seed: derive_seed(seed, &format!("mice/{province}/{tag}")),
                ..cfg.mice.clone()
            };
            mice_impute(part, &mice)
        };
        let train = if train.is_empty() { LabeledMatrix::default() } else { impute(&train, "train")? };
        let test = if test.is_empty() { LabeledMatrix::default() } else { impute(&test, "test")? };
        provinces.push(ProvinceSplit {
            province: *province,
            train,
            test,
        });
    }
    Ok(PreparedSeed { seed, provinces })
}

/// Fits a shared standardizer on `raw` and trains on the scaled copy.
pub fn train_centralized(family: ModelFamily, raw: &LabeledMatrix, cfg: &TrainConfig) -> Result<FittedModel> {
    let standardizer = Standardizer::fit(raw)?;
    let outcome = fit(family, &standardizer.apply(raw), cfg)?;
    Ok(FittedModel {
        params: outcome.params,
        preprocessing: Preprocessing::Shared(standardizer),
    })
}

/// Runs FedAvg over one client per province. With `monitor`, the broadcast
/// model is scored on that held-out set whenever the config asks for it.
pub fn train_federated(
    parts: Vec<(Province, LabeledMatrix)>,
    family: ModelFamily,
    fed: &FedConfig,
    train: &TrainConfig,
    monitor: Option<(&LabeledMatrix, &[Province])>,
) -> Result<(FittedModel, RoundHistory)> {
    let mut clients = parts
        .into_iter()
        .map(|(p, m)| ClientState::new(p, m))
        .collect::<Result<Vec<_>>>()?;
    let standardizers: BTreeMap<Province, Standardizer> = clients
        .iter()
        .map(|c| (c.province(), c.standardizer().clone()))
        .collect();
    let preprocessing = Preprocessing::PerProvince(standardizers);
    let evaluator = monitor.map(|(test, provinces)| {
        let preprocessing = preprocessing.clone();
        move |params: &crate::models::ParamVector| {
            let model = FittedModel {
                params: params.clone(),
                preprocessing: preprocessing.clone(),
            };
            roc_auc(&model.predict(test, provinces)?, &test.labels)
        }
    });
    let outcome = run_fedavg(
        &mut clients,
        family,
        fed,
        train,
        evaluator.as_ref().map(|e| e as crate::fedavg::Evaluator<'_>),
    )?;
    Ok((
        FittedModel {
            params: outcome.params,
            preprocessing,
        },
        outcome.history,
    ))
}

/// One scored (model, test set) pair for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub seed: u64,
    pub family: ModelFamily,
    pub strategy: Resample,
    pub source: Source,
    pub test_set: TestSet,
    pub metrics: MetricsRow,
}

/// A model that could not be trained or scored. `source` is `None` when the
/// whole seed failed before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub family: ModelFamily,
    pub strategy: Resample,
    pub source: Option<Source>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

/// Seed-averaged metrics for one (family, strategy, source, test set) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: ModelFamily,
    pub strategy: Resample,
    pub source: Source,
    pub test_set: TestSet,
    pub n_seeds: usize,
    pub auc: Option<Stat>,
    pub f1: Stat,
    pub precision: Stat,
    pub recall: Stat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<CellRow>,
    pub failures: Vec<CellFailure>,
}

impl ReportTable {
    pub fn families(&self) -> Vec<ModelFamily> {
        let mut f: Vec<_> = self.rows.iter().map(|r| r.family).collect();
        f.sort();
        f.dedup();
        f
    }

    /// Groups rows by key in sorted order and averages over seeds.
    pub fn summary(&self) -> Vec<SummaryRow> {
        type Key = (ModelFamily, Source, Resample, TestSet);
        let mut groups: BTreeMap<Key, Vec<&MetricsRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.family, r.source, r.strategy, r.test_set))
                .or_default()
                .push(&r.metrics);
        }
        groups
            .into_iter()
            .map(|((family, source, strategy, test_set), ms)| {
                let col = |f: fn(&MetricsRow) -> f64| Stat::of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()).unwrap();
                let aucs: Vec<f64> = ms.iter().filter_map(|m| m.auc).collect();
                SummaryRow {
                    family,
                    strategy,
                    source,
                    test_set,
                    n_seeds: ms.len(),
                    auc: Stat::of(&aucs),
                    f1: col(|m| m.f1),
                    precision: col(|m| m.precision),
                    recall: col(|m| m.recall),
                }
            })
            .collect()
    }

    /// Seed-averaged row for one key, if any seed produced it.
    pub fn mean(&self, family: ModelFamily, strategy: Resample, source: Source, test_set: TestSet) -> Option<SummaryRow> {
        self.summary()
            .into_iter()
            .find(|r| r.family == family && r.strategy == strategy && r.source == source && r.test_set == test_set)
    }
}

/// Global-test probabilities of a CML or FL model, kept for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub seed: u64,
    pub family: ModelFamily,
    pub strategy: Resample,
    pub source: Source,
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatrixRun {
    pub table: ReportTable,
    pub predictions: Vec<Predictions>,
}

#[derive(Debug, Default)]
struct CellOutput {
    rows: Vec<CellRow>,
    failures: Vec<CellFailure>,
    predictions: Vec<Predictions>,
}

fn run_cell(cfg: &ExperimentConfig, data: &PreparedSeed, family: ModelFamily, strategy: Resample) -> CellOutput {
    let seed = data.seed;
    let mut out = CellOutput::default();
    let fail = |source: Option<Source>, e: Error| CellFailure {
        seed,
        family,
        strategy,
        source,
        message: e.to_string(),
    };
    let base = cfg.train_config(family);
    let train_cfg = |tag: &str| TrainConfig {
        seed: derive_seed(seed, &format!("train/{tag}")),
        ..base.clone()
    };
    let (global_test, global_provinces) = data.global_test();

    let mut resampled = Vec::new();
    for p in &data.provinces {
        match strategy.apply(&p.train, derive_seed(seed, &format!("resample/{}", p.province))) {
            Ok(m) => resampled.push((p.province, m)),
            Err(e) => {
                // a province whose training set cannot be resampled still joins CML and FL unresampled
                log::warn!("seed {seed} {}: resampling failed ({e})", p.province);
                out.failures.push(fail(Some(Source::Local(p.province)), e));
                resampled.push((p.province, p.train.clone()));
            }
        }
    }

    let score = |source: Source, model: &FittedModel, out: &mut CellOutput| -> Result<()> {
        let mut sets = vec![(TestSet::Global, global_test.clone(), global_provinces.clone())];
        if CROSS_TEST_SOURCES.contains(&source) {
            for p in CROSS_TEST_SETS {
                if let Some(t) = data.test_for(p) {
                    sets.push((TestSet::Province(p), t.clone(), vec![p; t.len()]));
                }
            }
        }
        for (test_set, test, provinces) in sets {
            if test.is_empty() {
                continue;
            }
            let probs = model.predict(&test, &provinces)?;
            let metrics = evaluate(&probs, &test.labels)?;
            if test_set == TestSet::Global && matches!(source, Source::Cml | Source::Fl) {
                out.predictions.push(Predictions {
                    seed,
                    family,
                    strategy,
                    source,
                    probs,
                    labels: test.labels.clone(),
                });
            }
            out.rows.push(CellRow {
                seed,
                family,
                strategy,
                source,
                test_set,
                metrics,
            });
        }
        Ok(())
    };

    if cfg.include_local {
        for (province, train) in &resampled {
            let source = Source::Local(*province);
            let result = train_centralized(family, train, &train_cfg(&province.to_string()))
                .and_then(|m| score(source, &m, &mut out));
            if let Err(e) = result {
                out.failures.push(fail(Some(source), e));
            }
        }
    }

    let pooled = LabeledMatrix::concat(data.provinces.iter().map(|p| &p.train));
    let cml = strategy
        .apply(&pooled, derive_seed(seed, "resample/CML"))
        .and_then(|m| train_centralized(family, &m, &train_cfg("CML")))
        .and_then(|m| score(Source::Cml, &m, &mut out));
    if let Err(e) = cml {
        out.failures.push(fail(Some(Source::Cml), e));
    }

    let fed = FedConfig {
        seed: derive_seed(seed, "train/FL"),
        ..cfg.fed.clone()
    };
    let monitor = (cfg.fed.eval_every.is_some() || cfg.fed.plateau.is_some())
        .then_some((&global_test, global_provinces.as_slice()));
    let fl = train_federated(resampled, family, &fed, base, monitor).and_then(|(m, _)| score(Source::Fl, &m, &mut out));
    if let Err(e) = fl {
        out.failures.push(fail(Some(Source::Fl), e));
    }
    out
}

/// Runs every (seed, family, strategy) cell. Failures are recorded per cell
/// rather than aborting the matrix.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixRun> {
    cfg.validate()?;
    let prepared = cfg.execution.map(cfg.seeds.clone(), |s| prepare_seed(cfg, s));
    let mut run = MatrixRun {
        table: ReportTable {
            seeds: cfg.seeds.clone(),
            ..ReportTable::default()
        },
        ..MatrixRun::default()
    };
    let mut jobs = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        for &family in &cfg.families {
            for &strategy in &cfg.strategies {
                match p {
                    Ok(_) => jobs.push((i, family, strategy)),
                    Err(e) => run.table.failures.push(CellFailure {
                        seed: cfg.seeds[i],
                        family,
                        strategy,
                        source: None,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    let outputs = cfg.execution.map(jobs, |(i, family, strategy)| {
        let data = prepared[i].as_ref().expect("only prepared seeds are scheduled");
        log::info!("seed {} {family} {strategy}", data.seed);
        run_cell(cfg, data, family, strategy)
    });
    for o in outputs {
        run.table.rows.extend(o.rows);
        run.table.failures.extend(o.failures);
        run.predictions.extend(o.predictions);
    }
    Ok(run)
}

/// Writes the report tables and calibration files for a finished run.
pub fn emit_all(run: &MatrixRun, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = emit_report(&run.table, dir, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    files.extend(emit_calibration(&run.predictions, cfg.calibration_bins, dir)?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let small = TrainConfig {
            epochs: Some(3),
            hidden_layers: vec![8, 8],
            ..TrainConfig::default()
        };
        ExperimentConfig {
            generator: GeneratorConfig::default().scaled_to(1400),
            mice: MiceConfig {
                n_iterations: 2,
                ..MiceConfig::default()
            },
            logistic: TrainConfig {
                epochs: Some(3),
                ..TrainConfig::default()
            },
            mlp: small,
            fed: FedConfig {
                rounds: 3,
                ..FedConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn source_and_test_set_round_trip() {
        for s in ["AB", "QC", "CML", "FL"] {
            assert_eq!(s.parse::<Source>().unwrap().to_string(), s);
        }
        assert!("XX".parse::<Source>().is_err());
        assert_eq!("GLOBAL".parse::<TestSet>().unwrap(), TestSet::Global);
        let json = serde_json::to_string(&Source::Local(Province::ON)).unwrap();
        assert_eq!(json, "\"ON\"");
    }

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::default();
        ok.validate().unwrap();
        for bad in [
            ExperimentConfig { seeds: vec![], ..ok.clone() },
            ExperimentConfig { strategies: vec![], ..ok.clone() },
            ExperimentConfig { families: vec![], ..ok.clone() },
            ExperimentConfig { split_fraction: 1.0, ..ok.clone() },
        ] {
            assert!(bad.validate().unwrap_err().is_validation());
        }
    }

    #[test]
    fn toml_partial_override() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seeds = [4, 5]
            strategies = ["downsample"]
            [mlp]
            epochs = 7
            [fed]
            rounds = 12
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, [4, 5]);
        assert_eq!(cfg.strategies, [Resample::Downsample]);
        assert_eq!(cfg.mlp.epochs, Some(7));
        assert_eq!(cfg.mlp.hidden_layers, [128, 128]);
        assert_eq!(cfg.fed.rounds, 12);
        assert_eq!(cfg.fed.participants, 2);
        assert!(toml::from_str::<ExperimentConfig>("sedes = [1]").is_err());
    }

    #[test]
    fn split_has_no_leakage() {
        let cfg = tiny_config();
        let data = prepare_seed(&cfg, 3).unwrap();
        assert_eq!(data.provinces.len(), 7);
        let total: usize = data.provinces.iter().map(|p| p.train.len() + p.test.len()).sum();
        assert_eq!(total, cfg.generator.total_patients());
        let (global, provinces) = data.global_test();
        assert_eq!(global.len(), provinces.len());
        assert_eq!(global.len(), data.provinces.iter().map(|p| p.test.len()).sum::<usize>());
        for p in &data.provinces {
            let expected = (cfg.split_fraction * (p.train.len() + p.test.len()) as f64).round() as usize;
            assert_eq!(p.train.len(), expected);
            assert!(p.train.rows.iter().chain(&p.test.rows).all(|r| r.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn matrix_layout() {
        let cfg = tiny_config();
        let run = run_matrix(&cfg).unwrap();
        assert!(run.table.failures.is_empty(), "{:?}", run.table.failures);
        for family in [ModelFamily::Logistic, ModelFamily::Mlp] {
            let global = run
                .table
                .rows
                .iter()
                .filter(|r| r.family == family && r.test_set == TestSet::Global)
                .count();
            assert_eq!(global, 18);
            let cross = run
                .table
                .rows
                .iter()
                .filter(|r| r.family == family && r.test_set != TestSet::Global)
                .count();
            assert_eq!(cross, 4 * 4 * 2);
        }
        // CML and FL for each (family, strategy)
        assert_eq!(run.predictions.len(), 8);
    }

    #[test]
    fn failing_seed_is_recorded() {
        let mut cfg = tiny_config();
        cfg.families = vec![ModelFamily::Logistic];
        cfg.strategies = vec![Resample::None];
        cfg.include_local = false;
        // one record per province: splitting leaves single-row or empty sets
        cfg.generator = GeneratorConfig::default().scaled_to(7);
        let run = run_matrix(&cfg).unwrap();
        assert!(!run.table.failures.is_empty());
    }

    #[test]
    fn summary_statistics() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
