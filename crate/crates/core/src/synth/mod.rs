//! Synthetic provincial cohorts.
//!
//! Features are drawn independently from truncated marginals, labels from a
//! logistic ground-truth risk model whose intercept is tuned per province to a
//! target positive rate, and the optional lab values are then blanked
//! completely at random.

mod marginals;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use marginals::{ContinuousSpec, Family, TruncatedSampler};

use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::rng;
use crate::schema::{
    feature_index, is_binary, is_optional, Dataset, PatientRecord, Province, CONTINUOUS, FEATURE_NAMES,
    N_FEATURES, RANGES,
};

/// Marginal targets for every predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub continuous: BTreeMap<String, ContinuousSpec>,
    /// Positive rate of each binary predictor.
    pub binary: BTreeMap<String, f64>,
}

/// Missing-completely-at-random rate per optional feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MissingnessSpec {
    pub rates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceProfile {
    pub code: Province,
    pub n_patients: usize,
    pub positive_rate: f64,
}

/// Ground-truth label model. Coefficients act on continuous features
/// z-scored with the [`FeatureSpec`] targets and on raw 0/1 binaries;
/// unlisted features have coefficient zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskModel {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub features: FeatureSpec,
    pub missingness: MissingnessSpec,
    pub provinces: Vec<ProvinceProfile>,
    pub risk: RiskModel,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        let c = |family, mean, std, min, max| ContinuousSpec {
            family,
            mean,
            std,
            min,
            max,
        };
        let continuous = [
            ("age", c(Family::Normal, 57.1, 14.39, 18.0, 99.0)),
            ("sbp", c(Family::Normal, 126.41, 16.01, 69.0, 218.0)),
            ("bmi", c(Family::Normal, 28.94, 6.44, 11.0, 66.48)),
            ("ldl", c(Family::Normal, 2.82, 0.95, 0.0, 8.81)),
            ("hdl", c(Family::Normal, 1.43, 0.45, 0.18, 6.78)),
            ("hba1c", c(Family::LogNormal, 5.936, 0.90, 4.0, 17.9)),
            ("tg", c(Family::LogNormal, 1.47, 0.98, 0.2, 25.57)),
        ];
        let binary = [
            ("sex_male", 0.4582),
            ("hypertension", 0.3951),
            ("depression", 0.2140),
            ("osteoarthritis", 0.1806),
            ("copd", 0.0527),
            ("htn_med", 0.4289),
            // the published count 151 of 11,631 is 1.3%; the printed percentage disagrees
            ("corticosteroids", 0.013),
        ];
        FeatureSpec {
            continuous: continuous.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            binary: binary.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        let rates = [("bmi", 0.2079), ("ldl", 0.0044), ("hdl", 0.0003), ("hba1c", 0.2834), ("tg", 0.0005)];
        MissingnessSpec {
            rates: rates.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl ProvinceProfile {
    pub fn defaults() -> Vec<ProvinceProfile> {
        let p = |code, n_patients, positive_rate| ProvinceProfile {
            code,
            n_patients,
            positive_rate,
        };
        // base rate 0.164 puts pooled prevalence at 18.36% given the QC/NS skew
        vec![
            p(Province::AB, 2600, 0.164),
            p(Province::BC, 900, 0.164),
            p(Province::MB, 1400, 0.164),
            p(Province::NL, 1100, 0.164),
            p(Province::NS, 1200, 0.22),
            p(Province::ON, 3400, 0.164),
            p(Province::QC, 1030, 0.32),
        ]
    }
}

impl Default for RiskModel {
    fn default() -> Self {
        let coefficients = [
            ("hba1c", 1.65),
            ("age", 0.55),
            ("bmi", 0.55),
            ("sbp", 0.25),
            ("tg", 0.35),
            ("hdl", -0.35),
            ("hypertension", 0.4),
            ("htn_med", 0.4),
        ];
        RiskModel {
            intercept: 0.0,
            coefficients: coefficients.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            features: FeatureSpec::default(),
            missingness: MissingnessSpec::default(),
            provinces: ProvinceProfile::defaults(),
            risk: RiskModel::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn total_patients(&self) -> usize {
        self.provinces.iter().map(|p| p.n_patients).sum()
    }

    /// Rescales province sizes proportionally to a new total (rounding per province).
    pub fn scaled_to(&self, total: usize) -> GeneratorConfig {
        let current = self.total_patients().max(1) as f64;
        let mut out = self.clone();
        for p in &mut out.provinces {
            p.n_patients = ((p.n_patients as f64) * total as f64 / current).round().max(1.0) as usize;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.features.resolve()?;
        self.missingness.resolve()?;
        self.risk.coefficient_vector()?;
        if self.provinces.is_empty() {
            return Err(Error::Config("no province profiles".into()));
        }
        for p in &self.provinces {
            if p.n_patients == 0 {
                return Err(Error::Config(format!("province {}: n_patients must be > 0", p.code)));
            }
            if !(p.positive_rate > 0.0 && p.positive_rate < 1.0) {
                return Err(Error::Config(format!(
                    "province {}: positive rate {} outside (0, 1)",
                    p.code, p.positive_rate
                )));
            }
        }
        Ok(())
    }
}

/// Per-column sampling plan.
#[derive(Debug, Clone)]
pub struct ResolvedFeatures {
    samplers: Vec<Option<TruncatedSampler>>,
    rates: [f64; N_FEATURES],
    center: [f64; N_FEATURES],
    scale: [f64; N_FEATURES],
}

impl FeatureSpec {
    pub fn resolve(&self) -> Result<ResolvedFeatures> {
        for name in self.continuous.keys().chain(self.binary.keys()) {
            if feature_index(name).is_none() {
                return Err(Error::Config(format!("unknown feature `{name}`")));
            }
        }
        let mut samplers = vec![None; N_FEATURES];
        let mut rates = [0.0; N_FEATURES];
        let mut center = [0.0; N_FEATURES];
        let mut scale = [1.0; N_FEATURES];
        for (col, name) in FEATURE_NAMES.iter().enumerate() {
            if is_binary(col) {
                let rate = *self
                    .binary
                    .get(*name)
                    .ok_or_else(|| Error::Config(format!("missing binary rate for `{name}`")))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Config(format!("{name}: rate {rate} outside [0, 1]")));
                }
                rates[col] = rate;
            } else {
                let spec = self
                    .continuous
                    .get(*name)
                    .ok_or_else(|| Error::Config(format!("missing continuous spec for `{name}`")))?;
                let (lo, hi) = RANGES[col].expect("continuous column has a range");
                if spec.min < lo || spec.max > hi {
                    return Err(Error::Config(format!(
                        "{name}: clamp range [{}, {}] exceeds schema range [{lo}, {hi}]",
                        spec.min, spec.max
                    )));
                }
                samplers[col] = Some(TruncatedSampler::new(spec, name)?);
                center[col] = spec.mean;
                scale[col] = spec.std;
            }
        }
        Ok(ResolvedFeatures {
            samplers,
            rates,
            center,
            scale,
        })
    }
}

impl ResolvedFeatures {
    fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; N_FEATURES] {
        let mut row = [0.0; N_FEATURES];
        for col in 0..N_FEATURES {
            row[col] = match &self.samplers[col] {
                Some(s) => s.sample(rng),
                None => {
                    if rng.random::<f64>() < self.rates[col] {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        row
    }

    /// Continuous columns z-scored against the configured target moments, binaries raw.
    pub fn risk_inputs(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut z = *row;
        for &col in &CONTINUOUS {
            z[col] = (row[col] - self.center[col]) / self.scale[col];
        }
        z
    }
}

impl MissingnessSpec {
    /// Rate per column; only optional columns may carry a rate, and rates
    /// must lie in [0, 1).
    pub fn resolve(&self) -> Result<[f64; N_FEATURES]> {
        let mut out = [0.0; N_FEATURES];
        for (name, &rate) in &self.rates {
            let col = feature_index(name).ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))?;
            if !is_optional(col) {
                return Err(Error::Config(format!("`{name}` is always observed and cannot carry a missing rate")));
            }
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("`{name}` missing rate {rate} outside [0, 1)")));
            }
            out[col] = rate;
        }
        Ok(out)
    }
}

impl RiskModel {
    pub fn coefficient_vector(&self) -> Result<[f64; N_FEATURES]> {
        let mut out = [0.0; N_FEATURES];
        for (name, &w) in &self.coefficients {
            let col = feature_index(name).ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))?;
            out[col] = w;
        }
        Ok(out)
    }

    /// Linear score without the intercept.
    fn linear(coefs: &[f64; N_FEATURES], z: &[f64; N_FEATURES]) -> f64 {
        coefs.iter().zip(z).map(|(w, x)| w * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub dataset: Dataset,
    /// Intercept selected for each province to reach its target rate.
    pub intercepts: BTreeMap<Province, f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intercept whose induced label count is closest to `target` under common
/// random numbers `u`.
fn tune_intercept(scores: &[f64], u: &[f64], target: usize) -> f64 {
    let count = |b: f64| scores.iter().zip(u).filter(|(s, u)| **u < sigmoid(b + **s)).count();
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    let mut best = (usize::MAX, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        let gap = c.abs_diff(target);
        if gap < best.0 {
            best = (gap, mid);
        }
        match c.cmp(&target) {
            std::cmp::Ordering::Less => lo = mid,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => return mid,
        }
    }
    best.1
}

/// Draws a complete cohort (no missing values).
pub fn generate_complete(cfg: &GeneratorConfig, seed: u64) -> Result<GeneratedCohort> {
    cfg.validate()?;
    let features = cfg.features.resolve()?;
    let coefs = cfg.risk.coefficient_vector()?;
    let mut records = Vec::with_capacity(cfg.total_patients());
    let mut intercepts = BTreeMap::new();
    for profile in &cfg.provinces {
        let mut rng = rng::stream(seed, &format!("cohort/{}", profile.code));
        let mut rows = Vec::with_capacity(profile.n_patients);
        let mut scores = Vec::with_capacity(profile.n_patients);
        let mut u = Vec::with_capacity(profile.n_patients);
        for _ in 0..profile.n_patients {
            let row = features.sample_row(&mut rng);
            scores.push(RiskModel::linear(&coefs, &features.risk_inputs(&row)));
            u.push(rng.random::<f64>());
            rows.push(row);
        }
        let target = (profile.positive_rate * profile.n_patients as f64).round() as usize;
        let b = tune_intercept(&scores, &u, target);
        intercepts.insert(profile.code, b);
        for ((row, s), u) in rows.iter().zip(&scores).zip(&u) {
            let slots = row.map(Some);
            let diabetes = *u < sigmoid(b + s);
            records.push(PatientRecord::from_slots(&slots, diabetes, profile.code)?);
        }
    }
    Ok(GeneratedCohort {
        dataset: Dataset::new(records, format!("synthetic-seed-{seed}")),
        intercepts,
    })
}

/// Draws a cohort and blanks optional values per province with independent
/// missingness streams.
pub fn generate_cohort(cfg: &GeneratorConfig, seed: u64) -> Result<GeneratedCohort> {
    let complete = generate_complete(cfg, seed)?;
    let rates = cfg.missingness.resolve()?;
    let mut records = complete.dataset.records;
    for profile in &cfg.provinces {
        let mut rng = rng::stream(seed, &format!("missing/{}", profile.code));
        for r in records.iter_mut().filter(|r| r.province == profile.code) {
            blank_optional(r, &rates, &mut rng);
        }
    }
    Ok(GeneratedCohort {
        dataset: Dataset::new(records, complete.dataset.provenance),
        intercepts: complete.intercepts,
    })
}

fn blank_optional<R: Rng + ?Sized>(r: &mut PatientRecord, rates: &[f64; N_FEATURES], rng: &mut R) {
    let fields: [(usize, &mut Option<f64>); 5] = [
        (3, &mut r.bmi_kg_m2),
        (4, &mut r.ldl_mmol_l),
        (5, &mut r.hdl_mmol_l),
        (6, &mut r.hba1c_pct),
        (7, &mut r.tg_mmol_l),
    ];
    for (col, field) in fields {
        if rng.random::<f64>() < rates[col] {
            *field = None;
        }
    }
}

/// Blanks each optional cell independently with its configured rate.
pub fn inject_missingness(ds: &Dataset, spec: &MissingnessSpec, seed: u64) -> Result<Dataset> {
    let rates = spec.resolve()?;
    if let Some(r) = ds.records.iter().find(|r| !r.is_complete()) {
        return Err(Error::validation("dataset", format!("record in {} already has missing values", r.province)));
    }
    let mut rng = rng::stream(seed, "missing");
    let mut out = ds.clone();
    for r in &mut out.records {
        blank_optional(r, &rates, &mut rng);
    }
    Ok(out)
}

/// ROC-AUC of the ground-truth risk score against the realized labels.
pub fn oracle_auc(risk: &RiskModel, features: &FeatureSpec, ds: &Dataset) -> Result<f64> {
    let resolved = features.resolve()?;
    let coefs = risk.coefficient_vector()?;
    let m = ds.to_matrix()?;
    let scores: Vec<f64> = m
        .rows
        .iter()
        .map(|row| risk.intercept + RiskModel::linear(&coefs, &resolved.risk_inputs(row)))
        .collect();
    roc_auc(&scores, &m.labels)
}
