//! Patient records, the fixed feature encoding, and the dataset containers
//! shared by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const N_FEATURES: usize = 14;

/// Column order used by every matrix, gradient and standardizer.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "age",
    "sex_male",
    "sbp",
    "bmi",
    "ldl",
    "hdl",
    "hba1c",
    "tg",
    "hypertension",
    "depression",
    "osteoarthritis",
    "copd",
    "htn_med",
    "corticosteroids",
];

pub const AGE: usize = 0;
pub const SEX_MALE: usize = 1;
pub const SBP: usize = 2;
pub const BMI: usize = 3;
pub const LDL: usize = 4;
pub const HDL: usize = 5;
pub const HBA1C: usize = 6;
pub const TG: usize = 7;

pub const CONTINUOUS: [usize; 7] = [AGE, SBP, BMI, LDL, HDL, HBA1C, TG];
/// The only columns allowed to be missing.
pub const OPTIONAL: [usize; 5] = [BMI, LDL, HDL, HBA1C, TG];

/// Inclusive value range of each continuous column, indexed by column.
/// Binary columns carry `None`.
pub const RANGES: [Option<(f64, f64)>; N_FEATURES] = [
    Some((18.0, 99.0)),
    None,
    Some((69.0, 218.0)),
    Some((11.0, 66.48)),
    Some((0.0, 8.81)),
    Some((0.18, 6.78)),
    Some((4.0, 17.9)),
    Some((0.2, 25.57)),
    None,
    None,
    None,
    None,
    None,
    None,
];

pub fn is_binary(col: usize) -> bool {
    RANGES[col].is_none()
}

pub fn is_optional(col: usize) -> bool {
    OPTIONAL.contains(&col)
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Province {
    AB,
    BC,
    MB,
    NL,
    NS,
    ON,
    QC,
    NB,
    PE,
}

impl Province {
    /// The seven provinces that act as federated clients.
    pub const CLIENTS: [Province; 7] = [
        Province::AB,
        Province::BC,
        Province::MB,
        Province::NL,
        Province::NS,
        Province::ON,
        Province::QC,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Province::AB => "AB",
            Province::BC => "BC",
            Province::MB => "MB",
            Province::NL => "NL",
            Province::NS => "NS",
            Province::ON => "ON",
            Province::QC => "QC",
            Province::NB => "NB",
            Province::PE => "PE",
        }
    }

    pub fn is_client(self) -> bool {
        Province::CLIENTS.contains(&self)
    }
}

impl fmt::Display for Province {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Province {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "AB" => Province::AB,
            "BC" => Province::BC,
            "MB" => Province::MB,
            "NL" => Province::NL,
            "NS" => Province::NS,
            "ON" => Province::ON,
            "QC" => Province::QC,
            "NB" => Province::NB,
            "PE" | "PEI" => Province::PE,
            _ => return Err(Error::UnknownProvince(s.to_string())),
        })
    }
}

/// One cohort row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub age_years: f64,
    pub sex_male: bool,
    pub sbp_mmhg: f64,
    pub bmi_kg_m2: Option<f64>,
    pub ldl_mmol_l: Option<f64>,
    pub hdl_mmol_l: Option<f64>,
    pub hba1c_pct: Option<f64>,
    pub tg_mmol_l: Option<f64>,
    pub hypertension: bool,
    pub depression: bool,
    pub osteoarthritis: bool,
    pub copd: bool,
    pub htn_med: bool,
    pub corticosteroids: bool,
    pub diabetes: bool,
    pub province: Province,
}

/// A record's predictors in column order, with `None` for missing values.
pub type PartialRow = [Option<f64>; N_FEATURES];

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl PatientRecord {
    /// Checks the record against the column ranges.
    pub fn validate(&self) -> Result<()> {
        let slots = self.slots();
        for (col, slot) in slots.iter().enumerate() {
            if let (Some(v), Some((lo, hi))) = (slot, RANGES[col]) {
                if !v.is_finite() || *v < lo || *v > hi {
                    return Err(Error::validation(
                        FEATURE_NAMES[col],
                        format!("{v} outside [{lo}, {hi}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn slots(&self) -> PartialRow {
        [
            Some(self.age_years),
            Some(flag(self.sex_male)),
            Some(self.sbp_mmhg),
            self.bmi_kg_m2,
            self.ldl_mmol_l,
            self.hdl_mmol_l,
            self.hba1c_pct,
            self.tg_mmol_l,
            Some(flag(self.hypertension)),
            Some(flag(self.depression)),
            Some(flag(self.osteoarthritis)),
            Some(flag(self.copd)),
            Some(flag(self.htn_med)),
            Some(flag(self.corticosteroids)),
        ]
    }

    /// Rebuilds a record from column slots. Binary slots must be exactly 0 or 1
    /// and required slots must be present.
    pub fn from_slots(slots: &PartialRow, diabetes: bool, province: Province) -> Result<Self> {
        let required = |col: usize| {
            slots[col].ok_or_else(|| Error::validation(FEATURE_NAMES[col], "required value missing"))
        };
        let binary = |col: usize| -> Result<bool> {
            match required(col)? {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(Error::validation(FEATURE_NAMES[col], format!("{v} is not 0 or 1"))),
            }
        };
        let record = PatientRecord {
            age_years: required(AGE)?,
            sex_male: binary(SEX_MALE)?,
            sbp_mmhg: required(SBP)?,
            bmi_kg_m2: slots[BMI],
            ldl_mmol_l: slots[LDL],
            hdl_mmol_l: slots[HDL],
            hba1c_pct: slots[HBA1C],
            tg_mmol_l: slots[TG],
            hypertension: binary(8)?,
            depression: binary(9)?,
            osteoarthritis: binary(10)?,
            copd: binary(11)?,
            htn_med: binary(12)?,
            corticosteroids: binary(13)?,
            diabetes,
            province,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn is_complete(&self) -> bool {
        self.slots().iter().all(Option::is_some)
    }
}

/// Encodes a record into its 14 column slots, keeping missing values as `None`.
pub fn encode_features(record: &PatientRecord) -> Result<PartialRow> {
    record.validate()?;
    Ok(record.slots())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>, provenance: impl Into<String>) -> Self {
        Dataset {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.diabetes).count()
    }

    pub fn encode(&self) -> Result<(Vec<PartialRow>, Vec<bool>)> {
        let rows = self.records.iter().map(encode_features).collect::<Result<Vec<_>>>()?;
        let labels = self.records.iter().map(|r| r.diabetes).collect();
        Ok((rows, labels))
    }

    /// Encodes a dataset that has no missing values.
    pub fn to_matrix(&self) -> Result<LabeledMatrix> {
        let (partial, labels) = self.encode()?;
        let mut rows = Vec::with_capacity(partial.len());
        for row in &partial {
            let mut full = [0.0; N_FEATURES];
            for (col, slot) in row.iter().enumerate() {
                full[col] = slot.ok_or(Error::validation(FEATURE_NAMES[col], "missing value"))?;
            }
            rows.push(full);
        }
        LabeledMatrix::new(rows, labels)
    }
}

/// Shuffles with a seeded RNG and keeps the first `round(fraction * n)` records
/// for training.
pub fn split_train_test(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset to split"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation("fraction", format!("{fraction} not in (0, 1]")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let n_train = (fraction * ds.len() as f64).round() as usize;
    let pick = |idx: &[usize], tag: &str| {
        Dataset::new(
            idx.iter().map(|&i| ds.records[i].clone()).collect(),
            format!("{}/{tag}", ds.provenance),
        )
    };
    Ok((pick(&order[..n_train], "train"), pick(&order[n_train..], "test")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvincePartition {
    pub parts: BTreeMap<Province, Dataset>,
    /// Records from provinces that do not participate (NB, PE).
    pub excluded: usize,
}

/// Groups records by province, dropping non-client provinces.
pub fn partition_by_province(ds: &Dataset) -> ProvincePartition {
    let mut parts: BTreeMap<Province, Dataset> = BTreeMap::new();
    let mut excluded = 0;
    for r in &ds.records {
        if !r.province.is_client() {
            excluded += 1;
            continue;
        }
        parts
            .entry(r.province)
            .or_insert_with(|| Dataset::new(Vec::new(), format!("{}/{}", ds.provenance, r.province)))
            .records
            .push(r.clone());
    }
    if excluded > 0 {
        log::info!("excluded {excluded} records from non-participating provinces");
    }
    ProvincePartition { parts, excluded }
}

/// Dense feature matrix with a parallel label vector. Never holds missing values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub rows: Vec<[f64; N_FEATURES]>,
    pub labels: Vec<bool>,
}

impl LabeledMatrix {
    pub fn new(rows: Vec<[f64; N_FEATURES]>, labels: Vec<bool>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        Ok(LabeledMatrix { rows, labels })
    }

    pub fn column_names() -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledMatrix {
        LabeledMatrix {
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Row-wise concatenation in argument order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledMatrix>) -> LabeledMatrix {
        let mut out = LabeledMatrix::default();
        for p in parts {
            out.rows.extend_from_slice(&p.rows);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }

    /// Flattened row-major copy of the features.
    pub fn flat_rows(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

const STD_FLOOR: f64 = 1e-8;

/// Z-scores the continuous columns with statistics from the fit data; binary
/// columns pass through (mean 0, std 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn fit(m: &LabeledMatrix) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Empty("matrix to standardize"));
        }
        let n = m.len() as f64;
        let mut s = Standardizer::identity();
        for &col in &CONTINUOUS {
            let mean = m.rows.iter().map(|r| r[col]).sum::<f64>() / n;
            let var = m.rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
            let mut std = var.sqrt();
            if std < STD_FLOOR {
                log::warn!("column {} is constant; std floored at {STD_FLOOR}", FEATURE_NAMES[col]);
                std = STD_FLOOR;
            }
            s.mean[col] = mean;
            s.std[col] = std;
        }
        Ok(s)
    }

    pub fn apply_row(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = *row;
        for &col in &CONTINUOUS {
            out[col] = (row[col] - self.mean[col]) / self.std[col];
        }
        out
    }

    pub fn apply(&self, m: &LabeledMatrix) -> LabeledMatrix {
        LabeledMatrix {
            rows: m.rows.iter().map(|r| self.apply_row(r)).collect(),
            labels: m.labels.clone(),
        }
    }
}

pub fn standardize_fit(m: &LabeledMatrix) -> Result<Standardizer> {
    Standardizer::fit(m)
}

pub fn standardize_apply(s: &Standardizer, m: &LabeledMatrix) -> LabeledMatrix {
    s.apply(m)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn encodes_in_fixed_order() {
        let r = blank(Province::AB);
        let v = encode_features(&r).unwrap();
        assert_eq!(v[AGE], Some(18.0));
        for col in 8..N_FEATURES {
            assert_eq!(v[col], Some(0.0));
        }
        assert_eq!(v[SEX_MALE], Some(0.0));
    }

    #[test]
    fn encodes_reference_means() {
        let r = PatientRecord {
            age_years: 57.1,
            sex_male: true,
            sbp_mmhg: 126.41,
            bmi_kg_m2: Some(28.94),
            ldl_mmol_l: Some(2.82),
            hdl_mmol_l: Some(1.43),
            hba1c_pct: Some(5.936),
            tg_mmol_l: Some(1.47),
            hypertension: true,
            depression: false,
            osteoarthritis: false,
            copd: false,
            htn_med: true,
            corticosteroids: false,
            diabetes: false,
            province: Province::ON,
        };
        let v = encode_features(&r).unwrap();
        let expect = [57.1, 1.0, 126.41, 28.94, 2.82, 1.43, 5.936, 1.47, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (a, b) in v.iter().zip(expect) {
            assert_eq!(a.unwrap(), b);
        }
    }

    #[test]
    fn missing_passes_through() {
        let mut r = blank(Province::AB);
        r.bmi_kg_m2 = None;
        let v = encode_features(&r).unwrap();
        assert_eq!(v[BMI], None);
        assert_eq!(v.iter().filter(|s| s.is_none()).count(), 1);
    }

    #[test]
    fn out_of_range_names_field() {
        let mut r = blank(Province::AB);
        r.sbp_mmhg = 250.0;
        match encode_features(&r) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "sbp"),
            other => panic!("unexpected {other:?}"),
        }
        r.sbp_mmhg = 120.0;
        r.age_years = 17.0;
        assert!(encode_features(&r).is_err());
    }

    #[test]
    fn from_slots_round_trips() {
        let mut r = blank(Province::QC);
        r.hba1c_pct = None;
        r.copd = true;
        let back = PatientRecord::from_slots(&encode_features(&r).unwrap(), false, Province::QC).unwrap();
        assert_eq!(back, r);
        let mut slots = encode_features(&r).unwrap();
        slots[SBP] = None;
        assert!(PatientRecord::from_slots(&slots, false, Province::QC).is_err());
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let ds = dataset(10);
        let (tr, te) = split_train_test(&ds, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let (tr2, te2) = split_train_test(&ds, 0.7, 1).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        for r in &te.records {
            assert!(!tr.records.contains(r));
        }
        let (all, none) = split_train_test(&ds, 1.0, 3).unwrap();
        assert_eq!((all.len(), none.len()), (10, 0));
        assert!(split_train_test(&Dataset::default(), 0.7, 1).is_err());
        assert!(split_train_test(&ds, 0.0, 1).is_err());
    }

    #[test]
    fn partition_groups_and_excludes() {
        let ds = Dataset::new(
            vec![blank(Province::AB), blank(Province::AB), blank(Province::ON), blank(Province::NB)],
            "t",
        );
        let p = partition_by_province(&ds);
        assert_eq!(p.parts[&Province::AB].len(), 2);
        assert_eq!(p.parts[&Province::ON].len(), 1);
        assert_eq!(p.parts.len(), 2);
        assert_eq!(p.excluded, 1);
        assert!(partition_by_province(&Dataset::default()).parts.is_empty());
    }

    #[test]
    fn province_codes_parse() {
        assert_eq!("qc".parse::<Province>().unwrap(), Province::QC);
        assert_eq!("PEI".parse::<Province>().unwrap(), Province::PE);
        match "YT".parse::<Province>() {
            Err(Error::UnknownProvince(code)) => assert_eq!(code, "YT"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn matrix_with_col(col: usize, values: &[f64]) -> LabeledMatrix {
        let rows = values
            .iter()
            .map(|&v| {
                let mut r = [0.0; N_FEATURES];
                r[col] = v;
                r
            })
            .collect();
        LabeledMatrix::new(rows, vec![false; values.len()]).unwrap()
    }

    #[test]
    fn standardizer_two_point() {
        let m = matrix_with_col(AGE, &[1.0, 3.0]);
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.mean[AGE], 2.0);
        assert_eq!(s.std[AGE], 1.0);
        let t = s.apply(&m);
        assert_eq!(t.rows[0][AGE], -1.0);
        assert_eq!(t.rows[1][AGE], 1.0);
    }

    #[test]
    fn standardizer_leaves_binaries() {
        let m = matrix_with_col(SEX_MALE, &[0.0, 1.0, 1.0]);
        let t = Standardizer::fit(&m).unwrap().apply(&m);
        let col: Vec<f64> = t.rows.iter().map(|r| r[SEX_MALE]).collect();
        assert_eq!(col, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn standardizer_floors_constant_columns() {
        let m = matrix_with_col(SBP, &[120.0, 120.0, 120.0]);
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.std[SBP], STD_FLOOR);
        assert!(s.apply(&m).rows.iter().all(|r| r[SBP] == 0.0));
    }
}
