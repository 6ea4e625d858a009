//! Chained-equation imputation of the optional lab values.
//!
//! Missing cells start at their column's observed mean. Each pass then visits
//! the incomplete columns from least to most missing, regresses the observed
//! entries on the other thirteen columns (least squares with intercept), and
//! overwrites the missing entries with the fitted predictions. Observed cells
//! are never modified. Predictions are clamped into the column's valid range.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{Dataset, LabeledMatrix, PartialRow, PatientRecord, FEATURE_NAMES, N_FEATURES, RANGES};

const RIDGE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub n_iterations: usize,
    /// Add Gaussian residual noise to each prediction.
    pub noise: bool,
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig {
            n_iterations: 10,
            noise: false,
            seed: 0,
        }
    }
}

/// Imputation result with per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct MiceOutput {
    pub matrix: LabeledMatrix,
    /// Frobenius norm of the change in imputed cells, one entry per iteration.
    pub deltas: Vec<f64>,
    /// Whether any regression fell back to the ridge solution.
    pub used_ridge: bool,
}

/// Fills every missing cell with its column's observed mean.
pub fn initial_fill(ds: &Dataset) -> Result<LabeledMatrix> {
    let (rows, labels) = ds.encode()?;
    let (filled, _) = mean_fill(&rows)?;
    LabeledMatrix::new(filled, labels)
}

fn mean_fill(rows: &[PartialRow]) -> Result<(Vec<[f64; N_FEATURES]>, [usize; N_FEATURES])> {
    let mut sums = [0.0; N_FEATURES];
    let mut observed = [0usize; N_FEATURES];
    for row in rows {
        for (col, slot) in row.iter().enumerate() {
            if let Some(v) = slot {
                sums[col] += v;
                observed[col] += 1;
            }
        }
    }
    let mut missing = [0usize; N_FEATURES];
    for col in 0..N_FEATURES {
        missing[col] = rows.len() - observed[col];
        if missing[col] > 0 && observed[col] == 0 {
            return Err(Error::NoObservedValues(FEATURE_NAMES[col]));
        }
    }
    let filled = rows
        .iter()
        .map(|row| {
            let mut out = [0.0; N_FEATURES];
            for col in 0..N_FEATURES {
                out[col] = row[col].unwrap_or(sums[col] / observed[col] as f64);
            }
            out
        })
        .collect();
    Ok((filled, missing))
}

pub fn mice_impute(ds: &Dataset, cfg: &MiceConfig) -> Result<LabeledMatrix> {
    Ok(mice_impute_traced(ds, cfg)?.matrix)
}

pub fn mice_impute_traced(ds: &Dataset, cfg: &MiceConfig) -> Result<MiceOutput> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset to impute"));
    }
    let (rows, labels) = ds.encode()?;
    let out = impute_rows(&rows, cfg)?;
    Ok(MiceOutput {
        matrix: LabeledMatrix::new(out.0, labels)?,
        deltas: out.1,
        used_ridge: out.2,
    })
}

/// Imputes a dataset and rebuilds complete records.
pub fn impute_dataset(ds: &Dataset, cfg: &MiceConfig) -> Result<Dataset> {
    let m = mice_impute(ds, cfg)?;
    let records = m
        .rows
        .iter()
        .zip(&ds.records)
        .map(|(row, r)| PatientRecord::from_slots(&row.map(Some), r.diabetes, r.province))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(records, format!("{}/imputed", ds.provenance)))
}

type Imputed = (Vec<[f64; N_FEATURES]>, Vec<f64>, bool);

fn impute_rows(rows: &[PartialRow], cfg: &MiceConfig) -> Result<Imputed> {
    if cfg.n_iterations == 0 {
        return Err(Error::validation("n_iterations", "must be at least 1"));
    }
    let (mut x, missing) = mean_fill(rows)?;
    let mut order: Vec<usize> = (0..N_FEATURES).filter(|&c| missing[c] > 0).collect();
    order.sort_by_key(|&c| (missing[c], c));
    if order.is_empty() {
        return Ok((x, Vec::new(), false));
    }
    let mut rng = rng::stream(cfg.seed, "mice");
    let mut deltas = Vec::with_capacity(cfg.n_iterations);
    let mut used_ridge = false;
    for _ in 0..cfg.n_iterations {
        let mut change = 0.0;
        for &col in &order {
            let (obs, miss): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| rows[i][col].is_some());
            let fit = fit_conditional(&x, &obs, col);
            used_ridge |= fit.ridge;
            let noise = if cfg.noise && fit.residual_sd > 0.0 {
                Normal::new(0.0, fit.residual_sd).ok()
            } else {
                None
            };
            let (lo, hi) = RANGES[col].unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            for &i in &miss {
                let mut v = fit.predict(&x[i]);
                if let Some(d) = &noise {
                    v += d.sample(&mut rng);
                }
                let v = v.clamp(lo, hi);
                change += (v - x[i][col]).powi(2);
                x[i][col] = v;
            }
        }
        deltas.push(change.sqrt());
    }
    if used_ridge {
        log::info!("rank-deficient imputation design; used ridge fallback (lambda = {RIDGE_LAMBDA})");
    }
    Ok((x, deltas, used_ridge))
}

struct Conditional {
    target: usize,
    intercept: f64,
    /// Coefficient per column; the target's own entry is zero.
    coefs: [f64; N_FEATURES],
    residual_sd: f64,
    ridge: bool,
}

impl Conditional {
    fn predict(&self, row: &[f64; N_FEATURES]) -> f64 {
        let mut s = self.intercept;
        for (col, (w, v)) in self.coefs.iter().zip(row).enumerate() {
            if col != self.target {
                s += w * v;
            }
        }
        s
    }
}

/// Least squares of `x[.][target]` on the other columns over the rows in `obs`,
/// solved through centered normal equations.
fn fit_conditional(x: &[[f64; N_FEATURES]], obs: &[usize], target: usize) -> Conditional {
    const P: usize = N_FEATURES - 1;
    let preds: Vec<usize> = (0..N_FEATURES).filter(|&c| c != target).collect();
    let n = obs.len() as f64;
    let mut mx = [0.0; P];
    let mut my = 0.0;
    for &i in obs {
        for (k, &c) in preds.iter().enumerate() {
            mx[k] += x[i][c];
        }
        my += x[i][target];
    }
    mx.iter_mut().for_each(|m| *m /= n);
    my /= n;

    let mut xtx = [[0.0; P]; P];
    let mut xty = [0.0; P];
    for &i in obs {
        let mut d = [0.0; P];
        for (k, &c) in preds.iter().enumerate() {
            d[k] = x[i][c] - mx[k];
        }
        let dy = x[i][target] - my;
        for a in 0..P {
            xty[a] += d[a] * dy;
            for b in 0..=a {
                xtx[a][b] += d[a] * d[b];
            }
        }
    }
    for a in 0..P {
        for b in 0..a {
            xtx[b][a] = xtx[a][b];
        }
    }

    let (beta, ridge) = match solve_spd(&xtx, &xty, 1e-12) {
        Some(beta) => (beta, false),
        None => {
            let mut reg = xtx;
            for (a, row) in reg.iter_mut().enumerate() {
                row[a] += RIDGE_LAMBDA;
            }
            (solve_spd(&reg, &xty, 0.0).unwrap_or([0.0; P]), true)
        }
    };

    let mut coefs = [0.0; N_FEATURES];
    let mut intercept = my;
    for (k, &c) in preds.iter().enumerate() {
        coefs[c] = beta[k];
        intercept -= beta[k] * mx[k];
    }
    let fitted = Conditional {
        target,
        intercept,
        coefs,
        residual_sd: 0.0,
        ridge,
    };
    let dof = (obs.len() as f64 - P as f64 - 1.0).max(1.0);
    let rss: f64 = obs.iter().map(|&i| (x[i][target] - fitted.predict(&x[i])).powi(2)).sum();
    Conditional {
        residual_sd: (rss / dof).sqrt(),
        ..fitted
    }
}

/// Cholesky solve; `None` when a pivot falls to `rel_tol` times the largest
/// diagonal entry or below.
fn solve_spd<const P: usize>(a: &[[f64; P]; P], b: &[f64; P], rel_tol: f64) -> Option<[f64; P]> {
    let scale = (0..P).map(|i| a[i][i]).fold(0.0_f64, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let mut l = [[0.0; P]; P];
    for i in 0..P {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= rel_tol * scale {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; P];
    for i in 0..P {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut out = [0.0; P];
    for i in (0..P).rev() {
        let s: f64 = (i + 1..P).map(|k| l[k][i] * out[k]).sum();
        out[i] = (y[i] - s) / l[i][i];
    }
    Some(out)
}
