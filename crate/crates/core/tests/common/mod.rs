#![allow(dead_code)]

use fedprov::schema::{is_binary, Dataset, LabeledMatrix, PatientRecord, Province, CONTINUOUS, N_FEATURES, RANGES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard-normal continuous columns, fair-coin binaries, random labels.
pub fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> LabeledMatrix {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = [0.0; N_FEATURES];
        for (col, v) in r.iter_mut().enumerate() {
            *v = if is_binary(col) {
                f64::from(u8::from(rng.random::<bool>()))
            } else {
                normal(rng)
            };
        }
        rows.push(r);
        // alternate the first two labels so every batch has both classes
        labels.push(if i < 2 { i == 0 } else { rng.random::<bool>() });
    }
    LabeledMatrix::new(rows, labels).unwrap()
}

/// Rows whose labels follow a known logistic model exactly.
pub fn logistic_data(n: usize, weights: &[f64; N_FEATURES], intercept: f64, rng: &mut ChaCha8Rng) -> LabeledMatrix {
    let mut m = random_matrix(n, rng);
    for (r, y) in m.rows.iter().zip(m.labels.iter_mut()) {
        let z = intercept + weights.iter().zip(r).map(|(w, x)| w * x).sum::<f64>();
        *y = rng.random::<f64>() < 1.0 / (1.0 + (-z).exp());
    }
    m
}

/// Complete records whose continuous columns share one latent factor
/// (pairwise correlation 0.64), so every column is predictable from the rest.
pub fn correlated_cohort(n: usize, seed: u64) -> Dataset {
    let centers = [57.0, 0.0, 126.0, 29.0, 2.8, 1.4, 6.0, 1.5];
    let scales = [10.0, 0.0, 14.0, 4.0, 0.6, 0.25, 0.5, 0.3];
    let mut rng = rng(seed);
    let records = (0..n)
        .map(|_| {
            let z = normal(&mut rng);
            let mut slots = [Some(0.0); N_FEATURES];
            for &col in &CONTINUOUS {
                let e = normal(&mut rng);
                let (lo, hi) = RANGES[col].unwrap();
                let v = centers[col] + scales[col] * (0.8 * z + 0.6 * e);
                slots[col] = Some(v.clamp(lo, hi));
            }
            for (col, slot) in slots.iter_mut().enumerate() {
                if is_binary(col) {
                    *slot = Some(f64::from(u8::from(rng.random::<f64>() < 0.3)));
                }
            }
            let diabetes = rng.random::<f64>() < 0.2;
            PatientRecord::from_slots(&slots, diabetes, Province::ON).unwrap()
        })
        .collect();
    Dataset::new(records, "correlated-fixture")
}

/// Prints one verdict line and fails the test on a miss.
pub fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}
