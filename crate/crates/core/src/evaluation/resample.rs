use std::fmt;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schema::LabeledMatrix;

/// Training-set resampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    None,
    Downsample,
}

impl Resample {
    pub fn tag(self) -> &'static str {
        match self {
            Resample::None => "none",
            Resample::Downsample => "downsample",
        }
    }

    pub fn apply(self, data: &LabeledMatrix, seed: u64) -> Result<LabeledMatrix> {
        match self {
            Resample::None => Ok(data.clone()),
            Resample::Downsample => downsample_majority(data, seed),
        }
    }
}

impl fmt::Display for Resample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Keeps every minority row and a uniform sample of majority rows of the same
/// size, then shuffles the result.
pub fn downsample_majority(data: &LabeledMatrix, seed: u64) -> Result<LabeledMatrix> {
    if !data.has_both_classes() {
        return Err(Error::SingleClass("downsampling"));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data.labels[i]);
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = rng::stream(seed, "downsample");
    let picked = index::sample(&mut rng, majority.len(), minority.len());
    let mut keep: Vec<usize> = minority;
    keep.extend(picked.iter().map(|k| majority[k]));
    keep.shuffle(&mut rng);
    Ok(data.select(&keep))
}
