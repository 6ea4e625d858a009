//! Truncated marginals whose post-truncation mean and standard deviation hit
//! prescribed targets.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    LogNormal,
}

/// Target moments and clamp range of one continuous feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub family: Family,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Parent distribution expressed by its untruncated mean and std.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Parent {
    family: Family,
    mean: f64,
    std: f64,
}

impl Parent {
    /// (location, scale) of the underlying normal.
    fn normal_params(&self) -> (f64, f64) {
        match self.family {
            Family::Normal => (self.mean, self.std),
            Family::LogNormal => {
                let s2 = (1.0 + (self.std / self.mean).powi(2)).ln();
                (self.mean.ln() - 0.5 * s2, s2.sqrt())
            }
        }
    }

    /// Mean and std after truncation to [lo, hi].
    fn truncated_moments(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (mu, sigma) = self.normal_params();
        match self.family {
            Family::Normal => {
                let a = (lo - mu) / sigma;
                let b = (hi - mu) / sigma;
                let z = std_normal_cdf(b) - std_normal_cdf(a);
                let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
                let mean = mu + sigma * (pa - pb) / z;
                let var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - ((pa - pb) / z).powi(2));
                (mean, var.max(0.0).sqrt())
            }
            Family::LogNormal => {
                let a = (lo.ln() - mu) / sigma;
                let b = (hi.ln() - mu) / sigma;
                let z = std_normal_cdf(b) - std_normal_cdf(a);
                let raw = |k: f64| {
                    (k * mu + 0.5 * k * k * sigma * sigma).exp()
                        * (std_normal_cdf(b - k * sigma) - std_normal_cdf(a - k * sigma))
                        / z
                };
                let m1 = raw(1.0);
                let m2 = raw(2.0);
                (m1, (m2 - m1 * m1).max(0.0).sqrt())
            }
        }
    }
}

/// A sampler for one continuous feature with its parent parameters solved.
#[derive(Debug, Clone)]
pub struct TruncatedSampler {
    lo: f64,
    hi: f64,
    dist: ParentDist,
}

#[derive(Debug, Clone)]
enum ParentDist {
    Normal(Normal<f64>),
    LogNormal(LogNormal<f64>),
}

const MAX_REJECTIONS: usize = 10_000;

impl TruncatedSampler {
    pub fn new(spec: &ContinuousSpec, name: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Config(format!("feature {name}: {reason}"));
        if !(spec.min < spec.max) || !(spec.std > 0.0) {
            return Err(bad("need min < max and std > 0"));
        }
        if !(spec.min < spec.mean && spec.mean < spec.max) {
            return Err(bad("mean must lie inside the clamp range"));
        }
        if spec.family == Family::LogNormal && spec.min <= 0.0 {
            return Err(bad("log-normal features need a positive lower bound"));
        }
        let parent = solve_parent(spec).ok_or_else(|| bad("cannot match moments under truncation"))?;
        let (mu, sigma) = parent.normal_params();
        let dist = match spec.family {
            Family::Normal => ParentDist::Normal(Normal::new(mu, sigma).map_err(|e| bad(&e.to_string()))?),
            Family::LogNormal => {
                ParentDist::LogNormal(LogNormal::new(mu, sigma).map_err(|e| bad(&e.to_string()))?)
            }
        };
        Ok(TruncatedSampler {
            lo: spec.min,
            hi: spec.max,
            dist,
        })
    }

    /// Rejection sampling from the parent; falls back to clamping if the
    /// range is pathologically narrow.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut x = 0.0;
        for _ in 0..MAX_REJECTIONS {
            x = match &self.dist {
                ParentDist::Normal(d) => d.sample(rng),
                ParentDist::LogNormal(d) => d.sample(rng),
            };
            if x >= self.lo && x <= self.hi {
                return x;
            }
        }
        x.clamp(self.lo, self.hi)
    }
}

/// Fixed-point search for parent moments whose truncation reproduces the
/// target mean and std.
fn solve_parent(spec: &ContinuousSpec) -> Option<Parent> {
    let mut parent = Parent {
        family: spec.family,
        mean: spec.mean,
        std: spec.std,
    };
    for _ in 0..500 {
        let (m, s) = parent.truncated_moments(spec.min, spec.max);
        if !m.is_finite() || !s.is_finite() || s <= 0.0 {
            return None;
        }
        let next = Parent {
            mean: parent.mean + (spec.mean - m),
            std: parent.std * spec.std / s,
            ..parent
        };
        if next.std <= 0.0 || (spec.family == Family::LogNormal && next.mean <= 0.0) {
            return None;
        }
        let done = (next.mean - parent.mean).abs() < 1e-13 * spec.std.max(1.0)
            && (next.std - parent.std).abs() < 1e-13 * spec.std.max(1.0);
        parent = next;
        if done {
            break;
        }
    }
    let (m, s) = parent.truncated_moments(spec.min, spec.max);
    ((m - spec.mean).abs() < 1e-8 * spec.std && (s - spec.std).abs() < 1e-8 * spec.std).then_some(parent)
}
