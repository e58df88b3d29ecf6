//! Monte Carlo estimation of a multiplier's error moments.
//!
//! Operand pairs are drawn from counter-based keys `(seed, sample_index)`,
//! so sample `i` is the same no matter how the run is sharded. Samples are
//! grouped into fixed-size blocks; each block is reduced with Welford's
//! update and the block summaries are merged in index order. The result is
//! therefore bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::multiplier::{multiply, MultiplierModel};
use crate::noise::NoiseKey;

/// Default sample count for a characterization run (2^24).
pub const DEFAULT_SAMPLES: u64 = 1 << 24;

/// Samples per reduction block. Part of the reproducibility contract.
const BLOCK: u64 = 1 << 14;

const STREAM_X: u64 = 1;
const STREAM_Y: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMoments {
    pub mu: f64,
    pub sigma: f64,
    pub sample_count: u64,
    pub mu_stderr: f64,
}

impl ErrorMoments {
    pub fn new(mu: f64, sigma: f64, sample_count: u64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return domain(format!("invalid moments mu={mu}, sigma={sigma}"));
        }
        if sample_count == 0 {
            return domain("moments need at least one sample");
        }
        Ok(ErrorMoments {
            mu,
            sigma,
            sample_count,
            mu_stderr: sigma / (sample_count as f64).sqrt(),
        })
    }

    /// Moments of a known distribution, e.g. synthetic injection parameters.
    pub fn known(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, u64::MAX)
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperandKind {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperandDistribution {
    #[serde(flatten)]
    pub kind: OperandKind,
    pub seed: u64,
}

impl OperandDistribution {
    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let d = OperandDistribution {
            kind: OperandKind::Uniform { lo, hi },
            seed,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mean: f64, std: f64, seed: u64) -> Result<Self> {
        let d = OperandDistribution {
            kind: OperandKind::Normal { mean, std },
            seed,
        };
        d.validate()?;
        Ok(d)
    }

    /// Uniform on [0, 2): one binade either side of 1, one-signed so the
    /// mean error of a sign-magnitude multiplier does not cancel.
    pub fn default_corpus(seed: u64) -> Self {
        OperandDistribution {
            kind: OperandKind::Uniform { lo: 0.0, hi: 2.0 },
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        OperandDistribution { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            OperandKind::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return domain(format!("uniform bounds need lo < hi, got [{lo}, {hi}]"));
                }
            }
            OperandKind::Normal { mean, std } => {
                if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
                    return domain(format!("invalid normal operand distribution N({mean}, {std})"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn draw(&self, key: NoiseKey) -> f32 {
        match self.kind {
            OperandKind::Uniform { lo, hi } => (lo + (hi - lo) * key.uniform()) as f32,
            OperandKind::Normal { mean, std } => key.normal(mean, std) as f32,
        }
    }

    /// Operand pair for sample `index`.
    pub fn sample(&self, index: u64) -> (f32, f32) {
        (
            self.draw(NoiseKey::new(self.seed, STREAM_X, index)),
            self.draw(NoiseKey::new(self.seed, STREAM_Y, index)),
        )
    }
}

/// Streaming mean/variance (Welford) with the pairwise merge of Chan et al.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (divisor n - 1).
    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn finish(&self) -> Result<ErrorMoments> {
        ErrorMoments::new(self.mean, self.sample_variance().sqrt(), self.count)
    }
}

pub fn characterize(
    model: &MultiplierModel,
    dist: &OperandDistribution,
    n_samples: u64,
) -> Result<ErrorMoments> {
    model.validate()?;
    dist.validate()?;
    if n_samples < 2 {
        return domain(format!("characterization needs at least 2 samples, got {n_samples}"));
    }
    let blocks = n_samples.div_ceil(BLOCK);
    let partials = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = MomentAccumulator::new();
            for i in b * BLOCK..((b + 1) * BLOCK).min(n_samples) {
                let (x, y) = dist.sample(i);
                let key = NoiseKey::new(dist.seed, STREAM_NOISE, i);
                let rec = multiply(model, x, y, Some(key))?;
                acc.push(rec.epsilon);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MomentAccumulator::new();
    for p in &partials {
        total.merge(p);
    }
    total.finish()
}

/// `mu ± z * mu_stderr`.
pub fn moment_confidence(moments: &ErrorMoments, z: f64) -> (f64, f64) {
    let half = z * moments.mu_stderr;
    (moments.mu - half, moments.mu + half)
}

/// Output record of a characterization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationRecord {
    pub model: MultiplierModel,
    pub mu: f64,
    pub sigma: f64,
    pub sample_count: u64,
    pub mu_stderr: f64,
    pub seed: u64,
    pub distribution: OperandDistribution,
}

impl CharacterizationRecord {
    pub fn new(model: MultiplierModel, dist: OperandDistribution, m: ErrorMoments) -> Self {
        CharacterizationRecord {
            model,
            mu: m.mu,
            sigma: m.sigma,
            sample_count: m.sample_count,
            mu_stderr: m.mu_stderr,
            seed: dist.seed,
            distribution: dist,
        }
    }

    pub fn moments(&self) -> Result<ErrorMoments> {
        ErrorMoments::new(self.mu, self.sigma, self.sample_count)
    }
}
