//! Paired batch construction.
//!
//! The positive class is heavily under-represented in candidate pools, so
//! every training batch is built as an exact 50/50 split: half the items drawn
//! uniformly (with replacement) from the positive pool, half from the negative
//! pool, interleaved as (positive, negative) pairs. Each drawn item is
//! augmented independently in feature space. The sampler owns no hidden state;
//! the RNG is passed in and advanced by the caller.

use crate::error::{CoreError, Result};
use crate::net::Sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Feature-space stand-ins for image-space augmentation: one multiplicative
/// scale per item plus additive Gaussian jitter per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub jitter_sigma: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            jitter_sigma: 0.0,
            scale_range: (1.0, 1.0),
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.jitter_sigma < 0.0 {
            return Err(CoreError::Config("jitter_sigma must be >= 0".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(CoreError::Config(format!(
                "scale_range must satisfy 0 < lo <= 1 <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    fn apply(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lo, hi) = self.scale_range;
        let scale = if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        };
        features
            .iter()
            .map(|&f| {
                let scaled = f * scale;
                if self.jitter_sigma > 0.0 {
                    let noise: f64 = StandardNormal.sample(rng);
                    scaled + self.jitter_sigma * noise
                } else {
                    scaled
                }
            })
            .collect()
    }
}

/// Batch recipe: total size (half positives, half negatives), augmentation,
/// and the seed for the sampler's RNG stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedBatchSpec {
    pub batch_size: usize,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for PairedBatchSpec {
    fn default() -> Self {
        PairedBatchSpec {
            batch_size: 128,
            augment: AugmentSpec::default(),
            seed: 0,
        }
    }
}

impl PairedBatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(CoreError::Config(format!(
                "batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        self.augment.validate()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Candidate pool with class indices precomputed once.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    samples: Vec<Sample>,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl TrainingPool {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let positives: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 1)
            .map(|(i, _)| i)
            .collect();
        let negatives: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 0)
            .map(|(i, _)| i)
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(CoreError::Config(format!(
                "paired sampling needs both classes in the pool ({} positives, {} negatives)",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(TrainingPool {
            samples,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_positives(&self) -> usize {
        self.positives.len()
    }

    pub fn n_negatives(&self) -> usize {
        self.negatives.len()
    }
}

/// Draws one class-balanced batch: `batch_size/2` (positive, negative) pairs,
/// uniform with replacement within each class, each item augmented
/// independently. Deterministic given the RNG state.
pub fn draw_paired_batch(
    pool: &TrainingPool,
    spec: &PairedBatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    let pairs = spec.batch_size / 2;
    let mut batch = Vec::with_capacity(spec.batch_size);
    for _ in 0..pairs {
        let pi = pool.positives[rng.random_range(0..pool.positives.len())];
        let ni = pool.negatives[rng.random_range(0..pool.negatives.len())];
        for &idx in [pi, ni].iter() {
            let src = &pool.samples[idx];
            batch.push(Sample {
                features: spec.augment.apply(&src.features, rng),
                label: src.label,
            });
        }
    }
    Ok(batch)
}
