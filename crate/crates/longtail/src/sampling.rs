//! Index sampling for the two training regimes.
//!
//! Stage 1 uses instance-balanced sampling: a seeded uniform permutation per
//! epoch, so every sample is visited exactly once and the class prior follows
//! the empirical frequencies. Stage 2 uses class-balanced sampling: draws
//! with replacement where sample `i` carries weight `1 / n_{y_i}`, which
//! makes the expected class distribution uniform.
//!
//! Weighted draws use the cumulative-weight inverse transform (binary search,
//! O(log n) per draw). Plans are immutable after construction and
//! bit-identical across runs for a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::seeded_rng;
use crate::{Error, Result};

/// Per-class sample counts of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    counts: Vec<u64>,
}

impl ClassCounts {
    /// Requires at least 2 classes, each with at least one sample.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::TooFewClasses(counts.len()));
        }
        if let Some(class) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass { class });
        }
        Ok(Self { counts })
    }

    /// Count labels against a known class-space size.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_classes];
        for &label in labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes,
                });
            }
            counts[label] += 1;
        }
        Self::new(counts)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Which distribution a plan was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingRegime {
    InstanceBalanced,
    ClassBalanced,
}

/// An immutable sequence of dataset indices to visit in order.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    indices: Vec<usize>,
    regime: SamplingRegime,
    seed: u64,
}

impl SamplingPlan {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn regime(&self) -> SamplingRegime {
        self.regime
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Empirical sampling probability of class `j`: `n_j / sum_i n_i`.
pub fn class_prior(counts: &ClassCounts, j: usize) -> Result<f64> {
    if j >= counts.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class counts",
            index: j,
            len: counts.num_classes(),
        });
    }
    Ok(counts.count(j) as f64 / counts.total() as f64)
}

/// A uniform-random permutation of `0..labels.len()` (one epoch of
/// instance-balanced sampling without replacement).
pub fn instance_balanced_plan(labels: &[usize], seed: u64) -> Result<SamplingPlan> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut indices: Vec<usize> = (0..labels.len()).collect();
    indices.shuffle(&mut seeded_rng(seed));
    Ok(SamplingPlan {
        indices,
        regime: SamplingRegime::InstanceBalanced,
        seed,
    })
}

/// `n_draws` indices drawn with replacement, sample `i` with probability
/// proportional to `1 / n_{y_i}` (uniform class prior in expectation).
pub fn class_balanced_plan(labels: &[usize], n_draws: usize, seed: u64) -> Result<SamplingPlan> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let counts = ClassCounts::from_labels(labels, num_classes)?;

    // Cumulative weights for inverse-transform sampling.
    let mut cumulative = Vec::with_capacity(labels.len());
    let mut total = 0.0f64;
    for &label in labels {
        total += 1.0 / counts.count(label) as f64;
        cumulative.push(total);
    }

    let mut rng = seeded_rng(seed);
    let mut indices = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let u = rng.gen::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= u);
        indices.push(idx.min(labels.len() - 1));
    }
    Ok(SamplingPlan {
        indices,
        regime: SamplingRegime::ClassBalanced,
        seed,
    })
}

/// Deterministic stratified holdout split: per class, shuffle its indices
/// and reserve `max(1, floor(fraction * n_class))` for the holdout, always
/// leaving at least one sample in the main split. Returns
/// `(main, holdout)` index lists, each in ascending order.
pub fn stratified_holdout(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        per_class[label].push(i);
    }
    let mut main = Vec::new();
    let mut holdout = Vec::new();
    let mut rng = seeded_rng(seed);
    for members in per_class.iter_mut() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let want = ((fraction * members.len() as f64).floor() as usize).max(1);
        let take = want.min(members.len() - 1);
        holdout.extend_from_slice(&members[..take]);
        main.extend_from_slice(&members[take..]);
    }
    main.sort_unstable();
    holdout.sort_unstable();
    Ok((main, holdout))
}
