//! Class-rebalancing losses.
//!
//! The stage-2 objective combines three pieces:
//!
//! - effective-number re-weighting: class `j` with `n_j` samples gets weight
//!   `alpha_j = (1 - beta) / (1 - beta^n_j)`, the reciprocal of the
//!   effective number `E_n = (1 - beta^n) / (1 - beta)`;
//! - weighted cross entropy `L_CE = -alpha_y ln(p_y)`;
//! - focal modulation `L_Focal = (1 - p_y)^gamma * L_CE`;
//!
//! mixed as `L = (1 - lambda) * L_CE + lambda * L_Focal`. The focal term is
//! applied on top of the already alpha-weighted cross entropy, so the class
//! weight scales both terms.
//!
//! Logarithms are natural. Probabilities are clamped to
//! [`PROBABILITY_CLAMP`] before the log so the loss is finite and
//! bit-reproducible. [`hybrid_loss_grad`] is the exact gradient of this
//! clamped loss through a max-subtracted softmax.

use crate::sampling::ClassCounts;
use crate::{Error, Result};

/// Lower clamp applied to `p_y` before taking the log.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    values: Vec<f64>,
}

impl ProbabilityVector {
    /// Validates entries in `[0, 1]` and sum within `1e-6` of one.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<f64> {
        self.values
            .get(i)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                what: "probability vector",
                index: i,
                len: self.values.len(),
            })
    }

    pub(crate) fn from_softmax(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> ProbabilityVector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbabilityVector::from_softmax(exps.into_iter().map(|e| e / sum).collect())
}

/// Hyperparameters of the hybrid loss.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Effective-number parameter, in `[0, 1)`. Zero disables re-weighting.
    pub beta: f64,
    /// Focusing parameter, nonnegative. Zero disables focal modulation.
    pub gamma: f64,
    /// Mixing weight between cross entropy (0) and focal (1).
    pub lambda: f64,
    pub class_counts: ClassCounts,
}

impl LossConfig {
    pub fn new(beta: f64, gamma: f64, lambda: f64, class_counts: ClassCounts) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must be in [0, 1), got {beta}"
            )));
        }
        if gamma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            beta,
            gamma,
            lambda,
            class_counts,
        })
    }

    /// Stage-2 defaults: beta 0.9999, gamma 2.0, lambda 0.5.
    pub fn rebalancing_defaults(class_counts: ClassCounts) -> Self {
        Self {
            beta: 0.9999,
            gamma: 2.0,
            lambda: 0.5,
            class_counts,
        }
    }

    /// Plain cross entropy: no re-weighting, no focal term.
    pub fn plain_cross_entropy(class_counts: ClassCounts) -> Self {
        Self {
            beta: 0.0,
            gamma: 0.0,
            lambda: 0.0,
            class_counts,
        }
    }
}

/// Per-class weights derived from effective numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    alpha: Vec<f64>,
    effective_numbers: Vec<f64>,
}

impl ClassWeights {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn effective_numbers(&self) -> &[f64] {
        &self.effective_numbers
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Construct from explicit weights (tests, ablations).
    pub fn from_alpha(alpha: Vec<f64>) -> Self {
        let effective_numbers = alpha.iter().map(|&a| 1.0 / a).collect();
        Self {
            alpha,
            effective_numbers,
        }
    }

    /// Rescale weights to mean one. Off by default; the raw Eq.-style
    /// weights are used unless this is requested explicitly.
    pub fn renormalized_to_unit_mean(&self) -> Self {
        let mean = self.alpha.iter().sum::<f64>() / self.alpha.len() as f64;
        Self {
            alpha: self.alpha.iter().map(|&a| a / mean).collect(),
            effective_numbers: self.effective_numbers.clone(),
        }
    }
}

/// Effective-number class weights:
/// `E_n = (1 - beta^n) / (1 - beta)`, `alpha = 1 / E_n`.
pub fn effective_number_weights(counts: &ClassCounts, beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!(
            "beta must be in [0, 1), got {beta}"
        )));
    }
    let mut alpha = Vec::with_capacity(counts.num_classes());
    let mut effective_numbers = Vec::with_capacity(counts.num_classes());
    for j in 0..counts.num_classes() {
        let n = counts.count(j) as f64;
        let e = (1.0 - beta.powf(n)) / (1.0 - beta);
        effective_numbers.push(e);
        alpha.push((1.0 - beta) / (1.0 - beta.powf(n)));
    }
    Ok(ClassWeights {
        alpha,
        effective_numbers,
    })
}

fn target_probability(p: &ProbabilityVector, y: usize, weights: &ClassWeights) -> Result<(f64, f64)> {
    if y >= weights.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class weights",
            index: y,
            len: weights.num_classes(),
        });
    }
    Ok((p.get(y)?, weights.alpha[y]))
}

/// Class-balanced cross entropy: `-alpha_y ln(p_y)`.
pub fn cb_cross_entropy(p: &ProbabilityVector, y: usize, weights: &ClassWeights) -> Result<f64> {
    let (py, alpha) = target_probability(p, y, weights)?;
    Ok(-alpha * py.max(PROBABILITY_CLAMP).ln())
}

/// Focal loss: `(1 - p_y)^gamma * L_CE`.
pub fn focal_loss(
    p: &ProbabilityVector,
    y: usize,
    weights: &ClassWeights,
    gamma: f64,
) -> Result<f64> {
    let (py, _) = target_probability(p, y, weights)?;
    let modulation = if gamma == 0.0 {
        1.0
    } else {
        (1.0 - py).max(0.0).powf(gamma)
    };
    Ok(modulation * cb_cross_entropy(p, y, weights)?)
}

/// Hybrid stage-2 objective: `(1 - lambda) * L_CE + lambda * L_Focal`.
pub fn hybrid_loss(
    p: &ProbabilityVector,
    y: usize,
    config: &LossConfig,
    weights: &ClassWeights,
) -> Result<f64> {
    let ce = cb_cross_entropy(p, y, weights)?;
    let focal = focal_loss(p, y, weights, config.gamma)?;
    Ok((1.0 - config.lambda) * ce + config.lambda * focal)
}

/// Exact gradient of [`hybrid_loss`] composed with [`softmax`], with respect
/// to the logits.
pub fn hybrid_loss_grad(
    logits: &[f64],
    y: usize,
    config: &LossConfig,
    weights: &ClassWeights,
) -> Result<Vec<f64>> {
    if weights.num_classes() != logits.len() {
        return Err(Error::DimensionMismatch {
            what: "class weights vs logits",
            expected: logits.len(),
            actual: weights.num_classes(),
        });
    }
    let p = softmax(logits);
    let (py, alpha) = target_probability(&p, y, weights)?;
    let q = py.max(PROBABILITY_CLAMP);
    let one_minus = (1.0 - py).max(0.0);
    let focal_factor = if config.gamma == 0.0 {
        1.0
    } else {
        one_minus.powf(config.gamma)
    };

    // dL/dp_y of L(p) = -alpha ln(clamp(p)) [(1-lambda) + lambda (1-p)^gamma].
    let dlog = if py > PROBABILITY_CLAMP { 1.0 / q } else { 0.0 };
    let mut dl_dp = -alpha * dlog * ((1.0 - config.lambda) + config.lambda * focal_factor);
    if config.gamma > 0.0 && one_minus > 0.0 {
        dl_dp += alpha
            * config.lambda
            * config.gamma
            * one_minus.powf(config.gamma - 1.0)
            * q.ln();
    }

    // Chain through the softmax Jacobian: dp_y/dz_j = p_y (delta_yj - p_j).
    let grad = p
        .values()
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let indicator = if j == y { 1.0 } else { 0.0 };
            dl_dp * py * (indicator - pj)
        })
        .collect();
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn counts(v: &[u64]) -> ClassCounts {
        ClassCounts::new(v.to_vec()).unwrap()
    }

    #[test]
    fn beta_zero_gives_unit_weights() {
        let w = effective_number_weights(&counts(&[5, 1000, 31]), 0.0).unwrap();
        assert!(w.alpha().iter().all(|&a| a == 1.0));
        assert!(w.effective_numbers().iter().all(|&e| e == 1.0));
    }

    #[test]
    fn single_sample_class_has_unit_weight() {
        for beta in [0.1, 0.9, 0.9999] {
            let w = effective_number_weights(&counts(&[1, 50]), beta).unwrap();
            assert_eq!(w.alpha()[0], 1.0);
        }
    }

    #[test]
    fn effective_number_high_beta_closed_form() {
        // alpha = 1e-4 / (1 - 0.9999^10000), high-precision value.
        let w = effective_number_weights(&counts(&[10_000, 1]), 0.9999).unwrap();
        let expected = 1.5819306726110493e-4;
        assert!(
            ((w.alpha()[0] - expected) / expected).abs() < 1e-6,
            "alpha {}",
            w.alpha()[0]
        );
        // alpha = 1 / E within 1e-12.
        for j in 0..2 {
            assert!((w.alpha()[j] * w.effective_numbers()[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_classes_get_smaller_weights() {
        let w = effective_number_weights(&counts(&[10, 100, 1000, 10_000]), 0.999).unwrap();
        for pair in w.alpha().windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn inverse_frequency_limit_as_beta_approaches_one() {
        let c = counts(&[1, 10, 100, 1000, 10_000]);
        let w = effective_number_weights(&c, 1.0 - 1e-9).unwrap();
        for j in 0..c.num_classes() {
            let product = w.alpha()[j] * c.count(j) as f64;
            assert!(
                (product - 1.0).abs() < 1e-4,
                "alpha * n = {product} for class {j}"
            );
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let w = ClassWeights::from_alpha(vec![1.0, 1.0]);
        let certain = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(cb_cross_entropy(&certain, 0, &w).unwrap(), 0.0);

        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let ce = cb_cross_entropy(&half, 0, &w).unwrap();
        assert!((ce - LN2).abs() < 1e-9 * LN2);

        let tiny = ClassWeights::from_alpha(vec![1.582e-4, 1.0]);
        let ce = cb_cross_entropy(&half, 0, &tiny).unwrap();
        let expected = 1.582e-4 * LN2;
        assert!(((ce - expected) / expected).abs() < 1e-9);
    }

    #[test]
    fn focal_closed_forms() {
        let w = ClassWeights::from_alpha(vec![1.0, 1.0]);
        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        // gamma = 0 reduces to cross entropy exactly.
        assert_eq!(
            focal_loss(&half, 0, &w, 0.0).unwrap(),
            cb_cross_entropy(&half, 0, &w).unwrap()
        );
        let certain = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(focal_loss(&certain, 0, &w, 2.0).unwrap(), 0.0);

        let expected = 0.25 * LN2;
        let got = focal_loss(&half, 0, &w, 2.0).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-9);
    }

    #[test]
    fn hybrid_endpoints_and_midpoint() {
        let c = counts(&[3, 3]);
        let w = ClassWeights::from_alpha(vec![1.0, 1.0]);
        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();

        let at = |lambda: f64| {
            let cfg = LossConfig::new(0.0, 2.0, lambda, c.clone()).unwrap();
            hybrid_loss(&half, 0, &cfg, &w).unwrap()
        };
        assert_eq!(at(0.0), cb_cross_entropy(&half, 0, &w).unwrap());
        assert_eq!(at(1.0), focal_loss(&half, 0, &w, 2.0).unwrap());

        let expected = 0.4332169878499658; // 0.5 ln2 + 0.5 * 0.25 ln2
        assert!(((at(0.5) - expected) / expected).abs() < 1e-9);
    }

    #[test]
    fn hybrid_is_monotone_decreasing_in_target_probability() {
        let c = counts(&[10, 5]);
        let cfg = LossConfig::new(0.99, 2.0, 0.5, c).unwrap();
        let w = effective_number_weights(&cfg.class_counts, cfg.beta).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let py = i as f64 / 100.0;
            let p = ProbabilityVector::new(vec![py, 1.0 - py]).unwrap();
            let l = hybrid_loss(&p, 0, &cfg, &w).unwrap();
            assert!(l < prev, "loss not decreasing at p_y = {py}");
            prev = l;
        }
    }

    #[test]
    fn hybrid_is_linear_in_alpha() {
        let c = counts(&[4, 4]);
        let cfg = LossConfig::new(0.0, 2.0, 0.5, c).unwrap();
        let p = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        let l1 = hybrid_loss(&p, 0, &cfg, &ClassWeights::from_alpha(vec![1.0, 1.0])).unwrap();
        let l2 = hybrid_loss(&p, 0, &cfg, &ClassWeights::from_alpha(vec![2.0, 1.0])).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn grad_reduces_to_softmax_minus_onehot_for_plain_ce() {
        let c = counts(&[1, 1]);
        let cfg = LossConfig::plain_cross_entropy(c);
        let w = ClassWeights::from_alpha(vec![1.0, 1.0]);
        let grad = hybrid_loss_grad(&[0.0, 0.0], 0, &cfg, &w).unwrap();
        assert!((grad[0] + 0.5).abs() < 1e-12);
        assert!((grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_vanishes_at_saturated_target() {
        let c = counts(&[1, 1, 1]);
        let cfg = LossConfig::new(0.0, 2.0, 0.5, c).unwrap();
        let w = ClassWeights::from_alpha(vec![1.0; 3]);
        let grad = hybrid_loss_grad(&[50.0, 0.0, 0.0], 0, &cfg, &w).unwrap();
        for g in grad {
            assert!(g.abs() < 1e-12, "gradient component {g}");
        }
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        let mut rng = crate::rng::seeded_rng(2024);
        let step = 1e-5;
        for trial in 0..200 {
            let c = counts(&[40, 11, 3, 800, 90]);
            let cfg = LossConfig::new(
                [0.0, 0.9, 0.9999][trial % 3],
                [0.0, 1.0, 2.0, 3.5][trial % 4],
                [0.0, 0.25, 0.5, 1.0][trial % 4],
                c,
            )
            .unwrap();
            let w = effective_number_weights(&cfg.class_counts, cfg.beta).unwrap();
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y = rng.gen_range(0..5);

            let grad = hybrid_loss_grad(&logits, y, &cfg, &w).unwrap();
            for j in 0..5 {
                let mut plus = logits.clone();
                plus[j] += step;
                let mut minus = logits.clone();
                minus[j] -= step;
                let lp = hybrid_loss(&softmax(&plus), y, &cfg, &w).unwrap();
                let lm = hybrid_loss(&softmax(&minus), y, &cfg, &w).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let denom = grad[j].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((grad[j] - numeric) / denom).abs() < 1e-5,
                    "trial {trial} component {j}: analytic {} vs numeric {numeric}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn renormalized_weights_have_unit_mean() {
        let w = effective_number_weights(&counts(&[2000, 600, 180, 54, 16]), 0.9999).unwrap();
        let r = w.renormalized_to_unit_mean();
        let mean: f64 = r.alpha().iter().sum::<f64>() / r.alpha().len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probability_vector_rejects_invalid_inputs() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![1.1, -0.1]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
    }
}
