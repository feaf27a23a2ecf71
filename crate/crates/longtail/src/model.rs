//! Desk-scale differentiable classifier: an MLP feature extractor with ReLU
//! activations feeding a linear head, with an analytic backward pass that is
//! checked against finite differences.
//!
//! The backbone can be frozen, in which case [`Model::backward`] skips its
//! gradients and the optimizer never touches it — the freeze contract of
//! stage-2 classifier retraining.
//!
//! Initialization is Kaiming-uniform with fan-in scaling
//! (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) for hidden layers, and
//! `U(-1/sqrt(feature_dim), 1/sqrt(feature_dim))` with zero bias for the
//! classifier. No dropout or normalization layers: backpropagation stays
//! exactly checkable.

use rand::Rng;

use crate::losses::{softmax, ProbabilityVector};
use crate::rng::seeded_rng;
use crate::{Error, Result};

/// Affine layer `y = W x + b`; `weight` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// The feature extractor: a stack of affine layers, each followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub layers: Vec<Linear>,
    pub frozen: bool,
}

/// Backbone plus linear classifier. `stage` records training provenance:
/// 0 = freshly initialized, 1 = stage-1 trained, 2 = stage-2 trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub classifier: Linear,
    pub stage: u8,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `activations[0]` is the input; `activations[l + 1]` the post-ReLU
    /// output of backbone layer `l`. The last entry is the feature vector.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probabilities: ProbabilityVector,
}

impl Forward {
    pub fn features(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

/// Gradient of one affine layer.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrads {
    fn zeros(layer: &Linear) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Parameter gradients for a model. `backbone` is `None` when frozen.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub backbone: Option<Vec<LinearGrads>>,
    pub classifier: LinearGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        let backbone = if model.backbone.frozen {
            None
        } else {
            Some(model.backbone.layers.iter().map(LinearGrads::zeros).collect())
        };
        Self {
            backbone,
            classifier: LinearGrads::zeros(&model.classifier),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrads) {
        if let (Some(mine), Some(theirs)) = (self.backbone.as_mut(), other.backbone.as_ref()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                add_assign(&mut a.weight, &b.weight);
                add_assign(&mut a.bias, &b.bias);
            }
        }
        add_assign(&mut self.classifier.weight, &other.classifier.weight);
        add_assign(&mut self.classifier.bias, &other.classifier.bias);
    }

    pub fn scale(&mut self, factor: f64) {
        if let Some(layers) = self.backbone.as_mut() {
            for g in layers {
                g.weight.iter_mut().for_each(|v| *v *= factor);
                g.bias.iter_mut().for_each(|v| *v *= factor);
            }
        }
        self.classifier.weight.iter_mut().for_each(|v| *v *= factor);
        self.classifier.bias.iter_mut().for_each(|v| *v *= factor);
    }

    /// Gradient tensors in the same order as [`Model::trainable_tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(layers) = self.backbone.as_ref() {
            for g in layers {
                out.push(&g.weight);
                out.push(&g.bias);
            }
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Model {
    /// Build a model with Kaiming-initialized backbone and a freshly
    /// initialized classifier, deterministic per seed.
    pub fn new(input_dim: usize, hidden_dims: &[usize], num_classes: usize, seed: u64) -> Model {
        assert!(input_dim > 0 && num_classes > 0 && !hidden_dims.is_empty());
        let mut rng = seeded_rng(seed);
        let mut layers = Vec::with_capacity(hidden_dims.len());
        let mut fan_in = input_dim;
        for &width in hidden_dims {
            let mut layer = Linear::zeros(fan_in, width);
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
            layers.push(layer);
            fan_in = width;
        }
        let mut model = Model {
            backbone: Backbone {
                layers,
                frozen: false,
            },
            classifier: Linear::zeros(fan_in, num_classes),
            stage: 0,
        };
        init_classifier(&mut model.classifier, &mut rng);
        model
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.backbone.layers.iter().map(|l| l.out_dim).collect()
    }

    /// Forward pass with cached activations. Softmax is max-subtracted, so
    /// probabilities are valid for arbitrarily large logits.
    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "model input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.backbone.layers.len() + 1);
        activations.push(x.to_vec());
        let mut buffer = Vec::new();
        for layer in &self.backbone.layers {
            layer.apply(activations.last().unwrap(), &mut buffer);
            buffer.iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(buffer.clone());
        }
        let mut logits = Vec::new();
        self.classifier.apply(activations.last().unwrap(), &mut logits);
        let probabilities = softmax(&logits);
        Ok(Forward {
            activations,
            logits,
            probabilities,
        })
    }

    /// Backpropagate a loss gradient with respect to the logits through the
    /// classifier and (unless frozen) the backbone.
    pub fn backward(&self, forward: &Forward, grad_logits: &[f64]) -> Result<ModelGrads> {
        if grad_logits.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "logit gradient",
                expected: self.num_classes(),
                actual: grad_logits.len(),
            });
        }
        if forward.activations.len() != self.backbone.layers.len() + 1
            || forward.activations[0].len() != self.input_dim()
        {
            return Err(Error::DimensionMismatch {
                what: "cached activations",
                expected: self.backbone.layers.len() + 1,
                actual: forward.activations.len(),
            });
        }

        let mut grads = ModelGrads::zeros_like(self);
        let features = forward.features();
        for o in 0..self.classifier.out_dim {
            grads.classifier.bias[o] = grad_logits[o];
            let row = &mut grads.classifier.weight
                [o * self.classifier.in_dim..(o + 1) * self.classifier.in_dim];
            for (i, w) in row.iter_mut().enumerate() {
                *w = grad_logits[o] * features[i];
            }
        }
        if self.backbone.frozen {
            return Ok(grads);
        }

        // Gradient with respect to the feature vector.
        let mut upstream = vec![0.0; self.classifier.in_dim];
        for o in 0..self.classifier.out_dim {
            let row = &self.classifier.weight
                [o * self.classifier.in_dim..(o + 1) * self.classifier.in_dim];
            for (u, w) in upstream.iter_mut().zip(row) {
                *u += grad_logits[o] * w;
            }
        }

        let layer_grads = grads.backbone.as_mut().expect("not frozen");
        for (l, layer) in self.backbone.layers.iter().enumerate().rev() {
            let output = &forward.activations[l + 1];
            let input = &forward.activations[l];
            // ReLU gate: zero where the unit was inactive.
            let delta: Vec<f64> = upstream
                .iter()
                .zip(output)
                .map(|(&u, &a)| if a > 0.0 { u } else { 0.0 })
                .collect();
            let g = &mut layer_grads[l];
            for o in 0..layer.out_dim {
                g.bias[o] = delta[o];
                let row = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, w) in row.iter_mut().enumerate() {
                    *w = delta[o] * input[i];
                }
            }
            if l > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += delta[o] * w;
                    }
                }
                upstream = next;
            }
        }
        Ok(grads)
    }

    /// Re-initialize the classifier in place: weights
    /// `U(-1/sqrt(feature_dim), 1/sqrt(feature_dim))`, bias zero. The
    /// backbone is untouched. Deterministic per seed.
    pub fn reinit_classifier(&mut self, seed: u64) {
        let mut rng = seeded_rng(seed);
        init_classifier(&mut self.classifier, &mut rng);
    }

    /// Mutable references to every trainable tensor, in a fixed order
    /// (backbone layers first unless frozen, then the classifier). Matches
    /// [`ModelGrads::tensors`].
    pub fn trainable_tensors(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        if !self.backbone.frozen {
            for layer in &mut self.backbone.layers {
                out.push(&mut layer.weight);
                out.push(&mut layer.bias);
            }
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Backbone parameters as little-endian bytes, for hashing and freeze
    /// checks.
    pub fn backbone_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for layer in &self.backbone.layers {
            for v in layer.weight.iter().chain(&layer.bias) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }
}

fn init_classifier<R: Rng>(classifier: &mut Linear, rng: &mut R) {
    let bound = 1.0 / (classifier.in_dim as f64).sqrt();
    for w in &mut classifier.weight {
        *w = rng.gen_range(-bound..bound);
    }
    classifier.bias.iter_mut().for_each(|b| *b = 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zeroed_classifier_gives_uniform_probabilities() {
        let mut model = Model::new(4, &[8], 5, 1);
        model.classifier.weight.iter_mut().for_each(|w| *w = 0.0);
        model.classifier.bias.iter_mut().for_each(|b| *b = 0.0);
        let fwd = model.forward(&[0.3, -0.2, 0.9, 0.0]).unwrap();
        for &p in fwd.probabilities.values() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_backbone_passes_nonnegative_inputs_through() {
        let mut model = Model::new(3, &[3], 2, 1);
        for o in 0..3 {
            for i in 0..3 {
                model.backbone.layers[0].weight[o * 3 + i] = if o == i { 1.0 } else { 0.0 };
            }
            model.backbone.layers[0].bias[o] = 0.0;
        }
        let x = [0.5, 0.0, 2.0];
        let fwd = model.forward(&x).unwrap();
        assert_eq!(fwd.features(), &x);
    }

    #[test]
    fn probabilities_match_unshifted_softmax() {
        let model = Model::new(6, &[16, 8], 4, 77);
        let mut rng = crate::rng::seeded_rng(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fwd = model.forward(&x).unwrap();
            // Independent route: direct exponentials without max subtraction.
            let sum: f64 = fwd.logits.iter().map(|&z| z.exp()).sum();
            for (j, &p) in fwd.probabilities.values().iter().enumerate() {
                let reference = fwd.logits[j].exp() / sum;
                assert!((p - reference).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let p = crate::losses::softmax(&[1e4, -1e4, 0.0]);
        let sum: f64 = p.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(p.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::new(5, &[8, 4], 3, 123);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.probabilities.values(), b.probabilities.values());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = Model::new(4, &[4], 2, 0);
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reinit_zeroes_bias_keeps_backbone_and_repeats_per_seed() {
        let mut model = Model::new(4, &[6], 3, 9);
        let theta_before = model.backbone_bytes();
        model.reinit_classifier(55);
        let w1 = model.classifier.weight.clone();
        assert!(model.classifier.bias.iter().all(|&b| b == 0.0));
        assert_eq!(model.backbone_bytes(), theta_before);
        model.reinit_classifier(55);
        assert_eq!(model.classifier.weight, w1);
        model.reinit_classifier(56);
        assert_ne!(model.classifier.weight, w1);
    }

    #[test]
    fn frozen_backbone_yields_no_backbone_gradients() {
        let mut model = Model::new(3, &[5], 2, 4);
        model.backbone.frozen = true;
        let fwd = model.forward(&[1.0, -1.0, 0.5]).unwrap();
        let grad_logits =
            crate::losses::hybrid_loss_grad(
                &fwd.logits,
                0,
                &crate::losses::LossConfig::plain_cross_entropy(
                    crate::sampling::ClassCounts::new(vec![1, 1]).unwrap(),
                ),
                &crate::losses::ClassWeights::from_alpha(vec![1.0, 1.0]),
            )
            .unwrap();
        let grads = model.backward(&fwd, &grad_logits).unwrap();
        assert!(grads.backbone.is_none());
        assert!(grads.classifier.weight.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // End-to-end loss gradient check on a 2-16-8-3 network, including
        // the frozen-backbone mode.
        let counts = crate::sampling::ClassCounts::new(vec![7, 3, 11]).unwrap();
        let step = 1e-5;
        let mut rng = crate::rng::seeded_rng(31);
        for trial in 0..10 {
            let mut model = Model::new(2, &[16, 8], 3, 100 + trial);
            model.backbone.frozen = trial % 2 == 1;
            let cfg = crate::losses::LossConfig::new(0.999, 2.0, 0.5, counts.clone()).unwrap();
            let weights =
                crate::losses::effective_number_weights(&cfg.class_counts, cfg.beta).unwrap();
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = rng.gen_range(0..3);

            let fwd = model.forward(&x).unwrap();
            let grad_logits =
                crate::losses::hybrid_loss_grad(&fwd.logits, y, &cfg, &weights).unwrap();
            let grads = model.backward(&fwd, &grad_logits).unwrap();

            let loss_of = |m: &Model| {
                let f = m.forward(&x).unwrap();
                crate::losses::hybrid_loss(&f.probabilities, y, &cfg, &weights).unwrap()
            };

            let mut check = |get: &dyn Fn(&mut Model) -> &mut f64, analytic: f64| {
                let mut plus = model.clone();
                *get(&mut plus) += step;
                let mut minus = model.clone();
                *get(&mut minus) -= step;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
                let denom = analytic.abs().max(numeric.abs()).max(1e-7);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "trial {trial}: analytic {analytic} vs numeric {numeric}"
                );
            };

            for (li, lg) in grads.backbone.iter().flatten().enumerate() {
                for wi in 0..lg.weight.len() {
                    check(
                        &move |m: &mut Model| &mut m.backbone.layers[li].weight[wi],
                        lg.weight[wi],
                    );
                }
                for bi in 0..lg.bias.len() {
                    check(
                        &move |m: &mut Model| &mut m.backbone.layers[li].bias[bi],
                        lg.bias[bi],
                    );
                }
            }
            for wi in 0..grads.classifier.weight.len() {
                check(
                    &move |m: &mut Model| &mut m.classifier.weight[wi],
                    grads.classifier.weight[wi],
                );
            }
            for bi in 0..grads.classifier.bias.len() {
                check(
                    &move |m: &mut Model| &mut m.classifier.bias[bi],
                    grads.classifier.bias[bi],
                );
            }
        }
    }

    #[test]
    fn gradients_vanish_at_saturated_minimum() {
        let counts = crate::sampling::ClassCounts::new(vec![1, 1]).unwrap();
        let cfg = crate::losses::LossConfig::plain_cross_entropy(counts);
        let weights = crate::losses::ClassWeights::from_alpha(vec![1.0, 1.0]);
        let mut model = Model::new(2, &[4], 2, 8);
        // Saturate: push the true-class logit far above the other.
        for i in 0..model.classifier.in_dim {
            model.classifier.weight[i] = 100.0;
            model.classifier.weight[model.classifier.in_dim + i] = -100.0;
        }
        let fwd = model.forward(&[1.0, 1.0]).unwrap();
        let grad_logits = crate::losses::hybrid_loss_grad(&fwd.logits, 0, &cfg, &weights).unwrap();
        let grads = model.backward(&fwd, &grad_logits).unwrap();
        for t in grads.tensors() {
            for &g in t {
                assert!(g.abs() < 1e-10, "gradient {g} not near zero");
            }
        }
    }
}
