//! Readout and classification head.
//!
//! The document vector is the mean over final node states (permutation
//! invariant and stable across varying node counts), the classifier is a
//! linear map plus softmax, and the training loss is cross-entropy computed
//! from logits in one fused log-sum-exp step — the softmax output itself is
//! never logged.

use crate::encoder::ParamKind;
use crate::tensor::{Tape, Tensor, TensorError, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// d x C projection.
    pub weight: Tensor,
    /// Length-C bias.
    pub bias: Tensor,
}

impl ClassifierParams {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        ClassifierParams {
            weight: Tensor::zeros(vec![dim, num_classes]),
            bias: Tensor::zeros(vec![num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.numel()
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, ParamKind, &Tensor)) {
        f("classifier.weight".into(), ParamKind::Weight, &self.weight);
        f("classifier.bias".into(), ParamKind::Bias, &self.bias);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, ParamKind, &mut Tensor)) {
        f("classifier.weight".into(), ParamKind::Weight, &mut self.weight);
        f("classifier.bias".into(), ParamKind::Bias, &mut self.bias);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierIds {
    pub weight: ValueId,
    pub bias: ValueId,
}

pub fn register(tape: &mut Tape, params: &ClassifierParams) -> ClassifierIds {
    ClassifierIds {
        weight: tape.leaf(&params.weight),
        bias: tape.leaf(&params.bias),
    }
}

/// Predicted class distribution for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Argmax over `probs`; ties resolve to the lowest class index.
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Prediction {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Prediction {
            probs,
            predicted_class: best,
        }
    }
}

/// Mean over node states: `[|V|, d] -> [1, d]`.
pub fn readout(tape: &mut Tape, node_states: ValueId) -> Result<ValueId, TensorError> {
    tape.mean_axis(node_states, 0)
}

/// Linear logits `z W + b` for a `[1, d]` document vector.
pub fn classify_logits(
    tape: &mut Tape,
    z: ValueId,
    ids: &ClassifierIds,
) -> Result<ValueId, TensorError> {
    let projected = tape.matmul(z, ids.weight)?;
    tape.add_row(projected, ids.bias)
}

/// Stable softmax of a logit row computed off-tape (forward values only).
pub fn probs_from_logits(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full classification: probabilities on the tape (softmax node) plus the
/// materialized prediction.
pub fn classify(
    tape: &mut Tape,
    z: ValueId,
    ids: &ClassifierIds,
) -> Result<(ValueId, Prediction), TensorError> {
    let logits = classify_logits(tape, z, ids)?;
    let probs = tape.softmax_rows(logits)?;
    let prediction = Prediction::from_probs(tape.value(probs).to_vec());
    Ok((probs, prediction))
}

/// Cross-entropy of the true label under the logits, `-log p[label]`.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: ValueId,
    label: usize,
) -> Result<ValueId, TensorError> {
    tape.cross_entropy_logits(logits, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn readout_single_node_is_identity() {
        let mut tape = Tape::new();
        let h = tape.constant(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        let z = readout(&mut tape, h).unwrap();
        assert_eq!(tape.value(z), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn readout_mean_definition() {
        let mut tape = Tape::new();
        let h = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = readout(&mut tape, h).unwrap();
        assert_eq!(tape.value(z), &[0.5, 0.5]);
    }

    #[test]
    fn readout_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, vec![5, 3], -2.0, 2.0);
        let mut reversed_rows: Vec<f64> = Vec::new();
        for v in (0..5).rev() {
            reversed_rows.extend_from_slice(t.row(v));
        }
        let mut tape = Tape::new();
        let a = tape.leaf(&t);
        let b = tape.constant(vec![5, 3], reversed_rows).unwrap();
        let za = readout(&mut tape, a).unwrap();
        let zb = readout(&mut tape, b).unwrap();
        for (x, y) in tape.value(za).iter().zip(tape.value(zb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_and_ties_to_class_zero() {
        let params = ClassifierParams::zeros(3, 4);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let z = tape.constant(vec![1, 3], vec![1.0, -1.0, 2.0]).unwrap();
        let (probs, prediction) = classify(&mut tape, z, &ids).unwrap();
        for &p in tape.value(probs) {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert_eq!(prediction.predicted_class, 0);
    }

    #[test]
    fn constant_logit_shift_leaves_probs_unchanged() {
        let logits = [1.3, -0.7, 2.2];
        let base = probs_from_logits(&logits);
        let shifted = probs_from_logits(&[1.3 + 100.0, -0.7 + 100.0, 2.2 + 100.0]);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            Prediction::from_probs(base).predicted_class,
            Prediction::from_probs(shifted).predicted_class
        );
    }

    #[test]
    fn two_class_probabilities_by_hand() {
        let probs = probs_from_logits(&[1.0, 2.0]);
        assert!((probs[0] - 0.26894142).abs() < 1e-8);
        assert!((probs[1] - 0.73105858).abs() < 1e-8);
    }

    #[test]
    fn uniform_loss_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![1, 4], vec![0.0; 4]).unwrap();
        let loss = cross_entropy(&mut tape, logits, 1).unwrap();
        assert!((tape.value(loss)[0] - 1.38629436).abs() < 1e-8);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![1, 3], vec![50.0, 0.0, 0.0]).unwrap();
        let loss = cross_entropy(&mut tape, logits, 0).unwrap();
        assert!(tape.value(loss)[0] >= 0.0);
        assert!(tape.value(loss)[0] < 1e-12);
    }

    #[test]
    fn loss_gradient_is_probs_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_tensor(&mut rng, vec![1, 5], -2.0, 2.0);
        let mut tape = Tape::new();
        let id = tape.leaf(&logits);
        let loss = cross_entropy(&mut tape, id, 3).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(id).unwrap();
        let probs = probs_from_logits(logits.data());
        for (j, &g) in grad.iter().enumerate() {
            let expected = probs[j] - if j == 3 { 1.0 } else { 0.0 };
            assert!((g - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random_tensor(&mut rng, vec![1, 4], -2.0, 2.0);
        let result = gradcheck::check_gradients(
            "head.cross_entropy",
            &[logits],
            gradcheck::LINEAR_TOL,
            |tape, ids| cross_entropy(tape, ids[0], 2).unwrap(),
        );
        assert!(result.passed(), "max rel err {}", result.max_rel_err);
    }

    #[test]
    fn head_chain_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes = random_tensor(&mut rng, vec![4, 3], -2.0, 2.0);
        let weight = random_tensor(&mut rng, vec![3, 3], -1.0, 1.0);
        let bias = random_tensor(&mut rng, vec![3], -0.5, 0.5);
        let result = gradcheck::check_gradients(
            "head.readout∘classify∘loss",
            &[nodes, weight, bias],
            gradcheck::NONLINEAR_TOL,
            |tape, ids| {
                let z = readout(tape, ids[0]).unwrap();
                let cids = ClassifierIds {
                    weight: ids[1],
                    bias: ids[2],
                };
                let logits = classify_logits(tape, z, &cids).unwrap();
                cross_entropy(tape, logits, 1).unwrap()
            },
        );
        assert!(result.passed(), "max rel err {}", result.max_rel_err);
    }
}
