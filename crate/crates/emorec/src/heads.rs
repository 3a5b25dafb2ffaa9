//! Emotion and intent classification heads over the fused state, plus the
//! joint objective: summed cross-entropies for recognition and a pairwise
//! logistic loss for ranking, combined with λ weights.

use rand::rngs::StdRng;

use crate::ndcore::{NdError, Tape, Tensor};

/// Linear softmax heads: `W_e [|E|, d]`, `b_e [1, |E|]`, `W_i [|I|, d]`,
/// `b_i [1, |I|]`.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_emotion: Tensor,
    pub b_emotion: Tensor,
    pub w_intent: Tensor,
    pub b_intent: Tensor,
}

impl HeadParams {
    /// Zero initialization: both heads start at the uniform distribution,
    /// the chance-level baseline.
    pub fn zeros(d: usize, emotion_classes: usize, intent_classes: usize) -> Self {
        Self {
            w_emotion: Tensor::zeros(vec![emotion_classes, d]),
            b_emotion: Tensor::zeros(vec![1, emotion_classes]),
            w_intent: Tensor::zeros(vec![intent_classes, d]),
            b_intent: Tensor::zeros(vec![1, intent_classes]),
        }
    }

    /// Uniform random initialization, used by the gradient checker so no
    /// path through the heads is zeroed out.
    pub fn random(d: usize, emotion_classes: usize, intent_classes: usize, rng: &mut StdRng) -> Self {
        use rand::Rng;
        let bound = 1.0 / (d as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            Tensor::unchecked(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
                None,
            )
        };
        let w_emotion = mat(emotion_classes, d);
        let b_emotion = mat(1, emotion_classes);
        let w_intent = mat(intent_classes, d);
        let b_intent = mat(1, intent_classes);
        Self {
            w_emotion,
            b_emotion,
            w_intent,
            b_intent,
        }
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            w_emotion: tape.watch(&self.w_emotion),
            b_emotion: tape.watch(&self.b_emotion),
            w_intent: tape.watch(&self.w_intent),
            b_intent: tape.watch(&self.b_intent),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("heads.w_emotion".to_string(), &self.w_emotion),
            ("heads.b_emotion".to_string(), &self.b_emotion),
            ("heads.w_intent".to_string(), &self.w_intent),
            ("heads.b_intent".to_string(), &self.b_intent),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("heads.w_emotion".to_string(), &mut self.w_emotion),
            ("heads.b_emotion".to_string(), &mut self.b_emotion),
            ("heads.w_intent".to_string(), &mut self.w_intent),
            ("heads.b_intent".to_string(), &mut self.b_intent),
        ]
    }
}

/// λ coefficients of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NdError> {
        for (name, value) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(NdError::BadParameter {
                    op: "total_loss",
                    name,
                    value,
                    range: "[0, ∞)",
                });
            }
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(NdError::BadParameter {
                op: "total_loss",
                name: "lambda1 + lambda2",
                value: self.lambda1 + self.lambda2,
                range: "(0, ∞)",
            });
        }
        Ok(())
    }
}

fn head_forward(
    tape: &mut Tape,
    fused: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, NdError> {
    let wt = tape.transpose(weight)?;
    let logits = tape.matmul(fused, &wt)?;
    let shifted = tape.add(&logits, bias)?;
    tape.softmax_rows(&shifted)
}

/// `softmax(W_e·F + b_e)` as a `[1, |E|]` distribution.
pub fn emotion_forward(
    tape: &mut Tape,
    fused: &Tensor,
    params: &HeadParams,
) -> Result<Tensor, NdError> {
    head_forward(tape, fused, &params.w_emotion, &params.b_emotion)
}

/// `softmax(W_i·F + b_i)` as a `[1, |I|]` distribution.
pub fn intent_forward(
    tape: &mut Tape,
    fused: &Tensor,
    params: &HeadParams,
) -> Result<Tensor, NdError> {
    head_forward(tape, fused, &params.w_intent, &params.b_intent)
}

/// Sum of the two batch-averaged classification cross-entropies.
pub fn recognition_loss(
    tape: &mut Tape,
    emotion_probs: &Tensor,
    emotion_labels: &[usize],
    intent_probs: &Tensor,
    intent_labels: &[usize],
) -> Result<Tensor, NdError> {
    let ce_emotion = tape.cross_entropy(emotion_probs, emotion_labels)?;
    let ce_intent = tape.cross_entropy(intent_probs, intent_labels)?;
    tape.add(&ce_emotion, &ce_intent)
}

/// Pairwise logistic ranking loss `-ln σ(⟨F, e_pos⟩ − ⟨F, e_neg⟩)` between a
/// positive and a negative content embedding (`[1, d]` rows, tracked when
/// the embeddings are trainable).
pub fn ranking_loss(
    tape: &mut Tape,
    fused: &Tensor,
    positive: &Tensor,
    negative: &Tensor,
) -> Result<Tensor, NdError> {
    let pos_t = tape.transpose(positive)?;
    let neg_t = tape.transpose(negative)?;
    let score_pos = tape.matmul(fused, &pos_t)?;
    let score_neg = tape.matmul(fused, &neg_t)?;
    let gap = tape.sub(&score_pos, &score_neg)?;
    let neg_gap = tape.scale(&gap, -1.0);
    Ok(tape.softplus(&neg_gap))
}

/// `λ₁·recognition + λ₂·ranking`.
pub fn total_loss(
    tape: &mut Tape,
    recognition: &Tensor,
    ranking: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor, NdError> {
    weights.validate()?;
    let recog_term = tape.scale(recognition, weights.lambda1);
    let rank_term = tape.scale(ranking, weights.lambda2);
    tape.add(&recog_term, &rank_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn fused(values: &[f64]) -> Tensor {
        Tensor::row_vector(values.to_vec()).unwrap()
    }

    #[test]
    fn zero_head_is_uniform_over_seven() {
        let mut tape = Tape::new();
        let params = HeadParams::zeros(3, 7, 3);
        let probs = emotion_forward(&mut tape, &fused(&[0.4, -2.0, 1.0]), &params).unwrap();
        for p in probs.data() {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_ln2_shifts_to_two_thirds() {
        let mut tape = Tape::new();
        let mut params = HeadParams::zeros(2, 2, 3);
        params.b_emotion = Tensor::row_vector(vec![2f64.ln(), 0.0]).unwrap();
        let probs = emotion_forward(&mut tape, &fused(&[5.0, -5.0]), &params).unwrap();
        assert!((probs.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((probs.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn intent_bias_ln3_gives_point_six() {
        let mut tape = Tape::new();
        let mut params = HeadParams::zeros(2, 2, 3);
        params.b_intent = Tensor::row_vector(vec![0.0, 0.0, 3f64.ln()]).unwrap();
        let probs = intent_forward(&mut tape, &fused(&[1.0, 1.0]), &params).unwrap();
        assert!((probs.data()[0] - 0.2).abs() < 1e-12);
        assert!((probs.data()[1] - 0.2).abs() < 1e-12);
        assert!((probs.data()[2] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn head_outputs_are_distributions_for_random_inputs() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let mut tape = Tape::new();
            let d = rng.random_range(1..6);
            let params = HeadParams::random(d, 7, 3, &mut rng);
            let f = fused(
                &(0..d)
                    .map(|_| rng.random_range(-20.0..20.0))
                    .collect::<Vec<_>>(),
            );
            for probs in [
                emotion_forward(&mut tape, &f, &params).unwrap(),
                intent_forward(&mut tape, &f, &params).unwrap(),
            ] {
                let sum: f64 = probs.data().iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(probs.data().iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn recognition_loss_perfect_predictions_is_zero() {
        let mut tape = Tape::new();
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let i = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let loss = recognition_loss(&mut tape, &e, &[0, 1], &i, &[0, 2]).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn recognition_loss_uniform_is_ln7_plus_ln3() {
        let mut tape = Tape::new();
        let e = Tensor::from_rows(&[vec![1.0 / 7.0; 7]]).unwrap();
        let i = Tensor::from_rows(&[vec![1.0 / 3.0; 3]]).unwrap();
        let loss = recognition_loss(&mut tape, &e, &[4], &i, &[1]).unwrap();
        let expected = 7f64.ln() + 3f64.ln();
        assert!((loss.item() - expected).abs() < 1e-12);
        assert!((loss.item() - 3.0445).abs() < 1e-4);
    }

    #[test]
    fn recognition_loss_is_additive_across_heads() {
        let mut tape = Tape::new();
        let e = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let i = Tensor::from_rows(&[vec![1.0 / 3.0; 3]]).unwrap();
        let loss = recognition_loss(&mut tape, &e, &[0], &i, &[0]).unwrap();
        assert!((loss.item() - 3f64.ln()).abs() < 1e-12);
    }

    fn rank(fused_v: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let f = Tensor::row_vector(fused_v.to_vec()).unwrap();
        let p = Tensor::row_vector(pos.to_vec()).unwrap();
        let n = Tensor::row_vector(neg.to_vec()).unwrap();
        ranking_loss(&mut tape, &f, &p, &n).unwrap().item()
    }

    #[test]
    fn equal_scores_rank_loss_is_ln2() {
        let loss = rank(&[1.0, 1.0], &[0.5, 0.5], &[0.5, 0.5]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_gap_rank_loss_vanishes() {
        // gap = 10 → loss = -ln σ(10) ≈ 4.54e-5
        let loss = rank(&[1.0], &[10.0], &[0.0]);
        assert!((loss - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-15);
        assert!((loss - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn swapping_pair_flips_the_gap() {
        let forward = rank(&[1.0, 0.0], &[2.0, 0.0], &[0.5, 0.0]);
        let swapped = rank(&[1.0, 0.0], &[0.5, 0.0], &[2.0, 0.0]);
        let gap = 1.5f64;
        assert!((forward - (1.0 + (-gap).exp()).ln()).abs() < 1e-12);
        assert!((swapped - (1.0 + gap.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn rank_loss_strictly_decreases_in_gap() {
        let mut previous = f64::INFINITY;
        for gap in [-2.0, -0.5, 0.0, 0.5, 2.0, 5.0] {
            let loss = rank(&[1.0], &[gap], &[0.0]);
            assert!(loss < previous);
            previous = loss;
        }
    }

    fn scalar(tape: &mut Tape, v: f64) -> Tensor {
        let t = Tensor::scalar(v).unwrap();
        tape.watch(&t)
    }

    #[test]
    fn total_loss_respects_lambda_switches() {
        let mut tape = Tape::new();
        let recog = scalar(&mut tape, 2.0);
        let rank = scalar(&mut tape, 4.0);
        let only_recog = total_loss(
            &mut tape,
            &recog,
            &rank,
            &LossWeights {
                lambda1: 1.0,
                lambda2: 0.0,
            },
        )
        .unwrap();
        assert_eq!(only_recog.item(), 2.0);
        let only_rank = total_loss(
            &mut tape,
            &recog,
            &rank,
            &LossWeights {
                lambda1: 0.0,
                lambda2: 1.0,
            },
        )
        .unwrap();
        assert_eq!(only_rank.item(), 4.0);
        let both = total_loss(
            &mut tape,
            &recog,
            &rank,
            &LossWeights {
                lambda1: 0.5,
                lambda2: 0.5,
            },
        )
        .unwrap();
        assert_eq!(both.item(), 3.0);
    }

    #[test]
    fn total_loss_is_linear_in_each_weight() {
        let mut tape = Tape::new();
        let recog = scalar(&mut tape, 1.7);
        let rank = scalar(&mut tape, 0.0);
        let base = total_loss(&mut tape, &recog, &rank, &LossWeights::default())
            .unwrap()
            .item();
        let tripled = total_loss(
            &mut tape,
            &recog,
            &rank,
            &LossWeights {
                lambda1: 3.0,
                lambda2: 1.0,
            },
        )
        .unwrap()
        .item();
        assert!((tripled - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_rejected() {
        let weights = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
        };
        assert!(weights.validate().is_err());
        let negative = LossWeights {
            lambda1: -1.0,
            lambda2: 2.0,
        };
        assert!(negative.validate().is_err());
    }
}
