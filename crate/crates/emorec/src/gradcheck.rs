//! Finite-difference verification of analytic gradients.
//!
//! The numeric side only ever calls the forward pass, so it stays an
//! independent oracle for the tape's backward sweep. A comparison passes
//! when the absolute difference is below the float-noise floor or the
//! relative error is below tolerance.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::dataio::MultimodalSample;
use crate::heads::LossWeights;
use crate::model::{Model, ModelConfig, RankPair};
use crate::ndcore::{Mode, NdError, Tape, Tensor};
use crate::recommender::{Catalog, ContentItem};

/// Central differences of `f` at `at`, one coordinate at a time.
pub fn central_difference<F>(mut f: F, at: &[f64], epsilon: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = at.to_vec();
    let mut grad = vec![0.0; at.len()];
    for i in 0..at.len() {
        let original = point[i];
        point[i] = original + epsilon;
        let plus = f(&point);
        point[i] = original - epsilon;
        let minus = f(&point);
        point[i] = original;
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    grad
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel_tol: f64,
    /// Differences below this are attributed to finite-difference roundoff.
    pub abs_floor: f64,
    pub epsilon: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            epsilon: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn matches(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        if diff <= self.abs_floor {
            return true;
        }
        diff <= self.rel_tol * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// The fixed inputs of one gradient check: a 3-sample batch with modality
/// lengths cycling through {1, 2, 5}, labels, and ranking pairs.
#[derive(Debug, Clone)]
pub struct CheckBatch {
    pub samples: Vec<MultimodalSample>,
    pub emotion_labels: Vec<usize>,
    pub intent_labels: Vec<usize>,
    pub rank_pairs: Vec<RankPair>,
    pub weights: LossWeights,
}

/// Joint loss as a plain function of the model parameters. Dropout is
/// excluded (its mask is stochastic per pass; the dropout rule has its own
/// fixed-mask check below).
pub fn batch_loss_value(model: &Model, batch: &CheckBatch) -> Result<f64, NdError> {
    let mut tape = Tape::new();
    let tracked = model.watch(&mut tape);
    let refs: Vec<&MultimodalSample> = batch.samples.iter().collect();
    let mut rng = StdRng::seed_from_u64(0);
    let loss = tracked.batch_loss(
        &mut tape,
        &refs,
        &batch.emotion_labels,
        &batch.intent_labels,
        &batch.rank_pairs,
        &batch.weights,
        Mode::Eval,
        0.0,
        &mut rng,
    )?;
    Ok(loss.total.item())
}

/// Build a small all-random model plus a [`CheckBatch`] from a seed.
pub fn fixture(seed: u64, d: usize) -> Result<(Model, CheckBatch), NdError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let config = ModelConfig {
        d,
        d_v: d,
        d_a: d,
        d_t: d,
        emotion_classes: 7,
        intent_classes: 3,
        cross_modal_layers: 1,
    };
    let catalog = Catalog::new(
        (0..6)
            .map(|i| ContentItem {
                id: format!("c{i}"),
                embedding: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                metadata: serde_json::Map::new(),
            })
            .collect::<Vec<_>>(),
    )
    .expect("fixture catalog is well-formed");
    let model = Model::new_all_random(config, &catalog, seed ^ 0x5eed)?;

    let lengths = [1usize, 2, 5];
    let mut samples = Vec::new();
    let mut emotion_labels = Vec::new();
    let mut intent_labels = Vec::new();
    let mut rank_pairs = Vec::new();
    for s in 0..3 {
        let mut seq = |len: usize| {
            (0..len)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let visual = seq(lengths[s % 3]);
        let audio = seq(lengths[(s + 1) % 3]);
        let text = seq(lengths[(s + 2) % 3]);
        samples.push(MultimodalSample {
            id: format!("g{s}"),
            visual,
            audio,
            text,
            emotion: String::new(),
            intent: String::new(),
            positives: vec![],
        });
        emotion_labels.push(rng.random_range(0..7));
        intent_labels.push(rng.random_range(0..3));
        let positive = rng.random_range(0..6);
        let negative = (positive + rng.random_range(1..6)) % 6;
        rank_pairs.push(RankPair {
            sample: s,
            positive,
            negative,
        });
    }
    Ok((
        model,
        CheckBatch {
            samples,
            emotion_labels,
            intent_labels,
            rank_pairs,
            weights: LossWeights::default(),
        },
    ))
}

/// Verify every parameter of a small random model against central
/// differences.
pub fn check_model(seed: u64, d: usize, tolerance: &Tolerance) -> Result<GradCheckReport, NdError> {
    let (model, batch) = fixture(seed, d)?;

    // Analytic gradients from one taped pass.
    let analytic: Vec<(String, Tensor)> = {
        let mut tape = Tape::new();
        let tracked = model.watch(&mut tape);
        let refs: Vec<&MultimodalSample> = batch.samples.iter().collect();
        let mut rng = StdRng::seed_from_u64(0);
        let loss = tracked.batch_loss(
            &mut tape,
            &refs,
            &batch.emotion_labels,
            &batch.intent_labels,
            &batch.rank_pairs,
            &batch.weights,
            Mode::Eval,
            0.0,
            &mut rng,
        )?;
        let grads = tape.backward(&loss.total)?;
        tracked
            .named_params()
            .into_iter()
            .map(|(name, tensor)| {
                let grad = grads.wrt(tensor).expect("tracked leaf has a gradient");
                (name, grad)
            })
            .collect()
    };

    let mut report = GradCheckReport {
        params_checked: 0,
        entries_checked: 0,
        max_rel_error: 0.0,
        mismatches: Vec::new(),
    };

    let mut shadow = model;
    for (param_idx, (name, grad)) in analytic.iter().enumerate() {
        let at = shadow.named_params()[param_idx].1.data().to_vec();
        let numeric = central_difference(
            |point| {
                shadow.named_params_mut()[param_idx]
                    .1
                    .data_mut()
                    .copy_from_slice(point);
                batch_loss_value(&shadow, &batch).expect("forward on perturbed parameters")
            },
            &at,
            tolerance.epsilon,
        );
        // The last probe leaves a perturbed value behind; restore it.
        shadow.named_params_mut()[param_idx]
            .1
            .data_mut()
            .copy_from_slice(&at);

        for (index, (&a, &n)) in grad.data().iter().zip(&numeric).enumerate() {
            report.entries_checked += 1;
            let err = rel_error(a, n);
            if (a - n).abs() > tolerance.abs_floor && err > report.max_rel_error {
                report.max_rel_error = err;
            }
            if !tolerance.matches(a, n) {
                report.mismatches.push(GradMismatch {
                    param: name.clone(),
                    index,
                    analytic: a,
                    numeric: n,
                });
            }
        }
        report.params_checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let grad = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-6);
        assert!((grad[0] - 4.0).abs() < 1e-8);
        assert!((grad[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn tolerance_floor_absorbs_noise() {
        let t = Tolerance::default();
        assert!(t.matches(0.0, 5e-9));
        assert!(t.matches(1.0, 1.0 + 1e-9));
        assert!(!t.matches(1.0, 1.01));
    }

    #[test]
    fn fixture_loss_is_deterministic() {
        let (m1, b1) = fixture(4, 4).unwrap();
        let (m2, b2) = fixture(4, 4).unwrap();
        assert_eq!(
            batch_loss_value(&m1, &b1).unwrap(),
            batch_loss_value(&m2, &b2).unwrap()
        );
    }

    #[test]
    fn small_model_gradients_match_finite_differences() {
        let report = check_model(1, 3, &Tolerance::default()).unwrap();
        assert!(
            report.passed(),
            "mismatches: {:?}, max rel {}",
            &report.mismatches[..report.mismatches.len().min(5)],
            report.max_rel_error
        );
        assert!(report.entries_checked > 0);
    }

    #[test]
    fn relu_mul_sum_composite_matches_finite_differences() {
        // Ops outside the model's forward path still need an FD check;
        // points are kept away from relu's kink.
        let at: Vec<f64> = (0..12)
            .map(|i| if i % 2 == 0 { 0.5 + i as f64 } else { -0.5 - i as f64 })
            .collect();
        let forward = |x: &[f64]| {
            let mut tape = Tape::new();
            let t = tape.watch(&Tensor::row_vector(x.to_vec()).unwrap());
            let r = tape.relu(&t);
            let sq = tape.mul(&r, &t).unwrap();
            tape.sum(&sq).item()
        };
        let numeric = central_difference(forward, &at, 1e-6);

        let mut tape = Tape::new();
        let t = tape.watch(&Tensor::row_vector(at.clone()).unwrap());
        let r = tape.relu(&t);
        let sq = tape.mul(&r, &t).unwrap();
        let loss = tape.sum(&sq);
        let grads = tape.backward(&loss).unwrap();
        let analytic = grads.wrt(&t).unwrap();
        let tol = Tolerance::default();
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(tol.matches(*a, *n), "{a} vs {n}");
        }
    }

    #[test]
    fn dropout_gradient_matches_finite_differences_with_fixed_mask() {
        // f(x) = sum(dropout(x)) with the rng reseeded identically per call
        // is a deterministic function; its FD gradient must equal the mask.
        let p = 0.4;
        let at: Vec<f64> = (0..20).map(|i| 0.1 * i as f64 - 1.0).collect();
        let forward = |x: &[f64]| {
            let mut tape = Tape::new();
            let mut rng = StdRng::seed_from_u64(77);
            let t = tape.watch(&Tensor::row_vector(x.to_vec()).unwrap());
            let dropped = tape.dropout(&t, p, Mode::Train, &mut rng).unwrap();
            tape.sum(&dropped).item()
        };
        let numeric = central_difference(forward, &at, 1e-6);

        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(77);
        let t = tape.watch(&Tensor::row_vector(at.clone()).unwrap());
        let dropped = tape.dropout(&t, p, Mode::Train, &mut rng).unwrap();
        let loss = tape.sum(&dropped);
        let grads = tape.backward(&loss).unwrap();
        let analytic = grads.wrt(&t).unwrap();
        let tol = Tolerance::default();
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(tol.matches(*a, *n), "{a} vs {n}");
        }
    }
}
