//! The full parameter set and per-batch forward/loss assembly.
//!
//! Content embeddings are trainable parameters initialized from the ingested
//! catalog, so the ranking objective shapes them jointly with the fusion
//! stack and the heads.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::dataio::MultimodalSample;
use crate::fusion::{self, FusedState, FusionParams};
use crate::heads::{self, HeadParams, LossWeights};
use crate::ndcore::{Mode, NdError, Tape, Tensor};
use crate::recommender::Catalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Unified latent dimension.
    pub d: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub d_t: usize,
    pub emotion_classes: usize,
    pub intent_classes: usize,
    pub cross_modal_layers: usize,
}

/// One sampled ranking pair inside a batch: indices into the batch's sample
/// list and into the model's content table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankPair {
    pub sample: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Full trainable state: fusion stack, heads, and the content embedding
/// table with its id order.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub fusion: FusionParams,
    pub heads: HeadParams,
    pub content_ids: Vec<String>,
    /// `[n_items, d]`, row i belongs to `content_ids[i]`.
    pub content_embeddings: Tensor,
    content_index: HashMap<String, usize>,
}

impl Model {
    /// Training initialization: seeded uniform fusion parameters, zeroed
    /// heads (so the untrained model predicts at chance), content rows
    /// copied from the catalog.
    pub fn new(config: ModelConfig, catalog: &Catalog, seed: u64) -> Result<Self, NdError> {
        let mut rng = StdRng::seed_from_u64(seed);
        let fusion = FusionParams::init(
            config.d,
            config.d_v,
            config.d_a,
            config.d_t,
            config.cross_modal_layers,
            &mut rng,
        );
        let heads = HeadParams::zeros(config.d, config.emotion_classes, config.intent_classes);
        Self::assemble(config, catalog, fusion, heads)
    }

    /// Everything random, heads included; used by the gradient checker.
    pub fn new_all_random(config: ModelConfig, catalog: &Catalog, seed: u64) -> Result<Self, NdError> {
        let mut rng = StdRng::seed_from_u64(seed);
        let fusion = FusionParams::init(
            config.d,
            config.d_v,
            config.d_a,
            config.d_t,
            config.cross_modal_layers,
            &mut rng,
        );
        let heads = HeadParams::random(
            config.d,
            config.emotion_classes,
            config.intent_classes,
            &mut rng,
        );
        Self::assemble(config, catalog, fusion, heads)
    }

    fn assemble(
        config: ModelConfig,
        catalog: &Catalog,
        fusion: FusionParams,
        heads: HeadParams,
    ) -> Result<Self, NdError> {
        if catalog.width() != config.d {
            return Err(NdError::ShapeMismatch {
                op: "content_embeddings",
                lhs: vec![catalog.len(), catalog.width()],
                rhs: vec![catalog.len(), config.d],
            });
        }
        let content_ids: Vec<String> = catalog.items().iter().map(|i| i.id.clone()).collect();
        let rows: Vec<Vec<f64>> = catalog.items().iter().map(|i| i.embedding.clone()).collect();
        let content_embeddings = Tensor::from_rows(&rows)?;
        Ok(Self::from_parts(
            config,
            fusion,
            heads,
            content_ids,
            content_embeddings,
        ))
    }

    pub fn from_parts(
        config: ModelConfig,
        fusion: FusionParams,
        heads: HeadParams,
        content_ids: Vec<String>,
        content_embeddings: Tensor,
    ) -> Self {
        let content_index = content_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            config,
            fusion,
            heads,
            content_ids,
            content_embeddings,
            content_index,
        }
    }

    pub fn content_index(&self, id: &str) -> Option<usize> {
        self.content_index.get(id).copied()
    }

    /// Trained content rows as `(id, embedding)` pairs.
    pub fn content_rows(&self) -> Vec<(String, Vec<f64>)> {
        self.content_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), self.content_embeddings.row_slice(i).to_vec()))
            .collect()
    }

    /// All parameters in checkpoint-stable order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.fusion.named();
        out.extend(self.heads.named());
        out.push(("content_embeddings".to_string(), &self.content_embeddings));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.fusion.named_mut();
        out.extend(self.heads.named_mut());
        out.push((
            "content_embeddings".to_string(),
            &mut self.content_embeddings,
        ));
        out
    }

    /// Register every parameter on a fresh tape for one forward/backward
    /// pass.
    pub fn watch(&self, tape: &mut Tape) -> TrackedModel {
        TrackedModel {
            config: self.config,
            fusion: self.fusion.watch(tape),
            heads: self.heads.watch(tape),
            content_embeddings: tape.watch(&self.content_embeddings),
        }
    }
}

/// Tape-tracked view of a [`Model`] for one forward pass.
pub struct TrackedModel {
    pub config: ModelConfig,
    pub fusion: FusionParams,
    pub heads: HeadParams,
    pub content_embeddings: Tensor,
}

impl TrackedModel {
    /// Tracked parameters in the same order as [`Model::named_params`], for
    /// pairing gradients with the plain parameters they update.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.fusion.named();
        out.extend(self.heads.named());
        out.push(("content_embeddings".to_string(), &self.content_embeddings));
        out
    }
}

/// Per-sample forward products.
pub struct SampleForward {
    pub state: FusedState,
    /// F after dropout (identical to `state.fused` in eval mode).
    pub fused_for_heads: Tensor,
    pub emotion_probs: Tensor,
    pub intent_probs: Tensor,
}

/// Scalar loss tensors for one batch, with their plain values alongside.
pub struct BatchLoss {
    pub total: Tensor,
    pub recognition: f64,
    pub ranking: f64,
}

impl TrackedModel {
    /// Fusion → dropout → both heads for one sample.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        sample: &MultimodalSample,
        mode: Mode,
        dropout_p: f64,
        rng: &mut StdRng,
    ) -> Result<SampleForward, NdError> {
        let state = fusion::fuse_sample(tape, sample, &self.fusion)?;
        let fused_for_heads = tape.dropout(&state.fused, dropout_p, mode, rng)?;
        let emotion_probs = heads::emotion_forward(tape, &fused_for_heads, &self.heads)?;
        let intent_probs = heads::intent_forward(tape, &fused_for_heads, &self.heads)?;
        Ok(SampleForward {
            state,
            fused_for_heads,
            emotion_probs,
            intent_probs,
        })
    }

    /// Assemble the joint batch loss: summed classification cross-entropies
    /// plus the mean pairwise ranking loss over `rank_pairs`, λ-weighted.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        samples: &[&MultimodalSample],
        emotion_labels: &[usize],
        intent_labels: &[usize],
        rank_pairs: &[RankPair],
        weights: &LossWeights,
        mode: Mode,
        dropout_p: f64,
        rng: &mut StdRng,
    ) -> Result<BatchLoss, NdError> {
        let mut emotion_rows = Vec::with_capacity(samples.len());
        let mut intent_rows = Vec::with_capacity(samples.len());
        let mut fused_rows = Vec::with_capacity(samples.len());
        for sample in samples {
            let forward = self.forward_sample(tape, sample, mode, dropout_p, rng)?;
            emotion_rows.push(forward.emotion_probs);
            intent_rows.push(forward.intent_probs);
            fused_rows.push(forward.fused_for_heads);
        }

        let emotion_refs: Vec<&Tensor> = emotion_rows.iter().collect();
        let intent_refs: Vec<&Tensor> = intent_rows.iter().collect();
        let emotion_probs = tape.concat_rows(&emotion_refs)?;
        let intent_probs = tape.concat_rows(&intent_refs)?;
        let recognition = heads::recognition_loss(
            tape,
            &emotion_probs,
            emotion_labels,
            &intent_probs,
            intent_labels,
        )?;

        let ranking = if rank_pairs.is_empty() {
            tape.watch(&Tensor::scalar(0.0).expect("finite"))
        } else {
            let mut acc: Option<Tensor> = None;
            for pair in rank_pairs {
                let positive = tape.row(&self.content_embeddings, pair.positive)?;
                let negative = tape.row(&self.content_embeddings, pair.negative)?;
                let loss =
                    heads::ranking_loss(tape, &fused_rows[pair.sample], &positive, &negative)?;
                acc = Some(match acc {
                    Some(prev) => tape.add(&prev, &loss)?,
                    None => loss,
                });
            }
            tape.scale(&acc.expect("non-empty pairs"), 1.0 / rank_pairs.len() as f64)
        };

        let total = heads::total_loss(tape, &recognition, &ranking, weights)?;
        Ok(BatchLoss {
            total,
            recognition: recognition.item(),
            ranking: ranking.item(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::{Catalog, ContentItem};
    use rand::Rng;

    fn catalog(d: usize, items: usize, seed: u64) -> Catalog {
        let mut rng = StdRng::seed_from_u64(seed);
        Catalog::new(
            (0..items)
                .map(|i| ContentItem {
                    id: format!("c{i:03}"),
                    embedding: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    metadata: serde_json::Map::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn config(d: usize) -> ModelConfig {
        ModelConfig {
            d,
            d_v: d,
            d_a: d,
            d_t: d,
            emotion_classes: 3,
            intent_classes: 2,
            cross_modal_layers: 1,
        }
    }

    fn sample(d: usize, seed: u64) -> MultimodalSample {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut seq = |len: usize| {
            (0..len)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        MultimodalSample {
            id: format!("s{seed}"),
            visual: seq(2),
            audio: seq(3),
            text: seq(1),
            emotion: "joy".into(),
            intent: "relaxing".into(),
            positives: vec!["c000".into()],
        }
    }

    #[test]
    fn catalog_width_must_match_d() {
        let err = Model::new(config(4), &catalog(3, 5, 0), 0).unwrap_err();
        assert!(matches!(err, NdError::ShapeMismatch { .. }));
    }

    #[test]
    fn named_params_align_between_const_and_mut() {
        let mut model = Model::new(config(4), &catalog(4, 5, 0), 1).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = model
            .named_params_mut()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"fusion.w_visual".to_string()));
        assert!(names.contains(&"heads.b_intent".to_string()));
        assert!(names.contains(&"content_embeddings".to_string()));
        // 3 projections + 9 blocks x 3 mats + scorer + 4 head tensors + content
        assert_eq!(names.len(), 3 + 27 + 1 + 4 + 1);
    }

    #[test]
    fn zero_init_heads_predict_uniform() {
        let model = Model::new(config(4), &catalog(4, 5, 0), 7).unwrap();
        let mut tape = Tape::new();
        let tracked = model.watch(&mut tape);
        let mut rng = StdRng::seed_from_u64(0);
        let fwd = tracked
            .forward_sample(&mut tape, &sample(4, 3), Mode::Eval, 0.2, &mut rng)
            .unwrap();
        for p in fwd.emotion_probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        for p in fwd.intent_probs.data() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_loss_uniform_heads_hits_analytic_value() {
        let model = Model::new(config(4), &catalog(4, 5, 0), 7).unwrap();
        let mut tape = Tape::new();
        let tracked = model.watch(&mut tape);
        let mut rng = StdRng::seed_from_u64(0);
        let samples = [sample(4, 1), sample(4, 2)];
        let refs: Vec<&MultimodalSample> = samples.iter().collect();
        let loss = tracked
            .batch_loss(
                &mut tape,
                &refs,
                &[0, 2],
                &[1, 0],
                &[],
                &LossWeights::default(),
                Mode::Eval,
                0.0,
                &mut rng,
            )
            .unwrap();
        let expected = 3f64.ln() + 2f64.ln();
        assert!((loss.recognition - expected).abs() < 1e-12);
        assert_eq!(loss.ranking, 0.0);
        assert!((loss.total.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = Model::new(config(4), &catalog(4, 5, 0), 7).unwrap();
        let s = sample(4, 9);
        let run = || {
            let mut tape = Tape::new();
            let tracked = model.watch(&mut tape);
            let mut rng = StdRng::seed_from_u64(99);
            tracked
                .forward_sample(&mut tape, &s, Mode::Eval, 0.2, &mut rng)
                .unwrap()
                .state
                .fused_vector()
        };
        assert_eq!(run(), run());
    }
}
