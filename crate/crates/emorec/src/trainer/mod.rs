//! End-to-end optimization: the epoch loop with AdamW updates, validation
//! tracking with dropout disabled, best-validation checkpointing, loss-curve
//! emission, and held-out evaluation.
//!
//! Training is single-threaded and fully deterministic: every stream of
//! randomness (init, batch order, dropout masks, ranking-pair sampling) is
//! derived from the config seed.

mod adamw;
mod checkpoint;

pub use adamw::{adamw_step, AdamHyper, AdamState};
pub use checkpoint::{ArrayData, Checkpoint, CHECKPOINT_VERSION};

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataio::{batch_indices, derive_seed, DataError, DatasetManifest, MultimodalSample};
use crate::heads::LossWeights;
use crate::metrics::{classification_metrics, MetricReport, MetricsError, RankingJudgment};
use crate::model::{Model, ModelConfig, RankPair};
use crate::ndcore::{Mode, NdError, Tape, Tensor};
use crate::recommender::{rank_top_k, Catalog, ContentItem, RecError};

// Stream labels for seed derivation.
const STREAM_INIT: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_VAL_PAIRS: u64 = 4;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rec(#[from] RecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("parameter {name} became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteParam {
        name: String,
        epoch: usize,
        batch: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint is missing array {0}")]
    MissingArray(String),
    #[error("checkpoint malformed: {0}")]
    CheckpointFormat(String),
    #[error("field {field}: expected {expected}, got {got}")]
    FieldMismatch {
        field: String,
        expected: String,
        got: String,
    },
    #[error("optimizer: param {name}: gradient length {got} != {expected}")]
    GradShape {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Training hyperparameters; serde-loadable so runs are reproducible from a
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Unified latent dimension; must match the catalog embedding width.
    pub d: usize,
    pub cross_modal_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 100,
            dropout_p: 0.2,
            lambda1: 1.0,
            lambda2: 1.0,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            d: 16,
            cross_modal_layers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TrainError::Config(format!(
                "dropout_p {} must be in [0, 1)",
                self.dropout_p
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(TrainError::Config("d must be at least 1".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda1 + self.lambda2 <= 0.0 {
            return Err(TrainError::Config(
                "lambda1/lambda2 must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let body = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&body)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn model_config(&self, manifest: &DatasetManifest) -> ModelConfig {
        ModelConfig {
            d: self.d,
            d_v: manifest.d_v,
            d_a: manifest.d_a,
            d_t: manifest.d_t,
            emotion_classes: manifest.emotion_space.len(),
            intent_classes: manifest.intent_space.len(),
            cross_modal_layers: self.cross_modal_layers,
        }
    }
}

/// Loss components of one epoch; wall time stays out of the CSV so loss
/// curves are byte-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_recog: f64,
    pub train_rank: f64,
    pub val_total: f64,
    pub val_recog: f64,
    pub val_rank: f64,
    pub wall_time_s: f64,
}

pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out =
        String::from("epoch,train_total,train_recog,train_rank,val_total,val_recog,val_rank\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.train_total, r.train_recog, r.train_rank, r.val_total, r.val_recog, r.val_rank
        ));
    }
    out
}

pub struct TrainOutcome {
    /// Snapshot at the best validation loss.
    pub checkpoint: Checkpoint,
    pub records: Vec<EpochRecord>,
}

struct LabeledSet {
    emotion: Vec<usize>,
    intent: Vec<usize>,
}

fn label_indices(
    samples: &[MultimodalSample],
    manifest: &DatasetManifest,
) -> Result<LabeledSet, TrainError> {
    let mut emotion = Vec::with_capacity(samples.len());
    let mut intent = Vec::with_capacity(samples.len());
    for sample in samples {
        sample
            .validate(manifest)
            .map_err(|issue| DataError::InvalidSample {
                id: sample.id.clone(),
                issue,
            })?;
        emotion.push(manifest.emotion_index(&sample.emotion).expect("validated"));
        intent.push(manifest.intent_index(&sample.intent).expect("validated"));
    }
    Ok(LabeledSet { emotion, intent })
}

/// One sampled (positive, negative) content pair per batch member with
/// usable positives.
fn sample_rank_pairs(
    samples: &[&MultimodalSample],
    model: &Model,
    rng: &mut StdRng,
) -> Vec<RankPair> {
    let catalog_size = model.content_ids.len();
    let mut pairs = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let positives: Vec<usize> = sample
            .positives
            .iter()
            .filter_map(|id| model.content_index(id))
            .collect();
        if positives.is_empty() || positives.len() >= catalog_size {
            continue;
        }
        let positive = positives[rng.random_range(0..positives.len())];
        let positive_set: HashSet<usize> = positives.iter().copied().collect();
        let negative = loop {
            let candidate = rng.random_range(0..catalog_size);
            if !positive_set.contains(&candidate) {
                break candidate;
            }
        };
        pairs.push(RankPair {
            sample: i,
            positive,
            negative,
        });
    }
    pairs
}

struct LossBreakdown {
    total: f64,
    recog: f64,
    rank: f64,
}

/// Dropout-off loss over a whole set, with ranking pairs drawn from a fixed
/// stream so consecutive evaluations are identical and comparable across
/// epochs.
fn evaluation_loss(
    model: &Model,
    samples: &[MultimodalSample],
    labels: &LabeledSet,
    config: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let refs: Vec<&MultimodalSample> = samples.iter().collect();
    let mut pair_rng = StdRng::seed_from_u64(derive_seed(config.seed, &[STREAM_VAL_PAIRS]));
    let mut total_sum = 0.0;
    let mut recog_sum = 0.0;
    let mut rank_sum = 0.0;
    let mut rng = StdRng::seed_from_u64(0);
    for chunk_start in (0..refs.len()).step_by(config.batch_size) {
        let chunk_end = (chunk_start + config.batch_size).min(refs.len());
        let chunk = &refs[chunk_start..chunk_end];
        let pairs = sample_rank_pairs(chunk, model, &mut pair_rng);
        let mut tape = Tape::new();
        let tracked = model.watch(&mut tape);
        let loss = tracked.batch_loss(
            &mut tape,
            chunk,
            &labels.emotion[chunk_start..chunk_end],
            &labels.intent[chunk_start..chunk_end],
            &pairs,
            &config.weights(),
            Mode::Eval,
            0.0,
            &mut rng,
        )?;
        let n = chunk.len() as f64;
        total_sum += loss.total.item() * n;
        recog_sum += loss.recognition * n;
        rank_sum += loss.ranking * n;
    }
    let n = refs.len() as f64;
    Ok(LossBreakdown {
        total: total_sum / n,
        recog: recog_sum / n,
        rank: rank_sum / n,
    })
}

/// The untrained starting point as a checkpoint (epoch 0, zero moments);
/// the baseline for ordinal-improvement comparisons.
pub fn initial_checkpoint(
    manifest: &DatasetManifest,
    catalog: &Catalog,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    manifest.validate()?;
    let model = Model::new(
        config.model_config(manifest),
        catalog,
        derive_seed(config.seed, &[STREAM_INIT]),
    )?;
    let adam = AdamState::zeros_like(&model.named_params());
    Ok(Checkpoint::from_model(&model, &adam, config, 0, None))
}

/// Full training protocol. Per batch: forward with dropout, joint loss with
/// sampled ranking pairs, backward, AdamW step, finiteness assertion. Per
/// epoch: dropout-off validation loss; the best-validation snapshot becomes
/// the returned checkpoint.
pub fn train(
    train_set: &[MultimodalSample],
    val_set: &[MultimodalSample],
    manifest: &DatasetManifest,
    catalog: &Catalog,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    manifest.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train_labels = label_indices(train_set, manifest)?;
    let val_labels = label_indices(val_set, manifest)?;

    let mut model = Model::new(
        config.model_config(manifest),
        catalog,
        derive_seed(config.seed, &[STREAM_INIT]),
    )?;
    let mut adam = AdamState::new();
    let hyper = config.hyper();
    let weights = config.weights();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut total_sum = 0.0;
        let mut recog_sum = 0.0;
        let mut rank_sum = 0.0;

        let batches = batch_indices(
            train_set.len(),
            config.batch_size,
            config.seed,
            epoch as u64,
        )?;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let samples: Vec<&MultimodalSample> = batch.iter().map(|&i| &train_set[i]).collect();
            let emotion: Vec<usize> = batch.iter().map(|&i| train_labels.emotion[i]).collect();
            let intent: Vec<usize> = batch.iter().map(|&i| train_labels.intent[i]).collect();

            let mut pair_rng = StdRng::seed_from_u64(derive_seed(
                config.seed,
                &[STREAM_PAIRS, epoch as u64, batch_idx as u64],
            ));
            let pairs = sample_rank_pairs(&samples, &model, &mut pair_rng);
            let mut dropout_rng = StdRng::seed_from_u64(derive_seed(
                config.seed,
                &[STREAM_DROPOUT, epoch as u64, batch_idx as u64],
            ));

            let mut tape = Tape::new();
            let tracked = model.watch(&mut tape);
            let loss = tracked.batch_loss(
                &mut tape,
                &samples,
                &emotion,
                &intent,
                &pairs,
                &weights,
                Mode::Train,
                config.dropout_p,
                &mut dropout_rng,
            )?;
            if !loss.total.item().is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let grads = tape.backward(&loss.total)?;
            let grad_list: Vec<(String, Tensor)> = tracked
                .named_params()
                .into_iter()
                .map(|(name, tensor)| {
                    let grad = grads.wrt(tensor).expect("tracked leaf");
                    (name, grad)
                })
                .collect();

            let mut params = model.named_params_mut();
            adamw_step(&mut params, &grad_list, &mut adam, &hyper)?;

            for (name, tensor) in model.named_params() {
                if !tensor.is_finite() {
                    return Err(TrainError::NonFiniteParam {
                        name,
                        epoch,
                        batch: batch_idx,
                    });
                }
            }

            let n = samples.len() as f64;
            total_sum += loss.total.item() * n;
            recog_sum += loss.recognition * n;
            rank_sum += loss.ranking * n;
        }

        let val = evaluation_loss(&model, val_set, &val_labels, config)?;
        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch,
            train_total: total_sum / n,
            train_recog: recog_sum / n,
            train_rank: rank_sum / n,
            val_total: val.total,
            val_recog: val.recog,
            val_rank: val.rank,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let is_best = best
            .as_ref()
            .is_none_or(|(best_loss, _)| record.val_total < *best_loss);
        if is_best {
            let snapshot =
                Checkpoint::from_model(&model, &adam, config, epoch, Some(record.val_total));
            best = Some((record.val_total, snapshot));
        }
        records.push(record);
    }

    let (_, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint,
        records,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Dropout-off evaluation of a checkpoint: per-head classification metrics
/// plus ranking metrics of the trained content embeddings against each
/// user's positives.
pub fn evaluate(
    checkpoint: &Checkpoint,
    samples: &[MultimodalSample],
    manifest: &DatasetManifest,
    catalog: &Catalog,
    k: usize,
) -> Result<MetricReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let (model, _) = checkpoint.to_model()?;
    config_field_checks(&model, manifest)?;
    if catalog.len() != model.content_ids.len()
        || model
            .content_ids
            .iter()
            .any(|id| catalog.get(id).is_none())
    {
        return Err(TrainError::FieldMismatch {
            field: "catalog".to_string(),
            expected: format!("the {} content ids the checkpoint was trained on", model.content_ids.len()),
            got: format!("{} items", catalog.len()),
        });
    }
    let labels = label_indices(samples, manifest)?;

    // Rank against the trained content table.
    let trained_catalog = Catalog::new(
        model
            .content_rows()
            .into_iter()
            .map(|(id, embedding)| ContentItem {
                id,
                embedding,
                metadata: serde_json::Map::new(),
            })
            .collect(),
    )?;

    let mut emotion_predictions = Vec::with_capacity(samples.len());
    let mut intent_predictions = Vec::with_capacity(samples.len());
    let mut judgments = Vec::with_capacity(samples.len());
    let mut rng = StdRng::seed_from_u64(0);
    for sample in samples {
        let mut tape = Tape::new();
        let tracked = model.watch(&mut tape);
        let forward = tracked.forward_sample(&mut tape, sample, Mode::Eval, 0.0, &mut rng)?;
        emotion_predictions.push(argmax(forward.emotion_probs.data()));
        intent_predictions.push(argmax(forward.intent_probs.data()));

        let ranking = rank_top_k(
            &forward.state.fused_vector(),
            &trained_catalog,
            trained_catalog.len(),
        )?;
        let relevant: HashSet<String> = sample
            .positives
            .iter()
            .filter(|id| model.content_index(id).is_some())
            .cloned()
            .collect();
        judgments.push(RankingJudgment::new(ranking.ids(), relevant)?);
    }

    let emotion = classification_metrics(
        &emotion_predictions,
        &labels.emotion,
        manifest.emotion_space.len(),
    )?;
    let intent = classification_metrics(
        &intent_predictions,
        &labels.intent,
        manifest.intent_space.len(),
    )?;
    Ok(MetricReport::assemble(emotion, intent, &judgments, k))
}

fn config_field_checks(model: &Model, manifest: &DatasetManifest) -> Result<(), TrainError> {
    let checks = [
        ("d_v", model.config.d_v, manifest.d_v),
        ("d_a", model.config.d_a, manifest.d_a),
        ("d_t", model.config.d_t, manifest.d_t),
        (
            "emotion_space",
            model.config.emotion_classes,
            manifest.emotion_space.len(),
        ),
        (
            "intent_space",
            model.config.intent_classes,
            manifest.intent_space.len(),
        ),
    ];
    for (field, model_value, manifest_value) in checks {
        if model_value != manifest_value {
            return Err(TrainError::FieldMismatch {
                field: field.to_string(),
                expected: format!("{model_value} (from checkpoint)"),
                got: format!("{manifest_value} (from manifest)"),
            });
        }
    }
    Ok(())
}
