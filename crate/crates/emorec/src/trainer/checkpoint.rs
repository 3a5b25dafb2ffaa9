//! Checkpoint persistence: one JSON document holding the config echo, every
//! parameter and optimizer moment as a named shaped array, and the content
//! id order. Floats are written in shortest round-trip decimal form, so
//! save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fusion::{AttentionBlock, CrossModalLayer, FusionParams, Modality};
use crate::heads::HeadParams;
use crate::model::{Model, ModelConfig};
use crate::ndcore::Tensor;

use super::adamw::AdamState;
use super::{TrainConfig, TrainError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayData {
    fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    /// Best validation loss seen when the snapshot was taken; `None` for an
    /// untrained checkpoint.
    pub best_val_loss: Option<f64>,
    pub content_ids: Vec<String>,
    pub arrays: BTreeMap<String, ArrayData>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        adam: &AdamState,
        config: &TrainConfig,
        epoch: usize,
        best_val_loss: Option<f64>,
    ) -> Self {
        let mut arrays = BTreeMap::new();
        for (name, tensor) in model.named_params() {
            arrays.insert(name, ArrayData::from_tensor(tensor));
        }
        let (first, second) = adam.moments();
        for (name, data) in first {
            arrays.insert(
                format!("adam.m.{name}"),
                ArrayData {
                    shape: vec![1, data.len()],
                    data: data.clone(),
                },
            );
        }
        for (name, data) in second {
            arrays.insert(
                format!("adam.v.{name}"),
                ArrayData {
                    shape: vec![1, data.len()],
                    data: data.clone(),
                },
            );
        }
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            epoch,
            step: adam.step_count(),
            best_val_loss,
            content_ids: model.content_ids.clone(),
            arrays,
        }
    }

    fn tensor(&self, name: &str) -> Result<Tensor, TrainError> {
        let array = self
            .arrays
            .get(name)
            .ok_or_else(|| TrainError::MissingArray(name.to_string()))?;
        Tensor::new(array.shape.clone(), array.data.clone()).map_err(|e| {
            TrainError::FieldMismatch {
                field: name.to_string(),
                expected: "a well-formed finite array".to_string(),
                got: e.to_string(),
            }
        })
    }

    fn expect_shape(&self, name: &str, tensor: &Tensor, expected: &[usize], field: &str) -> Result<(), TrainError> {
        if tensor.shape() != expected {
            return Err(TrainError::FieldMismatch {
                field: field.to_string(),
                expected: format!("{name} with shape {expected:?}"),
                got: format!("{:?}", tensor.shape()),
            });
        }
        Ok(())
    }

    /// Rebuild the model and optimizer state, validating array shapes
    /// against the config echo.
    pub fn to_model(&self) -> Result<(Model, AdamState), TrainError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion {
                found: self.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let d = self.config.d;

        let w_visual = self.tensor("fusion.w_visual")?;
        if w_visual.rows() != d {
            return Err(TrainError::FieldMismatch {
                field: "d".to_string(),
                expected: format!("fusion.w_visual with {d} rows (config d)"),
                got: format!("{:?}", w_visual.shape()),
            });
        }
        let w_audio = self.tensor("fusion.w_audio")?;
        self.expect_shape(
            "fusion.w_audio",
            &w_audio,
            &[d, w_audio.cols()],
            "fusion.w_audio",
        )?;
        if w_audio.rows() != d {
            return Err(TrainError::FieldMismatch {
                field: "d".to_string(),
                expected: format!("fusion.w_audio with {d} rows (config d)"),
                got: format!("{:?}", w_audio.shape()),
            });
        }
        let w_text = self.tensor("fusion.w_text")?;
        if w_text.rows() != d {
            return Err(TrainError::FieldMismatch {
                field: "d".to_string(),
                expected: format!("fusion.w_text with {d} rows (config d)"),
                got: format!("{:?}", w_text.shape()),
            });
        }

        let mut layers = Vec::with_capacity(self.config.cross_modal_layers);
        for l in 0..self.config.cross_modal_layers {
            let mut blocks = Vec::with_capacity(9);
            for target in Modality::ALL {
                for source in Modality::ALL {
                    let stem =
                        format!("fusion.layers.{l}.{}_from_{}", target.name(), source.name());
                    let query = self.tensor(&format!("{stem}.query"))?;
                    let key = self.tensor(&format!("{stem}.key"))?;
                    let value = self.tensor(&format!("{stem}.value"))?;
                    for (mat, role) in [(&query, "query"), (&key, "key"), (&value, "value")] {
                        self.expect_shape(
                            &format!("{stem}.{role}"),
                            mat,
                            &[d, d],
                            &format!("{stem}.{role}"),
                        )?;
                    }
                    blocks.push(AttentionBlock { query, key, value });
                }
            }
            layers.push(CrossModalLayer::from_blocks(blocks));
        }

        let alpha_scorer = self.tensor("fusion.alpha_scorer")?;
        self.expect_shape(
            "fusion.alpha_scorer",
            &alpha_scorer,
            &[1, d],
            "fusion.alpha_scorer",
        )?;

        let w_emotion = self.tensor("heads.w_emotion")?;
        let w_intent = self.tensor("heads.w_intent")?;
        for (name, w) in [("heads.w_emotion", &w_emotion), ("heads.w_intent", &w_intent)] {
            if w.cols() != d {
                return Err(TrainError::FieldMismatch {
                    field: "d".to_string(),
                    expected: format!("{name} with {d} columns (config d)"),
                    got: format!("{:?}", w.shape()),
                });
            }
        }
        let b_emotion = self.tensor("heads.b_emotion")?;
        self.expect_shape(
            "heads.b_emotion",
            &b_emotion,
            &[1, w_emotion.rows()],
            "heads.b_emotion",
        )?;
        let b_intent = self.tensor("heads.b_intent")?;
        self.expect_shape(
            "heads.b_intent",
            &b_intent,
            &[1, w_intent.rows()],
            "heads.b_intent",
        )?;

        let content = self.tensor("content_embeddings")?;
        self.expect_shape(
            "content_embeddings",
            &content,
            &[self.content_ids.len(), d],
            "content_embeddings",
        )?;

        let model_config = ModelConfig {
            d,
            d_v: w_visual.cols(),
            d_a: w_audio.cols(),
            d_t: w_text.cols(),
            emotion_classes: w_emotion.rows(),
            intent_classes: w_intent.rows(),
            cross_modal_layers: self.config.cross_modal_layers,
        };
        let fusion = FusionParams {
            w_visual,
            w_audio,
            w_text,
            layers,
            alpha_scorer,
            d,
        };
        let heads = HeadParams {
            w_emotion,
            b_emotion,
            w_intent,
            b_intent,
        };
        let model = Model::from_parts(
            model_config,
            fusion,
            heads,
            self.content_ids.clone(),
            content,
        );

        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, _) in model.named_params() {
            let m = self
                .arrays
                .get(&format!("adam.m.{name}"))
                .ok_or_else(|| TrainError::MissingArray(format!("adam.m.{name}")))?;
            let v = self
                .arrays
                .get(&format!("adam.v.{name}"))
                .ok_or_else(|| TrainError::MissingArray(format!("adam.v.{name}")))?;
            first.insert(name.clone(), m.data.clone());
            second.insert(name, v.data.clone());
        }
        let adam = AdamState::from_parts(first, second, self.step);
        Ok((model, adam))
    }

    pub fn to_json(&self) -> String {
        let mut body =
            serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail");
        body.push('\n');
        body
    }

    pub fn from_json(body: &str) -> Result<Self, TrainError> {
        serde_json::from_str(body).map_err(|e| TrainError::CheckpointFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let body = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let checkpoint = Self::from_json(&body)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion {
                found: checkpoint.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(checkpoint)
    }
}
