//! # emorec
//!
//! A desk-scale, end-to-end trainable pipeline for emotion- and intent-aware
//! content recommendation over precomputed multimodal embeddings:
//!
//! - [`ndcore`]: dense `f64` tensors with tape-based reverse-mode autodiff
//! - [`dataio`]: dataset schema, JSONL ingestion, stratified splits, and a
//!   class-conditional synthetic generator
//! - [`fusion`]: modality projection, cross-modal attention, and adaptive
//!   weighted fusion into a single user-state vector
//! - [`heads`]: emotion/intent classification heads and the joint loss
//! - [`recommender`]: dot-product scoring, top-k ranking, and an online
//!   implicit-feedback adaptation loop
//! - [`metrics`]: classification and ranking evaluation (MAP, NDCG, HR@k)
//! - [`trainer`]: AdamW optimization, checkpointing, and evaluation
//! - [`gradcheck`]: finite-difference verification of analytic gradients

pub mod dataio;
pub mod fusion;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod recommender;
pub mod trainer;

pub use model::{Model, ModelConfig};
pub use ndcore::{Tape, Tensor};
