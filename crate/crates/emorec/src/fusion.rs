//! Modality projection into a unified latent space, cross-modal attention
//! encoding, sequence pooling, and adaptive weighted fusion into a single
//! user-state vector.
//!
//! Every step runs through the autodiff tape, so the projection matrices,
//! attention blocks, and the fusion scorer are all trained end to end. Each
//! attention call carries a residual connection, which keeps zero-valued
//! blocks an exact identity.

use rand::rngs::StdRng;
use rand::Rng;

use crate::dataio::MultimodalSample;
use crate::ndcore::{NdError, Tape, Tensor};

/// The three input channels, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Audio, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }

    fn index(self) -> usize {
        match self {
            Modality::Visual => 0,
            Modality::Audio => 1,
            Modality::Text => 2,
        }
    }
}

/// Query/key/value matrices (`[d, d]` each) for one directed modality pair.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// One cross-modal layer: an [`AttentionBlock`] per ordered (target, source)
/// pair, self-pairs included.
#[derive(Debug, Clone)]
pub struct CrossModalLayer {
    blocks: Vec<AttentionBlock>,
}

impl CrossModalLayer {
    /// `blocks` in row-major (target, source) order over
    /// [`Modality::ALL`]², 9 in total.
    pub fn from_blocks(blocks: Vec<AttentionBlock>) -> Self {
        assert_eq!(blocks.len(), 9, "one block per ordered modality pair");
        Self { blocks }
    }

    pub fn block(&self, target: Modality, source: Modality) -> &AttentionBlock {
        &self.blocks[target.index() * 3 + source.index()]
    }

    pub fn block_mut(&mut self, target: Modality, source: Modality) -> &mut AttentionBlock {
        &mut self.blocks[target.index() * 3 + source.index()]
    }
}

/// All fusion-stage parameters.
#[derive(Debug, Clone)]
pub struct FusionParams {
    /// Projection into the unified space, `[d, d_v]`.
    pub w_visual: Tensor,
    /// `[d, d_a]`.
    pub w_audio: Tensor,
    /// `[d, d_t]`.
    pub w_text: Tensor,
    pub layers: Vec<CrossModalLayer>,
    /// Scores each pooled modality for the fusion weights, `[1, d]`.
    pub alpha_scorer: Tensor,
    pub d: usize,
}

fn uniform_matrix(rng: &mut StdRng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::unchecked(vec![rows, cols], data, None)
}

impl FusionParams {
    /// Seeded uniform `[-1/√fan_in, 1/√fan_in]` initialization.
    pub fn init(
        d: usize,
        d_v: usize,
        d_a: usize,
        d_t: usize,
        n_layers: usize,
        rng: &mut StdRng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|_| CrossModalLayer {
                blocks: (0..9)
                    .map(|_| AttentionBlock {
                        query: uniform_matrix(rng, d, d, d),
                        key: uniform_matrix(rng, d, d, d),
                        value: uniform_matrix(rng, d, d, d),
                    })
                    .collect(),
            })
            .collect();
        Self {
            w_visual: uniform_matrix(rng, d, d_v, d_v),
            w_audio: uniform_matrix(rng, d, d_a, d_a),
            w_text: uniform_matrix(rng, d, d_t, d_t),
            layers,
            alpha_scorer: uniform_matrix(rng, 1, d, d),
            d,
        }
    }

    /// Register every parameter on `tape` and return the tracked view.
    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            w_visual: tape.watch(&self.w_visual),
            w_audio: tape.watch(&self.w_audio),
            w_text: tape.watch(&self.w_text),
            layers: self
                .layers
                .iter()
                .map(|layer| CrossModalLayer {
                    blocks: layer
                        .blocks
                        .iter()
                        .map(|b| AttentionBlock {
                            query: tape.watch(&b.query),
                            key: tape.watch(&b.key),
                            value: tape.watch(&b.value),
                        })
                        .collect(),
                })
                .collect(),
            alpha_scorer: tape.watch(&self.alpha_scorer),
            d: self.d,
        }
    }

    /// Parameters in a fixed, checkpoint-stable order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("fusion.w_visual".to_string(), &self.w_visual),
            ("fusion.w_audio".to_string(), &self.w_audio),
            ("fusion.w_text".to_string(), &self.w_text),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for target in Modality::ALL {
                for source in Modality::ALL {
                    let block = layer.block(target, source);
                    let stem =
                        format!("fusion.layers.{l}.{}_from_{}", target.name(), source.name());
                    out.push((format!("{stem}.query"), &block.query));
                    out.push((format!("{stem}.key"), &block.key));
                    out.push((format!("{stem}.value"), &block.value));
                }
            }
        }
        out.push(("fusion.alpha_scorer".to_string(), &self.alpha_scorer));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("fusion.w_visual".to_string(), &mut self.w_visual),
            ("fusion.w_audio".to_string(), &mut self.w_audio),
            ("fusion.w_text".to_string(), &mut self.w_text),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (i, block) in layer.blocks.iter_mut().enumerate() {
                let target = Modality::ALL[i / 3];
                let source = Modality::ALL[i % 3];
                let stem = format!("fusion.layers.{l}.{}_from_{}", target.name(), source.name());
                out.push((format!("{stem}.query"), &mut block.query));
                out.push((format!("{stem}.key"), &mut block.key));
                out.push((format!("{stem}.value"), &mut block.value));
            }
        }
        out.push(("fusion.alpha_scorer".to_string(), &mut self.alpha_scorer));
        out
    }
}

/// Everything the fusion stage produces for one sample.
#[derive(Debug, Clone)]
pub struct FusedState {
    /// Cross-modally encoded sequences in the unified space, `[len, d]`.
    pub v_hat: Tensor,
    pub a_hat: Tensor,
    pub t_hat: Tensor,
    /// Mean-pooled modality vectors, `[1, d]`.
    pub pooled_v: Tensor,
    pub pooled_a: Tensor,
    pub pooled_t: Tensor,
    /// Fusion weights `(α_v, α_a, α_t)`, `[1, 3]`, on the simplex.
    pub alpha: Tensor,
    /// The fused user-state vector F, `[1, d]`.
    pub fused: Tensor,
}

impl FusedState {
    pub fn fused_vector(&self) -> Vec<f64> {
        self.fused.data().to_vec()
    }
}

/// Output of [`fuse`] alone.
#[derive(Debug, Clone)]
pub struct Fused {
    pub alpha: Tensor,
    pub fused: Tensor,
}

/// Project each row of each modality sequence into the unified space:
/// `[len, d_m] · [d_m, d] → [len, d]`.
pub fn project(
    tape: &mut Tape,
    sample: &MultimodalSample,
    params: &FusionParams,
) -> Result<(Tensor, Tensor, Tensor), NdError> {
    let mut projected = Vec::with_capacity(3);
    for (rows, weight) in [
        (&sample.visual, &params.w_visual),
        (&sample.audio, &params.w_audio),
        (&sample.text, &params.w_text),
    ] {
        let x = Tensor::from_rows(rows)?;
        let wt = tape.transpose(weight)?;
        projected.push(tape.matmul(&x, &wt)?);
    }
    let mut it = projected.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

/// Row-stochastic attention weights `Softmax(QKᵀ/√d)`, exposed separately so
/// the normalization invariant can be checked directly.
pub fn attention_weights(tape: &mut Tape, q: &Tensor, k: &Tensor) -> Result<Tensor, NdError> {
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, &kt)?;
    let scaled = tape.scale(&logits, 1.0 / (q.cols() as f64).sqrt());
    tape.softmax_rows(&scaled)
}

/// Scaled dot-product attention. Every output row is a convex combination of
/// `v`'s rows.
pub fn attend(tape: &mut Tape, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, NdError> {
    if v.cols() != q.cols() {
        return Err(NdError::ShapeMismatch {
            op: "attend",
            lhs: q.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let weights = attention_weights(tape, q, k)?;
    tape.matmul(&weights, v)
}

/// One or more rounds of self- plus cross-attention with residuals:
/// `m ← m + Σ_source attend(m·Wqᵀ, source·Wkᵀ, source·Wvᵀ)`.
///
/// All targets in a layer update from the same pre-layer sequences, so
/// modalities with identical inputs and shared parameters stay identical.
pub fn cross_modal_encode(
    tape: &mut Tape,
    v_hat: &Tensor,
    a_hat: &Tensor,
    t_hat: &Tensor,
    params: &FusionParams,
) -> Result<(Tensor, Tensor, Tensor), NdError> {
    let mut current = [v_hat.clone(), a_hat.clone(), t_hat.clone()];
    for layer in &params.layers {
        let mut next = Vec::with_capacity(3);
        for target in Modality::ALL {
            let mut acc = current[target.index()].clone();
            for source in Modality::ALL {
                let block = layer.block(target, source);
                let qt = tape.transpose(&block.query)?;
                let q = tape.matmul(&current[target.index()], &qt)?;
                let kt = tape.transpose(&block.key)?;
                let k = tape.matmul(&current[source.index()], &kt)?;
                let vt = tape.transpose(&block.value)?;
                let v = tape.matmul(&current[source.index()], &vt)?;
                let attended = attend(tape, &q, &k, &v)?;
                acc = tape.add(&acc, &attended)?;
            }
            next.push(acc);
        }
        current = [next[0].clone(), next[1].clone(), next[2].clone()];
    }
    let [v, a, t] = current;
    Ok((v, a, t))
}

/// Mean over sequence positions: `[len, d] → [1, d]`.
pub fn pool(tape: &mut Tape, seq: &Tensor) -> Result<Tensor, NdError> {
    tape.mean_rows(seq)
}

/// Adaptive fusion: softmax over scaled scorer dot products yields the
/// modality weights, and F is their convex combination of the pooled
/// vectors.
pub fn fuse(
    tape: &mut Tape,
    pooled_v: &Tensor,
    pooled_a: &Tensor,
    pooled_t: &Tensor,
    params: &FusionParams,
) -> Result<Fused, NdError> {
    let stacked = tape.concat_rows(&[pooled_v, pooled_a, pooled_t])?;
    let scorer_col = tape.transpose(&params.alpha_scorer)?;
    let scores = tape.matmul(&stacked, &scorer_col)?;
    let scores_row = tape.transpose(&scores)?;
    let scaled = tape.scale(&scores_row, 1.0 / (params.d as f64).sqrt());
    let alpha = tape.softmax_rows(&scaled)?;
    let fused = tape.matmul(&alpha, &stacked)?;
    Ok(Fused { alpha, fused })
}

/// Full fusion pipeline for one sample: project → cross-modal encode →
/// pool → fuse.
pub fn fuse_sample(
    tape: &mut Tape,
    sample: &MultimodalSample,
    params: &FusionParams,
) -> Result<FusedState, NdError> {
    let (v, a, t) = project(tape, sample, params)?;
    let (v, a, t) = cross_modal_encode(tape, &v, &a, &t, params)?;
    let pooled_v = pool(tape, &v)?;
    let pooled_a = pool(tape, &a)?;
    let pooled_t = pool(tape, &t)?;
    let fused = fuse(tape, &pooled_v, &pooled_a, &pooled_t, params)?;
    Ok(FusedState {
        v_hat: v,
        a_hat: a,
        t_hat: t,
        pooled_v,
        pooled_a,
        pooled_t,
        alpha: fused.alpha,
        fused: fused.fused,
    })
}
