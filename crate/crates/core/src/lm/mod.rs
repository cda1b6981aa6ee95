//! A small pre-norm decoder-only transformer trained from scratch.
//!
//! # Weight layout
//!
//! All trainable weights live in one flat vector, in this order (matrices are
//! row-major `[in, out]`, so a projection computes `y = x W + b`):
//!
//! | tensor      | shape              |
//! |-------------|--------------------|
//! | `tok_emb`   | `[V, d]`           |
//! | `pos_emb`   | `[context, d]`     |
//! | per layer:  |                    |
//! | `ln1_g`     | `[d]`              |
//! | `ln1_b`     | `[d]`              |
//! | `w_qkv`     | `[d, 3d]`          |
//! | `b_qv`      | `[2d]`             |
//! | `w_o`       | `[d, d]`           |
//! | `b_o`       | `[d]`              |
//! | `ln2_g`     | `[d]`              |
//! | `ln2_b`     | `[d]`              |
//! | `w_fc`      | `[d, h]`           |
//! | `b_fc`      | `[h]`              |
//! | `w_proj`    | `[h, d]`           |
//! | `b_proj`    | `[d]`              |
//! | `head`      | `[d, V]`           |
//!
//! with `h = mlp_mult * d`. `b_qv` biases queries and values only; a key bias
//! shifts every attention score of a query equally and has no effect. Input and output embeddings are untied. The final
//! normalisation before the head has no trainable gain or bias, and the head
//! has no bias, so a zero head yields exactly uniform next-token
//! distributions.

mod checkpoint;
mod gradcheck;
mod model;
mod scalar;
mod train;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, TrainingMeta, Weights, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_report, randomized, GradCheckReport, GRAD_CHECK_SEED};
pub use model::{Activations, Model};
pub use scalar::Scalar;
pub use train::{finetune, train, LossTrace, Plateau, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),
    #[error("prefix of length {len} exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("token id {token} outside vocabulary of size {vocab_size}")]
    OutOfVocabulary { token: u32, vocab_size: usize },
    #[error("non-finite loss at optimizer step {step}")]
    Diverged { step: u64 },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tag(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub mlp_mult: usize,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk defaults: d_model 128, 4 layers, 4 heads, context 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            context_len: 64,
            mlp_mult: 4,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.context_len == 0 {
            return bad("vocab_size, d_model and context_len must be positive");
        }
        if self.n_layers > 0 && (self.n_heads == 0 || self.d_model % self.n_heads != 0) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_layers > 0 && self.mlp_mult == 0 {
            return bad("mlp_mult must be positive");
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.mlp_mult * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Trainable parameters in one transformer block.
    pub fn layer_param_count(&self) -> usize {
        let d = self.d_model;
        let h = self.hidden();
        // two norms, qkv, output projection, two feed-forward linears
        4 * d + (3 * d * d + 2 * d) + (d * d + d) + (d * h + h) + (h * d + d)
    }

    /// Model size `S`: the exact number of trainable weights.
    pub fn param_count(&self) -> usize {
        let (v, d) = (self.vocab_size, self.d_model);
        v * d + self.context_len * d + self.n_layers * self.layer_param_count() + d * v
    }
}

/// Free-function form of [`ModelConfig::param_count`].
pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

/// Offsets of every tensor in the flat weight vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub head: Range<usize>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut cursor = 0;
        let mut take = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let (v, d, h) = (config.vocab_size, config.d_model, config.hidden());
        let tok_emb = take(v * d);
        let pos_emb = take(config.context_len * d);
        let layers = (0..config.n_layers)
            .map(|_| LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qv: take(2 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * h),
                b_fc: take(h),
                w_proj: take(h * d),
                b_proj: take(d),
            })
            .collect();
        let head = take(d * v);
        Self { tok_emb, pos_emb, layers, head }
    }

    pub fn len(&self) -> usize {
        self.head.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every tensor with its name, in storage order.
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("tok_emb".to_string(), self.tok_emb.clone()), ("pos_emb".to_string(), self.pos_emb.clone())];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("w_qkv", &l.w_qkv),
                ("b_qv", &l.b_qv),
                ("w_o", &l.w_o),
                ("b_o", &l.b_o),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w_fc", &l.w_fc),
                ("b_fc", &l.b_fc),
                ("w_proj", &l.w_proj),
                ("b_proj", &l.b_proj),
            ] {
                out.push((format!("layers.{i}.{name}"), r.clone()));
            }
        }
        out.push(("head".to_string(), self.head.clone()));
        out
    }

    /// Tensors that receive weight decay: embeddings and projection matrices.
    pub fn decayed(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.tok_emb.clone(), self.pos_emb.clone()];
        for l in &self.layers {
            out.extend([l.w_qkv.clone(), l.w_o.clone(), l.w_fc.clone(), l.w_proj.clone()]);
        }
        out.push(self.head.clone());
        out
    }
}
