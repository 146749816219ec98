//! Transformer encoder with sliding-window attention and the two
//! pre-training heads.

mod masking;
mod model;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dense_attention, AttentionPlan, Real, Segment};
use crate::error::{Error, Result};

pub use masking::{apply_mlm_masking, MaskPlan, MaskingStrategy};
pub use model::{Batch, EncodedBatch, Encoder, PretrainExample, PretrainLoss};

/// Hyperparameters, serialized with the field names of the usual
/// Longformer configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub attention_probs_dropout_prob: f64,
    /// Tokens attended on each side of a position.
    pub attention_window: usize,
    pub hidden_act: String,
    pub hidden_dropout_prob: f64,
    pub hidden_size: usize,
    pub initializer_range: f64,
    pub intermediate_size: usize,
    pub layer_norm_eps: f64,
    pub max_position_embeddings: usize,
    pub num_attention_heads: usize,
    pub num_hidden_layers: usize,
    pub position_embedding_type: String,
    pub vocab_size: usize,
    /// Width `D` of the QA/SP head's hidden layer.
    pub intermediate_layer_dim: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
}

fn default_type_vocab() -> usize {
    2
}

impl EncoderConfig {
    pub fn base() -> Self {
        Self {
            attention_probs_dropout_prob: 0.1,
            attention_window: 256,
            hidden_act: "gelu".into(),
            hidden_dropout_prob: 0.1,
            hidden_size: 768,
            initializer_range: 0.02,
            intermediate_size: 3072,
            layer_norm_eps: 1e-12,
            max_position_embeddings: 1026,
            num_attention_heads: 12,
            num_hidden_layers: 12,
            position_embedding_type: "absolute".into(),
            vocab_size: 50256,
            intermediate_layer_dim: 1000,
            type_vocab_size: 2,
        }
    }

    pub fn tiny() -> Self {
        Self {
            attention_probs_dropout_prob: 0.1,
            attention_window: 4,
            hidden_act: "gelu".into(),
            hidden_dropout_prob: 0.1,
            hidden_size: 32,
            initializer_range: 0.02,
            intermediate_size: 64,
            layer_norm_eps: 1e-12,
            max_position_embeddings: 256,
            num_attention_heads: 2,
            num_hidden_layers: 2,
            position_embedding_type: "absolute".into(),
            vocab_size: 1000,
            intermediate_layer_dim: 32,
            type_vocab_size: 2,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "mqdd-base" => Ok(Self::base()),
            other => Err(Error::Config(format!(
                "unknown preset {other}; expected tiny or mqdd-base"
            ))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return bad(format!(
                "hidden_size {} not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if self.attention_window == 0 {
            return bad("attention_window must be at least 1".into());
        }
        if self.intermediate_layer_dim == 0 || self.intermediate_size == 0 {
            return bad("intermediate dimensions must be positive".into());
        }
        if self.hidden_act != "gelu" {
            return bad(format!("unsupported hidden_act {}", self.hidden_act));
        }
        if self.position_embedding_type != "absolute" {
            return bad(format!(
                "unsupported position_embedding_type {}",
                self.position_embedding_type
            ));
        }
        for p in [self.attention_probs_dropout_prob, self.hidden_dropout_prob] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout {p} outside [0, 1)"));
            }
        }
        if self.vocab_size == 0 || self.max_position_embeddings == 0 || self.type_vocab_size == 0 {
            return bad("table sizes must be positive".into());
        }
        Ok(())
    }
}

/// Windowed attention over one sequence. `q`, `k`, `v` are `[n, hidden]`
/// row-major; `key_valid` masks padding and `global` marks positions that
/// attend and are attended everywhere.
#[allow(clippy::too_many_arguments)]
pub fn sliding_window_attention(
    q: &[Real],
    k: &[Real],
    v: &[Real],
    n: usize,
    hidden: usize,
    heads: usize,
    window: usize,
    key_valid: &[bool],
    global: &[bool],
) -> Result<Vec<Real>> {
    let plan = AttentionPlan::windowed(
        &[Segment { start: 0, len: n }],
        window,
        key_valid,
        global,
        heads,
    )?;
    plan.check(n, hidden)?;
    Ok(crate::autodiff::attention_forward(&plan, q, k, v, hidden))
}

/// Full quadratic attention, for comparison with the windowed form.
pub fn full_attention(
    q: &[Real],
    k: &[Real],
    v: &[Real],
    n: usize,
    hidden: usize,
    heads: usize,
) -> Vec<Real> {
    dense_attention(q, k, v, n, hidden, heads, |_, _| true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_preset_fields() {
        let c = EncoderConfig::base();
        assert_eq!(c.attention_window, 256);
        assert_eq!(c.hidden_size, 768);
        assert_eq!(c.intermediate_size, 3072);
        assert_eq!(c.num_attention_heads, 12);
        assert_eq!(c.num_hidden_layers, 12);
        assert_eq!(c.max_position_embeddings, 1026);
        assert_eq!(c.vocab_size, 50256);
        assert_eq!(c.intermediate_layer_dim, 1000);
        assert_eq!(c.layer_norm_eps, 1e-12);
        assert_eq!(c.initializer_range, 0.02);
        c.validate().unwrap();
        EncoderConfig::tiny().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = EncoderConfig::tiny();
        c.num_attention_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = EncoderConfig::tiny();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"attention_window\":4"));
        assert_eq!(serde_json::from_str::<EncoderConfig>(&s).unwrap(), c);
    }
}
