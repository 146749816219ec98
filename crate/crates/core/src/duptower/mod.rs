//! Two-tower duplicate-question classifier over the shared encoder.

mod finetune;
mod head;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, ParamSet, Real};
use crate::encoder::{Batch, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::ingest::{preprocess_html, PostRecord};
use crate::sod::build_input;
use crate::tokenizer::{encode, Vocabulary};

pub use finetune::{
    evaluate, finetune, Evaluation, FinetuneOptions, FinetuneReport, MetricsLog, TowerExample,
};
pub use head::{PairProbs, TowerHead};

const HEAD_PREFIX: &str = "tower.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    /// Width of the `W_L` layer.
    pub hidden_dim: usize,
    pub sequence_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_coefficient: f64,
    pub encoder_attention_dropout: f64,
    pub encoder_hidden_dropout: f64,
    /// Dropout on the input of the first head layer.
    pub head_dropout_1: f64,
    /// Dropout on the input of the second head layer.
    pub head_dropout_2: f64,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 1000,
            sequence_length: 256,
            learning_rate: 6.35e-6,
            batch_size: 100,
            l2_coefficient: 0.043,
            encoder_attention_dropout: 0.2,
            encoder_hidden_dropout: 0.5,
            head_dropout_1: 0.26,
            head_dropout_2: 0.2,
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        let drops = [
            self.encoder_attention_dropout,
            self.encoder_hidden_dropout,
            self.head_dropout_1,
            self.head_dropout_2,
        ];
        if self.hidden_dim == 0 || drops.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!(
                "tower needs hidden_dim >= 1 and dropouts in [0, 1): {self:?}"
            )));
        }
        if self.sequence_length < 3 || self.batch_size == 0 {
            return Err(Error::Config(
                "sequence_length >= 3 and batch_size >= 1 required".into(),
            ));
        }
        Ok(())
    }
}

/// Token ids of a question's text and code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTokens {
    pub text: Vec<u32>,
    pub code: Vec<u32>,
}

impl QuestionTokens {
    pub fn from_parts(text: &str, code: &str, vocab: &Vocabulary) -> Result<Self> {
        let t = Self {
            text: encode(text, vocab).ids,
            code: encode(code, vocab).ids,
        };
        if t.text.is_empty() && t.code.is_empty() {
            return Err(Error::InvalidInput(
                "question has neither text nor code".into(),
            ));
        }
        Ok(t)
    }

    pub fn from_post(post: &PostRecord, vocab: &Vocabulary) -> Result<Self> {
        Self::from_parts(&post.text, &post.code(), vocab)
    }

    /// Preprocesses raw post HTML first.
    pub fn from_html(html: &str, vocab: &Vocabulary) -> Result<Self> {
        let (text, code) = preprocess_html(html);
        Self::from_parts(&text, &code.join(" "), vocab)
    }
}

pub struct DupTower {
    pub encoder: Encoder,
    pub head: TowerHead,
    pub config: TowerConfig,
}

impl DupTower {
    pub fn new(encoder: Encoder, config: TowerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = encoder.config().hidden_size;
        let init = encoder.config().initializer_range;
        let head = TowerHead::new(d, config.hidden_dim, init, seed)?;
        Ok(Self {
            encoder,
            head,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.config().hidden_size
    }

    /// Eval-mode first-token embedding of `[CLS] text [SEP] code [SEP]`.
    pub fn embed_tokens(&self, q: &QuestionTokens) -> Result<Vec<Real>> {
        if q.text.is_empty() && q.code.is_empty() {
            return Err(Error::InvalidInput(
                "question has neither text nor code".into(),
            ));
        }
        let input = build_input(&q.text, &q.code, self.config.sequence_length);
        Ok(self.encoder.encode(&input.ids, &input.segments)?.cls)
    }

    pub fn embed_question(&self, question: &PostRecord, vocab: &Vocabulary) -> Result<Vec<Real>> {
        self.embed_tokens(&QuestionTokens::from_post(question, vocab)?)
    }

    /// Embeds many questions, a batch of sequences per encoder pass.
    pub fn embed_many(&self, questions: &[QuestionTokens], batch: usize) -> Result<Vec<Vec<Real>>> {
        let mut out = Vec::with_capacity(questions.len());
        for chunk in questions.chunks(batch.max(1)) {
            let inputs: Vec<_> = chunk
                .iter()
                .map(|q| build_input(&q.text, &q.code, self.config.sequence_length))
                .collect();
            let cls = self.encoder.encode_cls(&Batch::from_inputs(&inputs)?)?;
            for i in 0..chunk.len() {
                out.push(cls.row(i).to_vec());
            }
        }
        Ok(out)
    }

    pub fn classify_pair(&self, v1: &[Real], v2: &[Real]) -> Result<PairProbs> {
        self.head.classify(v1, v2)
    }

    /// Combined checkpoint: encoder tensors plus `tower.`-prefixed head
    /// tensors, with the tower settings in the manifest's `tower` section.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut all = self.encoder.params().clone();
        all.extend_prefixed(HEAD_PREFIX, self.head.params())?;
        save_checkpoint(
            dir,
            &all,
            serde_json::to_value(self.encoder.config())?,
            Some(serde_json::to_value(&self.config)?),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, all) = load_checkpoint(dir)?;
        let enc_cfg: EncoderConfig = serde_json::from_value(manifest.config)?;
        let tower = manifest
            .tower
            .ok_or_else(|| Error::Checkpoint("checkpoint has no tower section".into()))?;
        let config: TowerConfig = serde_json::from_value(tower)?;
        let mut enc = ParamSet::new();
        let mut head = ParamSet::new();
        for (_, name, t) in all.iter() {
            match name.strip_prefix(HEAD_PREFIX) {
                Some(rest) => head.add(rest, t.clone())?,
                None => enc.add(name, t.clone())?,
            };
        }
        Ok(Self {
            encoder: Encoder::from_params(enc_cfg, enc)?,
            head: TowerHead::from_params(head)?,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TowerConfig::default();
        assert_eq!(c.learning_rate, 6.35e-6);
        assert_eq!(c.sequence_length, 256);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.l2_coefficient, 0.043);
        assert_eq!(
            (
                c.encoder_attention_dropout,
                c.encoder_hidden_dropout,
                c.head_dropout_1,
                c.head_dropout_2
            ),
            (0.2, 0.5, 0.26, 0.2)
        );
        assert_eq!(c.hidden_dim, 1000);
    }

    fn tower() -> DupTower {
        let cfg = TowerConfig {
            hidden_dim: 8,
            sequence_length: 32,
            ..Default::default()
        };
        DupTower::new(Encoder::new(EncoderConfig::tiny(), 2).unwrap(), cfg, 3).unwrap()
    }

    #[test]
    fn embedding_is_deterministic_and_sized() {
        let t = tower();
        let q = QuestionTokens {
            text: vec![10, 11, 12],
            code: vec![20, 21],
        };
        let a = t.embed_tokens(&q).unwrap();
        assert_eq!(a, t.embed_tokens(&q).unwrap());
        assert_eq!(a.len(), 32);
        let many = t.embed_many(&[q.clone(), q.clone()], 2).unwrap();
        for v in many {
            for (x, y) in v.iter().zip(&a) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_question_is_an_error() {
        let t = tower();
        let q = QuestionTokens {
            text: vec![],
            code: vec![],
        };
        assert!(t.embed_tokens(&q).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = tower();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let back = DupTower::load(dir.path()).unwrap();
        assert_eq!(back.config, t.config);
        let v: Vec<Real> = (0..32).map(|i| i as Real * 0.01).collect();
        assert_eq!(
            back.classify_pair(&v, &v).unwrap(),
            t.classify_pair(&v, &v).unwrap()
        );
    }
}
