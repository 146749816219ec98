use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;
use crate::autodiff::{
    dropout_mask, load_checkpoint, save_checkpoint, AttentionDropout, AttentionPlan, Graph,
    ParamId, ParamSet, Real, Segment, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::sod::ModelInput;
use crate::tokenizer::PAD_ID;

/// Several sequences packed row-wise without padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub segments: Vec<u32>,
    pub positions: Vec<usize>,
    pub seqs: Vec<Segment>,
    pub key_valid: Vec<bool>,
    pub global: Vec<bool>,
}

impl Batch {
    pub fn from_inputs<'i>(inputs: impl IntoIterator<Item = &'i ModelInput>) -> Result<Self> {
        let mut b = Batch {
            ids: Vec::new(),
            segments: Vec::new(),
            positions: Vec::new(),
            seqs: Vec::new(),
            key_valid: Vec::new(),
            global: Vec::new(),
        };
        for input in inputs {
            b.push(&input.ids, &input.segments)?;
        }
        if b.seqs.is_empty() {
            return Err(Error::Empty("encoder batch"));
        }
        Ok(b)
    }

    pub fn single(ids: &[u32], segments: &[u32]) -> Result<Self> {
        Self::from_inputs([&ModelInput {
            ids: ids.to_vec(),
            segments: segments.to_vec(),
        }])
    }

    fn push(&mut self, ids: &[u32], segments: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        if segments.len() != ids.len() {
            return Err(Error::Shape {
                op: "batch",
                lhs: vec![ids.len()],
                rhs: vec![segments.len()],
            });
        }
        self.seqs.push(Segment {
            start: self.ids.len(),
            len: ids.len(),
        });
        self.ids.extend_from_slice(ids);
        self.segments.extend_from_slice(segments);
        self.positions.extend(0..ids.len());
        self.key_valid.extend(ids.iter().map(|&t| t != PAD_ID));
        self.global.extend((0..ids.len()).map(|i| i == 0));
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// Row of each sequence's first token.
    pub fn cls_rows(&self) -> Vec<usize> {
        self.seqs.iter().map(|s| s.start).collect()
    }
}

/// Contextual embeddings `[n, hidden]` of one sequence and its first row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub embeddings: Tensor,
    pub cls: Vec<Real>,
}

/// A masked pre-training pair. `input.ids` already carries the corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    pub input: ModelInput,
    pub mask_positions: Vec<usize>,
    pub mask_targets: Vec<u32>,
    pub sp_label: u8,
    pub qa_label: u8,
}

pub struct PretrainLoss {
    pub total: Var,
    pub mlm: Option<Var>,
    pub qa_sp: Var,
}

#[derive(Clone)]
struct LayerIds {
    query: (ParamId, ParamId),
    key: (ParamId, ParamId),
    value: (ParamId, ParamId),
    attn_out: (ParamId, ParamId),
    attn_ln: (ParamId, ParamId),
    ffn_in: (ParamId, ParamId),
    ffn_out: (ParamId, ParamId),
    out_ln: (ParamId, ParamId),
}

#[derive(Clone)]
struct Ids {
    word: ParamId,
    position: ParamId,
    token_type: ParamId,
    emb_ln: (ParamId, ParamId),
    layers: Vec<LayerIds>,
    mlm: (ParamId, ParamId),
    qa_sp_1: ParamId,
    qa_sp_2: ParamId,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

fn param_specs(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let h = c.hidden_size;
    let mut v = vec![
        (
            "embeddings.word".to_string(),
            vec![c.vocab_size, h],
            Init::Normal,
        ),
        (
            "embeddings.position".to_string(),
            vec![c.max_position_embeddings, h],
            Init::Normal,
        ),
        (
            "embeddings.token_type".to_string(),
            vec![c.type_vocab_size, h],
            Init::Normal,
        ),
        (
            "embeddings.layer_norm.weight".to_string(),
            vec![h],
            Init::Ones,
        ),
        (
            "embeddings.layer_norm.bias".to_string(),
            vec![h],
            Init::Zeros,
        ),
    ];
    for l in 0..c.num_hidden_layers {
        let linear = |name: &str, i: usize, o: usize| {
            [
                (format!("layer.{l}.{name}.weight"), vec![i, o], Init::Normal),
                (format!("layer.{l}.{name}.bias"), vec![o], Init::Zeros),
            ]
        };
        let norm = |name: &str| {
            [
                (format!("layer.{l}.{name}.weight"), vec![h], Init::Ones),
                (format!("layer.{l}.{name}.bias"), vec![h], Init::Zeros),
            ]
        };
        v.extend(linear("attention.query", h, h));
        v.extend(linear("attention.key", h, h));
        v.extend(linear("attention.value", h, h));
        v.extend(linear("attention.output", h, h));
        v.extend(norm("attention.layer_norm"));
        v.extend(linear("intermediate", h, c.intermediate_size));
        v.extend(linear("output", c.intermediate_size, h));
        v.extend(norm("output.layer_norm"));
    }
    v.push(("mlm.weight".into(), vec![h, c.vocab_size], Init::Normal));
    v.push(("mlm.bias".into(), vec![c.vocab_size], Init::Zeros));
    v.push((
        "qa_sp.w1".into(),
        vec![h, c.intermediate_layer_dim],
        Init::Normal,
    ));
    v.push((
        "qa_sp.w2".into(),
        vec![c.intermediate_layer_dim, 2],
        Init::Normal,
    ));
    v
}

fn resolve(params: &ParamSet, c: &EncoderConfig) -> Result<Ids> {
    for (name, shape, _) in param_specs(c) {
        let id = params
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if params.get(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, config expects {shape:?}",
                params.get(id).shape()
            )));
        }
    }
    let id = |n: &str| params.id(n).expect("checked above");
    let pair = |n: &str| (id(&format!("{n}.weight")), id(&format!("{n}.bias")));
    let layers = (0..c.num_hidden_layers)
        .map(|l| LayerIds {
            query: pair(&format!("layer.{l}.attention.query")),
            key: pair(&format!("layer.{l}.attention.key")),
            value: pair(&format!("layer.{l}.attention.value")),
            attn_out: pair(&format!("layer.{l}.attention.output")),
            attn_ln: pair(&format!("layer.{l}.attention.layer_norm")),
            ffn_in: pair(&format!("layer.{l}.intermediate")),
            ffn_out: pair(&format!("layer.{l}.output")),
            out_ln: pair(&format!("layer.{l}.output.layer_norm")),
        })
        .collect();
    Ok(Ids {
        word: id("embeddings.word"),
        position: id("embeddings.position"),
        token_type: id("embeddings.token_type"),
        emb_ln: pair("embeddings.layer_norm"),
        layers,
        mlm: pair("mlm"),
        qa_sp_1: id("qa_sp.w1"),
        qa_sp_2: id("qa_sp.w2"),
    })
}

#[derive(Clone)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamSet,
    ids: Ids,
}

impl Encoder {
    /// Randomly initialized encoder; weights ~ N(0, initializer_range).
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.initializer_range)
            .map_err(|e| Error::Config(format!("initializer_range: {e}")))?;
        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&config) {
            let t = match init {
                Init::Normal => Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as Real),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::from_fn(&shape, |_| 1.0),
            };
            params.add(name, t)?;
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let ids = resolve(&params, &config)?;
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Overrides the attention-probability and hidden dropout rates.
    pub fn set_dropout(&mut self, attention: f64, hidden: f64) -> Result<()> {
        if !(0.0..1.0).contains(&attention) || !(0.0..1.0).contains(&hidden) {
            return Err(Error::Config(format!(
                "dropout rates must lie in [0, 1): {attention}, {hidden}"
            )));
        }
        self.config.attention_probs_dropout_prob = attention;
        self.config.hidden_dropout_prob = hidden;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_parts(self) -> (EncoderConfig, ParamSet) {
        (self.config, self.params)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, serde_json::to_value(&self.config)?, None)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, params) = load_checkpoint(dir)?;
        let config: EncoderConfig = serde_json::from_value(manifest.config)?;
        Self::from_params(config, params)
    }

    fn bind<'a>(&'a self, g: &mut Graph<'a>, id: ParamId, trainable: bool) -> Var {
        if trainable {
            g.param(&self.params, id)
        } else {
            g.frozen_param(&self.params, id)
        }
    }

    fn linear<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        (w, b): (ParamId, ParamId),
        trainable: bool,
    ) -> Result<Var> {
        let w = self.bind(g, w, trainable);
        let b = self.bind(g, b, trainable);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    fn norm<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        (w, b): (ParamId, ParamId),
        trainable: bool,
    ) -> Result<Var> {
        let w = self.bind(g, w, trainable);
        let b = self.bind(g, b, trainable);
        g.layer_norm(x, w, b, self.config.layer_norm_eps as Real)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let c = &self.config;
        if let Some(s) = batch
            .seqs
            .iter()
            .find(|s| s.len > c.max_position_embeddings)
        {
            return Err(Error::InvalidInput(format!(
                "sequence of {} tokens exceeds max_position_embeddings {}",
                s.len, c.max_position_embeddings
            )));
        }
        if let Some(&t) = batch.ids.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {t} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        if let Some(&s) = batch
            .segments
            .iter()
            .find(|&&s| s as usize >= c.type_vocab_size)
        {
            return Err(Error::InvalidInput(format!(
                "segment id {s} outside {}",
                c.type_vocab_size
            )));
        }
        Ok(())
    }

    /// Contextual embeddings `[rows, hidden]` for a packed batch. Passing an
    /// rng enables dropout; `trainable` decides whether the encoder's weights
    /// receive gradients.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        batch: &Batch,
        trainable: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_batch(batch)?;
        let c = &self.config;
        let hidden_p = c.hidden_dropout_prob as Real;
        let attn_p = c.attention_probs_dropout_prob as Real;
        let ids: Vec<usize> = batch.ids.iter().map(|&t| t as usize).collect();
        let segs: Vec<usize> = batch.segments.iter().map(|&t| t as usize).collect();

        let word = self.bind(g, self.ids.word, trainable);
        let pos = self.bind(g, self.ids.position, trainable);
        let tt = self.bind(g, self.ids.token_type, trainable);
        let x = g.gather_rows(word, &ids)?;
        let p = g.gather_rows(pos, &batch.positions)?;
        let t = g.gather_rows(tt, &segs)?;
        let x = g.add(x, p)?;
        let x = g.add(x, t)?;
        let x = self.norm(g, x, self.ids.emb_ln, trainable)?;
        let mut x = dropout(g, x, hidden_p, rng.as_deref_mut())?;

        let plan = Arc::new(AttentionPlan::windowed(
            &batch.seqs,
            c.attention_window,
            &batch.key_valid,
            &batch.global,
            c.num_attention_heads,
        )?);
        for layer in &self.ids.layers {
            let q = self.linear(g, x, layer.query, trainable)?;
            let k = self.linear(g, x, layer.key, trainable)?;
            let v = self.linear(g, x, layer.value, trainable)?;
            let attn_dropout = match rng.as_deref_mut() {
                Some(r) if attn_p > 0.0 => Some(AttentionDropout {
                    p: attn_p,
                    seed: r.next_u64(),
                }),
                _ => None,
            };
            let a = g.attention(q, k, v, Arc::clone(&plan), attn_dropout)?;
            let a = self.linear(g, a, layer.attn_out, trainable)?;
            let a = dropout(g, a, hidden_p, rng.as_deref_mut())?;
            let a = g.add(x, a)?;
            x = self.norm(g, a, layer.attn_ln, trainable)?;

            let f = self.linear(g, x, layer.ffn_in, trainable)?;
            let f = g.gelu(f);
            let f = self.linear(g, f, layer.ffn_out, trainable)?;
            let f = dropout(g, f, hidden_p, rng.as_deref_mut())?;
            let f = g.add(x, f)?;
            x = self.norm(g, f, layer.out_ln, trainable)?;
        }
        Ok(x)
    }

    /// Eval-mode encoding of a single sequence.
    pub fn encode(&self, ids: &[u32], segments: &[u32]) -> Result<EncodedBatch> {
        let batch = Batch::single(ids, segments)?;
        let mut g = Graph::new();
        let e = self.forward(&mut g, &batch, false, None)?;
        let embeddings = g.tensor(e);
        let cls = embeddings.row(0).to_vec();
        Ok(EncodedBatch { embeddings, cls })
    }

    /// First-row embedding of every sequence in eval mode, `[n_seqs, hidden]`.
    pub fn encode_cls(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let e = self.forward(&mut g, batch, false, None)?;
        let cls = g.gather_rows(e, &batch.cls_rows())?;
        Ok(g.tensor(cls))
    }

    /// Vocabulary logits for the selected rows of `e`.
    pub fn mlm_logits<'a>(
        &'a self,
        g: &mut Graph<'a>,
        e: Var,
        rows: &[usize],
        trainable: bool,
    ) -> Result<Var> {
        let picked = g.gather_rows(e, rows)?;
        self.linear(g, picked, self.ids.mlm, trainable)
    }

    /// `relu(cls W1) W2`; column 0 is the same-post logit, column 1 the
    /// question-answer logit.
    pub fn qa_sp_logits<'a>(
        &'a self,
        g: &mut Graph<'a>,
        e: Var,
        cls_rows: &[usize],
        trainable: bool,
    ) -> Result<Var> {
        let cls = g.gather_rows(e, cls_rows)?;
        let w1 = self.bind(g, self.ids.qa_sp_1, trainable);
        let w2 = self.bind(g, self.ids.qa_sp_2, trainable);
        let h = g.matmul(cls, w1)?;
        let h = g.relu(h);
        g.matmul(h, w2)
    }

    pub fn mlm_head(&self, embeddings: &Tensor) -> Result<Tensor> {
        let (n, _) = embeddings.rows_cols();
        let mut g = Graph::new();
        let e = g.constant_ref(embeddings);
        let rows: Vec<usize> = (0..n).collect();
        let out = self.mlm_logits(&mut g, e, &rows, false)?;
        Ok(g.tensor(out))
    }

    pub fn qa_sp_head(&self, cls: &[Real]) -> Result<[Real; 2]> {
        let mut g = Graph::new();
        let e = g.constant(Tensor::matrix(1, cls.len(), cls.to_vec())?);
        let out = self.qa_sp_logits(&mut g, e, &[0], false)?;
        let v = g.value(out);
        Ok([v[0], v[1]])
    }

    /// Masked-token cross-entropy plus binary cross-entropy of the QA/SP
    /// head, summed.
    pub fn pretrain_loss<'a>(
        &'a self,
        g: &mut Graph<'a>,
        examples: &[PretrainExample],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<PretrainLoss> {
        let batch = Batch::from_inputs(examples.iter().map(|e| &e.input))?;
        let e = self.forward(g, &batch, true, rng)?;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (ex, seg) in examples.iter().zip(&batch.seqs) {
            if ex.mask_positions.len() != ex.mask_targets.len() {
                return Err(Error::InvalidInput(
                    "mask positions and targets differ in length".into(),
                ));
            }
            for (&p, &t) in ex.mask_positions.iter().zip(&ex.mask_targets) {
                if p >= seg.len {
                    return Err(Error::InvalidInput(format!(
                        "mask position {p} outside sequence"
                    )));
                }
                rows.push(seg.start + p);
                targets.push(t as usize);
            }
        }
        let mlm = if rows.is_empty() {
            None
        } else {
            let logits = self.mlm_logits(g, e, &rows, true)?;
            Some(g.cross_entropy(logits, &targets)?)
        };
        let labels: Vec<Real> = examples
            .iter()
            .flat_map(|ex| [Real::from(ex.sp_label), Real::from(ex.qa_label)])
            .collect();
        let logits = self.qa_sp_logits(g, e, &batch.cls_rows(), true)?;
        let qa_sp = g.bce_with_logits(logits, &labels)?;
        let total = match mlm {
            Some(m) => g.add(m, qa_sp)?,
            None => qa_sp,
        };
        Ok(PretrainLoss { total, mlm, qa_sp })
    }

    /// Grows the position table to `new_max` rows; new rows repeat the
    /// trained rows cyclically.
    pub fn extend_positions(&mut self, new_max: usize) -> Result<()> {
        let old_max = self.config.max_position_embeddings;
        if new_max <= old_max {
            return Ok(());
        }
        let h = self.config.hidden_size;
        let old = self.params.get(self.ids.position).clone();
        let table = Tensor::from_fn(&[new_max, h], |k| {
            let (r, c) = (k / h, k % h);
            old.data()[(r % old_max) * h + c]
        });
        self.params.replace(self.ids.position, table);
        self.config.max_position_embeddings = new_max;
        Ok(())
    }
}

fn dropout(g: &mut Graph<'_>, x: Var, p: Real, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => {
            let mask = dropout_mask(g.value(x).len(), p, r);
            g.dropout(x, mask)
        }
        _ => Ok(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Encoder {
        Encoder::new(EncoderConfig::tiny(), 1).unwrap()
    }

    #[test]
    fn output_shape() {
        let enc = tiny();
        let ids: Vec<u32> = (0..10).map(|i| 8 + i).collect();
        let out = enc.encode(&ids, &[0; 10]).unwrap();
        assert_eq!(out.embeddings.shape(), &[10, 32]);
        assert_eq!(out.cls.len(), 32);
    }

    #[test]
    fn eval_is_deterministic() {
        let enc = tiny();
        let ids = [2, 40, 41, 3, 50, 3];
        let a = enc.encode(&ids, &[0, 0, 0, 0, 1, 1]).unwrap();
        let b = enc.encode(&ids, &[0, 0, 0, 0, 1, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlong_input_is_rejected() {
        let enc = tiny();
        let ids = vec![9u32; 257];
        assert!(enc.encode(&ids, &vec![0; 257]).is_err());
    }

    #[test]
    fn zero_qa_sp_weights_give_half_probabilities() {
        let mut enc = tiny();
        for name in ["qa_sp.w1", "qa_sp.w2"] {
            let id = enc.params().id(name).unwrap();
            let shape = enc.params().get(id).shape().to_vec();
            enc.params_mut().replace(id, Tensor::zeros(&shape));
        }
        let logits = enc.qa_sp_head(&[0.3; 32]).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
        let p = 1.0 / (1.0 + (-logits[0]).exp());
        assert_eq!(p, 0.5);
    }

    #[test]
    fn position_extension_tiles_rows() {
        let mut enc = tiny();
        let id = enc.params().id("embeddings.position").unwrap();
        let before = enc.params().get(id).clone();
        enc.extend_positions(1024).unwrap();
        let after = enc.params().get(id);
        assert_eq!(after.shape(), &[1024, 32]);
        assert_eq!(after.row(256), before.row(0));
        assert_eq!(after.row(1023), before.row(255));
        let ids = vec![9u32; 1024];
        assert!(enc.encode(&ids, &vec![0; 1024]).is_ok());
    }
}
