use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::DUPLICATE;
use super::{DupTower, QuestionTokens};
use crate::autodiff::{Graph, ParamId, Real, Tensor};
use crate::encoder::Batch;
use crate::error::{Error, Result};
use crate::sod::build_input;
use crate::sodd::SoddExample;
use crate::tokenizer::Vocabulary;
use crate::train_eval::{metrics, Adam, AdamConfig, MetricReport};

/// A tokenized question pair with its binary target (1 = duplicate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerExample {
    pub first_id: i64,
    pub second_id: i64,
    pub first: QuestionTokens,
    pub second: QuestionTokens,
    pub target: u8,
}

impl TowerExample {
    /// `None` for rows that take no part in duplicate detection (label 4).
    pub fn from_sodd(ex: &SoddExample, vocab: &Vocabulary) -> Result<Option<Self>> {
        let Some(target) = ex.label.duplicate_target() else {
            return Ok(None);
        };
        Ok(Some(Self {
            first_id: ex.first_id,
            second_id: ex.second_id,
            first: QuestionTokens::from_html(&ex.first_post, vocab)?,
            second: QuestionTokens::from_html(&ex.second_post, vocab)?,
            target,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOptions {
    pub steps: usize,
    /// Evaluate on the dev set every this many steps and after the last.
    pub eval_every: usize,
    pub seed: u64,
    /// Train the head only.
    pub freeze_encoder: bool,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            eval_every: 100,
            seed: 0,
            freeze_encoder: false,
        }
    }
}

/// One line of the metrics history. `loss` is the mean training loss since
/// the previous entry; accuracy and F1 are measured on the dev set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub history: Vec<MetricsLog>,
    pub last_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub loss: f64,
    pub predictions: Vec<u8>,
    pub duplicate_probability: Vec<f64>,
}

fn embed_all(tower: &DupTower, examples: &[TowerExample]) -> Result<(Tensor, Tensor)> {
    let firsts: Vec<QuestionTokens> = examples.iter().map(|e| e.first.clone()).collect();
    let seconds: Vec<QuestionTokens> = examples.iter().map(|e| e.second.clone()).collect();
    let d = tower.dim();
    let stack = |vs: Vec<Vec<Real>>| Tensor::matrix(vs.len(), d, vs.concat());
    let b = tower.config.batch_size;
    Ok((
        stack(tower.embed_many(&firsts, b)?)?,
        stack(tower.embed_many(&seconds, b)?)?,
    ))
}

/// Eval-mode predictions by argmax of the two head outputs.
pub fn evaluate(tower: &DupTower, examples: &[TowerExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let (v1, v2) = embed_all(tower, examples)?;
    let targets: Vec<usize> = examples.iter().map(|e| e.target as usize).collect();
    let mut g = Graph::new();
    let a = g.constant(v1);
    let b = g.constant(v2);
    let (logits, _) = tower.head.logits(&mut g, a, b, None)?;
    let loss = g.cross_entropy(logits, &targets)?;
    let loss = g.scalar(loss) as f64;
    let probs = g.softmax(logits);
    let probs = g.value(probs);
    let duplicate_probability: Vec<f64> = probs.chunks(2).map(|p| p[DUPLICATE] as f64).collect();
    let predictions: Vec<u8> = probs
        .chunks(2)
        .map(|p| u8::from(p[DUPLICATE] > p[1 - DUPLICATE]))
        .collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.target).collect();
    Ok(Evaluation {
        report: metrics(&predictions, &labels)?,
        loss,
        predictions,
        duplicate_probability,
    })
}

struct Trainer {
    head_adam: Adam,
    encoder_adam: Adam,
    encoder_ids: Vec<ParamId>,
    frozen: Option<(Tensor, Tensor)>,
    rng: ChaCha8Rng,
}

impl Trainer {
    fn step(
        &mut self,
        tower: &mut DupTower,
        train: &[TowerExample],
        batch: &[usize],
    ) -> Result<Real> {
        let lr = tower.config.learning_rate as Real;
        let (p1, p2) = (
            tower.config.head_dropout_1 as Real,
            tower.config.head_dropout_2 as Real,
        );
        let targets: Vec<usize> = batch.iter().map(|&i| train[i].target as usize).collect();
        let n = batch.len();
        let (loss, head_grads, enc_grads) = {
            let mut g = Graph::new();
            let (v1, v2) = match &self.frozen {
                Some((f1, f2)) => {
                    let t1 = g.constant_ref(f1);
                    let t2 = g.constant_ref(f2);
                    (g.gather_rows(t1, batch)?, g.gather_rows(t2, batch)?)
                }
                None => {
                    let seq_len = tower.config.sequence_length;
                    let inputs: Vec<_> = batch
                        .iter()
                        .map(|&i| &train[i].first)
                        .chain(batch.iter().map(|&i| &train[i].second))
                        .map(|q| build_input(&q.text, &q.code, seq_len))
                        .collect();
                    let packed = Batch::from_inputs(&inputs)?;
                    let e = tower
                        .encoder
                        .forward(&mut g, &packed, true, Some(&mut self.rng))?;
                    let cls = g.gather_rows(e, &packed.cls_rows())?;
                    (g.slice_rows(cls, 0, n)?, g.slice_rows(cls, n, n)?)
                }
            };
            let (logits, _) = tower
                .head
                .logits(&mut g, v1, v2, Some((&mut self.rng, p1, p2)))?;
            let loss = g.cross_entropy(logits, &targets)?;
            let mut grads = g.backward(loss)?;
            let head = grads.take_for(tower.head.params());
            let enc = grads.take_for(tower.encoder.params());
            (g.scalar(loss), head, enc)
        };
        let hp = tower.head.params_mut();
        hp.zero_grad();
        hp.accumulate(head_grads);
        self.head_adam.step(hp, lr);
        if self.frozen.is_none() {
            if self.encoder_ids.is_empty() {
                let mut ids: Vec<ParamId> = enc_grads.iter().map(|(id, _)| *id).collect();
                ids.sort_unstable();
                self.encoder_ids = ids;
            }
            let ep = tower.encoder.params_mut();
            ep.zero_grad();
            ep.accumulate(enc_grads);
            self.encoder_adam.step_only(ep, lr, &self.encoder_ids);
        }
        Ok(loss)
    }
}

/// Cross-entropy fine-tuning with Adam, the L2 factor as weight decay and
/// the tower's dropout settings. Encoder dropout rates are restored on
/// return.
pub fn finetune(
    tower: &mut DupTower,
    train: &[TowerExample],
    dev: &[TowerExample],
    opts: &FinetuneOptions,
    on_eval: impl FnMut(&MetricsLog),
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Empty("fine-tuning dataset"));
    }
    if opts.steps == 0 || opts.eval_every == 0 {
        return Err(Error::Config(
            "steps and eval_every must be positive".into(),
        ));
    }
    tower.config.validate()?;
    let saved = {
        let c = tower.encoder.config();
        (c.attention_probs_dropout_prob, c.hidden_dropout_prob)
    };
    tower.encoder.set_dropout(
        tower.config.encoder_attention_dropout,
        tower.config.encoder_hidden_dropout,
    )?;
    let out = run(tower, train, dev, opts, on_eval);
    tower.encoder.set_dropout(saved.0, saved.1)?;
    out
}

fn run(
    tower: &mut DupTower,
    train: &[TowerExample],
    dev: &[TowerExample],
    opts: &FinetuneOptions,
    mut on_eval: impl FnMut(&MetricsLog),
) -> Result<FinetuneReport> {
    let adam = AdamConfig {
        weight_decay: tower.config.l2_coefficient,
        ..AdamConfig::default()
    };
    let frozen = if opts.freeze_encoder {
        Some(embed_all(tower, train)?)
    } else {
        None
    };
    let mut trainer = Trainer {
        head_adam: Adam::new(adam)?,
        encoder_adam: Adam::new(adam)?,
        encoder_ids: Vec::new(),
        frozen,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
    };
    if dev.is_empty() {
        log::warn!("no dev examples; metrics history stays empty");
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut report = FinetuneReport {
        steps: 0,
        history: Vec::new(),
        last_loss: f64::NAN,
    };
    let (mut loss_sum, mut loss_n) = (0.0f64, 0usize);
    for step in 1..=opts.steps {
        let bs = tower.config.batch_size.min(train.len());
        if cursor + bs > order.len() {
            order.shuffle(&mut trainer.rng);
            cursor = 0;
        }
        let batch = order[cursor..cursor + bs].to_vec();
        cursor += bs;
        let loss = trainer.step(tower, train, &batch)? as f64;
        report.steps = step;
        report.last_loss = loss;
        loss_sum += loss;
        loss_n += 1;
        if (step % opts.eval_every == 0 || step == opts.steps) && !dev.is_empty() {
            let eval = evaluate(tower, dev)?;
            let entry = MetricsLog {
                step,
                loss: loss_sum / loss_n as f64,
                accuracy: eval.report.accuracy,
                f1: eval.report.f1,
            };
            log::info!(
                "step {step} loss {:.4} dev accuracy {:.4}",
                entry.loss,
                entry.accuracy
            );
            on_eval(&entry);
            report.history.push(entry);
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    Ok(report)
}
