use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Schedule};
use crate::autodiff::{Graph, Real};
use crate::encoder::{apply_mlm_masking, Encoder, MaskingStrategy, PretrainExample};
use crate::error::{Error, Result};
use crate::sod::{build_input, ModelInput, TokenizedPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub seq_len: usize,
    pub examples: u64,
}

/// Example counts of the two phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleCounts {
    pub phase1: u64,
    pub phase2: u64,
}

impl ExampleCounts {
    /// Full-scale reference: one pass over 218.5M pairs, then 10M more at
    /// the longer length.
    pub fn full_scale() -> Self {
        Self {
            phase1: 218_500_000,
            phase2: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub batch_size: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub masking: MaskingStrategy,
    #[serde(default)]
    pub seed: u64,
}

impl PretrainConfig {
    /// Settings of the full-scale run: batch 64, peak rate 1e-5 reached
    /// after 45K batches, decay to zero at the end of both phases.
    pub fn full_scale() -> Self {
        let counts = ExampleCounts::full_scale();
        let batch = 64u64;
        let total = counts.phase1.div_ceil(batch) + counts.phase2.div_ceil(batch);
        Self {
            phase1: PhaseConfig {
                seq_len: 256,
                examples: counts.phase1,
            },
            phase2: PhaseConfig {
                seq_len: 1024,
                examples: counts.phase2,
            },
            batch_size: batch as usize,
            schedule: Schedule {
                base_lr: 1e-5,
                warmup_steps: 45_000,
                total_steps: total,
            },
            adam: AdamConfig::default(),
            masking: MaskingStrategy::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.phase1.seq_len < 3 || self.phase2.seq_len < 3 {
            return Err(Error::Config(
                "batch_size must be positive and seq_len at least 3".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: u8,
    pub step: u64,
    pub examples: u64,
    pub loss: f64,
    pub mlm_loss: Option<f64>,
    pub qa_sp_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub examples: [u64; 2],
    pub stopped_early: bool,
    pub history: Vec<StepLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss: Real,
    pub mlm: Option<Real>,
    pub qa_sp: Real,
}

/// One optimizer step on `examples`. An rng enables dropout.
pub fn pretrain_step(
    encoder: &mut Encoder,
    adam: &mut Adam,
    examples: &[PretrainExample],
    lr: Real,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepLosses> {
    let (losses, grads) = {
        let mut g = Graph::new();
        let l = encoder.pretrain_loss(&mut g, examples, rng)?;
        let losses = StepLosses {
            loss: g.scalar(l.total),
            mlm: l.mlm.map(|v| g.scalar(v)),
            qa_sp: g.scalar(l.qa_sp),
        };
        let grads = g.backward(l.total)?.take_for(encoder.params());
        (losses, grads)
    };
    let params = encoder.params_mut();
    params.zero_grad();
    params.accumulate(grads);
    adam.step(params, lr);
    Ok(losses)
}

/// Masks a tokenized pair laid out for `seq_len`.
pub fn prepare_example(
    pair: &TokenizedPair,
    seq_len: usize,
    masking: MaskingStrategy,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainExample> {
    let ModelInput { ids, segments } = build_input(&pair.first, &pair.second, seq_len);
    let plan = apply_mlm_masking(&ids, rng, masking, vocab_size)?;
    Ok(PretrainExample {
        input: ModelInput {
            ids: plan.masked_ids,
            segments,
        },
        mask_positions: plan.positions,
        mask_targets: plan.targets,
        sp_label: pair.sp_label,
        qa_label: pair.qa_label,
    })
}

/// Two-phase pre-training over a single pass of `records`: phase 1 at the
/// short length, then phase 2 at the long length with the position table
/// grown if needed. Stops with a warning when records run out.
pub fn pretrain<I>(
    encoder: &mut Encoder,
    records: I,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<PretrainReport>
where
    I: IntoIterator<Item = Result<TokenizedPair>>,
{
    cfg.validate()?;
    let mut records = records.into_iter();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam)?;
    let mut report = PretrainReport {
        steps: 0,
        examples: [0, 0],
        stopped_early: false,
        history: Vec::new(),
    };
    let vocab = encoder.config().vocab_size;
    for (phase, pc) in [(1u8, cfg.phase1), (2u8, cfg.phase2)] {
        if pc.seq_len > encoder.config().max_position_embeddings {
            encoder.extend_positions(pc.seq_len)?;
        }
        let mut seen = 0u64;
        while seen < pc.examples {
            let want = (cfg.batch_size as u64).min(pc.examples - seen) as usize;
            let mut batch = Vec::with_capacity(want);
            for r in records.by_ref().take(want) {
                batch.push(prepare_example(
                    &r?,
                    pc.seq_len,
                    cfg.masking,
                    vocab,
                    &mut rng,
                )?);
            }
            if batch.is_empty() {
                log::warn!(
                    "records exhausted in phase {phase} after {seen} of {} examples",
                    pc.examples
                );
                report.stopped_early = true;
                return Ok(report);
            }
            report.steps += 1;
            let lr = cfg.schedule.lr_at(report.steps);
            let l = pretrain_step(encoder, &mut adam, &batch, lr, Some(&mut rng))?;
            seen += batch.len() as u64;
            report.examples[phase as usize - 1] = seen;
            let entry = StepLog {
                phase,
                step: report.steps,
                examples: seen,
                loss: l.loss as f64,
                mlm_loss: l.mlm.map(|x| x as f64),
                qa_sp_loss: l.qa_sp as f64,
                lr: lr as f64,
            };
            on_step(&entry);
            report.history.push(entry);
            if batch.len() < want {
                log::warn!("records exhausted in phase {phase}");
                report.stopped_early = true;
                return Ok(report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_counts() {
        let c = ExampleCounts::full_scale();
        assert_eq!(c.phase1, 218_500_000);
        assert_eq!(c.phase2, 10_000_000);
        let p = PretrainConfig::full_scale();
        assert_eq!(p.schedule.warmup_steps, 45_000);
        assert_eq!(p.schedule.base_lr, 1e-5);
        assert_eq!((p.phase1.seq_len, p.phase2.seq_len), (256, 1024));
    }
}
