use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, MASK_ID, NUM_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingStrategy {
    /// Probability that an ordinary token is selected.
    pub rate: f64,
    /// Share of selected tokens replaced by `[MASK]`.
    pub p_mask: f64,
    /// Share of selected tokens replaced by a random ordinary token.
    pub p_random: f64,
}

impl Default for MaskingStrategy {
    fn default() -> Self {
        Self {
            rate: 0.15,
            p_mask: 0.8,
            p_random: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub masked_ids: Vec<u32>,
    pub positions: Vec<usize>,
    /// Original token at each selected position.
    pub targets: Vec<u32>,
}

/// Selects ordinary (non-special) tokens independently with probability
/// `rate` and corrupts each selected token by the strategy's shares.
pub fn apply_mlm_masking<R: Rng>(
    ids: &[u32],
    rng: &mut R,
    strategy: MaskingStrategy,
    vocab_size: usize,
) -> Result<MaskPlan> {
    let MaskingStrategy {
        rate,
        p_mask,
        p_random,
    } = strategy;
    if !(0.0..=1.0).contains(&rate) || p_mask < 0.0 || p_random < 0.0 || p_mask + p_random > 1.0 {
        return Err(Error::Config(format!(
            "invalid masking strategy {strategy:?}"
        )));
    }
    let mut plan = MaskPlan {
        masked_ids: ids.to_vec(),
        positions: Vec::new(),
        targets: Vec::new(),
    };
    for (i, &id) in ids.iter().enumerate() {
        if Vocabulary::is_special(id) || rng.gen::<f64>() >= rate {
            continue;
        }
        plan.positions.push(i);
        plan.targets.push(id);
        let u: f64 = rng.gen();
        if u < p_mask {
            plan.masked_ids[i] = MASK_ID;
        } else if u < p_mask + p_random && vocab_size > NUM_SPECIAL as usize {
            plan.masked_ids[i] = rng.gen_range(NUM_SPECIAL..vocab_size as u32);
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let ids: Vec<u32> = (0..50).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = MaskingStrategy {
            rate: 0.0,
            ..Default::default()
        };
        let plan = apply_mlm_masking(&ids, &mut rng, s, 1000).unwrap();
        assert_eq!(plan.masked_ids, ids);
        assert!(plan.positions.is_empty());
    }

    #[test]
    fn specials_are_never_selected() {
        let ids = vec![2, 3, 0, 0, 2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = MaskingStrategy {
            rate: 1.0,
            ..Default::default()
        };
        let plan = apply_mlm_masking(&ids, &mut rng, s, 1000).unwrap();
        assert!(plan.positions.is_empty());
    }

    #[test]
    fn targets_record_originals() {
        let ids: Vec<u32> = (8..208).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = apply_mlm_masking(&ids, &mut rng, MaskingStrategy::default(), 1000).unwrap();
        for (&p, &t) in plan.positions.iter().zip(&plan.targets) {
            assert_eq!(ids[p], t);
        }
        for (i, (&a, &b)) in ids.iter().zip(&plan.masked_ids).enumerate() {
            if a != b {
                assert!(plan.positions.contains(&i));
            }
        }
    }
}
