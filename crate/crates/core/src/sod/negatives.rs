use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TokenizedPair, TrainingPair};

/// Positives are buffered in batches of this size before negatives are drawn.
pub const NEGATIVE_BATCH_SIZE: usize = 100;

/// For each of `n` pairs, the index of another pair whose second element
/// replaces its own. Never returns the pair's own index; empty when `n < 2`.
pub fn replacement_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let j = rng.gen_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

/// Items that can form an in-batch negative by borrowing another item's
/// second element.
pub trait NegativeSource: Clone {
    fn negative_with(&self, donor: &Self) -> Self;
}

impl NegativeSource for TrainingPair {
    fn negative_with(&self, donor: &Self) -> Self {
        TrainingPair {
            first: self.first.clone(),
            second: donor.second.clone(),
            pair_type: self.pair_type,
            qa_label: 0,
            sp_label: 0,
            meta: self.meta.clone(),
        }
    }
}

impl NegativeSource for TokenizedPair {
    fn negative_with(&self, donor: &Self) -> Self {
        TokenizedPair {
            first: self.first.clone(),
            second: donor.second.clone(),
            pair_type: self.pair_type,
            qa_label: 0,
            sp_label: 0,
        }
    }
}

pub fn sample_negatives_with<T: NegativeSource, R: Rng>(batch: &[T], rng: &mut R) -> Vec<T> {
    replacement_indices(batch.len(), rng)
        .into_iter()
        .enumerate()
        .map(|(i, j)| batch[i].negative_with(&batch[j]))
        .collect()
}

/// One negative per pair, drawn with a ChaCha8 generator seeded by `seed`.
pub fn sample_negatives<T: NegativeSource>(batch: &[T], seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negatives_with(batch, &mut rng)
}

/// Groups a stream of positives into batches and appends one negative per
/// positive, yielding `positives ++ negatives` per batch.
pub struct NegativeBatches<I: Iterator> {
    inner: I,
    batch_size: usize,
    rng: ChaCha8Rng,
    /// Batches too small to produce any negative.
    pub unpaired_batches: u64,
}

impl<T: NegativeSource, I: Iterator<Item = T>> NegativeBatches<I> {
    pub fn new(inner: I, batch_size: usize, seed: u64) -> Self {
        Self {
            inner,
            batch_size: batch_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            unpaired_batches: 0,
        }
    }
}

impl<T: NegativeSource, I: Iterator<Item = T>> Iterator for NegativeBatches<I> {
    type Item = Vec<T>;

    fn next(&mut self) -> Option<Vec<T>> {
        let mut batch: Vec<T> = self.inner.by_ref().take(self.batch_size).collect();
        if batch.is_empty() {
            return None;
        }
        let negatives = sample_negatives_with(&batch, &mut self.rng);
        if negatives.is_empty() {
            self.unpaired_batches += 1;
        }
        batch.extend(negatives);
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sod::{expand_pairs, test_support::tuple};

    fn positives(n: usize) -> Vec<TrainingPair> {
        (0..n as i64)
            .map(|i| expand_pairs(&tuple(i, 1000 + i)).0.remove(0))
            .collect()
    }

    #[test]
    fn one_negative_per_positive() {
        let batch = positives(7);
        let neg = sample_negatives(&batch, 3);
        assert_eq!(neg.len(), 7);
        for (p, n) in batch.iter().zip(&neg) {
            assert!(n.is_negative());
            assert_eq!(n.first, p.first);
            assert_ne!(n.second, p.second);
            assert_eq!(n.pair_type, p.pair_type);
        }
    }

    #[test]
    fn single_pair_batch_has_no_negative() {
        assert!(sample_negatives(&positives(1), 0).is_empty());
    }

    #[test]
    fn seeded_assignment_is_frozen() {
        // Golden output recorded from the first run of ChaCha8 seeded with 42.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let idx = replacement_indices(4, &mut rng);
        assert_eq!(idx, GOLDEN_4_SEED_42);
        let mut again = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(replacement_indices(4, &mut again), idx);
    }

    const GOLDEN_4_SEED_42: [usize; 4] = [3, 2, 0, 2];

    #[test]
    fn stream_batches_are_balanced() {
        let stream = NegativeBatches::new(positives(250).into_iter(), NEGATIVE_BATCH_SIZE, 9);
        let batches: Vec<_> = stream.collect();
        assert_eq!(batches.len(), 3);
        for b in &batches {
            let neg = b.iter().filter(|p| p.is_negative()).count();
            assert_eq!(neg * 2, b.len());
        }
    }
}
