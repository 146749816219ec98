use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SoddExample, SoddLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<SoddExample>,
    pub dev: Vec<SoddExample>,
    pub test: Vec<SoddExample>,
}

/// Largest-remainder allocation of `n` items to the normalized `ratios`.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let quotas = ratios.map(|r| r / total * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Stratified train/dev/test split. Within each label the examples are
/// shuffled with a seeded generator and cut by the normalized ratios; each
/// split keeps the input order.
pub fn split(examples: &[SoddExample], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let mut by_label: BTreeMap<SoddLabel, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_label.entry(e.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; examples.len()];
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        let [train, dev, _] = allocate(idx.len(), ratios);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = if pos < train {
                0
            } else if pos < train + dev {
                1
            } else {
                2
            };
        }
    }
    let mut out = Splits::default();
    for (e, &a) in examples.iter().zip(&assignment) {
        match a {
            0 => out.train.push(e.clone()),
            1 => out.dev.push(e.clone()),
            _ => out.test.push(e.clone()),
        }
    }
    Ok(out)
}
