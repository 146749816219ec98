use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_SEED: u64 = 0;

/// Accuracy and duplicate-class F1 with 95% percentile-bootstrap intervals.
/// `ci_low`/`ci_high` bound the accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub f1_ci_low: f64,
    pub f1_ci_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

impl Counts {
    fn add(&mut self, pred: u8, label: u8) {
        match (pred != 0, label != 0) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.fn_ + self.tn;
        (self.tp + self.tn) as f64 / n as f64
    }

    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// `2PR / (P + R)` for the positive class; 0 when `P + R = 0`.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    Counts { tp, fp, fn_, tn: 0 }.f1()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Metrics with the default bootstrap (1000 resamples, fixed seed).
pub fn metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricReport> {
    metrics_with(predictions, labels, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED)
}

pub fn metrics_with(
    predictions: &[u8],
    labels: &[u8],
    resamples: usize,
    seed: u64,
) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("metric inputs"));
    }
    let mut all = Counts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        all.add(p, l);
    }
    let (accuracy, f1) = (all.accuracy(), all.f1());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accs = Vec::with_capacity(resamples);
    let mut f1s = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut c = Counts::default();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            c.add(predictions[i], labels[i]);
        }
        accs.push(c.accuracy());
        f1s.push(c.f1());
    }
    let interval = |mut xs: Vec<f64>, point: f64| {
        if xs.is_empty() {
            return (point, point);
        }
        xs.sort_by(f64::total_cmp);
        let lo = percentile(&xs, 0.025).min(point);
        let hi = percentile(&xs, 0.975).max(point);
        (lo, hi)
    };
    let (ci_low, ci_high) = interval(accs, accuracy);
    let (f1_ci_low, f1_ci_high) = interval(f1s, f1);
    Ok(MetricReport {
        accuracy,
        f1,
        ci_low,
        ci_high,
        f1_ci_low,
        f1_ci_high,
        n,
    })
}
