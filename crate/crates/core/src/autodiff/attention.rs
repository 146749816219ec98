//! Sparse multi-head attention: every query row attends to an explicit,
//! precomputed list of key rows.

use super::Real;
use crate::error::{Error, Result};

/// A contiguous run of rows forming one sequence of a packed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Dropout on attention probabilities. Keep decisions are a pure function of
/// `(seed, head, query, key)`, so backward recomputes them instead of storing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionDropout {
    pub p: Real,
    pub seed: u64,
}

impl AttentionDropout {
    fn factor(&self, head: usize, i: usize, j: usize) -> Real {
        let mut z = self
            .seed
            .wrapping_add((head as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add((i as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add((j as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        let u = (z >> 11) as f64 / (1u64 << 53) as f64;
        if (u as Real) < self.p {
            0.0
        } else {
            1.0 / (1.0 - self.p)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPlan {
    heads: usize,
    offsets: Vec<usize>,
    keys: Vec<u32>,
}

impl AttentionPlan {
    /// Row `i` attends to rows `j` of its own segment with `|i - j| <= window`
    /// and to every global row of the segment; global rows attend to the
    /// whole segment. Rows with `key_valid[j] == false` are never attended to.
    pub fn windowed(
        segments: &[Segment],
        window: usize,
        key_valid: &[bool],
        global: &[bool],
        heads: usize,
    ) -> Result<Self> {
        let rows = key_valid.len();
        if global.len() != rows {
            return Err(Error::Shape {
                op: "attention_plan",
                lhs: vec![rows],
                rhs: vec![global.len()],
            });
        }
        if heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        let mut offsets = vec![0usize; rows + 1];
        let mut keys: Vec<u32> = Vec::with_capacity(rows * (2 * window + 2));
        let mut covered = 0;
        for seg in segments {
            if seg.start != covered || seg.start + seg.len > rows {
                return Err(Error::InvalidInput(format!(
                    "segments must tile rows 0..{rows} in order"
                )));
            }
            covered += seg.len;
            let end = seg.start + seg.len;
            let globals: Vec<usize> = (seg.start..end)
                .filter(|&j| global[j] && key_valid[j])
                .collect();
            for i in seg.start..end {
                if global[i] {
                    keys.extend((seg.start..end).filter(|&j| key_valid[j]).map(|j| j as u32));
                } else {
                    let lo = i.saturating_sub(window).max(seg.start);
                    let hi = (i + window).min(end - 1);
                    keys.extend(globals.iter().filter(|&&j| j < lo).map(|&j| j as u32));
                    keys.extend((lo..=hi).filter(|&j| key_valid[j]).map(|j| j as u32));
                    keys.extend(globals.iter().filter(|&&j| j > hi).map(|&j| j as u32));
                }
                offsets[i + 1] = keys.len();
            }
        }
        if covered != rows {
            return Err(Error::InvalidInput(format!(
                "segments cover {covered} of {rows} rows"
            )));
        }
        Ok(Self {
            heads,
            offsets,
            keys,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn keys_of(&self, i: usize) -> &[u32] {
        &self.keys[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn total_keys(&self) -> usize {
        self.keys.len()
    }

    pub(crate) fn check(&self, rows: usize, hidden: usize) -> Result<()> {
        if rows != self.rows() {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![rows, hidden],
                rhs: vec![self.rows()],
            });
        }
        if hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {hidden} not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Returns the context rows and the attention probabilities laid out as
/// `[head][key slot]`.
pub(crate) fn forward(
    plan: &AttentionPlan,
    q: &[Real],
    k: &[Real],
    v: &[Real],
    hidden: usize,
    dropout: Option<AttentionDropout>,
) -> (Vec<Real>, Vec<Real>) {
    let rows = plan.rows();
    let heads = plan.heads;
    let dh = hidden / heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let total = plan.keys.len();
    let mut out = vec![0.0; rows * hidden];
    let mut probs = vec![0.0; heads * total];
    for h in 0..heads {
        let col = h * dh;
        for i in 0..rows {
            let (a, b) = (plan.offsets[i], plan.offsets[i + 1]);
            if a == b {
                continue;
            }
            let qi = &q[i * hidden + col..i * hidden + col + dh];
            let p = &mut probs[h * total + a..h * total + b];
            let mut max = Real::NEG_INFINITY;
            for (slot, &j) in p.iter_mut().zip(&plan.keys[a..b]) {
                let j = j as usize;
                let kj = &k[j * hidden + col..j * hidden + col + dh];
                *slot = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<Real>();
                max = max.max(*slot);
            }
            let mut sum = 0.0;
            for s in p.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let oi = &mut out[i * hidden + col..i * hidden + col + dh];
            for (s, &j) in p.iter_mut().zip(&plan.keys[a..b]) {
                *s /= sum;
                let j = j as usize;
                let w = match dropout {
                    Some(d) => *s * d.factor(h, i, j),
                    None => *s,
                };
                if w != 0.0 {
                    let vj = &v[j * hidden + col..j * hidden + col + dh];
                    for (o, x) in oi.iter_mut().zip(vj) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    plan: &AttentionPlan,
    q: &[Real],
    k: &[Real],
    v: &[Real],
    hidden: usize,
    dropout: Option<AttentionDropout>,
    probs: &[Real],
    g: &[Real],
    (gq, gk, gv): (&mut [Real], &mut [Real], &mut [Real]),
) {
    let rows = plan.rows();
    let heads = plan.heads;
    let dh = hidden / heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let total = plan.keys.len();
    let mut dp: Vec<Real> = Vec::new();
    for h in 0..heads {
        let col = h * dh;
        for i in 0..rows {
            let (a, b) = (plan.offsets[i], plan.offsets[i + 1]);
            if a == b {
                continue;
            }
            let gi = &g[i * hidden + col..i * hidden + col + dh];
            let p = &probs[h * total + a..h * total + b];
            dp.clear();
            for (&pj, &j) in p.iter().zip(&plan.keys[a..b]) {
                let j = j as usize;
                let m = dropout.map_or(1.0, |d| d.factor(h, i, j));
                let vj = &v[j * hidden + col..j * hidden + col + dh];
                dp.push(m * gi.iter().zip(vj).map(|(x, y)| x * y).sum::<Real>());
                let w = pj * m;
                if w != 0.0 {
                    for (o, x) in gv[j * hidden + col..j * hidden + col + dh]
                        .iter_mut()
                        .zip(gi)
                    {
                        *o += w * x;
                    }
                }
            }
            let s: Real = p.iter().zip(&dp).map(|(x, y)| x * y).sum();
            let qi = &q[i * hidden + col..i * hidden + col + dh];
            for ((&pj, &dpj), &j) in p.iter().zip(&dp).zip(&plan.keys[a..b]) {
                let ds = scale * pj * (dpj - s);
                if ds == 0.0 {
                    continue;
                }
                let j = j as usize;
                let kj = &k[j * hidden + col..j * hidden + col + dh];
                for (o, x) in gq[i * hidden + col..i * hidden + col + dh]
                    .iter_mut()
                    .zip(kj)
                {
                    *o += ds * x;
                }
                for (o, x) in gk[j * hidden + col..j * hidden + col + dh]
                    .iter_mut()
                    .zip(qi)
                {
                    *o += ds * x;
                }
            }
        }
    }
}

/// Plain multi-head softmax attention over all `rows x rows` pairs, with
/// pairs rejected by `allowed` left out. Rows with no allowed key output 0.
pub fn dense_attention(
    q: &[Real],
    k: &[Real],
    v: &[Real],
    rows: usize,
    hidden: usize,
    heads: usize,
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<Real> {
    let dh = hidden / heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut out = vec![0.0; rows * hidden];
    let mut scores = vec![0.0; rows];
    for h in 0..heads {
        let col = h * dh;
        for i in 0..rows {
            let qi = &q[i * hidden + col..i * hidden + col + dh];
            let mut max = Real::NEG_INFINITY;
            for j in 0..rows {
                let kj = &k[j * hidden + col..j * hidden + col + dh];
                let s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<Real>();
                scores[j] = if allowed(i, j) { s } else { Real::NEG_INFINITY };
                max = max.max(scores[j]);
            }
            if max == Real::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let oi = &mut out[i * hidden + col..i * hidden + col + dh];
            for (j, s) in scores.iter().enumerate() {
                let w = s / sum;
                if w != 0.0 {
                    for (o, x) in oi
                        .iter_mut()
                        .zip(&v[j * hidden + col..j * hidden + col + dh])
                    {
                        *o += w * x;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_and_global_keys() {
        let valid = vec![true; 6];
        let mut global = vec![false; 6];
        global[0] = true;
        let plan = AttentionPlan::windowed(&[Segment { start: 0, len: 6 }], 1, &valid, &global, 1)
            .unwrap();
        assert_eq!(plan.keys_of(0), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(plan.keys_of(3), &[0, 2, 3, 4]);
        assert_eq!(plan.keys_of(1), &[0, 1, 2]);
    }

    #[test]
    fn segments_do_not_leak() {
        let valid = vec![true; 4];
        let global = vec![true, false, true, false];
        let segs = [Segment { start: 0, len: 2 }, Segment { start: 2, len: 2 }];
        let plan = AttentionPlan::windowed(&segs, 8, &valid, &global, 1).unwrap();
        assert_eq!(plan.keys_of(1), &[0, 1]);
        assert_eq!(plan.keys_of(2), &[2, 3]);
    }

    #[test]
    fn invalid_keys_are_skipped() {
        let valid = vec![true, true, false];
        let plan =
            AttentionPlan::windowed(&[Segment { start: 0, len: 3 }], 5, &valid, &[false; 3], 1)
                .unwrap();
        assert_eq!(plan.keys_of(2), &[0, 1]);
    }

    #[test]
    fn dropout_factor_is_reproducible() {
        let d = AttentionDropout { p: 0.5, seed: 3 };
        let a: Vec<Real> = (0..64).map(|j| d.factor(0, 1, j)).collect();
        let b: Vec<Real> = (0..64).map(|j| d.factor(0, 1, j)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|&x| x == 0.0) && a.iter().any(|&x| x == 2.0));
    }
}
