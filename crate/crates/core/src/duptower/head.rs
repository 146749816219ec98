use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autodiff::{dropout_mask, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Class index of "duplicate" in the head's two outputs.
pub const DUPLICATE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairProbs {
    pub duplicate: Real,
    pub not_duplicate: Real,
}

/// `softmax(relu([v1; v2] W_L + b_L) W_H + b_H)`
pub struct TowerHead {
    params: ParamSet,
    w_l: ParamId,
    b_l: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

impl TowerHead {
    pub fn new(dim: usize, hidden: usize, init_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal =
            Normal::new(0.0, init_std).map_err(|e| Error::Config(format!("init std: {e}")))?;
        let mut sample =
            |shape: &[usize]| Tensor::from_fn(shape, |_| normal.sample(&mut rng) as Real);
        let w_l = sample(&[2 * dim, hidden]);
        let w_h = sample(&[hidden, 2]);
        Self::from_weights(w_l, Tensor::zeros(&[hidden]), w_h, Tensor::zeros(&[2]))
    }

    pub fn from_weights(w_l: Tensor, b_l: Tensor, w_h: Tensor, b_h: Tensor) -> Result<Self> {
        let mut params = ParamSet::new();
        params.add("w_l", w_l)?;
        params.add("b_l", b_l)?;
        params.add("w_h", w_h)?;
        params.add("b_h", b_h)?;
        Self::from_params(params)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let get = |n: &str| {
            params
                .id(n)
                .ok_or_else(|| Error::Checkpoint(format!("tower head lacks {n}")))
        };
        let (w_l, b_l, w_h, b_h) = (get("w_l")?, get("b_l")?, get("w_h")?, get("b_h")?);
        let sl = params.get(w_l).shape();
        let sh = params.get(w_h).shape();
        let ok = sl.len() == 2
            && sl[0] % 2 == 0
            && params.get(b_l).shape() == [sl[1]]
            && sh == [sl[1], 2]
            && params.get(b_h).shape() == [2];
        if !ok {
            return Err(Error::Shape {
                op: "tower_head",
                lhs: sl.to_vec(),
                rhs: sh.to_vec(),
            });
        }
        Ok(Self {
            params,
            w_l,
            b_l,
            w_h,
            b_h,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Embedding size `d` expected for each question.
    pub fn dim(&self) -> usize {
        self.params.get(self.w_l).shape()[0] / 2
    }

    pub fn hidden(&self) -> usize {
        self.params.get(self.w_l).shape()[1]
    }

    /// `x_L = relu(x_e W_L + b_L)` for `x_e = [v1; v2]`, then the output
    /// logits `x_L W_H + b_H`, row per pair. Passing an rng applies the two
    /// dropouts.
    pub fn logits<'a>(
        &'a self,
        g: &mut Graph<'a>,
        v1: Var,
        v2: Var,
        dropout: Option<(&mut ChaCha8Rng, Real, Real)>,
    ) -> Result<(Var, Var)> {
        let d = self.dim();
        if g.dims(v1).1 != d || g.dims(v2).1 != d {
            return Err(Error::Shape {
                op: "classify_pair",
                lhs: g.shape(v1).to_vec(),
                rhs: g.shape(v2).to_vec(),
            });
        }
        let w_l = g.param(&self.params, self.w_l);
        let b_l = g.param(&self.params, self.b_l);
        let w_h = g.param(&self.params, self.w_h);
        let b_h = g.param(&self.params, self.b_h);
        let mut x_e = g.concat_cols(&[v1, v2])?;
        let (rng, p1, p2) = match dropout {
            Some((r, p1, p2)) => (Some(r), p1, p2),
            None => (None, 0.0, 0.0),
        };
        let mut rng = rng;
        if let Some(r) = rng.as_deref_mut() {
            if p1 > 0.0 {
                let m = dropout_mask(g.value(x_e).len(), p1, r);
                x_e = g.dropout(x_e, m)?;
            }
        }
        let z = g.matmul(x_e, w_l)?;
        let z = g.add(z, b_l)?;
        let mut x_l = g.relu(z);
        let x_l_out = x_l;
        if let Some(r) = rng.as_deref_mut() {
            if p2 > 0.0 {
                let m = dropout_mask(g.value(x_l).len(), p2, r);
                x_l = g.dropout(x_l, m)?;
            }
        }
        let h = g.matmul(x_l, w_h)?;
        Ok((g.add(h, b_h)?, x_l_out))
    }

    pub fn classify(&self, v1: &[Real], v2: &[Real]) -> Result<PairProbs> {
        let d = self.dim();
        if v1.len() != d || v2.len() != d {
            return Err(Error::Shape {
                op: "classify_pair",
                lhs: vec![v1.len()],
                rhs: vec![v2.len()],
            });
        }
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, d, v1.to_vec())?);
        let b = g.constant(Tensor::matrix(1, d, v2.to_vec())?);
        let (logits, _) = self.logits(&mut g, a, b, None)?;
        let p = g.softmax(logits);
        let p = g.value(p);
        Ok(PairProbs {
            duplicate: p[DUPLICATE],
            not_duplicate: p[1 - DUPLICATE],
        })
    }

    /// Hidden activations `x_L` for one pair in eval mode.
    pub fn hidden_activations(&self, v1: &[Real], v2: &[Real]) -> Result<Vec<Real>> {
        let d = self.dim();
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, d, v1.to_vec())?);
        let b = g.constant(Tensor::matrix(1, d, v2.to_vec())?);
        let (_, x_l) = self.logits(&mut g, a, b, None)?;
        Ok(g.value(x_l).to_vec())
    }
}
