use std::borrow::Cow;
use std::sync::Arc;

use rand::Rng;

use super::attention::{self, AttentionDropout, AttentionPlan};
use super::params::{ParamId, ParamSet};
use super::{rows_cols, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Real>,
        rstd: Vec<Real>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<Real>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<Real>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<Real>,
        sigmoid: Vec<Real>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        plan: Arc<AttentionPlan>,
        dropout: Option<AttentionDropout>,
        probs: Vec<Real>,
    },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [Real]>,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded tape. Values of leaves may borrow from parameter
/// storage, so building a graph over a model does not copy its weights.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(usize, usize, ParamId)>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

const GELU_C: Real = 0.797_884_560_802_865_4;
const GELU_A: Real = 0.044_715;

fn gelu(x: Real) -> Real {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: Real) -> Real {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(z: Real) -> Real {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mask for inverted dropout: each entry is 0 with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask<R: Rng>(len: usize, p: Real, rng: &mut R) -> Vec<Real> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| {
            if (rng.gen::<f64>() as Real) < p {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

fn grad_slot(slot: &mut Option<Vec<Real>>, len: usize) -> &mut Vec<Real> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        value: Cow<'a, [Real]>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, value: Vec<Real>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(shape, Cow::Owned(value), op, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let Tensor { shape, data } = t;
        self.push(shape, Cow::Owned(data), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape.clone(), Cow::Borrowed(&t.data), Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let Tensor { shape, data } = t;
        self.push(shape, Cow::Owned(data), Op::Leaf, true)
    }

    pub fn param(&mut self, params: &'a ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        let v = self.push(t.shape.clone(), Cow::Borrowed(&t.data), Op::Leaf, true);
        self.params
            .push((v.0, params as *const ParamSet as usize, id));
        v
    }

    /// Same as [`Graph::param`] but excluded from differentiation.
    pub fn frozen_param(&mut self, params: &'a ParamSet, id: ParamId) -> Var {
        self.constant_ref(params.get(id))
    }

    pub fn value(&self, v: Var) -> &[Real] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        rows_cols(&self.nodes[v.0].shape)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.to_vec(),
        }
    }

    pub fn scalar(&self, v: Var) -> Real {
        self.nodes[v.0].value[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.derived(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        let (_, cols) = self.dims(a);
        if !(na == nb || (nb == cols && self.dims(b).0 == 1)) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b);
        let out: Vec<Real> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % nb])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, Op::Gelu(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&x[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Real) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<Real>() / c as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.derived(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Rows of `table` selected by `ids`; used for embeddings and row picking.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidInput(format!(
                "row id {bad} outside table of {r} rows"
            )));
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput("gather of zero rows".into()));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&t[i * c..(i + 1) * c]);
        }
        Ok(self.derived(
            vec![ids.len(), c],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Multiplies by an externally supplied mask (see [`dropout_mask`]).
    pub fn dropout(&mut self, x: Var, mask: Vec<Real>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err("dropout", self.shape(x), &[mask.len()]));
        }
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(a, m)| a * m)
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(shape, out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of nothing".into()));
        };
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.derived(
            vec![rows, total],
            out,
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of nothing".into()));
        };
        let cols = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.derived(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(shape_err("slice_rows", self.shape(x), &[start, len]));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.derived(vec![len, c], out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(shape_err("slice_cols", self.shape(x), &[start, len]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        Ok(self.derived(vec![r, len], out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.derived(vec![c, r], out, Op::Transpose(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.derived(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<Real>() / v.len() as Real;
        self.derived(vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Mean softmax cross-entropy of each row against its target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidInput(format!(
                "target class {t} outside {c} classes"
            )));
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            softmax_row(row, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<Real>().ln();
            loss += lse - row[targets[i]];
        }
        loss /= r as Real;
        Ok(self.derived(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean elementwise binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[Real]) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.len() {
            return Err(shape_err(
                "bce_with_logits",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let sig: Vec<Real> = x.iter().map(|&z| sigmoid(z)).collect();
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<Real>()
            / x.len() as Real;
        Ok(self.derived(
            vec![1],
            vec![loss],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                sigmoid: sig,
            },
            &[logits],
        ))
    }

    /// Multi-head attention restricted to the key sets of `plan`.
    /// `q`, `k`, `v` are `[rows, hidden]` with heads laid out as column blocks.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        plan: Arc<AttentionPlan>,
        dropout: Option<AttentionDropout>,
    ) -> Result<Var> {
        let (rows, hidden) = self.dims(q);
        if self.dims(k) != (rows, hidden) || self.dims(v) != (rows, hidden) {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        plan.check(rows, hidden)?;
        let (out, probs) = attention::forward(
            &plan,
            self.value(q),
            self.value(k),
            self.value(v),
            hidden,
            dropout,
        );
        Ok(self.derived(
            vec![rows, hidden],
            out,
            Op::Attention {
                q,
                k,
                v,
                plan,
                dropout,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<Real>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<'a>, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let ga = grad_slot(&mut grads[a.0], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = grad_slot(&mut grads[b.0], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (gv, x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *gv += aip * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    let ga = grad_slot(&mut grads[a.0], g.len());
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if self.needs(*b) {
                    let nb = self.value(*b).len();
                    let gb = grad_slot(&mut grads[b.0], nb);
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if self.needs(x) {
                        let other = self.value(y);
                        let gx = grad_slot(&mut grads[x.0], g.len());
                        for i in 0..g.len() {
                            gx[i] += g[i] * other[i];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = grad_slot(&mut grads[a.0], g.len());
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y * c;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = grad_slot(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let ga = grad_slot(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * gelu_grad(x[i]);
                }
            }
            Op::Softmax(a) => {
                let (r, c) = self.dims(*a);
                let y = &node.value;
                let ga = grad_slot(&mut grads[a.0], r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let s = dot(yr, gr);
                    for j in 0..c {
                        ga[i * c + j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = self.dims(*x);
                let gm = self.value(*gamma);
                if self.needs(*x) {
                    let gx = grad_slot(&mut grads[x.0], r * c);
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let d = gr[j] * gm[j];
                            m1 += d;
                            m2 += d * hr[j];
                        }
                        m1 /= c as Real;
                        m2 /= c as Real;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (gr[j] * gm[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if self.needs(*gamma) {
                    let gg = grad_slot(&mut grads[gamma.0], c);
                    for i in 0..r * c {
                        gg[i % c] += g[i] * xhat[i];
                    }
                }
                if self.needs(*beta) {
                    let gb = grad_slot(&mut grads[beta.0], c);
                    for i in 0..r * c {
                        gb[i % c] += g[i];
                    }
                }
            }
            Op::Gather { table, ids } => {
                let (r, c) = self.dims(*table);
                let gt = grad_slot(&mut grads[table.0], r * c);
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += g[k * c + j];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = grad_slot(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.needs(p) {
                        let gp = grad_slot(&mut grads[p.0], rows * c);
                        for i in 0..rows {
                            for j in 0..c {
                                gp[i * c + j] += g[i * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.needs(p) {
                        let gp = grad_slot(&mut grads[p.0], n);
                        for (x, y) in gp.iter_mut().zip(&g[off..off + n]) {
                            *x += y;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.dims(*x);
                let gx = grad_slot(&mut grads[x.0], r * c);
                for (k, y) in g.iter().enumerate() {
                    gx[start * c + k] += y;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let len = node.shape[1];
                let gx = grad_slot(&mut grads[x.0], r * c);
                for i in 0..r {
                    for j in 0..len {
                        gx[i * c + start + j] += g[i * len + j];
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.dims(*x);
                let gx = grad_slot(&mut grads[x.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                for v in grad_slot(&mut grads[x.0], n).iter_mut() {
                    *v += g[0];
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let d = g[0] / n as Real;
                for v in grad_slot(&mut grads[x.0], n).iter_mut() {
                    *v += d;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, c) = self.dims(*logits);
                let d = g[0] / r as Real;
                let gl = grad_slot(&mut grads[logits.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        let y = if j == targets[i] { 1.0 } else { 0.0 };
                        gl[i * c + j] += d * (probs[i * c + j] - y);
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                sigmoid,
            } => {
                let n = targets.len();
                let d = g[0] / n as Real;
                let gl = grad_slot(&mut grads[logits.0], n);
                for i in 0..n {
                    gl[i] += d * (sigmoid[i] - targets[i]);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                plan,
                dropout,
                probs,
            } => {
                let (rows, hidden) = self.dims(*q);
                let mut gq = vec![0.0; rows * hidden];
                let mut gk = vec![0.0; rows * hidden];
                let mut gv = vec![0.0; rows * hidden];
                attention::backward(
                    plan,
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    hidden,
                    *dropout,
                    probs,
                    g,
                    (&mut gq, &mut gk, &mut gv),
                );
                for (var, d) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if self.needs(var) {
                        let slot = grad_slot(&mut grads[var.0], d.len());
                        for (x, y) in slot.iter_mut().zip(&d) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_row(x: &[Real], out: &mut [Real]) {
    let max = x.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Result of a reverse pass. Gradients are kept for leaves only.
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
    params: Vec<(usize, usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf; `None` if the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[Real]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of the parameters of `set`, in the order they entered the
    /// graph. A parameter added more than once appears more than once.
    pub fn take_for(&mut self, set: &ParamSet) -> Vec<(ParamId, Vec<Real>)> {
        let addr = set as *const ParamSet as usize;
        let mut out = Vec::new();
        for &(node, owner, id) in &self.params {
            if owner == addr {
                if let Some(g) = self.grads[node].take() {
                    out.push((id, g));
                }
            }
        }
        out
    }
}
