//! Define-by-run reverse-mode tape over dense `f64` matrices.
//!
//! Every op appends a node holding its forward value and whatever the
//! backward rule needs. Nodes are appended in evaluation order, so the
//! tape is topologically sorted by construction and [`Tape::backward`]
//! visits each node once, last to first.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Attention visibility over `[t_q × t_k]`.
#[derive(Debug, Clone, PartialEq)]
pub enum AttnMask {
    /// Every key visible.
    Full,
    /// Query `i` sees keys `0..=i`; requires `t_q == t_k`.
    Causal,
    /// Explicit row-major visibility table.
    Custom {
        rows: usize,
        cols: usize,
        allowed: Vec<bool>,
    },
}

impl AttnMask {
    fn check(&self, tq: usize, tk: usize) -> Result<()> {
        match self {
            AttnMask::Full => Ok(()),
            AttnMask::Causal if tq == tk => Ok(()),
            AttnMask::Causal => Err(Error::shape("causal mask", &[tq, tq], &[tq, tk])),
            AttnMask::Custom { rows, cols, allowed } => {
                if *rows != tq || *cols != tk || allowed.len() != rows * cols {
                    Err(Error::shape("attention mask", &[*rows, *cols], &[tq, tk]))
                } else {
                    Ok(())
                }
            }
        }
    }

    #[inline]
    fn visible(&self, i: usize, j: usize) -> bool {
        match self {
            AttnMask::Full => true,
            AttnMask::Causal => j <= i,
            AttnMask::Custom { cols, allowed, .. } => allowed[i * cols + j],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Silu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

/// `C = alpha·op(A)·op(B) + beta·C` over strided row-major views.
///
/// `op(A)` is `m×k` and `op(B)` is `k×n`. Strides are in elements.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |r: usize, c: usize, rs: isize, cs: isize| {
        if r == 0 || c == 0 {
            0
        } else {
            (r as isize - 1) * rs + (c as isize - 1) * cs + 1
        }
    };
    assert!(span(m, k, rsa, csa) as usize <= a.len());
    assert!(span(k, n, rsb, csb) as usize <= b.len());
    assert!(span(m, n, rsc, csc) as usize <= c.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Dense `op(A)·op(B)` with `A` stored `m×k` (or `k×m` when `ta`) and `B`
/// stored `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let sa = if ta { (1, m as isize) } else { (k as isize, 1) };
    let sb = if tb { (1, k as isize) } else { (n as isize, 1) };
    gemm_strided(m, k, n, 1.0, a, sa, b, sb, beta, c, (n as isize, 1));
}

/// Plain dense product of two matrices, no tape involved.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.node(v).shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Contract(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    fn ng(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// Records an input tensor; it participates in backward iff it requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Records a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(id),
            t.requires_grad(),
        );
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::Contract(format!("expected a scalar, got shape {:?}", n.shape)));
        }
        Ok(n.value[0])
    }

    /// Gradient of the last backward pass with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `a·b` for `a: [m×k]`, `b: [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, trans_b: false }, ng))
    }

    /// `a·bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), true, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, trans_b: true }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// Adds a `[d]` row vector to every row of `x: [t×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.dims2(x)?;
        if self.value(bias).len() != d {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow(x, bias), ng))
    }

    /// Adds a non-differentiable tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::shape("add_const", self.shape(x), c.shape()));
        }
        let out: Vec<f64> = self.value(x).iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let ng = self.ng(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddConst(x), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if self.value(x).len() != mask.len() {
            return Err(Error::shape("mul_const", self.shape(x), &[mask.len()]));
        }
        let out: Vec<f64> = self.value(x).iter().zip(&mask).map(|(a, b)| a * b).collect();
        let ng = self.ng(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::MulConst(x, mask), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * s).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, s), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Silu(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    /// Row-wise layer normalization with affine `gain`/`bias` of width `d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (t, d) = self.dims2(x)?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer norm epsilon must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; t * d];
        let mut rstd = vec![0.0; t];
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            vec![t, d],
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q: [t_q×d]`, `k, v: [t_k×d]`. Heads split `d` into equal column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Result<Var> {
        let (tq, d) = self.dims2(q)?;
        let (tk, dk) = self.dims2(k)?;
        let (tv, dv) = self.dims2(v)?;
        if dk != d || dv != d || tv != tk {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("d_model {d} not divisible by {heads} heads")));
        }
        mask.check(tq, tk)?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        let di = d as isize;
        for h in 0..heads {
            let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
            gemm_strided(
                tq,
                dh,
                tk,
                scale,
                &qv[h * dh..],
                (di, 1),
                &kv[h * dh..],
                (1, di),
                0.0,
                p,
                (tk as isize, 1),
            );
            for i in 0..tq {
                let row = &mut p[i * tk..(i + 1) * tk];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter().enumerate() {
                    if mask.visible(i, j) && *s > max {
                        max = *s;
                    }
                }
                if max == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|s| *s = 0.0);
                    continue;
                }
                let mut z = 0.0;
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if mask.visible(i, j) { (*s - max).exp() } else { 0.0 };
                    z += *s;
                }
                row.iter_mut().for_each(|s| *s /= z);
            }
            gemm_strided(
                tq,
                tk,
                dh,
                1.0,
                p,
                (tk as isize, 1),
                &vv[h * dh..],
                (di, 1),
                0.0,
                &mut out[h * dh..],
                (di, 1),
            );
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            vec![tq, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node,
    /// laid out `[heads × t_q × t_k]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.node(v).op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Selects rows of `table: [V×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims2(table)?;
        if ids.is_empty() {
            return Err(Error::Contract("gather needs at least one id".into()));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: rows,
                });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean negative log-softmax of `targets` over rows of `logits: [t×V]`,
    /// skipping positions whose target equals `ignore_id`. Zero when every
    /// position is ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore_id: u32) -> Result<Var> {
        let (t, vocab) = self.dims2(logits)?;
        if targets.len() != t {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mut tg = Vec::with_capacity(t);
        for &y in targets {
            if y == ignore_id {
                tg.push(None);
            } else if (y as usize) < vocab {
                tg.push(Some(y as usize));
            } else {
                return Err(Error::Index {
                    what: "cross-entropy target",
                    index: y as usize,
                    bound: vocab,
                });
            }
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; t * vocab];
        let mut total = 0.0;
        let mut count = 0;
        for (r, y) in tg.iter().enumerate() {
            let Some(y) = *y else { continue };
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[y];
            count += 1;
            for (p, v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: tg,
                probs,
                count,
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `loss`. Parameter gradients are
    /// accumulated into `store`; other gradients stay queryable via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).accumulate_grad(g),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims2(*a).expect("checked in forward");
                let n = node.shape[1];
                if self.ng(*a) {
                    let da = grad_slot(grads, *a, m * k);
                    // dA = dC·Bᵀ (or dC·B when B was transposed)
                    gemm(m, n, k, g, false, self.value(*b), !*trans_b, 1.0, da);
                }
                if self.ng(*b) {
                    let db = grad_slot(grads, *b, k * n);
                    if *trans_b {
                        gemm(n, m, k, g, true, self.value(*a), false, 1.0, db);
                    } else {
                        gemm(k, m, n, self.value(*a), true, g, false, 1.0, db);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        let s = grad_slot(grads, v, g.len());
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let d = self.value(*bias).len();
                if self.ng(*x) {
                    let s = grad_slot(grads, *x, g.len());
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if self.ng(*bias) {
                    let s = grad_slot(grads, *bias, d);
                    for row in g.chunks(d) {
                        s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddConst(x) => {
                let s = grad_slot(grads, *x, g.len());
                s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let s = grad_slot(grads, *a, g.len());
                    for ((s, gi), bi) in s.iter_mut().zip(g).zip(bv) {
                        *s += gi * bi;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let s = grad_slot(grads, *b, g.len());
                    for ((s, gi), ai) in s.iter_mut().zip(g).zip(av) {
                        *s += gi * ai;
                    }
                }
            }
            Op::MulConst(x, mask) => {
                let s = grad_slot(grads, *x, g.len());
                for ((s, gi), m) in s.iter_mut().zip(g).zip(mask) {
                    *s += gi * m;
                }
            }
            Op::Scale(x, c) => {
                let s = grad_slot(grads, *x, g.len());
                s.iter_mut().zip(g).for_each(|(a, b)| *a += b * c);
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let s = grad_slot(grads, *x, g.len());
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(xv) {
                    let sg = sigmoid(xi);
                    *s += gi * sg * (1.0 + xi * (1.0 - sg));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let s = grad_slot(grads, *x, g.len());
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(xv) {
                    if xi > 0.0 {
                        *s += gi;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let s = grad_slot(grads, *x, n);
                s.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (t, d) = (node.shape[0], node.shape[1]);
                if self.ng(*gain) {
                    let s = grad_slot(grads, *gain, d);
                    for r in 0..t {
                        for c in 0..d {
                            s[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if self.ng(*bias) {
                    let s = grad_slot(grads, *bias, d);
                    for row in g.chunks(d) {
                        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if self.ng(*x) {
                    let gv = self.value(*gain);
                    let s = grad_slot(grads, *x, t * d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..t {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..d {
                            let v = g[r * d + c] * gv[c];
                            dxhat[c] = v;
                            mean_d += v;
                            mean_dx += v * xhat[r * d + c];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for c in 0..d {
                            s[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.backprop_attention(*q, *k, *v, *heads, probs, g, grads),
            Op::Gather { table, ids } => {
                let len = self.value(*table).len();
                let d = node.shape[1];
                let s = grad_slot(grads, *table, len);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        s[id * d + c] += g[r * d + c];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let vocab = self.shape(*logits)[1];
                let w = g[0] / *count as f64;
                let s = grad_slot(grads, *logits, probs.len());
                for (r, y) in targets.iter().enumerate() {
                    let Some(y) = *y else { continue };
                    for c in 0..vocab {
                        s[r * vocab + c] += w * probs[r * vocab + c];
                    }
                    s[r * vocab + y] -= w;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tq, d) = (self.shape(q)[0], self.shape(q)[1]);
        let tk = self.shape(k)[0];
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let di = d as isize;
        let tki = tk as isize;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dp = vec![0.0; tq * tk];
        for h in 0..heads {
            let p = &probs[h * tq * tk..(h + 1) * tq * tk];
            if self.ng(v) {
                // dV_h += Pᵀ·dO_h
                let dv = grad_slot(grads, v, tk * d);
                gemm_strided(tk, tq, dh, 1.0, p, (1, tki), &g[h * dh..], (di, 1), 1.0, &mut dv[h * dh..], (di, 1));
            }
            if !(self.ng(q) || self.ng(k)) {
                continue;
            }
            // dP = dO_h·V_hᵀ
            gemm_strided(tq, dh, tk, 1.0, &g[h * dh..], (di, 1), &vv[h * dh..], (1, di), 0.0, &mut dp, (tki, 1));
            // dS = P∘(dP − rowsum(dP∘P)), folded with the score scale
            for i in 0..tq {
                let pr = &p[i * tk..(i + 1) * tk];
                let dr = &mut dp[i * tk..(i + 1) * tk];
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (dj, pj) in dr.iter_mut().zip(pr) {
                    *dj = pj * (*dj - dot) * scale;
                }
            }
            if self.ng(q) {
                let dq = grad_slot(grads, q, tq * d);
                gemm_strided(tq, tk, dh, 1.0, &dp, (tki, 1), &kv[h * dh..], (di, 1), 1.0, &mut dq[h * dh..], (di, 1));
            }
            if self.ng(k) {
                let dk = grad_slot(grads, k, tk * d);
                gemm_strided(tk, tq, dh, 1.0, &dp, (1, tki), &qv[h * dh..], (di, 1), 1.0, &mut dk[h * dh..], (di, 1));
            }
        }
    }
}
