//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape; inputs always precede their
//! consumers, so the tape order is a valid topological order and the
//! backward pass is a single reverse sweep.

use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, RowStats};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: RowStats },
    Softmax { x: Var, axis: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SmoothedCe { logits: Var, grad: Vec<f64> },
    BceLogits { logits: Var, grad: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    corrupt_gelu_backward: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the `x·φ(x)` term from the GELU derivative. Only useful for
    /// demonstrating that the gradient checker catches broken rules.
    #[doc(hidden)]
    pub fn corrupt_gelu_backward(&mut self) {
        self.corrupt_gelu_backward = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input tensor. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a stored parameter; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let mut value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        value.set_requires_grad(t.requires_grad());
        let v = self.push(value, Op::Leaf, t.requires_grad());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    // ---- operations ----

    /// `op(a)·op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a);
        let (br, bc) = self.dims2(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        ensure!(
            self.shape(a).len() == 2 && self.shape(b).len() == 2 && k == k2,
            "matmul shape mismatch {:?}{} x {:?}{}",
            self.shape(a),
            if ta { "ᵀ" } else { "" },
            self.shape(b),
            if tb { "ᵀ" } else { "" }
        );
        let sa = if ta { (1, ac) } else { (ac, 1) };
        let sb = if tb { (1, bc) } else { (bc, 1) };
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            sa,
            self.value(b).data(),
            sb,
            &mut out,
            (n, 1),
            false,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, ta, tb },
            ng,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            "add shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), ng))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        ensure!(
            self.value(bias).numel() == c,
            "row bias of length {} does not match width {c}",
            self.value(bias).numel()
        );
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(x, bias), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            "mul shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    /// Adds a constant tensor of the same shape (used for attention masks).
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        ensure!(
            c.len() == self.value(x).numel(),
            "constant of length {} does not match tensor of {} values",
            c.len(),
            self.value(x).numel()
        );
        let data = zip_map(self.value(x).data(), c, |a, b| a + b);
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddConst(x), ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::gelu);
        let ng = self.needs(x);
        self.push(t, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::sigmoid);
        let ng = self.needs(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        ensure!(d > 0, "layer_norm over an empty axis");
        ensure!(
            self.value(gamma).numel() == d && self.value(beta).numel() == d,
            "layer_norm gain/bias must have length {d}"
        );
        let mut out = vec![0.0; self.value(x).numel()];
        let mut stats = RowStats::with_capacity(self.value(x).rows());
        kernels::layer_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            d,
            eps,
            &mut out,
            Some(&mut stats),
        );
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            ng,
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = super::tensor::softmax(self.value(x), axis)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, axis }, ng))
    }

    /// Stacks 2-D tensors of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            ensure!(
                self.value(p).cols() == c,
                "concat_rows width mismatch: {} vs {c}",
                self.value(p).cols()
            );
            rows += self.value(p).rows();
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x);
        ensure!(
            len > 0 && start + len <= r,
            "row slice {start}..{} out of range for {r} rows",
            start + len
        );
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![len, c], data),
            Op::SliceRows { x, start },
            ng,
        ))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.value(parts[0]).rows();
        for &p in parts {
            ensure!(
                self.value(p).rows() == r,
                "concat_cols row mismatch: {} vs {r}",
                self.value(p).rows()
            );
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for i in 0..r {
                data[i * total + off..i * total + off + c].copy_from_slice(t.row(i));
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x);
        ensure!(
            len > 0 && start + len <= c,
            "column slice {start}..{} out of range for {c} columns",
            start + len
        );
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![r, len], data),
            Op::SliceCols { x, start },
            ng,
        ))
    }

    /// Selects rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(table);
        ensure!(!ids.is_empty(), "gather of zero rows");
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            ensure!(id < r, "row id {id} out of range for table with {r} rows");
            data.extend_from_slice(self.value(table).row(id));
        }
        let ng = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), c], data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        ensure!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Dropout { x, mask }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.value(x).sum() / n;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean label-smoothed cross-entropy of `rows×K` logits. Rows whose target
    /// is `None` are ignored. The smoothed target puts `1-ε+ε/K` on the true
    /// class and `ε/K` on every other class.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var> {
        let (rows, k) = self.dims2(logits);
        ensure!(
            targets.len() == rows,
            "{} targets for {rows} logit rows",
            targets.len()
        );
        ensure!(
            (0.0..=1.0).contains(&smoothing),
            "label smoothing {smoothing} outside [0, 1]"
        );
        let logp = kernels::log_softmax_rows(self.value(logits).data(), k);
        let count = targets.iter().filter(|t| t.is_some()).count();
        let mut grad = vec![0.0; rows * k];
        let mut loss = 0.0;
        let off = smoothing / k as f64;
        for (r, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            ensure!(y < k, "target id {y} out of range for {k} classes");
            let lp = &logp[r * k..(r + 1) * k];
            let g = &mut grad[r * k..(r + 1) * k];
            for j in 0..k {
                let q = if j == y { 1.0 - smoothing + off } else { off };
                if q > 0.0 {
                    loss -= q * lp[j];
                }
                g[j] = lp[j].exp() - q;
            }
        }
        let denom = count.max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= denom);
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / denom),
            Op::SmoothedCe { logits, grad },
            ng,
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and binary labels,
    /// evaluated through log-sigmoid forms.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        ensure!(
            labels.len() == z.len(),
            "{} labels for {} logits",
            labels.len(),
            z.len()
        );
        let n = z.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; z.len()];
        for (i, (&zi, &yi)) in z.iter().zip(labels).enumerate() {
            // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
            loss += kernels::softplus(zi) - yi * zi;
            grad[i] = (kernels::sigmoid(zi) - yi) / n;
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::BceLogits { logits, grad },
            ng,
        ))
    }

    // ---- backward ----

    /// Populates gradients of `loss` with respect to every node that needs
    /// one. Previous graph-level gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_param_grads(store);
        Ok(())
    }

    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            let t = store.get_mut(id);
            match self.grads.get(v.0).and_then(Option::as_ref) {
                Some(g) => t.accumulate_grad(g),
                None => {
                    t.grad_mut();
                }
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn acc(&mut self, v: Var, current: usize) -> Result<Option<&mut Vec<f64>>> {
        if v.0 >= current {
            return Err(Error::Internal(format!(
                "node {current} consumes node {} that does not precede it",
                v.0
            )));
        }
        if !self.nodes[v.0].needs_grad {
            return Ok(None);
        }
        let n = self.nodes[v.0].value.numel();
        Ok(Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n])))
    }

    fn propagate(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Temporarily move the op out so node values can be read while
        // gradient buffers are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let res = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        res
    }

    fn propagate_op(&mut self, i: usize, op: &Op, g: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.dims2(*a);
                let (br, bc) = self.dims2(*b);
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                let sa = if *ta { (1, ac) } else { (ac, 1) };
                let sb = if *tb { (1, bc) } else { (bc, 1) };
                if self.needs(*a) {
                    let bval = self.nodes[b.0].value.data().to_vec();
                    let ga = self.acc(*a, i)?.expect("needs grad");
                    // dA' = dC · B'ᵀ
                    kernels::gemm(m, n, k, g, (n, 1), &bval, (sb.1, sb.0), ga, sa, true);
                }
                if self.needs(*b) {
                    let aval = self.nodes[a.0].value.data().to_vec();
                    let gb = self.acc(*b, i)?.expect("needs grad");
                    // dB' = A'ᵀ · dC
                    kernels::gemm(k, m, n, &aval, (sa.1, sa.0), g, (n, 1), gb, sb, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(v, i)? {
                        add_into(ga, g);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(gx) = self.acc(*x, i)? {
                    add_into(gx, g);
                }
                if let Some(gb) = self.acc(*bias, i)? {
                    let c = gb.len();
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if let Some(ga) = self.acc(*a, i)? {
                    for ((d, gg), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *d += gg * y;
                    }
                }
                if let Some(gb) = self.acc(*b, i)? {
                    for ((d, gg), x) in gb.iter_mut().zip(g).zip(&av) {
                        *d += gg * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(*x, i)? {
                    for (d, gg) in gx.iter_mut().zip(g) {
                        *d += gg * c;
                    }
                }
            }
            Op::AddConst(x) => {
                if let Some(gx) = self.acc(*x, i)? {
                    add_into(gx, g);
                }
            }
            Op::Gelu(x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let corrupt = self.corrupt_gelu_backward;
                if let Some(gx) = self.acc(*x, i)? {
                    for ((d, gg), v) in gx.iter_mut().zip(g).zip(&xv) {
                        let deriv = if corrupt {
                            kernels::normal_cdf(*v)
                        } else {
                            kernels::gelu_grad(*v)
                        };
                        *d += gg * deriv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(*x, i)? {
                    for ((d, gg), s) in gx.iter_mut().zip(g).zip(&y) {
                        *d += gg * s * (1.0 - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let d = self.value(*x).cols();
                let xv = self.nodes[x.0].value.data().to_vec();
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let mut dx = self.needs(*x).then(|| vec![0.0; xv.len()]);
                let mut dg = self.needs(*gamma).then(|| vec![0.0; d]);
                let mut db = self.needs(*beta).then(|| vec![0.0; d]);
                kernels::layer_norm_backward(
                    &xv,
                    &gv,
                    stats,
                    g,
                    d,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, part) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                    if let (Some(part), Some(buf)) = (part, self.acc(v, i)?) {
                        add_into(buf, &part);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let shape = self.nodes[i].value.shape().to_vec();
                if let Some(gx) = self.acc(*x, i)? {
                    kernels::softmax_axis_backward(&y, g, gx, &shape, *axis);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(gp) = self.acc(p, i)? {
                        add_into(gp, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.acc(*x, i)? {
                    add_into(&mut gx[start * c..start * c + g.len()], g);
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.dims2(p);
                    if let Some(gp) = self.acc(p, i)? {
                        for row in 0..r {
                            add_into(
                                &mut gp[row * c..(row + 1) * c],
                                &g[row * total + off..row * total + off + c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = self.nodes[i].value.cols();
                if let Some(gx) = self.acc(*x, i)? {
                    for (row, gr) in g.chunks_exact(len).enumerate() {
                        add_into(&mut gx[row * c + start..row * c + start + len], gr);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let c = self.value(*table).cols();
                if let Some(gt) = self.acc(*table, i)? {
                    for (gr, &id) in g.chunks_exact(c).zip(ids) {
                        add_into(&mut gt[id * c..(id + 1) * c], gr);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.acc(*x, i)? {
                    for ((d, gg), m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += gg * m;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(*x, i)? {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(*x, i)? {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SmoothedCe { logits, grad } | Op::BceLogits { logits, grad } => {
                if let Some(gl) = self.acc(*logits, i)? {
                    for (d, lg) in gl.iter_mut().zip(grad) {
                        *d += g[0] * lg;
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
