use std::collections::HashMap;

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;

use super::tensor::{axis_blocks, Tensor};
use super::AutodiffError;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { input: Var, gamma: Var, beta: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Dropout { input: Var, mask: Tensor },
    Mean { input: Var, axis: usize },
    Sum(Var),
    Gather { input: Var, index: Vec<usize> },
    Reshape(Var),
}

impl Op {
    fn for_each_parent(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Concat { parts, .. } => parts.iter().copied().for_each(f),
            Op::LayerNorm { input, gamma, beta, .. } => {
                f(*input);
                f(*gamma);
                f(*beta);
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Ln(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Reshape(a) => f(*a),
            Op::Slice { input, .. }
            | Op::Dropout { input, .. }
            | Op::Mean { input, .. }
            | Op::Gather { input, .. } => f(*input),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in creation order, which is also a valid topological
/// order, so the reverse sweep in [`Tape::backward`] is a single pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.grads.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn invalid(op: &'static str, t: &Tensor, reason: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidShape {
        op,
        shape: t.shape().to_vec(),
        reason: reason.into(),
    }
}

/// `c (+)= op(a) * op(b)` for row-major slices, where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let av = if a_t {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let bv = if b_t {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut cv = ndarray::ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(1.0, &av, &bv, if accumulate { 1.0 } else { 0.0 }, &mut cv);
}

/// (batch, m, k, n) for a supported matmul pair.
fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize), AutodiffError> {
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([g, m, k], [g2, k2, n]) if g == g2 && k == k2 => Ok((*g, *m, *k, *n)),
        _ => Err(mismatch("matmul", a, b)),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        self.nodes.get(var.0).is_some_and(|n| matches!(n.op, Op::Leaf))
    }

    /// Matrix product: `[m,k]·[k,n]`, or batched `[g,m,k]·[g,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (g, m, k, n) = matmul_dims(av, bv)?;
        let mut out = vec![0.0; g * m * n];
        for batch in 0..g {
            gemm(
                m,
                k,
                n,
                &av.data()[batch * m * k..(batch + 1) * m * k],
                false,
                &bv.data()[batch * k * n..(batch + 1) * k * n],
                false,
                &mut out[batch * m * n..(batch + 1) * m * n],
                false,
            );
        }
        let shape = if av.rank() == 2 { vec![m, n] } else { vec![g, m, n] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a bias vector `[n]` to every row of `a` (`[..., n]`).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = *av.shape().last().unwrap();
        if bv.rank() != 1 || bv.len() != n {
            return Err(mismatch("add_row", av, bv));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or(AutodiffError::EmptyOperands("concat"))?;
        if axis >= first.rank() {
            return Err(invalid("concat", first, format!("axis {axis} out of range")));
        }
        let mut extent = 0;
        for &p in parts {
            let pv = self.value(p);
            let same_rank = pv.rank() == first.rank();
            let compatible = same_rank
                && pv
                    .shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", first, pv));
            }
            extent += pv.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = extent;
        let (outer, _, inner) = axis_blocks(&shape, axis);
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let block = pv.shape()[axis] * inner;
                data.extend_from_slice(&pv.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Takes `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if axis >= av.rank() || len == 0 || start + len > av.shape()[axis] {
            return Err(invalid(
                "slice",
                av,
                format!("axis {axis} range {start}..{} out of bounds", start + len),
            ));
        }
        let (outer, extent, inner) = axis_blocks(av.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { input: a, axis, start }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = *av.shape().last().unwrap();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let value = Tensor::new(av.shape().to_vec(), data).unwrap();
        self.push(value, Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = *av.shape().last().unwrap();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let value = Tensor::new(av.shape().to_vec(), data).unwrap();
        self.push(value, Op::LogSoftmax(a))
    }

    /// Normalizes each row over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let n = *av.shape().last().unwrap();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [n] {
            return Err(mismatch("layer_norm", av, gv));
        }
        if bv.shape() != [n] {
            return Err(mismatch("layer_norm", av, bv));
        }
        let rows = av.len() / n;
        let mut normalized = Vec::with_capacity(av.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(av.len());
        for row in av.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, x) in row.iter().enumerate() {
                let xhat = (x - mean) * inv;
                normalized.push(xhat);
                out.push(gv.data()[j] * xhat + bv.data()[j]);
            }
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Elementwise product with a fixed, pre-sampled mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Tensor) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.shape() != mask.shape() {
            return Err(mismatch("dropout_with_mask", av, &mask));
        }
        let data = av.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input: a, mask }))
    }

    /// Mean over `axis`; the axis is removed (a rank-1 input reduces to `[1]`).
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if axis >= av.rank() {
            return Err(invalid("mean", av, format!("axis {axis} out of range")));
        }
        let (outer, extent, inner) = axis_blocks(av.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &av.data()[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|x| *x /= extent as f64);
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Mean { input: a, axis }))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// `out[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.len()) {
            return Err(invalid("gather", av, format!("index {bad} out of bounds")));
        }
        let data = index.iter().map(|&i| av.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather { input: a, index }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(invalid("reshape", av, format!("cannot view as {shape:?}")));
        }
        let value = Tensor::new(shape, av.data().to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Reverse sweep from a `[1]`-shaped output to the requested leaves.
    ///
    /// Only nodes that lie on a path from a target to the output are visited,
    /// so asking for input gradients alone skips all parameter gradients.
    pub fn backward(&self, output: Var, targets: &[Var]) -> Result<Gradients, AutodiffError> {
        let out_node = self.nodes.get(output.0).ok_or(AutodiffError::UnknownNode(output.0))?;
        if out_node.value.shape() != [1] {
            return Err(AutodiffError::NonScalarOutput(out_node.value.shape().to_vec()));
        }
        for &t in targets {
            if t.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(t.0));
            }
            if !self.is_leaf(t) {
                return Err(AutodiffError::NotALeaf(t.0));
            }
        }

        let count = output.0 + 1;
        let mut needed = vec![false; count];
        for &t in targets {
            if t.0 < count {
                needed[t.0] = true;
            }
        }
        for i in 0..count {
            if !needed[i] {
                let mut any = false;
                self.nodes[i].op.for_each_parent(|p| any |= needed[p.0]);
                needed[i] = any;
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..count).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..count).rev() {
            if !needed[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            self.propagate(i, &grad, &needed, &mut grads);
        }

        let mut result = Gradients::default();
        for &t in targets {
            let g = grads
                .get_mut(t.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(t).shape()));
            result.grads.insert(t, g);
        }
        Ok(result)
    }

    fn propagate(&self, i: usize, grad: &Tensor, needed: &[bool], grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut accumulate = |var: Var, g: Tensor| match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let need = |v: Var| needed[v.0];
        let gd = grad.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (g, m, k, n) = matmul_dims(av, bv).expect("validated in forward");
                if need(*a) {
                    let mut da = vec![0.0; g * m * k];
                    for batch in 0..g {
                        gemm(
                            m,
                            n,
                            k,
                            &gd[batch * m * n..(batch + 1) * m * n],
                            false,
                            &bv.data()[batch * k * n..(batch + 1) * k * n],
                            true,
                            &mut da[batch * m * k..(batch + 1) * m * k],
                            false,
                        );
                    }
                    accumulate(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if need(*b) {
                    let mut db = vec![0.0; g * k * n];
                    for batch in 0..g {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[batch * m * k..(batch + 1) * m * k],
                            true,
                            &gd[batch * m * n..(batch + 1) * m * n],
                            false,
                            &mut db[batch * k * n..(batch + 1) * k * n],
                            false,
                        );
                    }
                    accumulate(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Add(a, b) => {
                if need(*a) {
                    accumulate(*a, grad.clone());
                }
                if need(*b) {
                    accumulate(*b, grad.clone());
                }
            }
            Op::Sub(a, b) => {
                if need(*a) {
                    accumulate(*a, grad.clone());
                }
                if need(*b) {
                    accumulate(*b, grad.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    let bv = self.value(*b);
                    let d = gd.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
                }
                if need(*b) {
                    let av = self.value(*a);
                    let d = gd.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    accumulate(*b, Tensor::new(grad.shape().to_vec(), d).unwrap());
                }
            }
            Op::AddRow(a, bias) => {
                if need(*a) {
                    accumulate(*a, grad.clone());
                }
                if need(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(*bias, Tensor::vector(db));
                }
            }
            Op::Scale(a, factor) => accumulate(*a, grad.map(|g| g * factor)),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_blocks(grad.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let block = pv.shape()[*axis] * inner;
                    if need(p) {
                        let mut d = Vec::with_capacity(pv.len());
                        let stride = grad.shape()[*axis] * inner;
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * stride + offset..o * stride + offset + block]);
                        }
                        accumulate(p, Tensor::new(pv.shape().to_vec(), d).unwrap());
                    }
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let iv = self.value(*input);
                let (outer, extent, inner) = axis_blocks(iv.shape(), *axis);
                let len = grad.shape()[*axis];
                let mut d = vec![0.0; iv.len()];
                for o in 0..outer {
                    let dst = o * extent * inner + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(*input, Tensor::new(iv.shape().to_vec(), d).unwrap());
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = gd
                    .iter()
                    .zip(av.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::Ln(a) => {
                let av = self.value(*a);
                let d = gd.iter().zip(av.data()).map(|(g, x)| g / x).collect();
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(a) => {
                let n = *grad.shape().last().unwrap();
                let mut d = Vec::with_capacity(grad.len());
                for (gr, yr) in gd.chunks(n).zip(node.value.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    d.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::LogSoftmax(a) => {
                let n = *grad.shape().last().unwrap();
                let mut d = Vec::with_capacity(grad.len());
                for (gr, lr) in gd.chunks(n).zip(node.value.data().chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(lr).map(|(g, l)| g - l.exp() * total));
                }
                accumulate(*a, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = *grad.shape().last().unwrap();
                let gamma_v = self.value(*gamma).data();
                if need(*input) {
                    let mut d = Vec::with_capacity(grad.len());
                    for ((gr, xr), inv) in gd.chunks(n).zip(normalized.chunks(n)).zip(inv_std) {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let dxhat = gr[j] * gamma_v[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xr[j];
                        }
                        for j in 0..n {
                            let dxhat = gr[j] * gamma_v[j];
                            d.push(inv / n as f64 * (n as f64 * dxhat - sum_dxhat - xr[j] * sum_dxhat_xhat));
                        }
                    }
                    accumulate(*input, Tensor::new(grad.shape().to_vec(), d).unwrap());
                }
                if need(*gamma) {
                    let mut dg = vec![0.0; n];
                    for (gr, xr) in gd.chunks(n).zip(normalized.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                    accumulate(*gamma, Tensor::vector(dg));
                }
                if need(*beta) {
                    let mut db = vec![0.0; n];
                    for gr in gd.chunks(n) {
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    }
                    accumulate(*beta, Tensor::vector(db));
                }
            }
            Op::Dropout { input, mask } => {
                let d = gd.iter().zip(mask.data()).map(|(g, m)| g * m).collect();
                accumulate(*input, Tensor::new(grad.shape().to_vec(), d).unwrap());
            }
            Op::Mean { input, axis } => {
                let iv = self.value(*input);
                let (outer, extent, inner) = axis_blocks(iv.shape(), *axis);
                let mut d = Vec::with_capacity(iv.len());
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..extent {
                        d.extend(src.iter().map(|g| g / extent as f64));
                    }
                }
                accumulate(*input, Tensor::new(iv.shape().to_vec(), d).unwrap());
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(*a, Tensor::full(av.shape(), gd[0]));
            }
            Op::Gather { input, index } => {
                let iv = self.value(*input);
                let mut d = vec![0.0; iv.len()];
                for (&src, g) in index.iter().zip(gd) {
                    d[src] += g;
                }
                accumulate(*input, Tensor::new(iv.shape().to_vec(), d).unwrap());
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                accumulate(*a, Tensor::new(av.shape().to_vec(), gd.to_vec()).unwrap());
            }
        }
    }
}
