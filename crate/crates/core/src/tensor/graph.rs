use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{axis_split, kernels, Scalar, Tensor};
use crate::error::{contract, Error, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        Self(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor with a stable identity, so a graph can bind it once and
/// hand its gradient back after [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    id: ParamId,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self {
            id: ParamId::fresh(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    /// Give this parameter a new identity (used when duplicating a module).
    pub fn refresh_id(&mut self) {
        self.id = ParamId::fresh();
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    MatMul,
    Transpose,
    Softmax { axis: usize },
    Gelu,
    Abs,
    Sum,
    Mean,
    MeanAxis { axis: usize },
    Reshape,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    GatherRows { indices: Vec<usize> },
    LayerNorm { xhat: Vec<T>, rstd: Vec<T> },
    CrossEntropy { probs: Vec<T>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward pass is a single reverse sweep. Leaf gradients accumulate across
/// calls to [`Graph::backward`] until [`Graph::zero_grads`].
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Number of times `rhs` tiles across `lhs` under leading-singleton broadcasting.
fn broadcast_repeats(lhs: &[usize], rhs: &[usize]) -> Option<usize> {
    let trimmed: &[usize] = {
        let lead = rhs.iter().take_while(|&&e| e == 1).count();
        &rhs[lead.min(rhs.len().saturating_sub(1))..]
    };
    if lhs == rhs {
        return Some(1);
    }
    if trimmed.len() > lhs.len() || lhs[lhs.len() - trimmed.len()..] != *trimmed {
        return None;
    }
    Some(lhs[..lhs.len() - trimmed.len()].iter().product())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values but never gradients; every node is a constant.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Tape length.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        let requires_grad = self.grad_enabled
            && match op {
                Op::Leaf => false,
                _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad: requires_grad && self.grad_enabled,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Bind a parameter as a gradient-carrying leaf. Binding the same
    /// parameter twice returns the same node.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if !self.grad_enabled {
            return self.constant(p.value.clone());
        }
        if let Some(&v) = self.bound.get(&p.id) {
            return v;
        }
        let v = self.input(p.value.clone());
        self.bound.insert(p.id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn param_grad(&self, p: &Param<T>) -> Option<&[T]> {
        self.bound.get(&p.id).and_then(|&v| self.grad(v))
    }

    pub fn is_bound(&self, p: &Param<T>) -> bool {
        self.bound.contains_key(&p.id)
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(&mut self, op: Op<T>, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let reps = broadcast_repeats(&sa, &sb).ok_or(Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb,
        })?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let inner = bv.len();
        let mut out = Vec::with_capacity(av.len());
        for r in 0..reps {
            let block = &av[r * inner..(r + 1) * inner];
            out.extend(block.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        Ok(self.push(Tensor::new(sa, out)?, op, vec![a, b]))
    }

    /// Elementwise sum; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul, "mul", a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(c), vec![a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul, vec![a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose, vec![a]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let mut max = T::neg_infinity();
                for k in 0..n {
                    max = max.max(src[at(k)]);
                }
                let mut total = T::zero();
                for k in 0..n {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] = out[at(k)] / total;
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { axis }, vec![a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64(GELU_C);
        let k = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        let out = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        self.push(out, Op::Gelu, vec![a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push(out, Op::Abs, vec![a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().copied().sum::<T>() / T::from_f64(x.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean, vec![a])
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        let inv = T::one() / T::from_f64(n as f64);
        let src = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[o * n * inner + k * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let t = if shape.is_empty() {
            Tensor::scalar(out[0])
        } else {
            Tensor::new(shape, out)?
        };
        Ok(self.push(t, Op::MeanAxis { axis }, vec![a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape, vec![a]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == base.len();
            let others_match = same_rank
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !others_match {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { axis }, parts.to_vec()))
    }

    /// Elements `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        if len == 0 || start + len > n {
            return Err(contract(format!(
                "slice [{start}, {}) out of extent {n} on axis {axis}",
                start + len
            )));
        }
        let src = x.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { axis, start }, vec![a]))
    }

    /// Rows of the leading axis, in the given order (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).gather_rows(indices)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![a],
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.value(x);
        let d = *xs.shape().last().ok_or_else(|| contract("layer_norm on a scalar"))?;
        for (p, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: if name == "gamma" { "layer_norm.gamma" } else { "layer_norm.beta" },
                    lhs: xs.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.len() / d;
        let mut xhat = xs.data().to_vec();
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); xs.len()];
        for r in 0..rows {
            let row = &mut xhat[r * d..(r + 1) * d];
            let (mean, rs) = kernels::row_stats(row, eps);
            rstd.push(rs);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * rs;
                out[r * d + j] = *v * g[j] + b[j];
            }
        }
        let shape = xs.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { xhat, rstd },
            vec![x, gamma, beta],
        ))
    }

    /// Mean softmax cross-entropy of `logits[B×C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let (b, c) = l.dims2()?;
        if targets.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: l.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(contract(format!("target class {t} out of range for {c} classes")));
        }
        let mut probs = vec![T::zero(); b * c];
        let mut loss = T::zero();
        for r in 0..b {
            let row = l.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[r]];
        }
        loss = loss / T::from_f64(b as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            vec![logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`; leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(contract("backward on a no-grad graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Vec<T>>> = Vec::new();
        local.resize_with(loss.0 + 1, || None);
        local[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad && !matches!(node.op, Op::Leaf) {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    local[i] = Some(g);
                }
                continue;
            }
            backprop_node(&self.nodes, node, &g, &mut local);
        }

        for (i, g) in local.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Scalar>(nodes: &[Node<T>], local: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(local[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], local: &mut [Option<Vec<T>>]) {
    let inp = &node.inputs;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (inp[0], inp[1]);
            let inner = val(b).len();
            if let Some(ga) = slot(nodes, local, a) {
                match node.op {
                    Op::Mul => {
                        let bv = val(b).data();
                        for (k, (o, &gk)) in ga.iter_mut().zip(g).enumerate() {
                            *o += gk * bv[k % inner];
                        }
                    }
                    _ => ga.iter_mut().zip(g).for_each(|(o, &gk)| *o += gk),
                }
            }
            if let Some(gb) = slot(nodes, local, b) {
                let av = val(a).data();
                for (k, &gk) in g.iter().enumerate() {
                    let j = k % inner;
                    match node.op {
                        Op::Add => gb[j] += gk,
                        Op::Sub => gb[j] -= gk,
                        _ => gb[j] += gk * av[k],
                    }
                }
            }
        }
        Op::Scale(c) => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                ga.iter_mut().zip(g).for_each(|(o, &gk)| *o += gk * *c);
            }
        }
        Op::MatMul => {
            let (a, b) = (inp[0], inp[1]);
            let (m, k) = val(a).dims2().expect("matmul lhs");
            let n = val(b).shape()[1];
            if let Some(ga) = slot(nodes, local, a) {
                kernels::matmul_nt(g, val(b).data(), ga, m, n, k);
            }
            if let Some(gb) = slot(nodes, local, b) {
                kernels::matmul_tn(val(a).data(), g, gb, m, k, n);
            }
        }
        Op::Transpose => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let (r, c) = val(inp[0]).dims2().expect("transpose input");
                let gt = kernels::transpose(g, c, r);
                ga.iter_mut().zip(&gt).for_each(|(o, &v)| *o += v);
            }
        }
        Op::Softmax { axis } => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis).expect("softmax axis");
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let s: T = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            ga[at(k)] += y[at(k)] * (g[at(k)] - s);
                        }
                    }
                }
            }
        }
        Op::Gelu => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let c = T::from_f64(GELU_C);
                let k = T::from_f64(GELU_A);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                for ((o, &x), &gk) in ga.iter_mut().zip(val(inp[0]).data()).zip(g) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let d = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    *o += gk * d;
                }
            }
        }
        Op::Abs => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                for ((o, &x), &gk) in ga.iter_mut().zip(val(inp[0]).data()).zip(g) {
                    if x > T::zero() {
                        *o += gk;
                    } else if x < T::zero() {
                        *o -= gk;
                    }
                }
            }
        }
        Op::Sum => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Mean => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let s = g[0] / T::from_f64(ga.len() as f64);
                ga.iter_mut().for_each(|o| *o += s);
            }
        }
        Op::MeanAxis { axis } => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let (outer, n, inner) = axis_split(val(inp[0]).shape(), *axis).expect("mean axis");
                let inv = T::one() / T::from_f64(n as f64);
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            ga[o * n * inner + k * inner + i] += g[o * inner + i] * inv;
                        }
                    }
                }
            }
        }
        Op::Reshape => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
            }
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = axis_split(node.value.shape(), *axis).expect("concat axis");
            let mut offset = 0;
            for &p in inp {
                let n = val(p).shape()[*axis];
                if let Some(gp) = slot(nodes, local, p) {
                    for o in 0..outer {
                        let src = &g[o * total * inner + offset * inner..][..n * inner];
                        let dst = &mut gp[o * n * inner..(o + 1) * n * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
                offset += n;
            }
        }
        Op::Slice { axis, start } => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let (outer, n, inner) = axis_split(val(inp[0]).shape(), *axis).expect("slice axis");
                let len = node.value.shape()[*axis];
                for o in 0..outer {
                    let dst = &mut ga[o * n * inner + start * inner..][..len * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                }
            }
        }
        Op::GatherRows { indices } => {
            if let Some(ga) = slot(nodes, local, inp[0]) {
                let inner = g.len() / indices.len();
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut ga[i * inner..(i + 1) * inner];
                    dst.iter_mut()
                        .zip(&g[r * inner..(r + 1) * inner])
                        .for_each(|(d, &s)| *d += s);
                }
            }
        }
        Op::LayerNorm { xhat, rstd } => {
            let (x, gamma, beta) = (inp[0], inp[1], inp[2]);
            let gv = val(gamma).data();
            let d = gv.len();
            let rows = rstd.len();
            if let Some(gg) = slot(nodes, local, gamma) {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = slot(nodes, local, beta) {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += g[r * d + j];
                    }
                }
            }
            if let Some(gx) = slot(nodes, local, x) {
                let dn = T::from_f64(d as f64);
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxhat[j] = g[r * d + j] * gv[j];
                    }
                    let s1: T = dxhat.iter().copied().sum();
                    let s2: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    let scale = rstd[r] / dn;
                    for j in 0..d {
                        gx[r * d + j] += scale * (dn * dxhat[j] - s1 - xh[j] * s2);
                    }
                }
            }
        }
        Op::CrossEntropy { probs, targets } => {
            if let Some(gl) = slot(nodes, local, inp[0]) {
                let b = targets.len();
                let c = probs.len() / b;
                let s = g[0] / T::from_f64(b as f64);
                for r in 0..b {
                    for j in 0..c {
                        let onehot = if j == targets[r] { T::one() } else { T::zero() };
                        gl[r * c + j] += s * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }
}
