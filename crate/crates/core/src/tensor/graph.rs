//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A graph is rebuilt for every forward pass. Nodes are appended in
//! topological order; `backward` walks them in reverse.

use crate::error::{Error, Result};

use super::{suffix_broadcastable, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    SoftmaxLast(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: T },
    Embed { table: Var, indices: Vec<usize> },
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    WeightedCe { logits: Var, targets: Vec<usize>, weights: Vec<T> },
    WeightedBce { logits: Var, targets: Vec<T>, weights: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only computation graph.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node id.
pub struct Gradients<T: Scalar = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Insert a leaf. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_unchecked(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient (masks, fixed inputs).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push_unchecked(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let rg = self.op_parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_unchecked(value, rg, op))
    }

    fn op_parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::SoftmaxLast(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embed { table, .. } => vec![*table],
            Op::SliceRows { x, .. } | Op::SliceCols { x, .. } => vec![*x],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::WeightedCe { logits, .. } | Op::WeightedBce { logits, .. } => vec![*logits],
        }
    }

    fn mat_dims(&self, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::ShapeMismatch(format!("expected matrix, got shape {s:?}"))),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a)?;
        let (k2, n) = self.mat_dims(b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner extents {k} vs {k2}"
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + x * brow[j];
                }
            }
        }
        let t = Tensor::from_vec(vec![m, n], out)?;
        self.push("matmul", t, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a)?;
        let av = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let t = Tensor::from_vec(vec![n, m], out)?;
        self.push("transpose", t, Op::Transpose(a))
    }

    fn broadcast_zip(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Tensor::from_vec(av.shape().to_vec(), data);
        }
        // smaller operand tiles along leading axes
        let (big, small, swapped) = if suffix_broadcastable(av.shape(), bv.shape()) {
            (av, bv, false)
        } else if suffix_broadcastable(bv.shape(), av.shape()) {
            (bv, av, true)
        } else {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} with {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        let n = small.numel().max(1);
        let data = big
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = small.data()[i % n];
                if swapped { f(y, x) } else { f(x, y) }
            })
            .collect();
        Tensor::from_vec(big.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_zip(a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_zip(a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * c);
        self.push("scale", t, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", t, Op::Relu(a))
    }

    /// GELU, tanh approximation: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³))).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(gelu_fwd);
        self.push("gelu", t, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid_fwd);
        self.push("sigmoid", t, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x.exp());
        self.push("exp", t, Op::Exp(a))
    }

    /// Softmax along the last axis, max-subtracted for stability.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let d = av.cols();
        if d == 0 {
            return Err(Error::EmptyInput("softmax over empty axis".into()));
        }
        let mut out = Vec::with_capacity(av.numel());
        for chunk in av.data().chunks(d) {
            let m = chunk.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<T> = chunk.iter().map(|&v| (v - m).exp()).collect();
            let s: T = exps.iter().fold(T::zero(), |acc, &v| acc + v);
            out.extend(exps.into_iter().map(|v| v / s));
        }
        let t = Tensor::from_vec(av.shape().to_vec(), out)?;
        self.push("softmax_last", t, Op::SoftmaxLast(a))
    }

    /// Layer normalization over the last axis with 1/D variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.numel() != d || bv.numel() != d {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm gain/bias length {}/{} vs last axis {}",
                gv.numel(),
                bv.numel(),
                d
            )));
        }
        let dd = T::from_usize(d).unwrap();
        let mut out = Vec::with_capacity(xv.numel());
        for chunk in xv.data().chunks(d) {
            let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) / dd;
            let var = chunk
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / dd;
            let inv = (var + eps).sqrt().recip();
            for (i, &v) in chunk.iter().enumerate() {
                out.push((v - mean) * inv * gv.data()[i] + bv.data()[i]);
            }
        }
        let t = Tensor::from_vec(xv.shape().to_vec(), out)?;
        self.push("layer_norm", t, Op::LayerNorm { x, gain, bias, eps })
    }

    /// Row gather from an embedding table; gradient scatter-adds.
    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::IndexOutOfRange(format!(
                "embedding index {bad} out of vocabulary size {v}"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(tv.row_slice(i));
        }
        let t = Tensor::from_vec(vec![indices.len(), d], out)?;
        self.push("embed", t, Op::Embed { table, indices: indices.to_vec() })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x)?;
        if start + len > m {
            return Err(Error::IndexOutOfRange(format!(
                "row slice {start}..{} of {m} rows",
                start + len
            )));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::from_vec(vec![len, n], data)?;
        self.push("slice_rows", t, Op::SliceRows { x, start, len })
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x)?;
        if start + len > n {
            return Err(Error::IndexOutOfRange(format!(
                "col slice {start}..{} of {n} cols",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let t = Tensor::from_vec(vec![m, len], out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start, len })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_rows of nothing".into()));
        }
        let (_, n) = self.mat_dims(parts[0])?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, n2) = self.mat_dims(p)?;
            if n2 != n {
                return Err(Error::ShapeMismatch(format!(
                    "concat_rows width {n2} vs {n}"
                )));
            }
            rows += m;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_vec(vec![rows, n], out)?;
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols of nothing".into()));
        }
        let (m, _) = self.mat_dims(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = self.mat_dims(p)?;
            if m2 != m {
                return Err(Error::ShapeMismatch(format!(
                    "concat_cols height {m2} vs {m}"
                )));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &n) in parts.iter().zip(&widths) {
                let pv = self.value(p).data();
                out.extend_from_slice(&pv[i * n..(i + 1) * n]);
            }
        }
        let t = Tensor::from_vec(vec![m, total], out)?;
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::EmptyInput("mean of empty tensor".into()));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v)
            / T::from_usize(n).unwrap();
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Class-weighted softmax cross-entropy, mean over the batch.
    /// `weights` has one entry per class; example i is weighted by
    /// `weights[targets[i]]`.
    pub fn weighted_ce(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (b, c) = self.mat_dims(logits)?;
        if targets.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for batch {b}",
                targets.len()
            )));
        }
        if weights.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} class weights for {c} classes",
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::IndexOutOfRange(format!(
                "target class {bad} out of {c}"
            )));
        }
        let lv = self.value(logits).data();
        let bb = T::from_usize(b).unwrap();
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row
                .iter()
                .fold(T::zero(), |acc, &v| acc + (v - m).exp())
                .ln()
                + m;
            loss = loss + weights[t] * (lse - row[t]);
        }
        loss = loss / bb;
        self.push(
            "weighted_ce",
            Tensor::scalar(loss),
            Op::WeightedCe { logits, targets: targets.to_vec(), weights: weights.to_vec() },
        )
    }

    /// Class-weighted sigmoid binary cross-entropy, mean over batch×classes.
    /// `targets` is a flat row-major {0,1} matrix matching `logits`.
    pub fn weighted_bce(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let (b, c) = self.mat_dims(logits)?;
        if targets.len() != b * c {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {b}x{c} logits",
                targets.len()
            )));
        }
        if weights.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} class weights for {c} classes",
                weights.len()
            )));
        }
        let lv = self.value(logits).data();
        let n = T::from_usize(b * c).unwrap();
        let mut loss = T::zero();
        for (i, (&l, &t)) in lv.iter().zip(targets).enumerate() {
            // softplus(l) - t*l == -t*log σ(l) - (1-t)*log(1-σ(l))
            loss = loss + weights[i % c] * (softplus(l) - t * l);
        }
        loss = loss / n;
        self.push(
            "weighted_bce",
            Tensor::scalar(loss),
            Op::WeightedBce { logits, targets: targets.to_vec(), weights: weights.to_vec() },
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.numel()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // keep gradients only where they are meaningful targets
        for (id, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad && id != loss.0 {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    /// Reduce an upstream gradient shaped like `big` down to `small`'s
    /// shape by summing over the tiled leading axes.
    fn reduce_to(&self, g: &Tensor<T>, small_shape: &[usize]) -> Tensor<T> {
        if g.shape() == small_shape {
            return g.clone();
        }
        let n: usize = small_shape.iter().product();
        let mut out = Tensor::zeros(small_shape.to_vec());
        for (i, &v) in g.data().iter().enumerate() {
            let j = if n == 0 { 0 } else { i % n };
            out.data_mut()[j] = out.data_mut()[j] + v;
        }
        out
    }

    fn propagate(
        &self,
        id: usize,
        g: &Tensor<T>,
        grads: &mut Vec<Option<Tensor<T>>>,
    ) -> Result<()> {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.mat_dims(*a)?;
                let (_, n) = self.mat_dims(*b)?;
                let gv = g.data();
                if needs(*a) {
                    // ga = g · bᵀ
                    let bv = self.value(*b).data();
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gv[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] = ga[i * k + p] + gij * bv[p * n + j];
                            }
                        }
                    }
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), ga)?);
                }
                if needs(*b) {
                    // gb = aᵀ · g
                    let av = self.value(*a).data();
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] = gb[p * n + j] + aip * gv[i * n + j];
                            }
                        }
                    }
                    Self::accumulate(grads, *b, Tensor::from_vec(self.value(*b).shape().to_vec(), gb)?);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (n, m) = self.mat_dims(Var(id))?;
                    let gv = g.data();
                    let mut ga = vec![T::zero(); m * n];
                    for i in 0..n {
                        for j in 0..m {
                            ga[j * n + i] = gv[i * m + j];
                        }
                    }
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), ga)?);
                }
            }
            Op::Add(a, b) => {
                for &p in &[*a, *b] {
                    if needs(p) {
                        let d = self.reduce_to(g, self.value(p).shape());
                        Self::accumulate(grads, p, d);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (&p, &other) in [(a, b), (b, a)] {
                    if needs(p) {
                        let ov = self.value(other);
                        let on = ov.numel().max(1);
                        let pn = self.value(p).numel().max(1);
                        let mut prod = Tensor::zeros(g.shape().to_vec());
                        for (i, slot) in prod.data_mut().iter_mut().enumerate() {
                            *slot = g.data()[i] * ov.data()[i % on];
                        }
                        let d = if prod.numel() == pn && g.shape() == self.value(p).shape() {
                            prod
                        } else {
                            self.reduce_to(&prod, self.value(p).shape())
                        };
                        Self::accumulate(grads, p, d);
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    Self::accumulate(grads, *a, g.map(|v| v * *c));
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let xv = self.value(*a).data();
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), d)?);
                }
            }
            Op::Gelu(a) => {
                if needs(*a) {
                    let xv = self.value(*a).data();
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &x)| gv * gelu_deriv(x))
                        .collect();
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), d)?);
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let sv = self.value(Var(id)).data();
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(sv)
                        .map(|(&gv, &s)| gv * s * (T::one() - s))
                        .collect();
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), d)?);
                }
            }
            Op::Exp(a) => {
                if needs(*a) {
                    let ev = self.value(Var(id)).data();
                    let d: Vec<T> = g.data().iter().zip(ev).map(|(&gv, &e)| gv * e).collect();
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), d)?);
                }
            }
            Op::SoftmaxLast(a) => {
                if needs(*a) {
                    let sv = self.value(Var(id));
                    let d = sv.cols();
                    let mut out = Vec::with_capacity(sv.numel());
                    for (schunk, gchunk) in sv.data().chunks(d).zip(g.data().chunks(d)) {
                        let dot = schunk
                            .iter()
                            .zip(gchunk)
                            .fold(T::zero(), |acc, (&s, &gv)| acc + s * gv);
                        out.extend(
                            schunk
                                .iter()
                                .zip(gchunk)
                                .map(|(&s, &gv)| s * (gv - dot)),
                        );
                    }
                    Self::accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), out)?);
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let dd = T::from_usize(d).unwrap();
                let gv = self.value(*gain).data();
                let mut gx = Vec::with_capacity(xv.numel());
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (chunk, gchunk) in xv.data().chunks(d).zip(g.data().chunks(d)) {
                    let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) / dd;
                    let var = chunk
                        .iter()
                        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                        / dd;
                    let inv = (var + *eps).sqrt().recip();
                    let xhat: Vec<T> = chunk.iter().map(|&v| (v - mean) * inv).collect();
                    let gg: Vec<T> = gchunk.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                    let mean_gg = gg.iter().fold(T::zero(), |a, &v| a + v) / dd;
                    let mean_ggx = gg
                        .iter()
                        .zip(&xhat)
                        .fold(T::zero(), |a, (&u, &h)| a + u * h)
                        / dd;
                    for i in 0..d {
                        gx.push((gg[i] - mean_gg - xhat[i] * mean_ggx) * inv);
                        ggain[i] = ggain[i] + gchunk[i] * xhat[i];
                        gbias[i] = gbias[i] + gchunk[i];
                    }
                }
                if needs(*x) {
                    Self::accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), gx)?);
                }
                if needs(*gain) {
                    Self::accumulate(grads, *gain, Tensor::from_vec(self.value(*gain).shape().to_vec(), ggain)?);
                }
                if needs(*bias) {
                    Self::accumulate(grads, *bias, Tensor::from_vec(self.value(*bias).shape().to_vec(), gbias)?);
                }
            }
            Op::Embed { table, indices } => {
                if needs(*table) {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut gt = Tensor::zeros(tv.shape().to_vec());
                    for (row, &idx) in indices.iter().enumerate() {
                        let src = &g.data()[row * d..(row + 1) * d];
                        let dst = &mut gt.data_mut()[idx * d..(idx + 1) * d];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a = *a + b;
                        }
                    }
                    Self::accumulate(grads, *table, gt);
                }
            }
            Op::SliceRows { x, start, len } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let n = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape().to_vec());
                    gx.data_mut()[start * n..(start + len) * n].copy_from_slice(g.data());
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::SliceCols { x, start, len } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let (m, n) = (xv.rows(), xv.cols());
                    let mut gx = Tensor::zeros(xv.shape().to_vec());
                    for i in 0..m {
                        for j in 0..*len {
                            gx.data_mut()[i * n + start + j] = g.data()[i * len + j];
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let n = g.cols();
                for &p in parts {
                    let rows = self.value(p).rows();
                    if needs(p) {
                        let d = g.data()[offset * n..(offset + rows) * n].to_vec();
                        Self::accumulate(grads, p, Tensor::from_vec(self.value(p).shape().to_vec(), d)?);
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(m * n);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + n]);
                        }
                        Self::accumulate(grads, p, Tensor::from_vec(self.value(p).shape().to_vec(), d)?);
                    }
                    offset += n;
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let d = Tensor::full(self.value(*a).shape().to_vec(), g.item());
                    Self::accumulate(grads, *a, d);
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let n = T::from_usize(self.value(*a).numel()).unwrap();
                    let d = Tensor::full(self.value(*a).shape().to_vec(), g.item() / n);
                    Self::accumulate(grads, *a, d);
                }
            }
            Op::WeightedCe { logits, targets, weights } => {
                if needs(*logits) {
                    let lv = self.value(*logits);
                    let (b, c) = (lv.rows(), lv.cols());
                    let bb = T::from_usize(b).unwrap();
                    let gs = g.item();
                    let mut gl = Vec::with_capacity(b * c);
                    for (i, &t) in targets.iter().enumerate() {
                        let row = lv.row_slice(i);
                        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
                        let s = exps.iter().fold(T::zero(), |a, &v| a + v);
                        let w = weights[t] * gs / bb;
                        for (j, &e) in exps.iter().enumerate() {
                            let p = e / s;
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl.push(w * (p - onehot));
                        }
                    }
                    Self::accumulate(grads, *logits, Tensor::from_vec(lv.shape().to_vec(), gl)?);
                }
            }
            Op::WeightedBce { logits, targets, weights } => {
                if needs(*logits) {
                    let lv = self.value(*logits);
                    let c = lv.cols();
                    let n = T::from_usize(lv.numel()).unwrap();
                    let gs = g.item();
                    let gl: Vec<T> = lv
                        .data()
                        .iter()
                        .zip(targets)
                        .enumerate()
                        .map(|(i, (&l, &t))| weights[i % c] * gs / n * (sigmoid_fwd(l) - t))
                        .collect();
                    Self::accumulate(grads, *logits, Tensor::from_vec(lv.shape().to_vec(), gl)?);
                }
            }
        }
        Ok(())
    }
}

fn sigmoid_fwd<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let k = T::c(0.7978845608028654); // √(2/π)
    let a = T::c(0.044715);
    half * x * (T::one() + (k * (x + a * x * x * x)).tanh())
}

fn gelu_deriv<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let k = T::c(0.7978845608028654);
    let a = T::c(0.044715);
    let three = T::c(3.0);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
}
