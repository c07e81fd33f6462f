use crate::error::{Error, Result};

use super::{cosine, dot, matmul_values, ParamId, ParamStore, Tensor};

static EMPTY_STORE: ParamStore = ParamStore::new();

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScalarMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Maximum(Var, Var),
    Softmax(Var),
    Dot(Var, Var),
    Cosine(Var, Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Row(Var, usize),
    Sum(Var),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// A recording of primitive operations, replayed in reverse by [`Graph::backward`].
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A graph is confined to one thread; build a fresh one per forward pass.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    tanh_fault: bool,
}

impl Graph<'static> {
    /// A graph with no trainable parameters.
    pub fn standalone() -> Self {
        Graph::new(&EMPTY_STORE)
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            tanh_fault: false,
        }
    }

    /// Negative-control hook: makes the recorded tanh derivative wrong.
    #[doc(hidden)]
    pub fn inject_tanh_gradient_fault(&mut self) {
        self.tanh_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.store.value(*id),
            Node {
                value: Some(t), ..
            } => t,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_raw(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(Tensor { shape, data }, op)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = matmul_values(self.value(a), self.value(b))?;
        Ok(self.push_raw(shape, data, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push_raw(shape, data, op))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let shape = t.shape().to_vec();
        self.push_raw(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    /// Multiplies `x` by the one-element tensor `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(Error::dim("scalar_mul", ts.shape(), self.shape(x)));
        }
        let k = ts.data()[0];
        Ok(self.map(x, |v| v * k, Op::ScalarMul(s, x)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Softmax over a vector, shifted by its maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::dim("softmax", t.shape(), &[t.len()]));
        }
        let probs = super::softmax(t.data())?;
        Ok(self.push_raw(vec![probs.len()], probs, Op::Softmax(a)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || ta.shape() != tb.shape() {
            return Err(Error::dim("dot", ta.shape(), tb.shape()));
        }
        let v = dot(ta.data(), tb.data());
        Ok(self.push_raw(Vec::new(), vec![v], Op::Dot(a, b)))
    }

    /// Cosine similarity of two vectors, defined as 0 when either norm is 0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || ta.shape() != tb.shape() {
            return Err(Error::dim("cosine", ta.shape(), tb.shape()));
        }
        let v = cosine(ta.data(), tb.data());
        Ok(self.push_raw(Vec::new(), vec![v], Op::Cosine(a, b)))
    }

    /// Joins scalars and vectors end to end into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(Error::dim("concat", t.shape(), &[t.len()]));
            }
            data.extend_from_slice(t.data());
        }
        if parts.is_empty() {
            return Err(Error::Validation("concat of nothing".into()));
        }
        Ok(self.push_raw(vec![data.len()], data, Op::Concat(parts.to_vec())))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Validation("stack of nothing".into()));
        };
        let inner = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(first).len());
        for &p in parts {
            let t = self.value(p);
            if t.shape() != inner.as_slice() {
                return Err(Error::dim("stack", &inner, t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        Ok(self.push_raw(shape, data, Op::Stack(parts.to_vec())))
    }

    /// Row `i` of a matrix (an embedding lookup when `a` is an embedding table).
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || i >= t.shape()[0] {
            return Err(Error::dim("row", t.shape(), &[i]));
        }
        let data = t.row(i).to_vec();
        Ok(self.push_raw(vec![data.len()], data, Op::Row(a, i)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push_raw(Vec::new(), vec![v], Op::Sum(a))
    }

    /// `-log softmax(logits)[target]`, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 || target >= t.len() {
            return Err(Error::dim("cross_entropy", t.shape(), &[target]));
        }
        if !t.all_finite() {
            return Err(Error::Numeric("cross_entropy logits are not finite".into()));
        }
        let v = log_sum_exp(t.data()) - t.data()[target];
        Ok(self.push_raw(Vec::new(), vec![v], Op::CrossEntropy(logits, target)))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let mut params = Vec::new();
        let mut node_grads = Vec::with_capacity(n);
        for (idx, g) in grads.into_iter().enumerate() {
            let t = g.map(|data| Tensor {
                shape: self.value(Var(idx)).shape().to_vec(),
                data,
            });
            if let (Op::Param(id), Some(_)) = (&self.nodes[idx].op, &t) {
                params.push((*id, idx));
            }
            node_grads.push(t);
        }
        Ok(Gradients {
            nodes: node_grads,
            params,
        })
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.value(Var(idx)).data();
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                match (ta.shape(), tb.shape()) {
                    (&[m, k], &[_, n]) => {
                        // dA = dC Bᵀ, dB = Aᵀ dC
                        let ga = self.slot(grads, *a);
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &tb.data()[p * n..(p + 1) * n];
                                ga[i * k + p] += dot(&gy[i * n..(i + 1) * n], brow);
                            }
                        }
                        let gb = self.slot(grads, *b);
                        for i in 0..m {
                            for p in 0..k {
                                let av = ta.data()[i * k + p];
                                for j in 0..n {
                                    gb[p * n + j] += av * gy[i * n + j];
                                }
                            }
                        }
                    }
                    (&[m, k], &[_]) => {
                        let ga = self.slot(grads, *a);
                        for i in 0..m {
                            if gy[i] == 0.0 {
                                continue;
                            }
                            for (g, bv) in ga[i * k..(i + 1) * k].iter_mut().zip(tb.data()) {
                                *g += gy[i] * bv;
                            }
                        }
                        let gb = self.slot(grads, *b);
                        for i in 0..m {
                            for (g, av) in gb.iter_mut().zip(&ta.data()[i * k..(i + 1) * k]) {
                                *g += gy[i] * av;
                            }
                        }
                    }
                    (&[k], &[_, n]) => {
                        let ga = self.slot(grads, *a);
                        for p in 0..k {
                            ga[p] += dot(&tb.data()[p * n..(p + 1) * n], gy);
                        }
                        let gb = self.slot(grads, *b);
                        for p in 0..k {
                            let av = ta.data()[p];
                            for j in 0..n {
                                gb[p * n + j] += av * gy[j];
                            }
                        }
                    }
                    _ => unreachable!("matmul shapes validated on record"),
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), gy);
                add_into(self.slot(grads, *b), gy);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), gy);
                for (g, d) in self.slot(grads, *b).iter_mut().zip(gy) {
                    *g -= d;
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                for ((g, d), bv) in self.slot(grads, *a).iter_mut().zip(gy).zip(tb) {
                    *g += d * bv;
                }
                for ((g, d), av) in self.slot(grads, *b).iter_mut().zip(gy).zip(ta) {
                    *g += d * av;
                }
            }
            Op::Scale(a, k) => {
                for (g, d) in self.slot(grads, *a).iter_mut().zip(gy) {
                    *g += d * k;
                }
            }
            Op::ScalarMul(s, x) => {
                let k = self.value(*s).data()[0];
                let tx = self.value(*x).data();
                self.slot(grads, *s)[0] += dot(gy, tx);
                for (g, d) in self.slot(grads, *x).iter_mut().zip(gy) {
                    *g += d * k;
                }
            }
            Op::Tanh(a) => {
                let fault = self.tanh_fault;
                for ((g, d), yv) in self.slot(grads, *a).iter_mut().zip(gy).zip(y) {
                    let local = if fault { 1.0 - yv } else { 1.0 - yv * yv };
                    *g += d * local;
                }
            }
            Op::Sigmoid(a) => {
                for ((g, d), yv) in self.slot(grads, *a).iter_mut().zip(gy).zip(y) {
                    *g += d * yv * (1.0 - yv);
                }
            }
            Op::Maximum(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let take_a: Vec<bool> = ta.iter().zip(tb).map(|(x, y)| x >= y).collect();
                for ((g, d), &t) in self.slot(grads, *a).iter_mut().zip(gy).zip(&take_a) {
                    if t {
                        *g += d;
                    }
                }
                for ((g, d), &t) in self.slot(grads, *b).iter_mut().zip(gy).zip(&take_a) {
                    if !t {
                        *g += d;
                    }
                }
            }
            Op::Softmax(a) => {
                let inner = dot(y, gy);
                for ((g, d), yv) in self.slot(grads, *a).iter_mut().zip(gy).zip(y) {
                    *g += yv * (d - inner);
                }
            }
            Op::Dot(a, b) => {
                let d = gy[0];
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                for (g, bv) in self.slot(grads, *a).iter_mut().zip(tb) {
                    *g += d * bv;
                }
                for (g, av) in self.slot(grads, *b).iter_mut().zip(ta) {
                    *g += d * av;
                }
            }
            Op::Cosine(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (dot(ta, ta).sqrt(), dot(tb, tb).sqrt());
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                let c = y[0];
                let d = gy[0];
                // ∂c/∂a = b/(|a||b|) − c·a/|a|²
                for ((g, av), bv) in self.slot(grads, *a).iter_mut().zip(ta).zip(tb) {
                    *g += d * (bv / (na * nb) - c * av / (na * na));
                }
                for ((g, av), bv) in self.slot(grads, *b).iter_mut().zip(ta).zip(tb) {
                    *g += d * (av / (na * nb) - c * bv / (nb * nb));
                }
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    add_into(self.slot(grads, *p), &gy[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Row(a, i) => {
                let cols = self.shape(*a)[1];
                add_into(&mut self.slot(grads, *a)[i * cols..(i + 1) * cols], gy);
            }
            Op::Sum(a) => {
                let d = gy[0];
                self.slot(grads, *a).iter_mut().for_each(|g| *g += d);
            }
            Op::CrossEntropy(logits, target) => {
                let d = gy[0];
                let x = self.value(*logits).data();
                let lse = log_sum_exp(x);
                let g = self.slot(grads, *logits);
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * (xi - lse).exp();
                }
                g[*target] -= d;
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let len = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients in node order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, idx)| self.nodes[*idx].as_ref().map(|t| (*id, t)))
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
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

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
