//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] is the tape: every primitive applied through it appends one
//! node holding the output value and the handles of its inputs. Node values
//! double as the saved activations needed by the backward pass. Graphs are
//! cheap to build and are thrown away after each training step.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Dimension {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: index {index} out of range (len {len})")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::Contract(format!(
                "shape must be a non-empty list of positive sizes, got {shape:?}"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Dimension {
                op: "tensor",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()]).expect("valid zero shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive set understood by [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sigmoid,
    Tanh,
    EmbeddingRow { row: usize },
    Sum,
    Mean,
    Abs,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::EmbeddingRow { .. } => "embedding_row",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    EmbeddingRow { table: Var, row: usize },
    Sum(Var),
    Mean(Var),
    Abs(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape. Single-threaded by construction; build one per
/// forward/backward pass.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Persistent leaf gradients, indexed like `nodes`. Accumulate across
    /// `backward` calls until [`Graph::zero_grad`].
    leaf_grads: Vec<Option<Vec<f64>>>,
}

/// `(outer, dim, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            leaf_grads: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.leaf_grads.push(None);
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
        matches!(self.nodes[var.0].op, Op::Leaf)
    }

    /// Accumulated gradient of a leaf; zeros if no backward pass reached it.
    pub fn grad(&self, var: Var) -> Vec<f64> {
        match &self.leaf_grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[var.0].value.len()],
        }
    }

    /// Borrowing variant of [`Graph::grad`]; `None` means zero.
    pub fn grad_ref(&self, var: Var) -> Option<&[f64]> {
        self.leaf_grads[var.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn check_var(&self, op: &'static str, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::Index {
                op,
                index: var.0,
                len: self.nodes.len(),
            })
        }
    }

    fn dim_err(&self, op: &'static str, vars: &[Var]) -> TensorError {
        TensorError::Dimension {
            op,
            shapes: vars.iter().map(|&v| self.shape(v).to_vec()).collect(),
        }
    }

    /// Applies `primitive` to `inputs` and records it on the tape.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var> {
        let name = primitive.name();
        for &v in inputs {
            self.check_var(name, v)?;
        }
        let arity = match primitive {
            Primitive::Concat { .. } => None,
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => {
                Some(2)
            }
            _ => Some(1),
        };
        if let Some(k) = arity {
            if inputs.len() != k {
                return Err(TensorError::Contract(format!(
                    "{name} expects {k} inputs, got {}",
                    inputs.len()
                )));
            }
        }
        match primitive {
            Primitive::Add => self.binary_elementwise(name, inputs[0], inputs[1], |a, b| a + b, Op::Add),
            Primitive::Sub => self.binary_elementwise(name, inputs[0], inputs[1], |a, b| a - b, Op::Sub),
            Primitive::Mul => self.binary_elementwise(name, inputs[0], inputs[1], |a, b| a * b, Op::Mul),
            Primitive::Div => self.binary_elementwise(name, inputs[0], inputs[1], |a, b| a / b, Op::Div),
            Primitive::MatMul => self.matmul_impl(inputs[0], inputs[1]),
            Primitive::Concat { axis } => self.concat_impl(inputs, axis),
            Primitive::Slice { axis, start, len } => self.slice_impl(inputs[0], axis, start, len),
            Primitive::Sigmoid => Ok(self.unary_map(inputs[0], sigmoid, Op::Sigmoid)),
            Primitive::Tanh => Ok(self.unary_map(inputs[0], f64::tanh, Op::Tanh)),
            Primitive::Abs => Ok(self.unary_map(inputs[0], f64::abs, Op::Abs)),
            Primitive::EmbeddingRow { row } => self.embedding_impl(inputs[0], row),
            Primitive::Sum => {
                let s = self.value(inputs[0]).data().iter().sum();
                Ok(self.push(Tensor::scalar(s), Op::Sum(inputs[0])))
            }
            Primitive::Mean => {
                let t = self.value(inputs[0]);
                let m = t.data().iter().sum::<f64>() / t.len() as f64;
                Ok(self.push(Tensor::scalar(m), Op::Mean(inputs[0])))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, inputs)
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[input])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn embedding_row(&mut self, table: Var, row: usize) -> Result<Var> {
        self.apply(Primitive::EmbeddingRow { row }, &[table])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[x])
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(name, &[a, b]));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(value, op(a, b)))
    }

    fn unary_map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: fn(Var) -> Op) -> Var {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op(x))
    }

    fn matmul_impl(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let value = match (sa, sb) {
            (&[m, k], &[k2]) if k == k2 => {
                let (w, x) = (self.value(a).data(), self.value(b).data());
                let data = w.chunks_exact(k).map(|row| dot(row, x)).collect();
                Tensor {
                    shape: vec![m],
                    data,
                }
            }
            (&[m, k], &[k2, n]) if k == k2 => {
                let (l, r) = (self.value(a).data(), self.value(b).data());
                let mut data = vec![0.0; m * n];
                for (out_row, l_row) in data.chunks_exact_mut(n).zip(l.chunks_exact(k)) {
                    for (&lv, r_row) in l_row.iter().zip(r.chunks_exact(n)) {
                        axpy(lv, r_row, out_row);
                    }
                }
                Tensor {
                    shape: vec![m, n],
                    data,
                }
            }
            _ => return Err(self.dim_err("matmul", &[a, b])),
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn concat_impl(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(self.dim_err("concat", inputs));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.dim_err("concat", inputs));
            }
            total += s[axis];
        }
        let mut shape = base;
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor { shape, data };
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    fn slice_impl(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src_shape = self.shape(x).to_vec();
        if axis >= src_shape.len() || len == 0 || start + len > src_shape[axis] {
            return Err(TensorError::Dimension {
                op: "slice",
                shapes: vec![src_shape, vec![start, len]],
            });
        }
        let (outer, dim, inner) = split_axis(&src_shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = src_shape;
        shape[axis] = len;
        let value = Tensor { shape, data };
        Ok(self.push(value, Op::Slice { input: x, axis, start }))
    }

    fn embedding_impl(&mut self, table: Var, row: usize) -> Result<Var> {
        let &[rows, dim] = self.shape(table) else {
            return Err(self.dim_err("embedding_row", &[table]));
        };
        if row >= rows {
            return Err(TensorError::Index {
                op: "embedding_row",
                index: row,
                len: rows,
            });
        }
        let data = self.value(table).data()[row * dim..(row + 1) * dim].to_vec();
        Ok(self.push(Tensor::vector(data), Op::EmbeddingRow { table, row }))
    }

    /// Backpropagates from a one-element `loss`, adding dLoss/dLeaf into
    /// every reachable leaf's persistent gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_var("backward", loss)?;
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, &self.nodes, *a, |d| axpy(1.0, &g, d));
                    accumulate(&mut adj, &self.nodes, *b, |d| axpy(1.0, &g, d));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, &self.nodes, *a, |d| axpy(1.0, &g, d));
                    accumulate(&mut adj, &self.nodes, *b, |d| axpy(-1.0, &g, d));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    accumulate(&mut adj, &self.nodes, *a, |d| {
                        d.iter_mut().zip(&g).zip(vb).for_each(|((d, g), y)| *d += g * y)
                    });
                    accumulate(&mut adj, &self.nodes, *b, |d| {
                        d.iter_mut().zip(&g).zip(va).for_each(|((d, g), x)| *d += g * x)
                    });
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    accumulate(&mut adj, &self.nodes, *a, |d| {
                        d.iter_mut().zip(&g).zip(vb).for_each(|((d, g), y)| *d += g / y)
                    });
                    accumulate(&mut adj, &self.nodes, *b, |d| {
                        d.iter_mut()
                            .zip(&g)
                            .zip(va.iter().zip(vb))
                            .for_each(|((d, g), (x, y))| *d -= g * x / (y * y))
                    });
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let k = ta.shape[1];
                    if tb.shape.len() == 1 {
                        // y = W x
                        accumulate(&mut adj, &self.nodes, *a, |dw| {
                            for (dw_row, &gi) in dw.chunks_exact_mut(k).zip(&g) {
                                axpy(gi, tb.data(), dw_row);
                            }
                        });
                        accumulate(&mut adj, &self.nodes, *b, |dx| {
                            for (w_row, &gi) in ta.data().chunks_exact(k).zip(&g) {
                                axpy(gi, w_row, dx);
                            }
                        });
                    } else {
                        // Y = A B, dA = dY Bᵀ, dB = Aᵀ dY
                        let n = tb.shape[1];
                        accumulate(&mut adj, &self.nodes, *a, |da| {
                            for (da_row, g_row) in da.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                                for (da_ij, b_row) in da_row.iter_mut().zip(tb.data().chunks_exact(n)) {
                                    *da_ij += dot(g_row, b_row);
                                }
                            }
                        });
                        accumulate(&mut adj, &self.nodes, *b, |db| {
                            for (a_row, g_row) in ta.data().chunks_exact(k).zip(g.chunks_exact(n)) {
                                for (&a_ij, db_row) in a_row.iter().zip(db.chunks_exact_mut(n)) {
                                    axpy(a_ij, g_row, db_row);
                                }
                            }
                        });
                    }
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = split_axis(&node.value.shape, *axis);
                    let mut offset = 0;
                    for o in 0..outer {
                        for &v in inputs {
                            let block = self.nodes[v.0].value.shape[*axis] * inner;
                            let src = &g[offset..offset + block];
                            accumulate(&mut adj, &self.nodes, v, |d| {
                                axpy(1.0, src, &mut d[o * block..(o + 1) * block])
                            });
                            offset += block;
                        }
                    }
                }
                Op::Slice { input, axis, start } => {
                    let src_shape = &self.nodes[input.0].value.shape;
                    let (outer, dim, inner) = split_axis(src_shape, *axis);
                    let len = node.value.shape[*axis];
                    accumulate(&mut adj, &self.nodes, *input, |d| {
                        for o in 0..outer {
                            let base = (o * dim + start) * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            axpy(1.0, src, &mut d[base..base + len * inner]);
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    accumulate(&mut adj, &self.nodes, *x, |d| {
                        d.iter_mut().zip(&g).zip(y).for_each(|((d, g), y)| *d += g * y * (1.0 - y))
                    });
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    accumulate(&mut adj, &self.nodes, *x, |d| {
                        d.iter_mut().zip(&g).zip(y).for_each(|((d, g), y)| *d += g * (1.0 - y * y))
                    });
                }
                Op::Abs(x) => {
                    let xs = self.nodes[x.0].value.data();
                    accumulate(&mut adj, &self.nodes, *x, |d| {
                        d.iter_mut().zip(&g).zip(xs).for_each(|((d, g), x)| {
                            // subgradient 0 at the kink
                            if *x > 0.0 {
                                *d += g
                            } else if *x < 0.0 {
                                *d -= g
                            }
                        })
                    });
                }
                Op::EmbeddingRow { table, row } => {
                    let dim = node.value.len();
                    accumulate(&mut adj, &self.nodes, *table, |d| {
                        axpy(1.0, &g, &mut d[row * dim..(row + 1) * dim])
                    });
                }
                Op::Sum(x) => {
                    accumulate(&mut adj, &self.nodes, *x, |d| d.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::Mean(x) => {
                    let scale = g[0] / self.nodes[x.0].value.len() as f64;
                    accumulate(&mut adj, &self.nodes, *x, |d| d.iter_mut().for_each(|d| *d += scale));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], nodes: &[Node], var: Var, f: impl FnOnce(&mut [f64])) {
    let slot = adj[var.0].get_or_insert_with(|| vec![0.0; nodes[var.0].value.len()]);
    f(slot);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}
