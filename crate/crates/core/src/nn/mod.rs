//! Layer kit on top of [`crate::autodiff`]: parameter storage, linear and
//! embedding layers, a single LSTM cell, Adam, and the checkpoint format.

mod adam;
pub mod checkpoint;

pub use adam::{Adam, AdamConfig};

use crate::autodiff::{Graph, Result, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Owns every trainable tensor of a model, in registration order, together
/// with its accumulated gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Parameter leaves bound onto one [`Graph`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps leaves created elsewhere, in parameter registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.params.iter().map(|p| g.leaf(p.value.clone())).collect())
    }

    /// Adds `scale * dLoss/dParam` from `g` into the stored gradients.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound, scale: f64) {
        for (p, &var) in self.params.iter_mut().zip(&bound.0) {
            if let Some(d) = g.grad_ref(var) {
                p.grad.iter_mut().zip(d).for_each(|(acc, d)| *acc += scale * d);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Deterministic uniform(−k, k) initialiser.
#[derive(Debug, Clone)]
pub struct Initializer {
    rng: Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: Rng::new(seed) }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform(-bound, bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("initializer shape")
    }

    /// `k = 1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.uniform(shape, 1.0 / (fan_in as f64).sqrt())
    }
}

/// Fully connected layer `W x + b`, `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), init.fan_in(&[out_dim, in_dim], in_dim));
        let bias = store.add(format!("{name}.bias"), init.fan_in(&[out_dim], in_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        out_dim * in_dim + out_dim
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let wx = g.matmul(bound.var(self.weight), x)?;
        g.add(wx, bound.var(self.bias))
    }
}

/// Lookup table `[vocab, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    /// Rows are drawn from uniform(−1, 1): each output coordinate reads a
    /// single one-hot input, so fan_in is 1.
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, vocab: usize, dim: usize) -> Self {
        let table = store.add(format!("{name}.table"), init.fan_in(&[vocab, dim], 1));
        Self { table, vocab, dim }
    }

    pub fn param_count(vocab: usize, dim: usize) -> usize {
        vocab * dim
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, index: usize) -> Result<Var> {
        g.embedding_row(bound.var(self.table), index)
    }
}

/// Recurrent state `(h, c)`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single LSTM cell. Gate rows of `w_ih`, `w_hh` and `bias` are laid out in
/// the fixed order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, input: usize, hidden: usize) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), init.fan_in(&[4 * hidden, input], input));
        let w_hh = store.add(format!("{name}.w_hh"), init.fan_in(&[4 * hidden, hidden], hidden));
        let mut b = init.fan_in(&[4 * hidden], hidden);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        4 * ((input + hidden) * hidden + hidden)
    }

    /// One step; the output is the new hidden state.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let xi = g.matmul(bound.var(self.w_ih), x)?;
        let hh = g.matmul(bound.var(self.w_hh), state.h)?;
        let pre = g.add(xi, hh)?;
        let pre = g.add(pre, bound.var(self.bias))?;
        let i = g.slice(pre, 0, 0, h)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(pre, 0, h, h)?;
        let f = g.sigmoid(f)?;
        let cand = g.slice(pre, 0, 2 * h, h)?;
        let cand = g.tanh(cand)?;
        let o = g.slice(pre, 0, 3 * h, h)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
