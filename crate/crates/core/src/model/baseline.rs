//! Plain LSTM baseline: every token (NUM and OP alike) is embedded from one
//! 14-row table and run through the LSTM; the last `n` steps are projected
//! to predictions. There is no stack.

use crate::autodiff::{Graph, Tensor, Var};
use crate::model::{ModelError, Result};
use crate::nn::{Bound, Embedding, Initializer, Linear, LstmCell, LstmState, ParamStore};
use crate::rpn::{Expression, Token, NUM_VOCAB, OP_VOCAB};

pub const VOCAB: usize = NUM_VOCAB + OP_VOCAB;

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    hidden: usize,
    store: ParamStore,
    embedding: Embedding,
    lstm: Vec<LstmCell>,
    projection: Linear,
    init_h: Vec<Tensor>,
    init_c: Vec<Tensor>,
}

/// Trainable parameters for hidden size `h` and `layers` stacked cells.
pub fn param_count(h: usize, layers: usize) -> usize {
    Embedding::param_count(VOCAB, h) + layers * LstmCell::param_count(h, h) + Linear::param_count(h, 1)
}

impl Baseline {
    pub fn new(hidden: usize, layers: usize, seed: u64) -> Self {
        assert!(layers >= 1, "baseline needs at least one layer");
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let embedding = Embedding::new(&mut store, &mut init, "token_embedding", VOCAB, hidden);
        let lstm = (0..layers)
            .map(|l| LstmCell::new(&mut store, &mut init, &format!("lstm{l}"), hidden, hidden))
            .collect();
        let projection = Linear::new(&mut store, &mut init, "projection", hidden, 1);
        let mut init_h = Vec::with_capacity(layers);
        let mut init_c = Vec::with_capacity(layers);
        for _ in 0..layers {
            init_h.push(init.fan_in(&[hidden], hidden));
            init_c.push(init.fan_in(&[hidden], hidden));
        }
        Self {
            hidden,
            store,
            embedding,
            lstm,
            projection,
            init_h,
            init_c,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, (h, c)) in self.init_h.iter().zip(&self.init_c).enumerate() {
            out.push((format!("state{l}.h0"), h));
            out.push((format!("state{l}.c0"), c));
        }
        out
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (l, (h, c)) in self.init_h.iter_mut().zip(self.init_c.iter_mut()).enumerate() {
            out.push((format!("state{l}.h0"), h));
            out.push((format!("state{l}.c0"), c));
        }
        out
    }

    /// Runs the LSTM stack over `tokens`; returns the top-layer output at
    /// every step.
    pub fn forward_tokens(&self, g: &mut Graph, bound: &Bound, tokens: &[Token]) -> Result<Vec<Var>> {
        let mut states: Vec<LstmState> = self
            .init_h
            .iter()
            .zip(&self.init_c)
            .map(|(h, c)| LstmState {
                h: g.leaf(h.clone()),
                c: g.leaf(c.clone()),
            })
            .collect();
        let mut outputs = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let mut x = self.embedding.forward(g, bound, tok.flat_index())?;
            for (cell, state) in self.lstm.iter().zip(states.iter_mut()) {
                *state = cell.forward(g, bound, x, *state)?;
                x = state.h;
            }
            outputs.push(x);
        }
        Ok(outputs)
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, expr: &Expression) -> Result<Vec<Var>> {
        let n = expr.n();
        let outputs = self.forward_tokens(g, bound, expr.tokens())?;
        if outputs.len() != 2 * n + 1 {
            return Err(ModelError::Contract("baseline: token count mismatch".into()));
        }
        outputs[n + 1..]
            .iter()
            .map(|&h| Ok(self.projection.forward(g, bound, h)?))
            .collect()
    }
}
