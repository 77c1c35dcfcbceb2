//! LSTM controller with one learnable binary cell per operator and an
//! explicit stack of activations.
//!
//! Per token: a NUM is embedded; an OP pops the right then the left argument
//! and feeds `concat(left, right)` through its cell. The result goes through
//! one LSTM step and the step's output is pushed. After every OP step the
//! output is projected to a scalar prediction.

use crate::autodiff::{Graph, Tensor, Var};
use crate::model::{ModelError, Result};
use crate::nn::{Bound, Embedding, Initializer, Linear, LstmCell, LstmState, ParamStore};
use crate::rpn::{Expression, Token, NUM_VOCAB, OP_VOCAB};

/// Stack of activation handles with a record of its depth after each push
/// or pop sequence.
#[derive(Debug, Default)]
pub struct ActivationStack {
    entries: Vec<Var>,
}

impl ActivationStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: Var) {
        self.entries.push(v);
    }

    pub fn pop(&mut self, position: usize) -> Result<Var> {
        self.entries.pop().ok_or(ModelError::StackUnderflow { position })
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }
}

/// Output of [`DdrStack::forward_tokens`].
#[derive(Debug)]
pub struct StackForward {
    pub predictions: Vec<Var>,
    /// Stack depth after each token.
    pub depths: Vec<usize>,
    /// Value fed to the LSTM at each token (embedding or cell output).
    pub inputs: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdrStack {
    hidden: usize,
    store: ParamStore,
    embedding: Embedding,
    lstm: LstmCell,
    cells: [Linear; OP_VOCAB],
    projection: Linear,
    init_h: Tensor,
    init_c: Tensor,
}

/// Trainable parameters for hidden size `h`.
pub fn param_count(h: usize) -> usize {
    Embedding::param_count(NUM_VOCAB, h)
        + LstmCell::param_count(h, h)
        + OP_VOCAB * Linear::param_count(2 * h, h)
        + Linear::param_count(h, 1)
}

impl DdrStack {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let embedding = Embedding::new(&mut store, &mut init, "num_embedding", NUM_VOCAB, hidden);
        let lstm = LstmCell::new(&mut store, &mut init, "lstm", hidden, hidden);
        let cells = ["add", "sub", "mul", "div"]
            .map(|op| Linear::new(&mut store, &mut init, &format!("cell.{op}"), 2 * hidden, hidden));
        let projection = Linear::new(&mut store, &mut init, "projection", hidden, 1);
        // Fixed random initial LSTM state; not trained.
        let init_h = init.fan_in(&[hidden], hidden);
        let init_c = init.fan_in(&[hidden], hidden);
        Self {
            hidden,
            store,
            embedding,
            lstm,
            cells,
            projection,
            init_h,
            init_c,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn cell(&self, op_index: usize) -> &Linear {
        &self.cells[op_index]
    }

    pub(crate) fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![("state.h0".into(), &self.init_h), ("state.c0".into(), &self.init_c)]
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("state.h0".into(), &mut self.init_h), ("state.c0".into(), &mut self.init_c)]
    }

    /// Runs any stack-valid token prefix; predictions are emitted at every OP.
    pub fn forward_tokens(&self, g: &mut Graph, bound: &Bound, tokens: &[Token]) -> Result<StackForward> {
        let mut stack = ActivationStack::new();
        let mut state = LstmState {
            h: g.leaf(self.init_h.clone()),
            c: g.leaf(self.init_c.clone()),
        };
        let mut out = StackForward {
            predictions: Vec::new(),
            depths: Vec::with_capacity(tokens.len()),
            inputs: Vec::with_capacity(tokens.len()),
        };
        for (pos, tok) in tokens.iter().enumerate() {
            let x = match *tok {
                Token::Num(d) => self.embedding.forward(g, bound, d as usize)?,
                Token::Op(op) => {
                    let right = stack.pop(pos)?;
                    let left = stack.pop(pos)?;
                    let args = g.concat(&[left, right], 0)?;
                    self.cells[op.index()].forward(g, bound, args)?
                }
            };
            out.inputs.push(x);
            state = self.lstm.forward(g, bound, x, state)?;
            stack.push(state.h);
            out.depths.push(stack.depth());
            if tok.is_op() {
                out.predictions.push(self.projection.forward(g, bound, state.h)?);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, expr: &Expression) -> Result<Vec<Var>> {
        let run = self.forward_tokens(g, bound, expr.tokens())?;
        let n = expr.n();
        let expected = (1..=n + 1).chain((1..=n).rev());
        if !run.depths.iter().copied().eq(expected) {
            return Err(ModelError::Contract(format!(
                "unexpected stack depth trace {:?}",
                run.depths
            )));
        }
        Ok(run.predictions)
    }
}
