//! The two RPN models and what they share: the L1 training objective, the
//! checkpoint mapping, and a prediction interface used by evaluation.

pub mod baseline;
pub mod ddrstack;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use baseline::Baseline;
pub use ddrstack::DdrStack;

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::{Bound, ParamStore};
use crate::rpn::{Expression, NUM_VOCAB, OP_VOCAB};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("activation stack underflow at token {position}")]
    StackUnderflow { position: usize },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    DdrStack,
    Baseline,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::DdrStack => "ddrstack",
            ModelKind::Baseline => "baseline",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ddrstack" => Ok(ModelKind::DdrStack),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(format!("unknown model `{s}` (expected ddrstack or baseline)")),
        }
    }
}

/// Architecture hyperparameters; together with a seed they fully determine
/// the initial parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    /// Stacked LSTM cells; only the baseline accepts more than one.
    pub layers: usize,
}

impl ModelConfig {
    pub fn ddrstack(hidden: usize) -> Self {
        Self {
            kind: ModelKind::DdrStack,
            hidden,
            layers: 1,
        }
    }

    pub fn baseline(hidden: usize, layers: usize) -> Self {
        Self {
            kind: ModelKind::Baseline,
            hidden,
            layers,
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::DdrStack => ddrstack::param_count(self.hidden),
            ModelKind::Baseline => baseline::param_count(self.hidden, self.layers),
        }
    }
}

/// Mean absolute error between per-OP predictions and answers.
pub fn l1_loss(g: &mut Graph, predictions: &[Var], answers: &[f64]) -> Result<Var> {
    if predictions.len() != answers.len() || answers.is_empty() {
        return Err(ModelError::Contract(format!(
            "loss: {} predictions for {} answers",
            predictions.len(),
            answers.len()
        )));
    }
    let p = g.concat(predictions, 0)?;
    let t = g.leaf(Tensor::vector(answers.to_vec()));
    let d = g.sub(p, t)?;
    let a = g.abs(d)?;
    Ok(g.mean(a)?)
}

/// Anything that maps an expression to one prediction per operator.
pub trait Predictor {
    fn predict(&self, expr: &Expression) -> Result<Vec<f64>>;
}

/// Either RPN model behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    DdrStack(DdrStack),
    Baseline(Baseline),
}

impl Network {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        match config.kind {
            ModelKind::DdrStack => {
                if config.layers != 1 {
                    return Err(ModelError::Contract("ddrstack has exactly one LSTM layer".into()));
                }
                Ok(Network::DdrStack(DdrStack::new(config.hidden, seed)))
            }
            ModelKind::Baseline => {
                if config.layers == 0 {
                    return Err(ModelError::Contract("baseline needs at least one layer".into()));
                }
                Ok(Network::Baseline(Baseline::new(config.hidden, config.layers, seed)))
            }
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Network::DdrStack(m) => ModelConfig::ddrstack(m.hidden()),
            Network::Baseline(m) => ModelConfig::baseline(m.hidden(), m.layers()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Network::DdrStack(m) => m.params(),
            Network::Baseline(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::DdrStack(m) => m.params_mut(),
            Network::Baseline(m) => m.params_mut(),
        }
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        match self {
            Network::DdrStack(m) => m.buffers(),
            Network::Baseline(m) => m.buffers(),
        }
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Network::DdrStack(m) => m.buffers_mut(),
            Network::Baseline(m) => m.buffers_mut(),
        }
    }

    /// One prediction variable per operator of `expr`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, expr: &Expression) -> Result<Vec<Var>> {
        match self {
            Network::DdrStack(m) => m.forward(g, bound, expr),
            Network::Baseline(m) => m.forward(g, bound, expr),
        }
    }

    /// Builds a fresh tape, runs forward + L1 loss, and returns it.
    pub fn loss_graph(&self, expr: &Expression) -> Result<(Graph, Bound, Var)> {
        let mut g = Graph::with_capacity(64 * expr.tokens().len() + self.params().len());
        let bound = self.params().bind(&mut g);
        let preds = self.forward(&mut g, &bound, expr)?;
        let loss = l1_loss(&mut g, &preds, expr.answers())?;
        Ok((g, bound, loss))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let cfg = self.config();
        let mut ck = Checkpoint::new();
        ck.set_meta("model", cfg.kind);
        ck.set_meta("hidden", cfg.hidden);
        ck.set_meta("layers", cfg.layers);
        ck.set_meta("num_vocab", NUM_VOCAB);
        ck.set_meta("op_vocab", OP_VOCAB);
        ck.set_meta("params", self.params().num_params());
        for p in self.params().params() {
            ck.push(p.name.clone(), p.value.clone());
        }
        for (name, t) in self.buffers() {
            ck.push(name, t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ck
            .meta("model")?
            .parse()
            .map_err(|e: String| ModelError::Contract(e))?;
        let num_vocab: usize = ck.meta_parse("num_vocab")?;
        let op_vocab: usize = ck.meta_parse("op_vocab")?;
        if num_vocab != NUM_VOCAB || op_vocab != OP_VOCAB {
            return Err(ModelError::Contract(format!(
                "checkpoint vocabulary ({num_vocab} NUM, {op_vocab} OP) does not match ({NUM_VOCAB}, {OP_VOCAB})"
            )));
        }
        let config = ModelConfig {
            kind,
            hidden: ck.meta_parse("hidden")?,
            layers: ck.meta_parse("layers")?,
        };
        let mut net = Network::new(config, 0)?;
        for p in net.params_mut().params_mut() {
            p.value = checked_tensor(ck, &p.name, p.value.shape())?;
        }
        for (name, t) in net.buffers_mut() {
            *t = checked_tensor(ck, &name, t.shape())?;
        }
        Ok(net)
    }
}

fn checked_tensor(ck: &Checkpoint, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = ck.tensor(name)?;
    if t.shape() != shape {
        return Err(ModelError::Contract(format!(
            "checkpoint tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

impl Predictor for Network {
    fn predict(&self, expr: &Expression) -> Result<Vec<f64>> {
        let mut g = Graph::with_capacity(64 * expr.tokens().len() + self.params().len());
        let bound = self.params().bind(&mut g);
        let preds = self.forward(&mut g, &bound, expr)?;
        preds
            .iter()
            .map(|&p| Ok(g.value(p).item()?))
            .collect()
    }
}
