//! Reverse Polish notation expressions of the fixed form
//! `[NUM]*(n+1) [OP]*n`: generation, stack evaluation with intermediate
//! answers, and the plain-text dataset format.
//!
//! Dataset line format: tokens separated by single spaces (`0.0`..`0.9`,
//! `+ - * /`), then ` | `, then the `n` intermediate answers separated by
//! single spaces, each written as the shortest decimal that round-trips the
//! `f64`. Example: `0.4 0.8 / | 0.5`.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::rng::{derive_seed, Rng};

pub const NUM_VOCAB: usize = 10;
pub const OP_VOCAB: usize = 4;
pub const DEFAULT_BOUND: f64 = 100.0;
/// Resampling cap for a single expression.
pub const MAX_RESAMPLES: u64 = 1_000_000;
/// Expressions per independently seeded generation block.
pub const BLOCK_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum RpnError {
    #[error("malformed expression: {0}")]
    Malformed(String),
    #[error("division by zero at operator {op_position}")]
    DivisionByZero { op_position: usize },
    #[error("generator stuck: no valid n={n} expression after {attempts} samples")]
    GeneratorStuck { n: usize, attempts: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
}

impl Operator {
    pub const ALL: [Operator; OP_VOCAB] = [Operator::Add, Operator::Sub, Operator::Mul, Operator::Div];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Sub => '-',
            Operator::Mul => '*',
            Operator::Div => '/',
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            Operator::Div => a / b,
        }
    }
}

/// A NUM token carries a digit `d` meaning the value `d/10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Num(u8),
    Op(Operator),
}

impl Token {
    pub fn num(digit: u8) -> Self {
        assert!((digit as usize) < NUM_VOCAB, "NUM digit out of range: {digit}");
        Token::Num(digit)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Token::Num(d) => Some(d as f64 / 10.0),
            Token::Op(_) => None,
        }
    }

    /// Index into a flat 14-way vocabulary: NUM digits 0..9, then OPs 10..13.
    pub fn flat_index(self) -> usize {
        match self {
            Token::Num(d) => d as usize,
            Token::Op(op) => NUM_VOCAB + op.index(),
        }
    }

    pub fn is_op(self) -> bool {
        matches!(self, Token::Op(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(d) => write!(f, "0.{d}"),
            Token::Op(op) => write!(f, "{}", op.symbol()),
        }
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+" => Ok(Token::Op(Operator::Add)),
            "-" => Ok(Token::Op(Operator::Sub)),
            "*" => Ok(Token::Op(Operator::Mul)),
            "/" => Ok(Token::Op(Operator::Div)),
            _ => match s.as_bytes() {
                [b'0', b'.', d @ b'0'..=b'9'] => Ok(Token::Num(d - b'0')),
                _ => Err(format!("unknown token `{s}`")),
            },
        }
    }
}

pub fn parse_tokens(s: &str) -> Result<Vec<Token>, String> {
    s.split_whitespace().map(str::parse).collect()
}

pub fn format_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(Token::to_string).collect::<Vec<_>>().join(" ")
}

/// One instruction of the stack machine: push a value or apply an operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Push(f64),
    Apply(Operator),
}

impl From<Token> for Step {
    fn from(t: Token) -> Self {
        match t {
            Token::Num(_) => Step::Push(t.value().expect("num")),
            Token::Op(op) => Step::Apply(op),
        }
    }
}

/// Stack evaluation. Returns the result of every operator application in
/// order; on an operator the top of the stack is the right operand.
pub fn evaluate(tokens: &[Token]) -> Result<Vec<f64>, RpnError> {
    evaluate_steps(tokens.iter().map(|&t| Step::from(t)))
}

/// [`evaluate`] over arbitrary pushed values.
pub fn evaluate_steps(steps: impl IntoIterator<Item = Step>) -> Result<Vec<f64>, RpnError> {
    let mut stack: Vec<f64> = Vec::new();
    let mut answers = Vec::new();
    for (pos, step) in steps.into_iter().enumerate() {
        match step {
            Step::Push(v) => stack.push(v),
            Step::Apply(op) => {
                let (Some(b), Some(a)) = (stack.pop(), stack.pop()) else {
                    return Err(RpnError::Malformed(format!("stack underflow at token {pos}")));
                };
                if op == Operator::Div && b == 0.0 {
                    return Err(RpnError::DivisionByZero {
                        op_position: answers.len(),
                    });
                }
                let r = op.apply(a, b);
                answers.push(r);
                stack.push(r);
            }
        }
    }
    if stack.len() != 1 {
        return Err(RpnError::Malformed(format!(
            "{} values left on the stack",
            stack.len()
        )));
    }
    Ok(answers)
}

/// A `[NUM]*(n+1) [OP]*n` expression with its `n` intermediate answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    tokens: Vec<Token>,
    answers: Vec<f64>,
}

impl Expression {
    /// Validates the layout and evaluates the answers.
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self, RpnError> {
        check_layout(&tokens)?;
        let answers = evaluate(&tokens)?;
        Ok(Self { tokens, answers })
    }

    pub fn n(&self) -> usize {
        self.answers.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn answers(&self) -> &[f64] {
        &self.answers
    }

    pub fn to_line(&self) -> String {
        let answers: Vec<String> = self.answers.iter().map(f64::to_string).collect();
        format!("{} | {}", format_tokens(&self.tokens), answers.join(" "))
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let (lhs, rhs) = line.split_once(" | ").ok_or("missing ` | ` separator")?;
        let tokens = parse_tokens(lhs)?;
        check_layout(&tokens).map_err(|e| e.to_string())?;
        let answers = rhs
            .split(' ')
            .map(|s| s.parse::<f64>().map_err(|_| format!("bad answer `{s}`")))
            .collect::<Result<Vec<_>, _>>()?;
        let n = tokens.len() / 2;
        if answers.len() != n {
            return Err(format!("expected {n} answers, found {}", answers.len()));
        }
        Ok(Self { tokens, answers })
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

fn check_layout(tokens: &[Token]) -> Result<(), RpnError> {
    if tokens.len() < 3 || tokens.len().is_multiple_of(2) {
        return Err(RpnError::Malformed(format!(
            "expected 2n+1 tokens with n >= 1, got {}",
            tokens.len()
        )));
    }
    let n = tokens.len() / 2;
    let (nums, ops) = tokens.split_at(n + 1);
    if nums.iter().any(|t| t.is_op()) || ops.iter().any(|t| !t.is_op()) {
        return Err(RpnError::Malformed(format!(
            "expected {} NUM tokens followed by {n} OP tokens",
            n + 1
        )));
    }
    Ok(())
}

/// Samples uniform tokens in the fixed layout, resampling the whole
/// expression until it has no division by zero and every intermediate answer
/// satisfies `|answer| <= bound`.
pub fn generate_expression(rng: &mut Rng, n: usize, bound: f64) -> Result<Expression, RpnError> {
    assert!(n >= 1, "n must be positive");
    let mut tokens = Vec::with_capacity(2 * n + 1);
    for _ in 0..MAX_RESAMPLES {
        tokens.clear();
        tokens.extend((0..=n).map(|_| Token::Num(rng.below(NUM_VOCAB as u64) as u8)));
        tokens.extend((0..n).map(|_| {
            Token::Op(Operator::from_index(rng.below(OP_VOCAB as u64) as usize).expect("op index"))
        }));
        match evaluate(&tokens) {
            Ok(answers) if answers.iter().all(|a| a.abs() <= bound) => {
                return Ok(Expression {
                    tokens: tokens.clone(),
                    answers,
                });
            }
            Ok(_) | Err(RpnError::DivisionByZero { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(RpnError::GeneratorStuck {
        n,
        attempts: MAX_RESAMPLES,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    Gen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Gen];

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn file_name(self, gen_n: usize) -> String {
        match self {
            Split::Train => "train.rpn".into(),
            Split::Val => "val.rpn".into(),
            Split::Test => "test.rpn".into(),
            Split::Gen => format!("gen{gen_n}.rpn"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub gen_n: usize,
    pub gen_count: usize,
    pub seed: u64,
    pub bound: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n: 10,
            train: 100_000,
            val: 5_000,
            test: 20_000,
            gen_n: 30,
            gen_count: 20_000,
            seed: 42,
            bound: DEFAULT_BOUND,
        }
    }
}

impl DatasetSpec {
    pub fn split_params(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (self.n, self.train),
            Split::Val => (self.n, self.val),
            Split::Test => (self.n, self.test),
            Split::Gen => (self.gen_n, self.gen_count),
        }
    }

    pub fn generate(&self, split: Split) -> Result<Vec<Expression>, RpnError> {
        let (n, count) = self.split_params(split);
        generate_split(self.seed, split.index(), n, count, self.bound)
    }

    /// Generates all four splits into `out_dir`; returns the written paths.
    pub fn write_all(&self, out_dir: &Path) -> Result<Vec<PathBuf>, RpnError> {
        fs::create_dir_all(out_dir).map_err(|source| RpnError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        for split in Split::ALL {
            let path = out_dir.join(split.file_name(self.gen_n));
            write_dataset(&path, &self.generate(split)?)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Generates `count` expressions for one split. Block `b` of split `s` uses
/// its own stream seeded with `splitmix64(seed ^ (s << 32 | b))`, so blocks
/// can be produced independently.
pub fn generate_split(seed: u64, split: u64, n: usize, count: usize, bound: f64) -> Result<Vec<Expression>, RpnError> {
    let mut out = Vec::with_capacity(count);
    let blocks = count.div_ceil(BLOCK_SIZE);
    for block in 0..blocks {
        let mut rng = Rng::new(derive_seed(seed, (split << 32) | block as u64));
        let len = BLOCK_SIZE.min(count - block * BLOCK_SIZE);
        for _ in 0..len {
            out.push(generate_expression(&mut rng, n, bound)?);
        }
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, exprs: &[Expression]) -> Result<(), RpnError> {
    let io_err = |source| RpnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(f);
    for e in exprs {
        writeln!(w, "{}", e.to_line()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Expression>, RpnError> {
    let io_err = |source| RpnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let e = Expression::parse_line(&line).map_err(|message| RpnError::Parse { line: i + 1, message })?;
        out.push(e);
    }
    Ok(out)
}
