//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use ddr::progexec::{
    Attr, AttrValue, Direction, ExecValue, ObjectSet, ProgramToken, SceneGraph, SceneObject,
};
use ddr::rng::Rng;
use ddr::rpn::{Operator, Token};

// ---------------------------------------------------------------------------
// RPN: postfix -> explicit tree -> recursive evaluation

pub enum RpnTree {
    Leaf(f64),
    Node(Operator, Box<RpnTree>, Box<RpnTree>),
}

/// Builds the tree rooted at `tokens[..=end]`; returns it with the index of
/// its first token.
fn rpn_subtree(tokens: &[Token], end: usize) -> Option<(RpnTree, usize)> {
    match tokens[end] {
        Token::Num(_) => Some((RpnTree::Leaf(tokens[end].value()?), end)),
        Token::Op(op) => {
            let (right, rs) = rpn_subtree(tokens, end.checked_sub(1)?)?;
            let (left, ls) = rpn_subtree(tokens, rs.checked_sub(1)?)?;
            Some((RpnTree::Node(op, Box::new(left), Box::new(right)), ls))
        }
    }
}

pub fn rpn_tree(tokens: &[Token]) -> Option<RpnTree> {
    let (tree, start) = rpn_subtree(tokens, tokens.len().checked_sub(1)?)?;
    (start == 0).then_some(tree)
}

/// Post-order evaluation, recording each operator result. `None` on a zero
/// divisor.
pub fn rpn_tree_eval(tree: &RpnTree, answers: &mut Vec<f64>) -> Option<f64> {
    match tree {
        RpnTree::Leaf(v) => Some(*v),
        RpnTree::Node(op, l, r) => {
            let a = rpn_tree_eval(l, answers)?;
            let b = rpn_tree_eval(r, answers)?;
            let v = match op {
                Operator::Add => a + b,
                Operator::Sub => a - b,
                Operator::Mul => a * b,
                Operator::Div => {
                    if b == 0.0 {
                        return None;
                    }
                    a / b
                }
            };
            answers.push(v);
            Some(v)
        }
    }
}

// ---------------------------------------------------------------------------
// Programs: static types, enumeration, random generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Set,
    Obj,
    Int,
    Bool,
    Attr(Attr),
}

/// Static typing state: current type and saved types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TyState {
    pub current: Ty,
    pub saved: Vec<Ty>,
}

impl TyState {
    pub fn start() -> Self {
        Self {
            current: Ty::Set,
            saved: Vec::new(),
        }
    }

    pub fn apply(&self, tok: ProgramToken) -> Option<TyState> {
        use ProgramToken::*;
        let mut next = self.clone();
        let cur = self.current;
        next.current = match tok {
            Scene => Ty::Set,
            Fork => {
                next.saved.push(cur);
                Ty::Set
            }
            Filter(_) if cur == Ty::Set => Ty::Set,
            Unique if cur == Ty::Set => Ty::Obj,
            Relate(_) | Same(_) if cur == Ty::Obj => Ty::Set,
            Count if cur == Ty::Set => Ty::Int,
            Exist if cur == Ty::Set => Ty::Bool,
            Query(a) if cur == Ty::Obj => Ty::Attr(a),
            Union | Intersect | EqualInteger | LessThan | GreaterThan | Equal(_) => {
                let left = next.saved.pop()?;
                match tok {
                    Union | Intersect if left == Ty::Set && cur == Ty::Set => Ty::Set,
                    EqualInteger | LessThan | GreaterThan if left == Ty::Int && cur == Ty::Int => Ty::Bool,
                    Equal(a) if left == Ty::Attr(a) && cur == Ty::Attr(a) => Ty::Bool,
                    _ => return None,
                }
            }
            _ => return None,
        };
        Some(next)
    }
}

pub fn type_checks(program: &[ProgramToken]) -> bool {
    let mut st = TyState::start();
    for &t in program {
        match st.apply(t) {
            Some(s) => st = s,
            None => return false,
        }
    }
    st.saved.is_empty()
}

/// Depth-first enumeration of every type-valid program of 1..=`max_len`
/// tokens over `vocab`. `visit` sees each token prefix (with whether it is a
/// complete program) and may return `false` to prune its extensions.
pub fn enumerate_programs(
    vocab: &[ProgramToken],
    max_len: usize,
    mut visit: impl FnMut(&[ProgramToken], bool) -> bool,
) {
    fn rec(
        vocab: &[ProgramToken],
        max_len: usize,
        prefix: &mut Vec<ProgramToken>,
        st: &TyState,
        visit: &mut dyn FnMut(&[ProgramToken], bool) -> bool,
    ) {
        if prefix.len() == max_len {
            return;
        }
        for &t in vocab {
            let Some(next) = st.apply(t) else { continue };
            // Each open fork needs at least one more token to close it.
            if prefix.len() + 1 + next.saved.len() > max_len {
                continue;
            }
            prefix.push(t);
            if visit(prefix, next.saved.is_empty()) {
                rec(vocab, max_len, prefix, &next, visit);
            }
            prefix.pop();
        }
    }
    rec(vocab, max_len, &mut Vec::new(), &TyState::start(), &mut visit);
}

/// Random type-valid program of at most `max_len` tokens.
pub fn random_program(rng: &mut Rng, vocab: &[ProgramToken], max_len: usize) -> Vec<ProgramToken> {
    loop {
        let target = 1 + rng.below(max_len as u64) as usize;
        let mut st = TyState::start();
        let mut prog = Vec::new();
        while prog.len() < target {
            let choices: Vec<(ProgramToken, TyState)> = vocab
                .iter()
                .filter_map(|&t| st.apply(t).map(|s| (t, s)))
                .filter(|(_, s)| prog.len() + 1 + s.saved.len() <= max_len)
                .collect();
            if choices.is_empty() {
                break;
            }
            let (t, s) = choices[rng.below(choices.len() as u64) as usize].clone();
            prog.push(t);
            st = s;
        }
        if !prog.is_empty() && st.saved.is_empty() {
            return prog;
        }
    }
}

// ---------------------------------------------------------------------------
// Programs: flat list -> explicit tree -> recursive set semantics

#[derive(Debug)]
pub enum ProgTree {
    /// The full scene (program start or a fork's sub-branch start).
    Full,
    Unary(ProgramToken, Box<ProgTree>),
    Binary(ProgramToken, Box<ProgTree>, Box<ProgTree>),
}

/// Converts a flat program into a tree; `None` if forks and binary tokens do
/// not pair up.
pub fn program_tree(program: &[ProgramToken]) -> Option<ProgTree> {
    let mut open: Vec<ProgTree> = Vec::new();
    let mut cur = ProgTree::Full;
    for &t in program {
        cur = match t.arity() {
            0 => {
                open.push(cur);
                ProgTree::Full
            }
            2 => ProgTree::Binary(t, Box::new(open.pop()?), Box::new(cur)),
            _ => ProgTree::Unary(t, Box::new(cur)),
        };
    }
    open.is_empty().then_some(cur)
}

const MAXO: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OVal {
    Set([bool; MAXO]),
    Obj(usize),
    Int(i64),
    Bool(bool),
    Attr(AttrValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OErr {
    Cardinality,
    Type,
}

fn attr_of(o: &SceneObject, a: Attr) -> AttrValue {
    match a {
        Attr::Shape => AttrValue::Shape(o.shape),
        Attr::Color => AttrValue::Color(o.color),
        Attr::Size => AttrValue::Size(o.size),
        Attr::Material => AttrValue::Material(o.material),
    }
}

fn left_of(a: &SceneObject, b: &SceneObject) -> bool {
    b.x < a.x
}

fn in_direction(d: Direction, reference: &SceneObject, other: &SceneObject) -> bool {
    match d {
        Direction::Left => left_of(reference, other),
        Direction::Right => left_of(other, reference),
        Direction::Front => other.y > reference.y,
        Direction::Behind => reference.y > other.y,
    }
}

fn full(scene: &SceneGraph) -> [bool; MAXO] {
    let mut s = [false; MAXO];
    s[..scene.objects.len()].iter_mut().for_each(|b| *b = true);
    s
}

pub fn oracle_unary(scene: &SceneGraph, t: ProgramToken, v: OVal) -> Result<OVal, OErr> {
    use ProgramToken::*;
    let objs = &scene.objects;
    let n = objs.len();
    Ok(match (t, v) {
        (Scene, _) => OVal::Set(full(scene)),
        (Filter(val), OVal::Set(s)) => {
            let mut out = [false; MAXO];
            for i in 0..n {
                out[i] = s[i] && attr_of(&objs[i], val.attr()) == val;
            }
            OVal::Set(out)
        }
        (Unique, OVal::Set(s)) => {
            let members: Vec<usize> = (0..n).filter(|&i| s[i]).collect();
            match members[..] {
                [i] => OVal::Obj(i),
                _ => return Err(OErr::Cardinality),
            }
        }
        (Relate(d), OVal::Obj(i)) => {
            let mut out = [false; MAXO];
            for j in 0..n {
                out[j] = j != i && in_direction(d, &objs[i], &objs[j]);
            }
            OVal::Set(out)
        }
        (Same(a), OVal::Obj(i)) => {
            let mut out = [false; MAXO];
            for j in 0..n {
                out[j] = j != i && attr_of(&objs[j], a) == attr_of(&objs[i], a);
            }
            OVal::Set(out)
        }
        (Count, OVal::Set(s)) => OVal::Int(s.iter().filter(|&&b| b).count() as i64),
        (Exist, OVal::Set(s)) => OVal::Bool(s.iter().any(|&b| b)),
        (Query(a), OVal::Obj(i)) => OVal::Attr(attr_of(&objs[i], a)),
        _ => return Err(OErr::Type),
    })
}

pub fn oracle_binary(t: ProgramToken, l: OVal, r: OVal) -> Result<OVal, OErr> {
    use ProgramToken::*;
    Ok(match (t, l, r) {
        (Union, OVal::Set(a), OVal::Set(b)) => OVal::Set(std::array::from_fn(|i| a[i] || b[i])),
        (Intersect, OVal::Set(a), OVal::Set(b)) => OVal::Set(std::array::from_fn(|i| a[i] && b[i])),
        (EqualInteger, OVal::Int(a), OVal::Int(b)) => OVal::Bool(a == b),
        (LessThan, OVal::Int(a), OVal::Int(b)) => OVal::Bool(a < b),
        (GreaterThan, OVal::Int(a), OVal::Int(b)) => OVal::Bool(a > b),
        (Equal(k), OVal::Attr(a), OVal::Attr(b)) if a.attr() == k && b.attr() == k => OVal::Bool(a == b),
        _ => return Err(OErr::Type),
    })
}

/// Evaluates children before parents; the left child of a binary node is
/// evaluated before its right child.
pub fn oracle_eval(scene: &SceneGraph, tree: &ProgTree) -> Result<OVal, OErr> {
    assert!(scene.objects.len() <= MAXO, "oracle supports up to {MAXO} objects");
    match tree {
        ProgTree::Full => Ok(OVal::Set(full(scene))),
        ProgTree::Unary(t, c) => oracle_unary(scene, *t, oracle_eval(scene, c)?),
        ProgTree::Binary(t, l, r) => {
            let lv = oracle_eval(scene, l)?;
            let rv = oracle_eval(scene, r)?;
            oracle_binary(*t, lv, rv)
        }
    }
}

pub fn to_exec(v: OVal) -> ExecValue {
    match v {
        OVal::Set(s) => ExecValue::ObjectSet(ObjectSet::from_indices((0..MAXO).filter(|&i| s[i]))),
        OVal::Obj(i) => ExecValue::SingleObject(i),
        OVal::Int(i) => ExecValue::Integer(i),
        OVal::Bool(b) => ExecValue::Boolean(b),
        OVal::Attr(a) => ExecValue::AttributeValue(a),
    }
}

/// The full vocabulary with filters cut to one value per attribute.
pub fn reduced_vocabulary() -> Vec<ProgramToken> {
    use ddr::progexec::{Color, Material, Shape, Size};
    ProgramToken::vocabulary()
        .into_iter()
        .filter(|t| match t {
            ProgramToken::Scene => false,
            ProgramToken::Filter(v) => matches!(
                v,
                AttrValue::Shape(Shape::Sphere)
                    | AttrValue::Color(Color::Red)
                    | AttrValue::Size(Size::Small)
                    | AttrValue::Material(Material::Metal)
            ),
            _ => true,
        })
        .collect()
}
