//! Symbolic executor for flat module programs with fork/stack branching.
//!
//! A program is a token list run left to right against a scene. `current`
//! starts as the full object set. `fork` saves `current` and restarts from
//! the full scene; a binary token combines the popped value (left operand)
//! with `current` (right operand).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::Rng;

/// Scenes are limited to this many objects so object sets fit a bitmask.
pub const MAX_OBJECTS: usize = 64;

macro_rules! attr_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{s}`", stringify!($name).to_lowercase())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

attr_enum!(Shape { Cube => "cube", Sphere => "sphere", Cylinder => "cylinder" });
attr_enum!(Color {
    Gray => "gray", Red => "red", Blue => "blue", Green => "green",
    Brown => "brown", Purple => "purple", Cyan => "cyan", Yellow => "yellow",
});
attr_enum!(Size { Small => "small", Large => "large" });
attr_enum!(Material { Rubber => "rubber", Metal => "metal" });
attr_enum!(Attr { Shape => "shape", Color => "color", Size => "size", Material => "material" });
attr_enum!(Direction { Left => "left", Right => "right", Front => "front", Behind => "behind" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrValue {
    Shape(Shape),
    Color(Color),
    Size(Size),
    Material(Material),
}

impl AttrValue {
    pub fn attr(self) -> Attr {
        match self {
            AttrValue::Shape(_) => Attr::Shape,
            AttrValue::Color(_) => Attr::Color,
            AttrValue::Size(_) => Attr::Size,
            AttrValue::Material(_) => Attr::Material,
        }
    }

    pub fn parse(attr: Attr, s: &str) -> Result<Self, String> {
        Ok(match attr {
            Attr::Shape => AttrValue::Shape(s.parse()?),
            Attr::Color => AttrValue::Color(s.parse()?),
            Attr::Size => AttrValue::Size(s.parse()?),
            Attr::Material => AttrValue::Material(s.parse()?),
        })
    }

    /// Every value of every attribute.
    pub fn all() -> Vec<AttrValue> {
        let mut v: Vec<AttrValue> = Shape::ALL.iter().map(|&x| AttrValue::Shape(x)).collect();
        v.extend(Color::ALL.iter().map(|&x| AttrValue::Color(x)));
        v.extend(Size::ALL.iter().map(|&x| AttrValue::Size(x)));
        v.extend(Material::ALL.iter().map(|&x| AttrValue::Material(x)));
        v
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Shape(x) => x.fmt(f),
            AttrValue::Color(x) => x.fmt(f),
            AttrValue::Size(x) => x.fmt(f),
            AttrValue::Material(x) => x.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub material: Material,
    pub x: f64,
    pub y: f64,
}

impl SceneObject {
    pub fn get(&self, attr: Attr) -> AttrValue {
        match attr {
            Attr::Shape => AttrValue::Shape(self.shape),
            Attr::Color => AttrValue::Color(self.color),
            Attr::Size => AttrValue::Size(self.size),
            Attr::Material => AttrValue::Material(self.material),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
}

impl SceneGraph {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, ExecError> {
        if objects.len() > MAX_OBJECTS {
            return Err(ExecError::Parse(format!("scene has {} objects, limit is {MAX_OBJECTS}", objects.len())));
        }
        if let Some(i) = objects.iter().position(|o| !(o.x.is_finite() && o.y.is_finite())) {
            return Err(ExecError::Parse(format!("object {i} has a non-finite position")));
        }
        Ok(Self { objects })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn all(&self) -> ObjectSet {
        ObjectSet::full(self.objects.len())
    }

    /// Parses `shape color size material x y` lines; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, ExecError> {
        let mut objects = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| ExecError::Parse(format!("scene line {}: {m}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let [shape, color, size, material, x, y] = f[..] else {
                return Err(err(format!("expected 6 fields, got {}", f.len())));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad coordinate `{s}`")));
            objects.push(SceneObject {
                shape: shape.parse().map_err(err)?,
                color: color.parse().map_err(err)?,
                size: size.parse().map_err(err)?,
                material: material.parse().map_err(err)?,
                x: num(x)?,
                y: num(y)?,
            });
        }
        Self::new(objects)
    }

    pub fn to_text(&self) -> String {
        self.objects
            .iter()
            .map(|o| format!("{} {} {} {} {} {}\n", o.shape, o.color, o.size, o.material, o.x, o.y))
            .collect()
    }
}

/// `k` objects with independent uniform attributes and positions uniform in
/// the unit square.
pub fn random_scene(rng: &mut Rng, k: usize) -> SceneGraph {
    fn pick<T: Copy>(rng: &mut Rng, all: &[T]) -> T {
        all[rng.below(all.len() as u64) as usize]
    }
    let objects = (0..k)
        .map(|_| SceneObject {
            shape: pick(rng, Shape::ALL),
            color: pick(rng, Color::ALL),
            size: pick(rng, Size::ALL),
            material: pick(rng, Material::ALL),
            x: rng.next_f64(),
            y: rng.next_f64(),
        })
        .collect();
    SceneGraph::new(objects).expect("random scene within limits")
}

/// Set of object indices into a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ObjectSet(u64);

impl ObjectSet {
    pub const EMPTY: ObjectSet = ObjectSet(0);

    pub fn full(n: usize) -> Self {
        ObjectSet(if n >= 64 { u64::MAX } else { (1u64 << n) - 1 })
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        ObjectSet(indices.into_iter().fold(0, |m, i| m | (1u64 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        ObjectSet(self.0 | other.0)
    }

    pub fn intersect(self, other: Self) -> Self {
        ObjectSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }

    fn filter(self, scene: &SceneGraph, mut keep: impl FnMut(&SceneObject) -> bool) -> Self {
        Self::from_indices(self.iter().filter(|&i| keep(&scene.objects[i])))
    }
}

impl fmt::Display for ObjectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueTag {
    ObjectSet,
    SingleObject,
    Integer,
    Boolean,
    AttributeValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecValue {
    ObjectSet(ObjectSet),
    SingleObject(usize),
    Integer(i64),
    Boolean(bool),
    AttributeValue(AttrValue),
}

impl ExecValue {
    pub fn tag(&self) -> ValueTag {
        match self {
            ExecValue::ObjectSet(_) => ValueTag::ObjectSet,
            ExecValue::SingleObject(_) => ValueTag::SingleObject,
            ExecValue::Integer(_) => ValueTag::Integer,
            ExecValue::Boolean(_) => ValueTag::Boolean,
            ExecValue::AttributeValue(_) => ValueTag::AttributeValue,
        }
    }
}

impl fmt::Display for ExecValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecValue::ObjectSet(s) => s.fmt(f),
            ExecValue::SingleObject(i) => write!(f, "#{i}"),
            ExecValue::Integer(v) => v.fmt(f),
            ExecValue::Boolean(b) => b.fmt(f),
            ExecValue::AttributeValue(a) => a.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProgramToken {
    Scene,
    Fork,
    Filter(AttrValue),
    Unique,
    Relate(Direction),
    Same(Attr),
    Count,
    Exist,
    Query(Attr),
    Union,
    Intersect,
    EqualInteger,
    LessThan,
    GreaterThan,
    Equal(Attr),
}

impl ProgramToken {
    pub fn arity(self) -> usize {
        use ProgramToken::*;
        match self {
            Fork => 0,
            Union | Intersect | EqualInteger | LessThan | GreaterThan | Equal(_) => 2,
            _ => 1,
        }
    }

    /// Every token in the vocabulary.
    pub fn vocabulary() -> Vec<ProgramToken> {
        use ProgramToken::*;
        let mut v = vec![Scene, Fork];
        v.extend(AttrValue::all().into_iter().map(Filter));
        v.push(Unique);
        v.extend(Direction::ALL.iter().map(|&d| Relate(d)));
        v.extend(Attr::ALL.iter().map(|&a| Same(a)));
        v.extend([Count, Exist]);
        v.extend(Attr::ALL.iter().map(|&a| Query(a)));
        v.extend([Union, Intersect, EqualInteger, LessThan, GreaterThan]);
        v.extend(Attr::ALL.iter().map(|&a| Equal(a)));
        v
    }
}

impl fmt::Display for ProgramToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ProgramToken::*;
        match self {
            Scene => f.write_str("scene"),
            Fork => f.write_str("fork"),
            Filter(v) => write!(f, "filter_{}_{}", v.attr(), v),
            Unique => f.write_str("unique"),
            Relate(d) => write!(f, "relate_{d}"),
            Same(a) => write!(f, "same_{a}"),
            Count => f.write_str("count"),
            Exist => f.write_str("exist"),
            Query(a) => write!(f, "query_{a}"),
            Union => f.write_str("union"),
            Intersect => f.write_str("intersect"),
            EqualInteger => f.write_str("equal_integer"),
            LessThan => f.write_str("less_than"),
            GreaterThan => f.write_str("greater_than"),
            Equal(a) => write!(f, "equal_{a}"),
        }
    }
}

impl FromStr for ProgramToken {
    type Err = ExecError;

    /// Accepts bare names and the arity-prefixed form (`1_filter_size_small`).
    fn from_str(s: &str) -> Result<Self, ExecError> {
        use ProgramToken::*;
        let bad = || ExecError::Parse(format!("unknown program token `{s}`"));
        let (prefix, name) = match s.split_once('_') {
            Some((p @ ("0" | "1" | "2"), rest)) => (Some(p.parse::<usize>().expect("digit")), rest),
            _ => (None, s),
        };
        let tok = match name {
            "scene" => Scene,
            "fork" => Fork,
            "unique" => Unique,
            "count" => Count,
            "exist" => Exist,
            "union" => Union,
            "intersect" => Intersect,
            "equal_integer" => EqualInteger,
            "less_than" => LessThan,
            "greater_than" => GreaterThan,
            _ => {
                if let Some(rest) = name.strip_prefix("filter_") {
                    let (attr, val) = rest.split_once('_').ok_or_else(bad)?;
                    let attr: Attr = attr.parse().map_err(|_| bad())?;
                    Filter(AttrValue::parse(attr, val).map_err(|_| bad())?)
                } else if let Some(d) = name.strip_prefix("relate_") {
                    Relate(d.parse().map_err(|_| bad())?)
                } else if let Some(a) = name.strip_prefix("same_") {
                    Same(a.parse().map_err(|_| bad())?)
                } else if let Some(a) = name.strip_prefix("query_") {
                    Query(a.parse().map_err(|_| bad())?)
                } else if let Some(a) = name.strip_prefix("equal_") {
                    Equal(a.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        };
        match prefix {
            Some(p) if p != tok.arity() => Err(ExecError::Parse(format!(
                "`{s}`: prefix {p} does not match arity {}",
                tok.arity()
            ))),
            _ => Ok(tok),
        }
    }
}

pub fn parse_program(text: &str) -> Result<Vec<ProgramToken>, ExecError> {
    text.split_whitespace().map(str::parse).collect()
}

pub fn format_program(program: &[ProgramToken]) -> String {
    program.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("unique expects exactly one object, got {size}")]
    Cardinality { size: usize },
    #[error("{token} expects {expected:?}, got {found:?}")]
    Type {
        token: ProgramToken,
        expected: ValueTag,
        found: ValueTag,
    },
    #[error("{0}")]
    Structure(String),
    #[error("{0}")]
    Parse(String),
    #[error("token {position} ({token}): {source}")]
    At {
        position: usize,
        token: ProgramToken,
        source: Box<ExecError>,
    },
}

impl ExecError {
    /// The underlying error without position context.
    pub fn kind(&self) -> &ExecError {
        match self {
            ExecError::At { source, .. } => source.kind(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecState {
    pub current: ExecValue,
    pub saved: Vec<ExecValue>,
}

impl ExecState {
    pub fn start(scene: &SceneGraph) -> Self {
        Self {
            current: ExecValue::ObjectSet(scene.all()),
            saved: Vec::new(),
        }
    }
}

fn expect_set(token: ProgramToken, v: ExecValue) -> Result<ObjectSet, ExecError> {
    match v {
        ExecValue::ObjectSet(s) => Ok(s),
        other => Err(type_err(token, ValueTag::ObjectSet, other)),
    }
}

fn expect_object(token: ProgramToken, v: ExecValue) -> Result<usize, ExecError> {
    match v {
        ExecValue::SingleObject(i) => Ok(i),
        other => Err(type_err(token, ValueTag::SingleObject, other)),
    }
}

fn expect_int(token: ProgramToken, v: ExecValue) -> Result<i64, ExecError> {
    match v {
        ExecValue::Integer(i) => Ok(i),
        other => Err(type_err(token, ValueTag::Integer, other)),
    }
}

fn expect_attr(token: ProgramToken, attr: Attr, v: ExecValue) -> Result<AttrValue, ExecError> {
    match v {
        ExecValue::AttributeValue(a) if a.attr() == attr => Ok(a),
        other => Err(type_err(token, ValueTag::AttributeValue, other)),
    }
}

fn type_err(token: ProgramToken, expected: ValueTag, found: ExecValue) -> ExecError {
    ExecError::Type {
        token,
        expected,
        found: found.tag(),
    }
}

/// Whether `other` lies in direction `dir` of `reference`.
pub fn related(dir: Direction, reference: &SceneObject, other: &SceneObject) -> bool {
    match dir {
        Direction::Left => other.x < reference.x,
        Direction::Right => other.x > reference.x,
        Direction::Front => other.y > reference.y,
        Direction::Behind => other.y < reference.y,
    }
}

fn apply_unary(scene: &SceneGraph, token: ProgramToken, v: ExecValue) -> Result<ExecValue, ExecError> {
    use ProgramToken::*;
    let all = scene.all();
    Ok(match token {
        Scene => ExecValue::ObjectSet(all),
        Filter(val) => {
            let set = expect_set(token, v)?;
            ExecValue::ObjectSet(set.filter(scene, |o| o.get(val.attr()) == val))
        }
        Unique => {
            let set = expect_set(token, v)?;
            if set.len() != 1 {
                return Err(ExecError::Cardinality { size: set.len() });
            }
            ExecValue::SingleObject(set.iter().next().expect("one element"))
        }
        Relate(dir) => {
            let i = expect_object(token, v)?;
            let r = &scene.objects[i];
            ExecValue::ObjectSet(all.filter(scene, |o| related(dir, r, o)))
        }
        Same(attr) => {
            let i = expect_object(token, v)?;
            let val = scene.objects[i].get(attr);
            let others = ObjectSet::from_indices(all.iter().filter(|&j| j != i));
            ExecValue::ObjectSet(others.filter(scene, |o| o.get(attr) == val))
        }
        Count => ExecValue::Integer(expect_set(token, v)?.len() as i64),
        Exist => ExecValue::Boolean(!expect_set(token, v)?.is_empty()),
        Query(attr) => ExecValue::AttributeValue(scene.objects[expect_object(token, v)?].get(attr)),
        _ => unreachable!("not a unary token"),
    })
}

fn apply_binary(token: ProgramToken, left: ExecValue, right: ExecValue) -> Result<ExecValue, ExecError> {
    use ProgramToken::*;
    Ok(match token {
        Union => ExecValue::ObjectSet(expect_set(token, left)?.union(expect_set(token, right)?)),
        Intersect => ExecValue::ObjectSet(expect_set(token, left)?.intersect(expect_set(token, right)?)),
        EqualInteger => ExecValue::Boolean(expect_int(token, left)? == expect_int(token, right)?),
        LessThan => ExecValue::Boolean(expect_int(token, left)? < expect_int(token, right)?),
        GreaterThan => ExecValue::Boolean(expect_int(token, left)? > expect_int(token, right)?),
        Equal(attr) => ExecValue::Boolean(expect_attr(token, attr, left)? == expect_attr(token, attr, right)?),
        _ => unreachable!("not a binary token"),
    })
}

/// Single-token transition.
pub fn step(scene: &SceneGraph, state: &ExecState, token: ProgramToken) -> Result<ExecState, ExecError> {
    let mut next = state.clone();
    match token.arity() {
        0 => {
            next.saved.push(state.current);
            next.current = ExecValue::ObjectSet(scene.all());
        }
        2 => {
            let left = next
                .saved
                .pop()
                .ok_or_else(|| ExecError::Structure(format!("{token} without a matching fork")))?;
            next.current = apply_binary(token, left, state.current)?;
        }
        _ => next.current = apply_unary(scene, token, state.current)?,
    }
    Ok(next)
}

pub fn execute(scene: &SceneGraph, program: &[ProgramToken]) -> Result<ExecValue, ExecError> {
    let mut state = ExecState::start(scene);
    for (position, &token) in program.iter().enumerate() {
        state = step(scene, &state, token).map_err(|source| ExecError::At {
            position,
            token,
            source: Box::new(source),
        })?;
    }
    if !state.saved.is_empty() {
        return Err(ExecError::Structure(format!(
            "{} fork(s) left unmerged at program end",
            state.saved.len()
        )));
    }
    Ok(state.current)
}
