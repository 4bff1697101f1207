//! Query language.
//!
//! ```text
//! query  ::= source ('.' step)*
//! source ::= functions() | classes() | entrypoints()
//! step   ::= NAME '(' [arg (',' arg)*] ')'
//! arg    ::= STRING | INT | true | false | NAME
//! ```
//!
//! Built-in steps: `calling`, `named`, `implementing`, `has`, `out`, `in`,
//! `dedup`, `limit`. Further steps are supplied as [`Verb`]s. Each built-in
//! lowers to plain traversal steps; `calling("N")` for instance becomes
//! `where(out(has_bb).out(instr).out(calls).has("name", "N"))`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{Element, Step, Traversal, TraverseError};
use crate::supergraph::{EdgeLabel, Label, PropertyGraph, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Str(String),
    Int(i64),
    Bool(bool),
    Name(String),
}

impl Arg {
    /// Text of a string or bare name.
    pub fn text(&self) -> Option<&str> {
        match self {
            Arg::Str(s) | Arg::Name(s) => Some(s),
            _ => None,
        }
    }

    fn value(&self) -> Value {
        match self {
            Arg::Str(s) | Arg::Name(s) => Value::Text(s.clone()),
            Arg::Int(i) => Value::Int(*i),
            Arg::Bool(b) => Value::Bool(*b),
        }
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Str(s) => write!(f, "{s:?}"),
            Arg::Int(i) => write!(f, "{i}"),
            Arg::Bool(b) => write!(f, "{b}"),
            Arg::Name(s) => write!(f, "{s}"),
        }
    }
}

/// A step contributed from outside the traversal engine, such as an analysis.
pub trait Verb: Send + Sync {
    fn name(&self) -> &str;
    /// Rejects malformed argument lists at parse time.
    fn check(&self, args: &[Arg]) -> Result<(), String>;
    fn apply(&self, g: &PropertyGraph, input: &Element, args: &[Arg]) -> Vec<Element>;
}

/// Verbs available to the parser, by name.
#[derive(Clone, Default)]
pub struct Verbs {
    verbs: BTreeMap<String, Arc<dyn Verb>>,
}

impl Verbs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, v: Arc<dyn Verb>) {
        self.verbs.insert(v.name().to_string(), v);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.verbs.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    pub text: String,
    pub traversal: Traversal,
}

impl Query {
    pub fn eval(&self, g: &PropertyGraph) -> Vec<Element> {
        self.traversal.run(g, [])
    }
}

pub fn parse_query(text: &str) -> Result<Query, TraverseError> {
    parse_query_with(text, &Verbs::default())
}

pub fn parse_query_with(text: &str, verbs: &Verbs) -> Result<Query, TraverseError> {
    let calls = Parser { src: text.as_bytes(), pos: 0 }.query()?;
    let mut it = calls.into_iter();
    let source = it.next().expect("a query has a source");
    let mut t = lower_source(&source)?;
    for c in it {
        t = t.then(lower_step(&c, verbs)?);
    }
    Ok(Query { text: text.to_string(), traversal: t })
}

/// `name(args)` as written, with the byte offset of its name.
struct Call {
    name: String,
    position: usize,
    args: Vec<Arg>,
}

impl Call {
    fn bad(&self, reason: impl Into<String>) -> TraverseError {
        TraverseError::BadArguments { step: self.name.clone(), position: self.position, reason: reason.into() }
    }

    fn arity(&self, n: usize) -> Result<(), TraverseError> {
        if self.args.len() == n {
            Ok(())
        } else {
            Err(self.bad(format!("takes {n} argument(s), got {}", self.args.len())))
        }
    }

    fn text(&self, i: usize) -> Result<&str, TraverseError> {
        self.args[i].text().ok_or_else(|| self.bad(format!("argument {} must be a string", i + 1)))
    }
}

fn lower_source(c: &Call) -> Result<Traversal, TraverseError> {
    let t = Traversal::identity();
    let t = match c.name.as_str() {
        "functions" => t.nodes(Label::Function),
        "classes" => t.nodes(Label::Class),
        "entrypoints" => t.nodes(Label::Function).has("is_ep", true),
        _ => return Err(TraverseError::UnknownStep { name: c.name.clone(), position: c.position }),
    };
    c.arity(0)?;
    Ok(t)
}

/// `calling(N)`: functions with a call site whose target is named `N`. The
/// form `Class.selector` matches message sends by receiver and selector.
pub fn calling(name: &str) -> Traversal {
    let sites = Traversal::identity().out(EdgeLabel::HasBb).out(EdgeLabel::Instr);
    let inner = match name.split_once('.') {
        Some((rcv, sel)) if !rcv.is_empty() && !sel.is_empty() => {
            sites.out_e(EdgeLabel::Calls).has("rcv", rcv).has("sel", sel)
        }
        _ => sites.out(EdgeLabel::Calls).has("name", name),
    };
    Traversal::identity().where_(inner)
}

/// `implementing(P)`: classes adopting `P`, and functions implementing a method of such a class.
pub fn implementing(protocol: &str) -> Traversal {
    let adopts = Traversal::identity().out(EdgeLabel::HasProtocol).has("name", protocol);
    let via_method = Traversal::identity().out(EdgeLabel::Implements).in_(EdgeLabel::HasMeth).then(adopts.clone());
    Traversal::identity().where_(Traversal::identity().step(Step::Union(vec![adopts, via_method])))
}

fn edge_label(c: &Call) -> Result<Option<EdgeLabel>, TraverseError> {
    match c.args.len() {
        0 => Ok(None),
        1 => c.text(0)?.parse().map(Some).map_err(|_| c.bad(format!("unknown edge label {}", c.args[0]))),
        _ => Err(c.bad("takes at most one edge label")),
    }
}

fn lower_step(c: &Call, verbs: &Verbs) -> Result<Traversal, TraverseError> {
    let t = Traversal::identity();
    Ok(match c.name.as_str() {
        "calling" => {
            c.arity(1)?;
            calling(c.text(0)?)
        }
        "named" => {
            c.arity(1)?;
            t.has("name", c.text(0)?)
        }
        "implementing" => {
            c.arity(1)?;
            implementing(c.text(0)?)
        }
        "has" => {
            c.arity(2)?;
            let key = match c.text(0)? {
                "is_entrypoint" => "is_ep",
                k => k,
            };
            t.has(key, c.args[1].value())
        }
        "out" => t.step(Step::Out(edge_label(c)?)),
        "in" => t.step(Step::In(edge_label(c)?)),
        "dedup" => {
            c.arity(0)?;
            t.dedup()
        }
        "limit" => {
            c.arity(1)?;
            match c.args[0] {
                Arg::Int(n) if n >= 0 => t.limit(n as usize),
                _ => return Err(c.bad("expects a non-negative integer")),
            }
        }
        name => match verbs.verbs.get(name) {
            Some(v) => {
                v.check(&c.args).map_err(|r| c.bad(r))?;
                t.step(Step::Verb(v.clone(), c.args.clone()))
            }
            None => return Err(TraverseError::UnknownStep { name: name.to_string(), position: c.position }),
        },
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, position: usize, expected: &[&str]) -> TraverseError {
        TraverseError::SyntaxError { position, expected: expected.iter().map(|s| s.to_string()).collect() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn query(mut self) -> Result<Vec<Call>, TraverseError> {
        let mut calls = vec![self.call()?];
        loop {
            match self.peek() {
                None => return Ok(calls),
                Some(b'.') => {
                    self.pos += 1;
                    calls.push(self.call()?);
                }
                Some(_) => return Err(self.error(self.pos, &["`.`", "end of query"])),
            }
        }
    }

    fn name(&mut self) -> Option<(String, usize)> {
        self.peek();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let valid = self.pos > start && !self.src[start].is_ascii_digit();
        if !valid {
            self.pos = start;
            return None;
        }
        Some((String::from_utf8_lossy(&self.src[start..self.pos]).into_owned(), start))
    }

    fn call(&mut self) -> Result<Call, TraverseError> {
        let (name, position) = self.name().ok_or_else(|| self.error(self.pos, &["step name"]))?;
        if self.peek() != Some(b'(') {
            return Err(self.error(self.pos, &["`(`"]));
        }
        // An argument list cut off by the end of the query is reported at its `(`.
        let open = self.pos;
        self.pos += 1;
        let mut args = Vec::new();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(Call { name, position, args });
        }
        loop {
            if self.peek().is_none() {
                return Err(self.error(open, &["argument", "`)`"]));
            }
            args.push(self.arg()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Call { name, position, args });
                }
                None => return Err(self.error(open, &["`,`", "`)`"])),
                Some(_) => return Err(self.error(self.pos, &["`,`", "`)`"])),
            }
        }
    }

    fn arg(&mut self) -> Result<Arg, TraverseError> {
        let start = self.pos;
        match self.src[start] {
            b'"' => self.string(),
            b'-' | b'0'..=b'9' => {
                let mut end = start + 1;
                while end < self.src.len() && self.src[end].is_ascii_digit() {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[start..end]).expect("ascii");
                let n = text.parse().map_err(|_| self.error(start, &["integer"]))?;
                self.pos = end;
                Ok(Arg::Int(n))
            }
            _ => match self.name() {
                Some((n, _)) if n == "true" => Ok(Arg::Bool(true)),
                Some((n, _)) if n == "false" => Ok(Arg::Bool(false)),
                Some((n, _)) => Ok(Arg::Name(n)),
                None => Err(self.error(start, &["string", "integer", "boolean", "name"])),
            },
        }
    }

    fn string(&mut self) -> Result<Arg, TraverseError> {
        let open = self.pos;
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            let Some(&b) = self.src.get(self.pos) else {
                return Err(self.error(open, &["closing `\"`"]));
            };
            self.pos += 1;
            match b {
                b'"' => break,
                b'\\' => {
                    let Some(&e) = self.src.get(self.pos) else {
                        return Err(self.error(open, &["closing `\"`"]));
                    };
                    self.pos += 1;
                    out.push(match e {
                        b'n' => b'\n',
                        b't' => b'\t',
                        b'"' | b'\\' => e,
                        _ => return Err(self.error(self.pos - 2, &["escape `\\\"`, `\\\\`, `\\n` or `\\t`"])),
                    });
                }
                _ => out.push(b),
            }
        }
        String::from_utf8(out).map(Arg::Str).map_err(|_| self.error(open, &["UTF-8 string"]))
    }
}
