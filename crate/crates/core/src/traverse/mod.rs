//! Composable traversals over the supergraph.
//!
//! A [`Traversal`] is a sequence of [`Step`]s, each mapping a stream of
//! [`Element`]s to another. Chaining with [`Traversal::then`] is associative
//! and [`Traversal::identity`] is neutral on both sides. Evaluation is lazy;
//! neighbors are visited in node-id order so results are deterministic.

mod dsl;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value as Json};

use crate::supergraph::{EdgeId, EdgeLabel, Label, NodeId, PropertyGraph, Value};

pub use dsl::{calling, implementing, parse_query, parse_query_with, Arg, Query, Verb, Verbs};

/// Default bound on path length (in nodes) for path enumeration.
pub const DEFAULT_LMAX: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraverseError {
    #[error("node {0} is not a Function")]
    NotAFunction(NodeId),
    #[error("node {0} is not a BasicBlock")]
    NotABasicBlock(NodeId),
    #[error("node {0} is not an Instruction")]
    NotAnInstruction(NodeId),
    #[error("syntax error at byte {position}: expected {}", expected.join(" or "))]
    SyntaxError { position: usize, expected: Vec<String> },
    #[error("unknown step `{name}` at byte {position}")]
    UnknownStep { name: String, position: usize },
    #[error("bad arguments to `{step}` at byte {position}: {reason}")]
    BadArguments { step: String, position: usize, reason: String },
}

/// Nodes joined by the edges between consecutive entries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
}

impl Path {
    pub fn start(n: NodeId) -> Self {
        Path { nodes: vec![n], edges: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn last(&self) -> NodeId {
        *self.nodes.last().expect("paths are never empty")
    }

    pub fn extended(&self, e: EdgeId, n: NodeId) -> Path {
        let mut p = self.clone();
        p.edges.push(e);
        p.nodes.push(n);
        p
    }

    /// Every edge exists and joins the nodes it sits between.
    pub fn is_valid_in(&self, g: &PropertyGraph) -> bool {
        self.edges.len() + 1 == self.nodes.len()
            && self.edges.iter().enumerate().all(|(i, e)| {
                g.edge(*e).is_some_and(|e| e.src == self.nodes[i] && e.dst == self.nodes[i + 1])
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    Node(NodeId),
    Edge(EdgeId),
    Path(Path),
}

impl Element {
    /// The node this element stands at: itself, or a path's last node.
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Element::Node(n) => Some(*n),
            Element::Path(p) => Some(p.last()),
            Element::Edge(_) => None,
        }
    }

    pub fn to_json(&self, g: &PropertyGraph) -> Json {
        match self {
            Element::Node(n) => {
                let node = g.node(*n).expect("element from this graph");
                json!({ "type": "node", "id": n.0, "label": node.label.as_str(), "props": props_json(&node.props) })
            }
            Element::Edge(e) => {
                let edge = g.edge(*e).expect("element from this graph");
                json!({
                    "type": "edge", "id": e.0, "label": edge.label.as_str(),
                    "src": edge.src.0, "dst": edge.dst.0, "props": props_json(&edge.props),
                })
            }
            Element::Path(p) => json!({
                "type": "path",
                "nodes": p.nodes.iter().map(|n| n.0).collect::<Vec<_>>(),
                "edges": p.edges.iter().map(|e| e.0).collect::<Vec<_>>(),
            }),
        }
    }
}

fn props_json(p: &crate::supergraph::Props) -> Json {
    p.iter()
        .map(|(k, v)| {
            let j = match v {
                Value::Text(s) => json!(s),
                Value::Int(i) => json!(i),
                Value::Bool(b) => json!(b),
                Value::Bytes(b) => json!(b.iter().map(|x| format!("{x:02x}")).collect::<String>()),
            };
            (k.clone(), j)
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

#[derive(Clone)]
pub enum Step {
    /// Replaces the stream with all nodes, or all nodes with a label.
    Nodes(Option<Label>),
    Out(Option<EdgeLabel>),
    In(Option<EdgeLabel>),
    OutE(Option<EdgeLabel>),
    InE(Option<EdgeLabel>),
    /// Edge to its target node.
    Dst,
    /// Edge to its source node.
    Src,
    HasLabel(Label),
    Has(String, Value),
    Dedup,
    Limit(usize),
    /// Keeps elements for which the sub-traversal yields anything.
    Where(Traversal),
    /// Concatenated results of several sub-traversals.
    Union(Vec<Traversal>),
    /// The sub-traversal applied `n` times.
    Repeat(Traversal, usize),
    /// Reflexive-transitive closure of the sub-traversal, each element once per input.
    Closure(Traversal),
    Verb(Arc<dyn Verb>, Vec<Arg>),
}

impl fmt::Debug for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Nodes(l) => write!(f, "Nodes({l:?})"),
            Step::Out(l) => write!(f, "Out({l:?})"),
            Step::In(l) => write!(f, "In({l:?})"),
            Step::OutE(l) => write!(f, "OutE({l:?})"),
            Step::InE(l) => write!(f, "InE({l:?})"),
            Step::Dst => write!(f, "Dst"),
            Step::Src => write!(f, "Src"),
            Step::HasLabel(l) => write!(f, "HasLabel({l:?})"),
            Step::Has(k, v) => write!(f, "Has({k:?}, {v:?})"),
            Step::Dedup => write!(f, "Dedup"),
            Step::Limit(n) => write!(f, "Limit({n})"),
            Step::Where(t) => write!(f, "Where({t:?})"),
            Step::Union(ts) => write!(f, "Union({ts:?})"),
            Step::Repeat(t, n) => write!(f, "Repeat({t:?}, {n})"),
            Step::Closure(t) => write!(f, "Closure({t:?})"),
            Step::Verb(v, args) => write!(f, "Verb({}, {args:?})", v.name()),
        }
    }
}

type Stream<'g> = Box<dyn Iterator<Item = Element> + 'g>;

#[derive(Debug, Clone, Default)]
pub struct Traversal {
    steps: Vec<Step>,
}

impl Traversal {
    pub fn identity() -> Self {
        Traversal::default()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// `self` followed by `next`.
    pub fn then(mut self, next: Traversal) -> Self {
        self.steps.extend(next.steps);
        self
    }

    pub fn step(mut self, s: Step) -> Self {
        self.steps.push(s);
        self
    }

    pub fn nodes(self, label: Label) -> Self {
        self.step(Step::Nodes(Some(label)))
    }
    pub fn out(self, label: EdgeLabel) -> Self {
        self.step(Step::Out(Some(label)))
    }
    pub fn in_(self, label: EdgeLabel) -> Self {
        self.step(Step::In(Some(label)))
    }
    pub fn out_e(self, label: EdgeLabel) -> Self {
        self.step(Step::OutE(Some(label)))
    }
    pub fn dst(self) -> Self {
        self.step(Step::Dst)
    }
    pub fn has_label(self, label: Label) -> Self {
        self.step(Step::HasLabel(label))
    }
    pub fn has(self, key: &str, value: impl Into<Value>) -> Self {
        self.step(Step::Has(key.to_string(), value.into()))
    }
    pub fn dedup(self) -> Self {
        self.step(Step::Dedup)
    }
    pub fn limit(self, n: usize) -> Self {
        self.step(Step::Limit(n))
    }
    pub fn where_(self, t: Traversal) -> Self {
        self.step(Step::Where(t))
    }
    pub fn repeat(self, t: Traversal, n: usize) -> Self {
        self.step(Step::Repeat(t, n))
    }
    pub fn closure(self, t: Traversal) -> Self {
        self.step(Step::Closure(t))
    }

    /// Lazily evaluates the traversal over `input`.
    pub fn eval<'g>(&'g self, g: &'g PropertyGraph, input: impl Iterator<Item = Element> + 'g) -> Stream<'g> {
        let mut s: Stream<'g> = Box::new(input);
        for step in &self.steps {
            s = apply(step, g, s);
        }
        s
    }

    pub fn run(&self, g: &PropertyGraph, input: impl IntoIterator<Item = Element>) -> Vec<Element> {
        let input: Vec<Element> = input.into_iter().collect();
        self.eval(g, input.into_iter()).collect()
    }

    pub fn run_from(&self, g: &PropertyGraph, n: NodeId) -> Vec<Element> {
        self.run(g, [Element::Node(n)])
    }

    /// Distinct nodes reached from `n`.
    pub fn node_set(&self, g: &PropertyGraph, n: NodeId) -> BTreeSet<NodeId> {
        self.run_from(g, n).iter().filter_map(Element::node).collect()
    }
}

fn sorted_edges(
    g: &PropertyGraph,
    n: NodeId,
    label: Option<EdgeLabel>,
    outgoing: bool,
) -> Vec<&crate::supergraph::Edge> {
    let edges: Box<dyn Iterator<Item = &crate::supergraph::Edge>> =
        if outgoing { Box::new(g.out_edges(n)) } else { Box::new(g.in_edges(n)) };
    let mut v: Vec<_> = edges.filter(|e| label.is_none_or(|l| e.label == l)).collect();
    v.sort_by_key(|e| (if outgoing { e.dst } else { e.src }, e.id));
    v
}

fn has_property(g: &PropertyGraph, e: &Element, key: &str, value: &Value) -> bool {
    match e {
        Element::Edge(id) => g.edge(*id).is_some_and(|x| x.props.get(key) == Some(value)),
        _ => e.node().and_then(|n| g.node(n)).is_some_and(|x| x.props.get(key) == Some(value)),
    }
}

fn apply<'g>(step: &'g Step, g: &'g PropertyGraph, input: Stream<'g>) -> Stream<'g> {
    match step {
        Step::Nodes(label) => {
            // Drains the input: a source step replaces whatever came before.
            let ids: Vec<NodeId> = match label {
                Some(l) => g.nodes_with_label(*l).to_vec(),
                None => g.nodes().iter().map(|n| n.id).collect(),
            };
            Box::new(input.flat_map(move |_| std::iter::empty()).chain(ids.into_iter().map(Element::Node)))
        }
        Step::Out(l) | Step::In(l) => {
            let outgoing = matches!(step, Step::Out(_));
            Box::new(input.flat_map(move |e| {
                let ns: Vec<Element> = match e.node() {
                    Some(n) => sorted_edges(g, n, *l, outgoing)
                        .into_iter()
                        .map(|x| Element::Node(if outgoing { x.dst } else { x.src }))
                        .collect(),
                    None => Vec::new(),
                };
                ns.into_iter()
            }))
        }
        Step::OutE(l) | Step::InE(l) => {
            let outgoing = matches!(step, Step::OutE(_));
            Box::new(input.flat_map(move |e| {
                let es: Vec<Element> = match e.node() {
                    Some(n) => sorted_edges(g, n, *l, outgoing).into_iter().map(|x| Element::Edge(x.id)).collect(),
                    None => Vec::new(),
                };
                es.into_iter()
            }))
        }
        Step::Dst | Step::Src => {
            let to_dst = matches!(step, Step::Dst);
            Box::new(input.filter_map(move |e| match e {
                Element::Edge(id) => g.edge(id).map(|x| Element::Node(if to_dst { x.dst } else { x.src })),
                _ => None,
            }))
        }
        Step::HasLabel(l) => Box::new(input.filter(move |e| e.node().and_then(|n| g.node(n)).is_some_and(|x| x.label == *l))),
        Step::Has(k, v) => Box::new(input.filter(move |e| has_property(g, e, k, v))),
        Step::Dedup => {
            let mut seen = HashSet::new();
            Box::new(input.filter(move |e| seen.insert(e.clone())))
        }
        Step::Limit(n) => Box::new(input.take(*n)),
        Step::Where(t) => Box::new(input.filter(move |e| t.eval(g, std::iter::once(e.clone())).next().is_some())),
        Step::Union(ts) => Box::new(input.flat_map(move |e| {
            let out: Vec<Element> = ts.iter().flat_map(|t| t.eval(g, std::iter::once(e.clone()))).collect();
            out.into_iter()
        })),
        Step::Repeat(t, n) => {
            let mut s = input;
            for _ in 0..*n {
                s = t.eval(g, s);
            }
            s
        }
        Step::Closure(t) => Box::new(input.flat_map(move |e| Closure::new(g, t, e))),
        Step::Verb(v, args) => Box::new(input.flat_map(move |e| v.apply(g, &e, args).into_iter())),
    }
}

/// Breadth-first reflexive-transitive closure from one element.
struct Closure<'g> {
    g: &'g PropertyGraph,
    t: &'g Traversal,
    seen: HashSet<Element>,
    queue: VecDeque<Element>,
}

impl<'g> Closure<'g> {
    fn new(g: &'g PropertyGraph, t: &'g Traversal, start: Element) -> Self {
        Closure { g, t, seen: HashSet::from([start.clone()]), queue: VecDeque::from([start]) }
    }
}

impl Iterator for Closure<'_> {
    type Item = Element;
    fn next(&mut self) -> Option<Element> {
        let e = self.queue.pop_front()?;
        for n in self.t.eval(self.g, std::iter::once(e.clone())) {
            if self.seen.insert(n.clone()) {
                self.queue.push_back(n);
            }
        }
        Some(e)
    }
}

fn expect_label(g: &PropertyGraph, n: NodeId, l: Label, err: fn(NodeId) -> TraverseError) -> Result<(), TraverseError> {
    match g.node(n) {
        Some(x) if x.label == l => Ok(()),
        _ => Err(err(n)),
    }
}

/// Function nodes with the entry point flag.
pub fn entrypoints(g: &PropertyGraph) -> BTreeSet<NodeId> {
    let t = Traversal::identity().nodes(Label::Function).has("is_ep", true);
    t.run(g, []).iter().filter_map(Element::node).collect()
}

fn callees_step() -> Traversal {
    Traversal::identity().out(EdgeLabel::Calls).has_label(Label::Function)
}

/// Functions `f` calls directly.
pub fn callees(g: &PropertyGraph, f: NodeId) -> Result<BTreeSet<NodeId>, TraverseError> {
    expect_label(g, f, Label::Function, TraverseError::NotAFunction)?;
    Ok(callees_step().node_set(g, f))
}

/// Functions reachable from `f` over calls edges, including `f` itself.
pub fn reachables(g: &PropertyGraph, f: NodeId) -> Result<BTreeSet<NodeId>, TraverseError> {
    expect_label(g, f, Label::Function, TraverseError::NotAFunction)?;
    Ok(Traversal::identity().closure(callees_step()).node_set(g, f))
}

pub fn successors(g: &PropertyGraph, b: NodeId) -> Result<BTreeSet<NodeId>, TraverseError> {
    expect_label(g, b, Label::BasicBlock, TraverseError::NotABasicBlock)?;
    Ok(Traversal::identity().out(EdgeLabel::Succ).node_set(g, b))
}

/// All control-flow paths from `b` with at most `lmax` blocks, prefixes
/// included, depth first with successors in ascending address order.
pub fn exe_paths(g: &PropertyGraph, b: NodeId, lmax: usize) -> Result<Vec<Path>, TraverseError> {
    expect_label(g, b, Label::BasicBlock, TraverseError::NotABasicBlock)?;
    let mut out = Vec::new();
    if lmax == 0 {
        return Ok(out);
    }
    let ea = |n: NodeId| g.node(n).and_then(|x| x.int("ea")).unwrap_or(i64::MAX);
    let mut stack = vec![Path::start(b)];
    while let Some(p) = stack.pop() {
        if p.len() < lmax {
            let mut next: Vec<_> = g.out_edges(p.last()).filter(|e| e.label == EdgeLabel::Succ).collect();
            next.sort_by_key(|e| (ea(e.dst), e.id));
            for e in next.into_iter().rev() {
                stack.push(p.extended(e.id, e.dst));
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Backward slice of the value `q` used at instruction `i`: every def-edge
/// path whose first edge carries `var = q`. Later hops follow def edges of
/// any location. Paths never revisit a node and hold at most `lmax` nodes.
pub fn data_flow_bounded(g: &PropertyGraph, i: NodeId, q: &str, lmax: usize) -> Result<Vec<Path>, TraverseError> {
    expect_label(g, i, Label::Instruction, TraverseError::NotAnInstruction)?;
    let defs = |n: NodeId| sorted_edges(g, n, Some(EdgeLabel::Def), true);
    let mut out = Vec::new();
    let mut stack: Vec<Path> = Vec::new();
    if lmax >= 2 {
        for e in defs(i).into_iter().rev().filter(|e| e.text("var") == Some(q)) {
            stack.push(Path::start(i).extended(e.id, e.dst));
        }
    }
    while let Some(p) = stack.pop() {
        if p.len() < lmax {
            for e in defs(p.last()).into_iter().rev() {
                if !p.nodes.contains(&e.dst) {
                    stack.push(p.extended(e.id, e.dst));
                }
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn data_flow(g: &PropertyGraph, i: NodeId, q: &str) -> Result<Vec<Path>, TraverseError> {
    data_flow_bounded(g, i, q, DEFAULT_LMAX)
}
