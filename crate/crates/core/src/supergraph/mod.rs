//! The labeled property multi-graph that ties loader, Objective-C and
//! disassembly results together, plus its persistence.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

mod build;
mod dump;
mod passes;

pub use build::{build_from_frontends, Frontends};
pub use dump::{dump, dump_to_string, load, load_str, GRAPH_HEADER};
pub use passes::{link_pass, mark_entrypoints, EntrypointConfig, PassReport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("edge endpoint {0} does not exist")]
    MissingEndpoint(NodeId),
    #[error("{label} edge cannot connect {src} to {dst}")]
    LabelDomainViolation { label: EdgeLabel, src: Label, dst: Label },
    #[error("property `{key}` on {label} must be {expected}")]
    PropertyType { label: Label, key: String, expected: &'static str },
    #[error("malformed graph dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
}

macro_rules! labels {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),* }
            }
        }

        impl FromStr for $name {
            type Err = GraphError;
            fn from_str(s: &str) -> Result<Self, GraphError> {
                match s {
                    $($text => Ok($name::$variant),)*
                    other => Err(GraphError::UnknownLabel(other.to_string())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

labels!(Label {
    Program => "Program",
    Function => "Function",
    Method => "Method",
    Class => "Class",
    Protocol => "Protocol",
    BasicBlock => "BasicBlock",
    Instruction => "Instruction",
    Ivar => "Ivar",
});

labels!(EdgeLabel {
    Implements => "implements",
    Succ => "succ",
    Def => "def",
    Calls => "calls",
    HasSuperclass => "has_superclass",
    HasProtocol => "has_protocol",
    Isa => "isa",
    HasMeth => "has_meth",
    HasBb => "has_bb",
    Instr => "instr",
    Xref => "xref",
    HasFunc => "has_func",
    HasIvar => "has_ivar",
});

impl EdgeLabel {
    /// Whether an edge with this label may connect `src` to `dst`.
    pub fn admits(self, src: Label, dst: Label) -> bool {
        use Label::*;
        match self {
            EdgeLabel::Implements => src == Function && dst == Method,
            EdgeLabel::Succ => src == BasicBlock && dst == BasicBlock,
            EdgeLabel::Def => src == Instruction && dst == Instruction,
            // Function-level calls, plus the per-site edge from the call instruction.
            EdgeLabel::Calls => matches!(src, Function | Instruction) && dst == Function,
            EdgeLabel::HasSuperclass | EdgeLabel::Isa => src == Class && dst == Class,
            EdgeLabel::HasProtocol => matches!(src, Class | Protocol) && dst == Protocol,
            EdgeLabel::HasMeth => matches!(src, Class | Protocol) && dst == Method,
            EdgeLabel::HasBb => src == Function && dst == BasicBlock,
            EdgeLabel::Instr => src == BasicBlock && dst == Instruction,
            EdgeLabel::Xref => src == Instruction && dst != Program,
            EdgeLabel::HasFunc => src == Program && dst == Function,
            EdgeLabel::HasIvar => src == Class && dst == Ivar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Text(String),
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Bytes(b) => b.iter().try_for_each(|x| write!(f, "{x:02x}")),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}
impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}
impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}
impl From<u64> for Value {
    fn from(i: u64) -> Self {
        Value::Int(i as i64)
    }
}
impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}
impl From<Vec<u8>> for Value {
    fn from(b: Vec<u8>) -> Self {
        Value::Bytes(b)
    }
}

pub type Props = BTreeMap<String, Value>;

/// Builds a property map from `key => value` pairs.
#[macro_export]
macro_rules! props {
    ($($k:expr => $v:expr),* $(,)?) => {{
        #[allow(unused_mut)]
        let mut p = $crate::supergraph::Props::new();
        $(p.insert($k.to_string(), $crate::supergraph::Value::from($v));)*
        p
    }};
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub label: Label,
    pub props: Props,
}

impl Node {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.props.get(key)
    }
    pub fn text(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_str)
    }
    pub fn int(&self, key: &str) -> Option<i64> {
        self.get(key).and_then(Value::as_int)
    }
    pub fn flag(&self, key: &str) -> bool {
        self.get(key).and_then(Value::as_bool).unwrap_or(false)
    }
    pub fn name(&self) -> Option<&str> {
        self.text("name")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub label: EdgeLabel,
    pub props: Props,
}

impl Edge {
    pub fn text(&self, key: &str) -> Option<&str> {
        self.props.get(key).and_then(Value::as_str)
    }
}

/// Expected value type of a known property, if `key` is known for `label`.
fn property_type(label: Label, key: &str) -> Option<&'static str> {
    use Label::*;
    match (label, key) {
        (Program | Function | BasicBlock | Instruction | Ivar, "ea") => Some("integer"),
        (Program | Function | Method | Class | Protocol, "name") => Some("text"),
        (Program, "entltl" | "info") | (Function, "llvm") | (Instruction, "asm") => Some("text"),
        (Function, "is_ext" | "is_ep") => Some("boolean"),
        (Instruction, "bytes") => Some("byte-blob"),
        _ => None,
    }
}

fn check_property(label: Label, key: &str, v: &Value) -> Result<(), GraphError> {
    let Some(expected) = property_type(label, key) else { return Ok(()) };
    let ok = matches!(
        (expected, v),
        ("integer", Value::Int(_)) | ("text", Value::Text(_)) | ("boolean", Value::Bool(_)) | ("byte-blob", Value::Bytes(_))
    );
    if ok {
        Ok(())
    } else {
        Err(GraphError::PropertyType { label, key: key.to_string(), expected })
    }
}

/// Directed labeled property multi-graph with label and property indexes.
#[derive(Debug, Clone, Default)]
pub struct PropertyGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    out: Vec<Vec<EdgeId>>,
    inc: Vec<Vec<EdgeId>>,
    by_label: BTreeMap<Label, Vec<NodeId>>,
    by_prop: HashMap<(Label, String, Value), Vec<NodeId>>,
}

/// Properties not worth indexing: large or practically unique blobs.
fn indexed(key: &str) -> bool {
    !matches!(key, "info" | "entltl" | "bytes" | "asm" | "llvm")
}

impl PropertyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node with a label given by name.
    pub fn add_node(&mut self, label: &str, props: Props) -> Result<NodeId, GraphError> {
        let label: Label = label.parse()?;
        self.add_labeled(label, props)
    }

    pub fn add_labeled(&mut self, label: Label, props: Props) -> Result<NodeId, GraphError> {
        for (k, v) in &props {
            check_property(label, k, v)?;
        }
        let id = NodeId(self.nodes.len() as u64);
        for (k, v) in &props {
            if indexed(k) {
                self.by_prop.entry((label, k.clone(), v.clone())).or_default().push(id);
            }
        }
        self.by_label.entry(label).or_default().push(id);
        self.nodes.push(Node { id, label, props });
        self.out.push(Vec::new());
        self.inc.push(Vec::new());
        Ok(id)
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, label: &str, props: Props) -> Result<EdgeId, GraphError> {
        let label: EdgeLabel = label.parse()?;
        self.add_labeled_edge(src, dst, label, props)
    }

    pub fn add_labeled_edge(
        &mut self,
        src: NodeId,
        dst: NodeId,
        label: EdgeLabel,
        props: Props,
    ) -> Result<EdgeId, GraphError> {
        let s = self.node(src).ok_or(GraphError::MissingEndpoint(src))?.label;
        let d = self.node(dst).ok_or(GraphError::MissingEndpoint(dst))?.label;
        if !label.admits(s, d) {
            return Err(GraphError::LabelDomainViolation { label, src: s, dst: d });
        }
        let id = EdgeId(self.edges.len() as u64);
        self.edges.push(Edge { id, src, dst, label, props });
        self.out[src.0 as usize].push(id);
        self.inc[dst.0 as usize].push(id);
        Ok(id)
    }

    pub fn set_property(&mut self, id: NodeId, key: &str, value: Value) -> Result<(), GraphError> {
        let node = self.nodes.get(id.0 as usize).ok_or(GraphError::MissingEndpoint(id))?;
        let label = node.label;
        check_property(label, key, &value)?;
        if let Some(old) = node.props.get(key).cloned() {
            if indexed(key) {
                if let Some(ids) = self.by_prop.get_mut(&(label, key.to_string(), old)) {
                    ids.retain(|n| *n != id);
                }
            }
        }
        if indexed(key) {
            let ids = self.by_prop.entry((label, key.to_string(), value.clone())).or_default();
            let pos = ids.binary_search(&id).unwrap_or_else(|p| p);
            ids.insert(pos, id);
        }
        self.nodes[id.0 as usize].props.insert(key.to_string(), value);
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0 as usize)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id.0 as usize)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.out.get(id.0 as usize).into_iter().flatten().map(|e| &self.edges[e.0 as usize])
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.inc.get(id.0 as usize).into_iter().flatten().map(|e| &self.edges[e.0 as usize])
    }

    /// Targets of outgoing edges with `label`, in insertion order.
    pub fn out_neighbors(&self, id: NodeId, label: EdgeLabel) -> impl Iterator<Item = NodeId> + '_ {
        self.out_edges(id).filter(move |e| e.label == label).map(|e| e.dst)
    }

    pub fn in_neighbors(&self, id: NodeId, label: EdgeLabel) -> impl Iterator<Item = NodeId> + '_ {
        self.in_edges(id).filter(move |e| e.label == label).map(|e| e.src)
    }

    pub fn nodes_with_label(&self, label: Label) -> &[NodeId] {
        self.by_label.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes with `label` whose property `key` equals `value`, ascending by id.
    pub fn find(&self, label: Label, key: &str, value: &Value) -> Vec<NodeId> {
        if indexed(key) {
            return self.by_prop.get(&(label, key.to_string(), value.clone())).cloned().unwrap_or_default();
        }
        self.nodes_with_label(label)
            .iter()
            .copied()
            .filter(|n| self.nodes[n.0 as usize].props.get(key) == Some(value))
            .collect()
    }

    pub fn find_one(&self, label: Label, key: &str, value: impl Into<Value>) -> Option<NodeId> {
        self.find(label, key, &value.into()).first().copied()
    }

    pub fn program(&self) -> Option<&Node> {
        self.nodes_with_label(Label::Program).first().and_then(|id| self.node(*id))
    }

    pub fn node_counts(&self) -> BTreeMap<String, usize> {
        self.by_label.iter().map(|(l, v)| (l.to_string(), v.len())).collect()
    }

    pub fn edge_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            *out.entry(e.label.to_string()).or_insert(0) += 1;
        }
        out
    }

    pub fn property_count(&self) -> usize {
        self.nodes.iter().map(|n| n.props.len()).sum::<usize>() + self.edges.iter().map(|e| e.props.len()).sum::<usize>()
    }

    /// Whole-graph check of endpoints, edge label domains and known property types.
    pub fn validate(&self) -> Vec<GraphError> {
        let mut errors = Vec::new();
        for n in &self.nodes {
            for (k, v) in &n.props {
                if let Err(e) = check_property(n.label, k, v) {
                    errors.push(e);
                }
            }
        }
        for e in &self.edges {
            match (self.node(e.src), self.node(e.dst)) {
                (Some(s), Some(d)) => {
                    if !e.label.admits(s.label, d.label) {
                        errors.push(GraphError::LabelDomainViolation { label: e.label, src: s.label, dst: d.label });
                    }
                }
                (None, _) => errors.push(GraphError::MissingEndpoint(e.src)),
                (_, None) => errors.push(GraphError::MissingEndpoint(e.dst)),
            }
        }
        errors
    }

    /// Structural equality: same nodes and edges with the same ids, labels and properties.
    pub fn same_as(&self, other: &PropertyGraph) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}
