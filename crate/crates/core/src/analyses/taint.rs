//! Intraprocedural taint over use-def edges.

use std::collections::{BTreeMap, BTreeSet};

use crate::supergraph::{Edge, EdgeLabel, Label, NodeId, PropertyGraph};
use crate::traverse::{Path, TraverseError, DEFAULT_LMAX};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    /// Argument register at function entry: x0 is `self`, x1 `_cmd`, explicit arguments start at x2.
    Arg(u8),
    /// Return value of calls to a function or selector with this name.
    Return(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Sink {
    pub callee: String,
    pub arg: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaintSpec {
    pub sources: Vec<Source>,
    pub sinks: Vec<Sink>,
    /// Callees whose result is never tainted.
    pub sanitizers: Vec<String>,
    /// Callees whose result depends only on the listed argument registers.
    /// Calls not listed pass taint from every argument to the result.
    pub summaries: BTreeMap<String, Vec<u8>>,
    /// Longest path in def edges; `None` means the traversal default.
    pub lmax: Option<usize>,
}

/// Function names, selectors and `Receiver.selector` forms of a call instruction's targets.
pub fn call_names(g: &PropertyGraph, inst: NodeId) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in g.out_edges(inst).filter(|e| e.label == EdgeLabel::Calls) {
        if let Some(n) = g.node(e.dst).and_then(|n| n.name()) {
            out.insert(n.to_string());
        }
        if let Some(sel) = e.text("sel") {
            out.insert(sel.to_string());
            if let Some(rcv) = e.text("rcv") {
                out.insert(format!("{rcv}.{sel}"));
            }
        }
    }
    out
}

/// Instruction nodes of a function, in block and address order.
pub fn instructions_of(g: &PropertyGraph, f: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    for b in g.out_neighbors(f, EdgeLabel::HasBb) {
        out.extend(g.out_neighbors(b, EdgeLabel::Instr));
    }
    out.sort_by_key(|i| g.node(*i).and_then(|n| n.int("ea")));
    out
}

fn entry_uses(g: &PropertyGraph, inst: NodeId, loc: &str) -> bool {
    g.node(inst).and_then(|n| n.text("entry_uses")).is_some_and(|u| u.split(',').any(|l| l == loc))
}

impl TaintSpec {
    fn matches(names: &BTreeSet<String>, wanted: &str) -> bool {
        names.contains(wanted)
    }

    /// Def edges out of `n` that carry taint into it.
    fn admits(&self, names: &BTreeSet<String>, e: &Edge) -> bool {
        if self.sanitizers.iter().any(|s| Self::matches(names, s)) {
            return false;
        }
        let allowed: Option<&Vec<u8>> = self.summaries.iter().find(|(c, _)| Self::matches(names, c)).map(|(_, v)| v);
        match allowed {
            Some(regs) => e.text("var").is_some_and(|v| regs.iter().any(|r| v == format!("x{r}"))),
            None => true,
        }
    }
}

/// Paths from each sink argument back to a source, following def edges
/// inside `f`. Every path starts at a sink call and ends at the first source
/// reached; its first edge carries the sink's argument register. A sink whose
/// argument is itself an unmodified source argument gives a one-node path.
pub fn tainted(g: &PropertyGraph, f: NodeId, spec: &TaintSpec) -> Result<Vec<Path>, TraverseError> {
    match g.node(f) {
        Some(n) if n.label == Label::Function => {}
        _ => return Err(TraverseError::NotAFunction(f)),
    }
    let insts = instructions_of(g, f);
    let inside: BTreeSet<NodeId> = insts.iter().copied().collect();
    let names: BTreeMap<NodeId, BTreeSet<String>> = insts.iter().map(|i| (*i, call_names(g, *i))).collect();

    let is_source = |i: NodeId| {
        spec.sources.iter().any(|s| match s {
            Source::Arg(r) => entry_uses(g, i, &format!("x{r}")),
            Source::Return(c) => TaintSpec::matches(&names[&i], c),
        })
    };
    let sources: BTreeSet<NodeId> = insts.iter().copied().filter(|i| is_source(*i)).collect();
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    // Nodes from which some source is reachable backwards over admitted def edges.
    let mut useful = sources.clone();
    let mut work: Vec<NodeId> = sources.iter().copied().collect();
    while let Some(d) = work.pop() {
        for e in g.in_edges(d).filter(|e| e.label == EdgeLabel::Def && inside.contains(&e.src)) {
            if spec.admits(&names[&e.src], e) && useful.insert(e.src) {
                work.push(e.src);
            }
        }
    }

    let lmax = spec.lmax.unwrap_or(DEFAULT_LMAX);
    let mut out = Vec::new();
    for &s in &insts {
        for sink in spec.sinks.iter().filter(|k| TaintSpec::matches(&names[&s], &k.callee)) {
            let q = format!("x{}", sink.arg);
            if spec.sources.iter().any(|src| matches!(src, Source::Arg(r) if format!("x{r}") == q)) && entry_uses(g, s, &q) {
                out.push(Path::start(s));
            }
            let mut stack: Vec<Path> = Vec::new();
            let mut first: Vec<&Edge> = g
                .out_edges(s)
                .filter(|e| e.label == EdgeLabel::Def && e.text("var") == Some(q.as_str()) && useful.contains(&e.dst))
                .collect();
            first.sort_by_key(|e| std::cmp::Reverse((e.dst, e.id)));
            stack.extend(first.into_iter().map(|e| Path::start(s).extended(e.id, e.dst)));
            while let Some(p) = stack.pop() {
                let last = p.last();
                if sources.contains(&last) {
                    out.push(p);
                    continue;
                }
                if p.len() >= lmax {
                    continue;
                }
                let mut next: Vec<&Edge> = g
                    .out_edges(last)
                    .filter(|e| e.label == EdgeLabel::Def && useful.contains(&e.dst) && !p.nodes.contains(&e.dst))
                    .filter(|e| spec.admits(&names[&last], e))
                    .collect();
                next.sort_by_key(|e| std::cmp::Reverse((e.dst, e.id)));
                stack.extend(next.into_iter().map(|e| p.extended(e.id, e.dst)));
            }
        }
    }
    out.dedup();
    Ok(out)
}
