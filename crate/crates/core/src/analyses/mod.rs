//! Vulnerability detectors built on graph traversals.

mod rules;
mod taint;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::supergraph::{EdgeLabel, Label, NodeId, PropertyGraph};
use crate::traverse::{entrypoints, reachables, Arg, Element, Path, Verb, Verbs};

pub use rules::{Rule, RuleError, RuleKind, RuleSet, SinkDecl, SourceDecl};
pub use taint::{call_names, instructions_of, tainted, Sink, Source, TaintSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub rule: String,
    pub severity: Severity,
    pub subject: Vec<NodeId>,
    pub evidence: Vec<Path>,
    pub message: String,
}

impl Finding {
    pub fn to_json(&self, g: &PropertyGraph) -> Json {
        let ea = |n: &NodeId| g.node(*n).and_then(|x| x.int("ea"));
        json!({
            "rule": self.rule,
            "severity": self.severity.as_str(),
            "subject": self.subject.iter().map(|n| n.0).collect::<Vec<_>>(),
            "evidence": self.evidence.iter().map(|p| json!({
                "nodes": p.nodes.iter().map(|n| n.0).collect::<Vec<_>>(),
                "edges": p.edges.iter().map(|e| e.0).collect::<Vec<_>>(),
                "ea": p.nodes.iter().map(ea).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "message": self.message,
        })
    }
}

/// External APIs reachable from entry points, grouped by framework prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventory {
    pub by_prefix: BTreeMap<String, BTreeSet<String>>,
}

impl Inventory {
    pub fn names(&self) -> BTreeSet<&str> {
        self.by_prefix.values().flatten().map(String::as_str).collect()
    }
}

/// `NSLog` -> `NS`, `CCCrypt` -> `CC`, `objc_msgSend` -> `objc`.
pub fn framework_prefix(name: &str) -> String {
    let upper = name.chars().take_while(char::is_ascii_uppercase).count();
    if upper >= 2 {
        name[..upper - 1].to_string()
    } else if upper == 0 {
        name.split_once('_').map(|(p, _)| p).filter(|p| !p.is_empty()).unwrap_or("C").to_string()
    } else {
        "other".to_string()
    }
}

pub fn api_inventory(g: &PropertyGraph) -> Inventory {
    let mut live = BTreeSet::new();
    for ep in entrypoints(g) {
        live.extend(reachables(g, ep).expect("entry points are functions"));
    }
    let mut inv = Inventory::default();
    for f in live {
        let n = g.node(f).unwrap();
        if let (true, Some(name)) = (n.flag("is_ext"), n.name()) {
            inv.by_prefix.entry(framework_prefix(name)).or_default().insert(name.to_string());
        }
    }
    inv
}

/// Info.plist of the program, when present. `Err` holds the parse error.
fn info_plist(g: &PropertyGraph) -> Option<Result<Json, String>> {
    let text = g.program()?.text("info")?;
    Some(serde_json::from_str(text).map_err(|e| e.to_string()))
}

/// Whether Info.plist turns App Transport Security off for all loads.
pub fn ats_disabled(g: &PropertyGraph) -> bool {
    matches!(info_plist(g), Some(Ok(info)) if info["NSAppTransportSecurity"]["NSAllowsArbitraryLoads"] == json!(true))
}

pub fn ats_check(g: &PropertyGraph) -> Vec<Finding> {
    let rule = RuleSet::default().rules.into_iter().find(|r| r.kind == RuleKind::Ats).expect("bundled ATS rule");
    ats_check_with(g, &rule)
}

fn ats_check_with(g: &PropertyGraph, rule: &Rule) -> Vec<Finding> {
    let program: Vec<NodeId> = g.nodes_with_label(Label::Program).to_vec();
    let finding = |severity, message: String| Finding {
        rule: rule.id.clone(),
        severity,
        subject: program.clone(),
        evidence: Vec::new(),
        message,
    };
    let info = match info_plist(g) {
        None => return Vec::new(),
        Some(Err(e)) => return vec![finding(Severity::Warning, format!("malformed Info.plist: {e}"))],
        Some(Ok(info)) => info,
    };
    let mut out = Vec::new();
    let ats = &info["NSAppTransportSecurity"];
    if ats["NSAllowsArbitraryLoads"] == json!(true) {
        out.push(finding(rule.severity, "NSAllowsArbitraryLoads is set: plain HTTP is allowed everywhere".into()));
    }
    if let Some(domains) = ats["NSExceptionDomains"].as_object() {
        for (domain, settings) in domains {
            let flags: Vec<&str> = settings
                .as_object()
                .map(|o| o.iter().filter(|(_, v)| **v == json!(true)).map(|(k, _)| k.as_str()).collect())
                .unwrap_or_default();
            out.push(finding(Severity::Info, format!("ATS exception for {domain}: {}", flags.join(", "))));
        }
    }
    out
}

fn invokes_dynamically(g: &PropertyGraph, f: NodeId, invokers: &[String]) -> bool {
    let mut scope = vec![f];
    scope.extend(
        g.out_neighbors(f, EdgeLabel::Calls).filter(|c| g.node(*c).is_some_and(|n| n.label == Label::Function && !n.flag("is_ext"))),
    );
    scope.iter().any(|func| {
        instructions_of(g, *func).into_iter().any(|i| {
            let names = call_names(g, i);
            invokers.iter().any(|v| names.contains(v))
        })
    })
}

/// Delegate methods matching the rule's selectors, with the implementing function.
fn delegate_methods(g: &PropertyGraph, selectors: &[String]) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for &m in g.nodes_with_label(Label::Method) {
        let node = g.node(m).unwrap();
        let Some(sel) = node.name() else { continue };
        if node.text("class").is_none() || !selectors.iter().any(|s| sel.contains(s.as_str())) {
            continue;
        }
        for f in g.in_neighbors(m, EdgeLabel::Implements) {
            out.push((f, m));
        }
    }
    out.sort();
    out.dedup();
    out
}

fn webview_bridge_with(g: &PropertyGraph, rule: &Rule, lmax: Option<usize>) -> Vec<Finding> {
    let spec = TaintSpec { lmax, ..rule.taint_spec() };
    let severity = if ats_disabled(g) { rule.severity } else { rule.severity.min(Severity::Warning) };
    let mut out = Vec::new();
    for (f, m) in delegate_methods(g, &rule.selectors) {
        let paths = tainted(g, f, &spec).expect("implementations are functions");
        if paths.is_empty() || !invokes_dynamically(g, f, &rule.invokers) {
            continue;
        }
        let name = g.node(f).unwrap().name().unwrap_or("?");
        let mut message = format!("{name}: {}", rule.message);
        if severity < rule.severity {
            message.push_str(" (App Transport Security is enforced)");
        }
        out.push(Finding { rule: rule.id.clone(), severity, subject: vec![f, m], evidence: paths, message });
    }
    out
}

/// Web view delegates whose request data reaches class or selector lookup
/// and a dynamic invocation, using the bundled rule.
pub fn detect_webview_bridge(g: &PropertyGraph) -> Vec<Finding> {
    let rule = RuleSet::default().rules.into_iter().find(|r| r.kind == RuleKind::WebviewBridge).expect("bundled rule");
    webview_bridge_with(g, &rule, None)
}

fn taint_rule(g: &PropertyGraph, rule: &Rule, lmax: Option<usize>) -> Vec<Finding> {
    let spec = TaintSpec { lmax, ..rule.taint_spec() };
    let functions: Vec<NodeId> = if rule.selectors.is_empty() {
        g.nodes_with_label(Label::Function).iter().copied().filter(|f| !g.node(*f).unwrap().flag("is_ext")).collect()
    } else {
        let mut fs: Vec<NodeId> = delegate_methods(g, &rule.selectors).into_iter().map(|(f, _)| f).collect();
        fs.dedup();
        fs
    };
    let mut out = Vec::new();
    for f in functions {
        let paths = tainted(g, f, &spec).expect("functions");
        if !paths.is_empty() {
            let name = g.node(f).unwrap().name().unwrap_or("?");
            out.push(Finding {
                rule: rule.id.clone(),
                severity: rule.severity,
                subject: vec![f],
                evidence: paths,
                message: format!("{name}: {}", if rule.message.is_empty() { "tainted data reaches a sink" } else { &rule.message }),
            });
        }
    }
    out
}

/// Runs every rule; findings come out in rule order, then by subject.
pub fn run_rules(g: &PropertyGraph, rules: &RuleSet) -> Vec<Finding> {
    let mut out = Vec::new();
    for r in &rules.rules {
        let mut found = match r.kind {
            RuleKind::WebviewBridge => webview_bridge_with(g, r, rules.lmax),
            RuleKind::Taint => taint_rule(g, r, rules.lmax),
            RuleKind::Ats => ats_check_with(g, r),
        };
        found.sort_by(|a, b| a.subject.cmp(&b.subject).then(b.severity.cmp(&a.severity)));
        out.extend(found);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Report {
    pub program: String,
    pub findings: Vec<Finding>,
    pub inventory: Inventory,
}

impl Report {
    pub fn build(g: &PropertyGraph, rules: &RuleSet) -> Report {
        Report {
            program: g.program().and_then(|p| p.name()).unwrap_or_default().to_string(),
            findings: run_rules(g, rules),
            inventory: api_inventory(g),
        }
    }

    pub fn max_severity(&self) -> Option<Severity> {
        self.findings.iter().map(|f| f.severity).max()
    }

    pub fn to_json(&self, g: &PropertyGraph) -> Json {
        json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "program": self.program,
            "findings": self.findings.iter().map(|f| f.to_json(g)).collect::<Vec<_>>(),
            "api_inventory": self.inventory.by_prefix,
        })
    }
}

/// `.tainted(SRC, SINK[, ARG])` on Function nodes: SRC is an argument
/// register number or the name of a call whose result is tainted; SINK
/// names a callee, ARG its argument register (default 0).
struct TaintedVerb;

impl Verb for TaintedVerb {
    fn name(&self) -> &str {
        "tainted"
    }

    fn check(&self, args: &[Arg]) -> Result<(), String> {
        let src_ok = matches!(args.first(), Some(Arg::Int(0..=7) | Arg::Str(_)));
        let sink_ok = matches!(args.get(1), Some(Arg::Str(_) | Arg::Name(_)));
        let arg_ok = matches!(args.get(2), None | Some(Arg::Int(0..=7)));
        if src_ok && sink_ok && arg_ok && args.len() <= 3 {
            Ok(())
        } else {
            Err("expects (argument register or callee, sink callee[, sink argument])".into())
        }
    }

    fn apply(&self, g: &PropertyGraph, input: &Element, args: &[Arg]) -> Vec<Element> {
        let Some(f) = input.node() else { return Vec::new() };
        let source = match &args[0] {
            Arg::Int(r) => Source::Arg(*r as u8),
            other => Source::Return(other.text().unwrap_or_default().to_string()),
        };
        let arg = match args.get(2) {
            Some(Arg::Int(a)) => *a as u8,
            _ => 0,
        };
        let spec = TaintSpec {
            sources: vec![source],
            sinks: vec![Sink { callee: args[1].text().unwrap_or_default().to_string(), arg }],
            ..Default::default()
        };
        tainted(g, f, &spec).map(|ps| ps.into_iter().map(Element::Path).collect()).unwrap_or_default()
    }
}

/// Query verbs contributed by the analyses.
pub fn verbs() -> Verbs {
    let mut v = Verbs::new();
    v.register(Arc::new(TaintedVerb));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes() {
        for (name, want) in [
            ("NSLog", "NS"),
            ("CCCrypt", "CC"),
            ("UIApplicationMain", "UI"),
            ("objc_msgSend", "objc"),
            ("malloc", "C"),
            ("_Block_copy", "C"),
            ("Foo", "other"),
        ] {
            assert_eq!(framework_prefix(name), want, "{name}");
        }
    }

    #[test]
    fn severity_order() {
        assert!(Severity::Info < Severity::Warning && Severity::Warning < Severity::Critical);
        assert_eq!(serde_json::from_str::<Severity>("\"critical\"").unwrap(), Severity::Critical);
    }
}
