use std::collections::BTreeSet;

use lios_core::macho::parse_macho;
use lios_core::pipeline::{lift_image, AppMetadata, LiftOptions, Lifted};
use lios_core::props;
use lios_core::supergraph::{
    build_from_frontends, dump_to_string, link_pass, load_str, mark_entrypoints, EdgeLabel, EntrypointConfig,
    Frontends, GraphError, Label, PropertyGraph, Props, Value,
};
use lios_fixturegen::{builtin, builtin_names, generate, parse_manifest, ExpTarget, Expected, Manifest};

fn lift_manifest(m: &Manifest, opts: &LiftOptions) -> (Lifted, Expected) {
    let fx = generate(m).unwrap();
    let image = parse_macho(&fx.binary).unwrap();
    let meta = AppMetadata { name: m.name.clone(), ..Default::default() };
    (lift_image(&image, &meta, opts), fx.expected)
}

fn lift(name: &str) -> (Lifted, Expected) {
    lift_manifest(&builtin(name).unwrap(), &LiftOptions::default())
}

fn function_named(g: &PropertyGraph, name: &str) -> lios_core::supergraph::NodeId {
    g.find_one(Label::Function, "name", name).unwrap_or_else(|| panic!("no function {name}"))
}

#[test]
fn add_node_checks_labels_and_property_types() {
    let mut g = PropertyGraph::new();
    let main = g.add_node("Function", props! { "name" => "main", "ea" => 0x100003f00u64, "is_ext" => false }).unwrap();
    let ext = g.add_node("Function", props! { "name" => "NSClassFromString", "is_ext" => true, "ea" => -1i64 }).unwrap();
    assert_ne!(main, ext);
    assert_eq!(g.find(Label::Function, "is_ext", &Value::Bool(true)), vec![ext]);
    assert_eq!(g.node(ext).unwrap().int("ea"), Some(-1));
    assert_eq!(g.add_node("Banana", Props::new()), Err(GraphError::UnknownLabel("Banana".into())));
    assert!(matches!(
        g.add_node("Function", props! { "ea" => "not a number" }),
        Err(GraphError::PropertyType { .. })
    ));
    // Unknown keys are allowed.
    g.add_node("Class", props! { "name" => "A", "colour" => "blue" }).unwrap();
}

#[test]
fn add_edge_enforces_label_domains() {
    let mut g = PropertyGraph::new();
    let b1 = g.add_node("BasicBlock", props! { "ea" => 0x10u64 }).unwrap();
    let b2 = g.add_node("BasicBlock", props! { "ea" => 0x20u64 }).unwrap();
    let f = g.add_node("Function", props! { "ea" => 0x10u64 }).unwrap();
    g.add_edge(b1, b2, "succ", Props::new()).unwrap();
    assert_eq!(
        g.add_edge(f, b1, "succ", Props::new()),
        Err(GraphError::LabelDomainViolation { label: EdgeLabel::Succ, src: Label::Function, dst: Label::BasicBlock })
    );
    let i1 = g.add_node("Instruction", props! { "ea" => 0x10u64 }).unwrap();
    let i2 = g.add_node("Instruction", props! { "ea" => 0x14u64 }).unwrap();
    let d = g.add_edge(i2, i1, "def", props! { "var" => "x8" }).unwrap();
    assert_eq!(g.edge(d).unwrap().text("var"), Some("x8"));
    assert_eq!(
        g.add_edge(i2, lios_core::supergraph::NodeId(99), "def", Props::new()),
        Err(GraphError::MissingEndpoint(lios_core::supergraph::NodeId(99)))
    );
    assert!(matches!(g.add_edge(i1, i2, "teleports", Props::new()), Err(GraphError::UnknownLabel(_))));
    // Parallel edges with the same endpoints are kept.
    g.add_edge(i2, i1, "def", props! { "var" => "x9" }).unwrap();
    assert_eq!(g.out_neighbors(i2, EdgeLabel::Def).count(), 2);
    assert!(g.validate().is_empty());
}

#[test]
fn empty_frontends_give_a_lone_program_node() {
    let (g, warnings) = build_from_frontends(&Frontends { name: "empty".into(), ..Default::default() });
    assert!(warnings.is_empty());
    assert_eq!(g.node_count(), 1);
    assert_eq!(g.edge_count(), 0);
    assert_eq!(g.program().unwrap().name(), Some("empty"));
    let text = dump_to_string(&g);
    assert_eq!(text.lines().count(), 2);
    assert!(load_str(&text).unwrap().same_as(&g));
}

#[test]
fn fixture_graphs_match_manifest_counts() {
    for name in builtin_names() {
        let (lifted, exp) = lift(name);
        let g = &lifted.graph;
        assert!(g.validate().is_empty(), "{name}: {:?}", g.validate());
        let nodes = g.node_counts();
        for (label, n) in &exp.node_counts {
            assert_eq!(nodes.get(label).copied().unwrap_or(0), *n, "{name}: {label} nodes");
        }
        let edges = g.edge_counts();
        for (label, n) in &exp.edge_counts {
            assert_eq!(edges.get(label).copied().unwrap_or(0), *n, "{name}: {label} edges");
        }
        // Linked names, external functions, and entry points.
        for f in &exp.functions {
            let id = g.find_one(Label::Function, "ea", f.address).unwrap();
            let node = g.node(id).unwrap();
            assert_eq!(node.name(), Some(f.name.as_str()), "{name}");
            if f.exported {
                assert!(node.flag("is_ep"), "{name}: {} should be an entry point", f.name);
            }
        }
        for i in &exp.imports {
            let id = function_named(g, i);
            assert_eq!(g.node(id).unwrap().int("ea"), Some(-1));
            assert!(g.node(id).unwrap().flag("is_ext"));
        }
    }
}

#[test]
fn calls_edges_match_devirtualized_manifest() {
    let (lifted, exp) = lift("msgsend");
    let g = &lifted.graph;
    let mut got = BTreeSet::new();
    for e in g.edges().iter().filter(|e| e.label == EdgeLabel::Calls) {
        let src = g.node(e.src).unwrap();
        if src.label != Label::Instruction {
            continue;
        }
        let dst = g.node(e.dst).unwrap();
        let target = if dst.flag("is_ext") {
            ExpTarget::External {
                name: dst.name().unwrap().to_string(),
                sel: e.text("sel").map(str::to_string),
                rcv: e.text("rcv").map(str::to_string),
            }
        } else {
            ExpTarget::Internal(dst.int("ea").unwrap() as u64)
        };
        got.insert((src.int("ea").unwrap() as u64, target));
    }
    let want: BTreeSet<(u64, ExpTarget)> =
        exp.call_sites.iter().flat_map(|c| c.targets.iter().map(move |t| (c.site, t.clone()))).collect();
    assert_eq!(got, want);
}

#[test]
fn withheld_objc_frontend_still_builds() {
    let opts = LiftOptions { objc: false, ..Default::default() };
    let (lifted, exp) = lift_manifest(&builtin("msgsend").unwrap(), &opts);
    let g = &lifted.graph;
    assert!(g.validate().is_empty());
    assert_eq!(g.nodes_with_label(Label::Class).len(), 0);
    assert_eq!(g.nodes_with_label(Label::Function).len(), exp.node_counts["Function"]);
    let msgsend = function_named(g, "objc_msgSend");
    let internal_sends = g
        .edges()
        .iter()
        .filter(|e| e.label == EdgeLabel::Calls && g.node(e.src).unwrap().label == Label::Instruction)
        .filter(|e| g.node(e.src).unwrap().text("asm").is_some_and(|a| a.contains("0x")) && e.dst != msgsend)
        .filter(|e| !g.node(e.dst).unwrap().flag("is_ext"))
        .count();
    // Only plain direct calls (bl _pickClass and friends) stay internal.
    let direct: usize = exp
        .call_sites
        .iter()
        .filter(|c| c.targets.len() == 1)
        .filter(|c| matches!(c.targets[0], ExpTarget::Internal(_)))
        .filter(|c| {
            let a = match c.targets[0] {
                ExpTarget::Internal(a) => a,
                _ => unreachable!(),
            };
            exp.functions.iter().any(|f| f.address == a && !f.name.contains('['))
        })
        .count();
    assert_eq!(internal_sends, direct);
}

#[test]
fn link_pass_inserts_implements_and_upgrades_synthetic_names() {
    let m = parse_manifest(
        r#"{
        "name": "stripped",
        "functions": [
            {"name": "-[Box open]", "stripped": true, "code": ["ret"]},
            {"name": "-[Box close]", "code": ["ret"]}
        ],
        "classes": [{"name": "Box", "superclass": "NSObject",
            "methods": [{"sel": "open", "impl": "-[Box open]"}, {"sel": "close", "impl": "-[Box close]"}]}]
    }"#,
    )
    .unwrap();
    let (lifted, exp) = lift_manifest(&m, &LiftOptions::default());
    let g = &lifted.graph;
    let open = exp.function("-[Box open]").unwrap().address;
    let id = g.find_one(Label::Function, "ea", open).unwrap();
    assert_eq!(g.node(id).unwrap().name(), Some("-[Box open]"));
    assert_eq!(g.edge_counts()["implements"], 2);

    let mut again = g.clone();
    let report = link_pass(&mut again);
    assert_eq!((report.inserted, report.updated), (0, 0));
    assert!(again.same_as(g));
}

#[test]
fn link_pass_counts_and_warnings() {
    let mut g = PropertyGraph::new();
    let f = g.add_node("Function", props! { "ea" => 0x100004000u64, "name" => "sub_100004000", "is_ext" => false }).unwrap();
    let c = g.add_node("Class", props! { "name" => "A" }).unwrap();
    for (sel, imp) in [("run", 0x100004000u64), ("gone", 0x100009000u64)] {
        let m = g
            .add_node("Method", props! { "name" => sel, "class" => "A", "is_class_method" => false, "imp" => imp })
            .unwrap();
        g.add_edge(c, m, "has_meth", Props::new()).unwrap();
    }
    let report = link_pass(&mut g);
    assert_eq!(report.inserted, 1);
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(g.node(f).unwrap().name(), Some("-[A run]"));
}

#[test]
fn entry_points() {
    // Only main.
    let (lifted, _) = lift("plain");
    let eps: Vec<_> = lifted.graph.find(Label::Function, "is_ep", &Value::Bool(true));
    assert_eq!(eps.len(), 1);
    assert_eq!(lifted.graph.node(eps[0]).unwrap().name(), Some("main"));

    // main plus the web view delegate callback; the static helper is not one.
    let (lifted, _) = lift("webview_vuln");
    let g = &lifted.graph;
    let eps: BTreeSet<&str> = g
        .find(Label::Function, "is_ep", &Value::Bool(true))
        .into_iter()
        .map(|f| g.node(f).unwrap().name().unwrap())
        .collect();
    assert_eq!(
        eps,
        BTreeSet::from(["main", "-[WebDelegate webView:shouldStartLoadWithRequest:navigationType:]"])
    );

    // Without the protocol in the configuration only main remains.
    let mut g2 = g.clone();
    for f in g2.nodes_with_label(Label::Function).to_vec() {
        g2.set_property(f, "is_ep", Value::Bool(false)).unwrap();
    }
    mark_entrypoints(&mut g2, &EntrypointConfig { protocols: Default::default() });
    assert_eq!(g2.find(Label::Function, "is_ep", &Value::Bool(true)).len(), 1);
}

#[test]
fn dump_round_trips_every_fixture() {
    for name in builtin_names() {
        let (lifted, _) = lift(name);
        let text = dump_to_string(&lifted.graph);
        assert!(text.starts_with("lios-graph v1\n"));
        let back = load_str(&text).unwrap();
        assert!(back.same_as(&lifted.graph), "{name}");
        assert_eq!(dump_to_string(&back), text);
    }
}

#[test]
fn builds_are_deterministic() {
    for name in ["msgsend", "webview_vuln", "hierarchy"] {
        let (a, _) = lift(name);
        let (b, _) = lift(name);
        assert!(a.graph.same_as(&b.graph));
    }
}

#[test]
fn malformed_dumps() {
    let bad = |text: &str| match load_str(text) {
        Err(GraphError::MalformedDump { line, .. }) => line,
        other => panic!("expected MalformedDump, got {other:?}"),
    };
    let node = r#"{"t":"n","id":0,"l":"Program","p":{}}"#;
    assert_eq!(bad(""), 1);
    assert_eq!(bad("lios-graph v2\n"), 1);
    assert_eq!(bad(&format!("lios-graph v1\n{node}\n{{\"t\":\"e\",\"s\":0,\"d\":7,\"l\":\"has_func\",\"p\":{{}}}}\n")), 3);
    assert_eq!(bad("lios-graph v1\n{\"t\":\"n\",\"id\":3,\"l\":\"Program\",\"p\":{}}\n"), 2);
    assert_eq!(bad("lios-graph v1\n{\"t\":\"n\",\"id\":0,\"l\":\"Banana\",\"p\":{}}\n"), 2);
    assert_eq!(bad("lios-graph v1\n{\"t\":\"n\",\"id\":0,\"l\":\"Program\",\"p\":{\"x\":1.5}}\n"), 2);
    assert_eq!(bad(&format!("lios-graph v1\n{node}\nnot json\n")), 3);
    let bytes = "lios-graph v1\n{\"t\":\"n\",\"id\":0,\"l\":\"Instruction\",\"p\":{\"bytes\":{\"b64\":\"HyAD1Q==\"}}}\n";
    let g = load_str(bytes).unwrap();
    assert_eq!(g.node(lios_core::supergraph::NodeId(0)).unwrap().get("bytes"), Some(&Value::Bytes(vec![0x1f, 0x20, 0x03, 0xd5])));
}
