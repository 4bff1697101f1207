//! Random graphs, path oracles and law checks for traversals.

use std::collections::{BTreeSet, VecDeque};

use lios_core::props;
use lios_core::supergraph::{EdgeLabel, Label, NodeId, PropertyGraph, Props, Value};
use lios_core::traverse::{calling, entrypoints, implementing, parse_query, Element, Step, Traversal};

fn nodes_of(es: &[Element]) -> Vec<NodeId> {
    es.iter().map(|e| e.node().unwrap()).collect()
}

pub fn call_graph(n: usize, edges: &[(usize, usize)]) -> (PropertyGraph, Vec<NodeId>) {
    let mut g = PropertyGraph::new();
    let ids: Vec<NodeId> = (0..n)
        .map(|i| g.add_node("Function", props! { "name" => format!("f{i}"), "ea" => i as u64 }).unwrap())
        .collect();
    for &(a, b) in edges {
        g.add_edge(ids[a], ids[b], "calls", Props::new()).unwrap();
    }
    (g, ids)
}

pub fn cfg_graph(n: usize, edges: &[(usize, usize)]) -> (PropertyGraph, Vec<NodeId>) {
    let mut g = PropertyGraph::new();
    let ids: Vec<NodeId> =
        (0..n).map(|i| g.add_node("BasicBlock", props! { "ea" => 0x1000 + 4 * i as u64 }).unwrap()).collect();
    for &(a, b) in edges {
        g.add_edge(ids[a], ids[b], "succ", Props::new()).unwrap();
    }
    (g, ids)
}

pub fn bfs_oracle(n: usize, edges: &[(usize, usize)], from: usize) -> BTreeSet<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    let mut seen = BTreeSet::from([from]);
    let mut q = VecDeque::from([from]);
    while let Some(x) = q.pop_front() {
        for &y in &adj[x] {
            if seen.insert(y) {
                q.push_back(y);
            }
        }
    }
    seen
}

/// Every path from `from` with at most `lmax` nodes, by recursion over sorted successor lists.
pub fn paths_oracle(n: usize, edges: &[(usize, usize)], from: usize, lmax: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    for a in &mut adj {
        a.sort();
    }
    fn go(adj: &[Vec<usize>], path: &mut Vec<usize>, lmax: usize, out: &mut Vec<Vec<usize>>) {
        out.push(path.clone());
        if path.len() == lmax {
            return;
        }
        let last = *path.last().unwrap();
        for &s in &adj[last] {
            path.push(s);
            go(adj, path, lmax, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(&adj, &mut vec![from], lmax, &mut out);
    out
}

/// Hand-written scans that the DSL shortcuts must agree with.
pub mod oracle {
    use super::*;

    pub fn calling(g: &PropertyGraph, name: &str) -> Vec<NodeId> {
        g.nodes_with_label(Label::Function)
            .iter()
            .copied()
            .filter(|f| {
                g.out_neighbors(*f, EdgeLabel::HasBb).any(|b| {
                    g.out_neighbors(b, EdgeLabel::Instr).any(|i| {
                        g.out_neighbors(i, EdgeLabel::Calls).any(|t| g.node(t).unwrap().name() == Some(name))
                    })
                })
            })
            .collect()
    }

    pub fn implementing(g: &PropertyGraph, label: Label, protocol: &str) -> Vec<NodeId> {
        let adopts = |c: NodeId| g.out_neighbors(c, EdgeLabel::HasProtocol).any(|p| g.node(p).unwrap().name() == Some(protocol));
        g.nodes_with_label(label)
            .iter()
            .copied()
            .filter(|n| {
                adopts(*n)
                    || g.out_neighbors(*n, EdgeLabel::Implements).any(|m| g.in_neighbors(m, EdgeLabel::HasMeth).any(adopts))
            })
            .collect()
    }
}

/// Asserts that every DSL shortcut evaluates like its documented raw expansion
/// and like a hand-written scan of `g`.
pub fn check_dsl_shortcuts(g: &PropertyGraph, name: &str) {
    {
        let eval = |q: &str| nodes_of(&parse_query(q).unwrap().eval(g));
        let fns = g.nodes_with_label(Label::Function).to_vec();
        let raw_fns = |t: Traversal| nodes_of(&Traversal::identity().nodes(Label::Function).then(t).run(g, []));

        assert_eq!(eval("functions()"), fns, "{name}");
        assert_eq!(eval("classes()"), g.nodes_with_label(Label::Class).to_vec(), "{name}");
        assert_eq!(eval("entrypoints()"), entrypoints(g).into_iter().collect::<Vec<_>>(), "{name}");

        for f in &fns {
            let callee = g.node(*f).unwrap().name().unwrap();
            let q = format!("functions().calling({callee:?})");
            // Documented expansion: has_bb, instr, calls, name filter, back to the function.
            let expansion: Vec<NodeId> = fns
                .iter()
                .copied()
                .filter(|x| {
                    !Traversal::identity()
                        .out(EdgeLabel::HasBb)
                        .out(EdgeLabel::Instr)
                        .out(EdgeLabel::Calls)
                        .has("name", callee)
                        .run_from(g, *x)
                        .is_empty()
                })
                .collect();
            assert_eq!(eval(&q), expansion, "{name}: {q}");
            assert_eq!(raw_fns(calling(callee)), expansion, "{name}: {q}");
            assert_eq!(expansion, oracle::calling(g, callee), "{name}: {q}");

            let named = eval(&format!("functions().named({callee:?})"));
            assert_eq!(named, g.find(Label::Function, "name", &Value::from(callee)), "{name}");
        }
        for p in g.nodes_with_label(Label::Protocol) {
            let proto = g.node(*p).unwrap().name().unwrap();
            assert_eq!(
                eval(&format!("classes().implementing({proto:?})")),
                oracle::implementing(g, Label::Class, proto),
                "{name}"
            );
            assert_eq!(
                eval(&format!("functions().implementing({proto:?})")),
                oracle::implementing(g, Label::Function, proto),
                "{name}"
            );
            assert_eq!(raw_fns(implementing(proto)), oracle::implementing(g, Label::Function, proto));
        }
        for l in EdgeLabel::ALL {
            let outs = eval(&format!("functions().out({l}).dedup()"));
            let mut want = Vec::new();
            let mut seen = BTreeSet::new();
            for f in &fns {
                let mut ns: Vec<(NodeId, u64)> =
                    g.out_edges(*f).filter(|e| e.label == *l).map(|e| (e.dst, e.id.0)).collect();
                ns.sort();
                want.extend(ns.into_iter().map(|(n, _)| n).filter(|n| seen.insert(*n)));
            }
            assert_eq!(outs, want, "{name}: out({l})");
            let ins = eval(&format!("functions().in(\"{l}\").limit(3)"));
            assert!(ins.len() <= 3);
        }
        let flagged = eval(r#"functions().has("is_ext", true)"#);
        assert_eq!(flagged, g.find(Label::Function, "is_ext", &Value::Bool(true)), "{name}");
    }
}

pub fn random_step(rng: &mut impl rand::Rng) -> Step {
    use EdgeLabel::*;
    let labels = [Calls, HasBb, Instr, Succ, Def, HasMeth, Implements, HasSuperclass, Isa, HasFunc];
    let l = labels[rng.gen_range(0..labels.len())];
    match rng.gen_range(0..11) {
        0 => Step::Out(Some(l)),
        1 => Step::In(Some(l)),
        2 => Step::Out(None),
        3 => Step::Dedup,
        4 => Step::Limit(rng.gen_range(0..20)),
        5 => Step::HasLabel([Label::Function, Label::BasicBlock, Label::Class, Label::Method][rng.gen_range(0..4)]),
        6 => Step::Has("is_ext".into(), Value::Bool(rng.gen())),
        7 => Step::Where(Traversal::identity().out(l)),
        8 => Step::Closure(Traversal::identity().out(Calls)),
        9 => Step::Repeat(Traversal::identity().out(l), rng.gen_range(0..3)),
        _ => Step::Nodes(Some(Label::Function)),
    }
}

pub fn random_pipeline(rng: &mut impl rand::Rng) -> Traversal {
    (0..rng.gen_range(0..4)).fold(Traversal::identity(), |t, _| t.step(random_step(rng)))
}

/// Checks associativity, identity and staged evaluation on `trials` random
/// pipeline triples over the given graphs.
pub fn check_monoid_laws(graphs: &[PropertyGraph], seed: u64, trials: usize) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    for _ in 0..trials {
        let g = &graphs[rng.gen_range(0..graphs.len())];
        let (a, b, c) = (random_pipeline(&mut rng), random_pipeline(&mut rng), random_pipeline(&mut rng));
        let label = [Label::Function, Label::Class, Label::BasicBlock][rng.gen_range(0..3)];
        let input: Vec<Element> = g.nodes_with_label(label).iter().map(|n| Element::Node(*n)).collect();

        let left = a.clone().then(b.clone()).then(c.clone()).run(g, input.clone());
        let right = a.clone().then(b.clone().then(c.clone())).run(g, input.clone());
        assert_eq!(left, right);
        // Composition agrees with running the parts one after another.
        let staged = c.run(g, b.run(g, a.run(g, input.clone())));
        assert_eq!(left, staged);
        let id = Traversal::identity();
        assert_eq!(id.clone().then(a.clone()).run(g, input.clone()), a.run(g, input.clone()));
        assert_eq!(a.clone().then(id).run(g, input.clone()), a.run(g, input.clone()));
    }
}

