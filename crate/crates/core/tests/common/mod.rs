//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod traverse_oracles;

use std::collections::BTreeSet;
use std::path::PathBuf;

use lios_core::disasm::{CallTarget, FunctionBody, Instruction, Location, UseDef};
use lios_core::objc::{self, ClassLink, ObjcModel};
use lios_fixturegen::{ExpRef, ExpTarget, Expected};

pub fn toolchain_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toolchain")
}

pub fn toolchain_binary(name: &str) -> Vec<u8> {
    std::fs::read(toolchain_dir().join(name)).unwrap()
}

/// Sections and symbols from an ld64-style link map.
#[derive(Debug, Default)]
pub struct LinkMap {
    /// (address, size, segment, section)
    pub sections: Vec<(u64, u64, String, String)>,
    /// (address, name)
    pub symbols: Vec<(u64, String)>,
}

impl LinkMap {
    pub fn load(name: &str) -> LinkMap {
        let text = std::fs::read_to_string(toolchain_dir().join(name)).unwrap();
        let mut map = LinkMap::default();
        let mut part = "";
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                if h.ends_with(':') {
                    part = h;
                }
                continue;
            }
            let hex = |s: &str| u64::from_str_radix(s.trim_start_matches("0x"), 16).unwrap();
            let cols: Vec<&str> = line.split('\t').collect();
            match part {
                "Sections:" => map.sections.push((hex(cols[0]), hex(cols[1]), cols[2].into(), cols[3].into())),
                "Symbols:" => {
                    let rest = cols[1..].join("\t");
                    let name = rest.split_once("] ").map(|x| x.1).unwrap_or(&rest).to_string();
                    map.symbols.push((hex(cols[0]), name));
                }
                _ => {}
            }
        }
        map
    }

    pub fn section(&self, name: &str) -> (u64, u64) {
        self.sections.iter().find(|s| s.3 == name).map(|s| (s.0, s.1)).unwrap()
    }

    pub fn symbol(&self, name: &str) -> u64 {
        self.symbols.iter().find(|s| s.1 == name).map(|s| s.0).unwrap()
    }

    /// Code symbols inside `__text`, excluding assembler-local labels.
    pub fn functions(&self) -> Vec<(u64, String)> {
        let (lo, size) = self.section("__text");
        let mut out: Vec<(u64, String)> = self
            .symbols
            .iter()
            .filter(|(a, n)| *a >= lo && *a < lo + size && !n.starts_with("ltmp") && !n.starts_with('l'))
            .cloned()
            .collect();
        out.sort();
        out
    }
}

/// Use-def edges by forward reachability: from each definition, walk every
/// instruction-level CFG path until the location is redefined, recording the
/// uses met on the way. Entry values are walked the same way from the entry.
pub fn path_use_def(body: &FunctionBody) -> (BTreeSet<UseDef>, BTreeSet<(u64, Location)>) {
    let insts: Vec<&Instruction> = body.instructions().collect();
    let succs = |ea: u64| -> Vec<u64> {
        let blk = body.block_of(ea).unwrap();
        if blk.last().ea != ea {
            vec![ea + 4]
        } else {
            blk.successors.clone()
        }
    };
    let walk = |start: Vec<u64>, loc: Location, hit: &mut dyn FnMut(u64)| {
        let mut seen = BTreeSet::new();
        let mut stack = start;
        while let Some(ea) = stack.pop() {
            if !seen.insert(ea) {
                continue;
            }
            let i = body.instruction(ea).unwrap();
            if i.uses.contains(&loc) {
                hit(ea);
            }
            if !i.defs.contains(&loc) {
                stack.extend(succs(ea));
            }
        }
    };
    let mut edges = BTreeSet::new();
    for d in &insts {
        for loc in &d.defs {
            walk(succs(d.ea), *loc, &mut |u| {
                edges.insert(UseDef { use_ea: u, def_ea: d.ea, loc: *loc });
            });
        }
    }
    let used: BTreeSet<Location> = insts.iter().flat_map(|i| i.uses.iter().copied()).collect();
    let mut params = BTreeSet::new();
    for loc in used {
        walk(vec![body.entry_ea], loc, &mut |u| {
            params.insert((u, loc));
        });
    }
    (edges, params)
}

/// Generates a builtin fixture and lifts it with default options.
pub fn lift_builtin(name: &str) -> (lios_core::supergraph::PropertyGraph, lios_fixturegen::Expected) {
    lift_manifest(&lios_fixturegen::builtin(name).unwrap())
}

pub fn lift_manifest(m: &lios_fixturegen::Manifest) -> (lios_core::supergraph::PropertyGraph, lios_fixturegen::Expected) {
    let fx = lios_fixturegen::generate(m).unwrap();
    let image = lios_core::macho::parse_macho(&fx.binary).unwrap();
    let meta = lios_core::pipeline::AppMetadata { name: m.name.clone(), ..Default::default() };
    let lifted = lios_core::pipeline::lift_image(&image, &meta, &Default::default());
    (lifted.graph, fx.expected)
}

/// Packages a builtin fixture as an .ipa, ingests it and lifts it.
pub fn lift_app(name: &str) -> lios_core::supergraph::PropertyGraph {
    let m = lios_fixturegen::builtin(name).unwrap();
    let fx = lios_fixturegen::generate(&m).unwrap();
    let ipa = lios_fixturegen::package_ipa(&m, &fx.binary).unwrap();
    let app = lios_core::ingest::ingest_bytes(&ipa, name).unwrap();
    lios_core::pipeline::lift_ingested(&app, None, &Default::default()).graph
}

pub fn class_link(r: &ExpRef) -> ClassLink {
    match r {
        ExpRef::Nil => ClassLink::Nil,
        ExpRef::Local(a) => ClassLink::Local(*a),
        ExpRef::External(n) => ClassLink::External(n.clone()),
    }
}

/// Name, meta flag and (selector, implementation) pairs of an external class.
type Placeholder = (String, bool, Vec<(String, u64)>);

/// Asserts that in-image classes and external placeholders equal the manifest.
pub fn check_classes(model: &ObjcModel, exp: &Expected) {
    let mut want = exp.classes.clone();
    want.sort_by_key(|c| c.address);
    let got: Vec<_> = model.classes.iter().filter(|c| !c.is_external && !c.malformed).collect();
    assert_eq!(got.len(), want.len(), "{}: class count", exp.name);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((g.name.as_str(), g.address, g.is_metaclass), (w.name.as_str(), w.address, w.is_meta));
        assert_eq!(g.metaclass_ref, class_link(&w.isa), "{} isa", w.name);
        assert_eq!(g.superclass_ref, class_link(&w.superclass), "{} superclass", w.name);
        let methods: Vec<(String, u64)> =
            g.methods.iter().map(|m| (m.selector.clone(), m.impl_address.unwrap())).collect();
        let want_methods: Vec<(String, u64)> = w.methods.iter().map(|m| (m.sel.clone(), m.imp)).collect();
        assert_eq!(methods, want_methods, "{} methods", w.name);
        let ivars: Vec<(String, String, u32)> =
            g.ivars.iter().map(|i| (i.name.clone(), i.type_encoding.clone(), i.offset)).collect();
        assert_eq!(ivars, w.ivars);
        let props: Vec<(String, String)> =
            g.properties.iter().map(|p| (p.name.clone(), p.attributes.clone())).collect();
        assert_eq!(props, w.properties);
        let protos: Vec<String> = g
            .protocol_refs
            .iter()
            .map(|a| model.protocols[model.protocol_at(*a).unwrap()].name.clone())
            .collect();
        assert_eq!(protos, w.protocols, "{} protocols", w.name);
    }
    let placeholders: Vec<Placeholder> = model
        .classes
        .iter()
        .filter(|c| c.is_external)
        .map(|c| {
            (
                c.name.clone(),
                c.is_metaclass,
                c.methods.iter().map(|m| (m.selector.clone(), m.impl_address.unwrap())).collect(),
            )
        })
        .collect();
    let mut placeholders = placeholders;
    placeholders.sort();
    let want_ph: Vec<Placeholder> = exp
        .placeholders
        .iter()
        .map(|p| (p.name.clone(), p.is_meta, p.methods.iter().map(|m| (m.sel.clone(), m.imp)).collect()))
        .collect();
    assert_eq!(placeholders, want_ph, "{}: placeholders", exp.name);
}

/// Asserts that protocols equal the manifest.
pub fn check_protocols(model: &ObjcModel, exp: &Expected) {
    let mut want = exp.protocols.clone();
    want.sort_by_key(|p| p.address);
    assert_eq!(model.protocols.len(), want.len());
    for (g, w) in model.protocols.iter().zip(&want) {
        assert_eq!((g.name.as_str(), g.address), (w.name.as_str(), w.address));
        let sels = |ms: &[objc::ObjcMethod]| ms.iter().map(|m| m.selector.clone()).collect::<Vec<_>>();
        assert_eq!(sels(&g.required_methods), w.required);
        assert_eq!(sels(&g.optional_methods), w.optional);
        assert!(g.required_methods.iter().chain(&g.optional_methods).all(|m| m.impl_address.is_none()));
        let inh: Vec<String> = g
            .inherited_protocol_refs
            .iter()
            .map(|a| model.protocols[model.protocol_at(*a).unwrap()].name.clone())
            .collect();
        assert_eq!(inh, w.inherits);
    }
}

pub fn to_exp(t: &CallTarget) -> ExpTarget {
    match t {
        CallTarget::Internal(a) => ExpTarget::Internal(*a),
        CallTarget::External { name, selector, receiver } => {
            ExpTarget::External { name: name.clone(), sel: selector.clone(), rcv: receiver.clone() }
        }
        CallTarget::Unresolved => panic!("fixtures have no indirect calls"),
    }
}
