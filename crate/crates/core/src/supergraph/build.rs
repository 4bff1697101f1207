//! Graph construction from frontend results.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{EdgeLabel, Label, NodeId, PropertyGraph, Props, Value};
use crate::disasm::{CallSite, CallTarget, FunctionBody, Location};
use crate::macho::MachoImage;
use crate::objc::ObjcModel;
use crate::props;

/// Everything the frontends produced for one binary. Any part may be missing.
#[derive(Debug, Clone, Default)]
pub struct Frontends<'a> {
    pub name: String,
    pub image_base: Option<u64>,
    /// Entitlements plist text.
    pub entitlements: Option<String>,
    /// Info.plist as canonical JSON text.
    pub info: Option<String>,
    pub model: Option<&'a ObjcModel>,
    pub bodies: Option<&'a BTreeMap<u64, FunctionBody>>,
    pub call_sites: &'a [CallSite],
    /// Imported function names (no leading underscore).
    pub imports: Vec<String>,
    /// Addresses of exported functions.
    pub exported: BTreeSet<u64>,
}

impl<'a> Frontends<'a> {
    /// Loader facts of an image: base, entitlements, imports, exports.
    pub fn from_image(name: &str, image: &MachoImage) -> Self {
        let imports: BTreeSet<String> = image.stub_names().into_values().collect();
        let exported = image
            .code_symbols()
            .into_iter()
            .filter(|(_, s)| s.is_exported)
            .map(|(a, _)| a)
            .collect();
        Frontends {
            name: name.to_string(),
            image_base: Some(image.image_base),
            entitlements: image.entitlements.clone(),
            imports: imports.into_iter().collect(),
            exported,
            ..Default::default()
        }
    }
}

fn site_props(t: &CallTarget) -> Props {
    match t {
        CallTarget::External { selector, receiver, .. } => {
            let mut p = Props::new();
            if let Some(s) = selector {
                p.insert("sel".into(), Value::from(s.as_str()));
            }
            if let Some(r) = receiver {
                p.insert("rcv".into(), Value::from(r.as_str()));
            }
            p
        }
        _ => Props::new(),
    }
}

/// Builds the supergraph. Degraded inputs give a degraded graph and warnings.
pub fn build_from_frontends(f: &Frontends) -> (PropertyGraph, Vec<String>) {
    let mut g = PropertyGraph::new();
    let mut warnings = Vec::new();
    // Every edge below respects the label table by construction.
    let edge = |g: &mut PropertyGraph, s: NodeId, d: NodeId, l: EdgeLabel, p: Props| {
        g.add_labeled_edge(s, d, l, p).expect("builder emits well-formed edges");
    };
    let node = |g: &mut PropertyGraph, l: Label, p: Props| g.add_labeled(l, p).expect("builder emits typed properties");

    let mut program = props! { "name" => f.name.as_str() };
    if let Some(b) = f.image_base {
        program.insert("ea".into(), Value::from(b));
    }
    if let Some(e) = &f.entitlements {
        program.insert("entltl".into(), Value::from(e.as_str()));
    }
    if let Some(i) = &f.info {
        program.insert("info".into(), Value::from(i.as_str()));
    }
    let prog = node(&mut g, Label::Program, program);

    // Functions.
    let empty = BTreeMap::new();
    let bodies = f.bodies.unwrap_or(&empty);
    let mut fn_by_ea: BTreeMap<u64, NodeId> = BTreeMap::new();
    for body in bodies.values() {
        let id = node(
            &mut g,
            Label::Function,
            props! {
                "ea" => body.entry_ea,
                "name" => body.name.as_str(),
                "is_ext" => false,
                "is_ep" => false,
                "exported" => f.exported.contains(&body.entry_ea),
            },
        );
        edge(&mut g, prog, id, EdgeLabel::HasFunc, Props::new());
        fn_by_ea.insert(body.entry_ea, id);
    }
    let mut ext_by_name: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut ext_names: BTreeSet<String> = f.imports.iter().cloned().collect();
    for cs in f.call_sites {
        for t in &cs.targets {
            if let CallTarget::External { name, .. } = t {
                ext_names.insert(name.clone());
            }
        }
    }
    for name in ext_names {
        let id = node(
            &mut g,
            Label::Function,
            props! { "ea" => -1i64, "name" => name.as_str(), "is_ext" => true, "is_ep" => false },
        );
        edge(&mut g, prog, id, EdgeLabel::HasFunc, Props::new());
        ext_by_name.insert(name, id);
    }

    // Blocks, instructions, control and data flow.
    let mut inst_by_ea: HashMap<u64, NodeId> = HashMap::new();
    for body in bodies.values() {
        let fid = fn_by_ea[&body.entry_ea];
        let mut bb_by_ea = BTreeMap::new();
        for b in &body.blocks {
            let bid = node(&mut g, Label::BasicBlock, props! { "ea" => b.ea });
            edge(&mut g, fid, bid, EdgeLabel::HasBb, Props::new());
            bb_by_ea.insert(b.ea, bid);
            for i in &b.instructions {
                let mut p = props! {
                    "ea" => i.ea,
                    "bytes" => i.bytes.to_vec(),
                    "asm" => i.asm.as_str(),
                    "kind" => i.kind.as_str(),
                };
                if let Some(x) = i.xref {
                    p.insert("xref".into(), Value::from(x));
                }
                let from_entry: Vec<String> =
                    body.param_uses.range((i.ea, Location::Reg(0))..).take_while(|(ea, _)| *ea == i.ea).map(|(_, l)| l.to_string()).collect();
                if !from_entry.is_empty() {
                    p.insert("entry_uses".into(), Value::from(from_entry.join(",")));
                }
                let iid = node(&mut g, Label::Instruction, p);
                edge(&mut g, bid, iid, EdgeLabel::Instr, Props::new());
                inst_by_ea.insert(i.ea, iid);
            }
        }
        for b in &body.blocks {
            for s in &b.successors {
                edge(&mut g, bb_by_ea[&b.ea], bb_by_ea[s], EdgeLabel::Succ, Props::new());
            }
        }
        for ud in &body.use_def {
            edge(
                &mut g,
                inst_by_ea[&ud.use_ea],
                inst_by_ea[&ud.def_ea],
                EdgeLabel::Def,
                props! { "var" => ud.loc.to_string() },
            );
        }
    }

    // Objective-C metadata.
    let mut class_by_addr: HashMap<u64, NodeId> = HashMap::new();
    let mut proto_by_addr: HashMap<u64, NodeId> = HashMap::new();
    let mut ivar_by_addr: HashMap<u64, NodeId> = HashMap::new();
    if let Some(model) = f.model {
        let mut class_ids = Vec::with_capacity(model.classes.len());
        for c in &model.classes {
            let mut p = props! { "name" => c.name.as_str(), "is_meta" => c.is_metaclass, "is_ext" => c.is_external };
            if !c.is_external {
                p.insert("ea".into(), Value::from(c.address));
            }
            if c.malformed {
                p.insert("malformed".into(), Value::from(true));
            }
            let id = node(&mut g, Label::Class, p);
            if !c.is_external {
                class_by_addr.entry(c.address).or_insert(id);
            }
            class_ids.push(id);
        }
        let mut proto_ids = Vec::with_capacity(model.protocols.len());
        for p in &model.protocols {
            let id = node(&mut g, Label::Protocol, props! { "name" => p.name.as_str(), "ea" => p.address });
            proto_by_addr.insert(p.address, id);
            proto_ids.push(id);
        }
        for (ci, c) in model.classes.iter().enumerate() {
            let cid = class_ids[ci];
            for m in &c.methods {
                let mut p = props! {
                    "name" => m.selector.as_str(),
                    "class" => c.name.as_str(),
                    "is_class_method" => c.is_metaclass,
                    "types" => m.type_encoding.as_str(),
                };
                if let Some(a) = m.impl_address {
                    p.insert("imp".into(), Value::from(a));
                }
                let mid = node(&mut g, Label::Method, p);
                edge(&mut g, cid, mid, EdgeLabel::HasMeth, Props::new());
            }
            for iv in &c.ivars {
                let id = node(
                    &mut g,
                    Label::Ivar,
                    props! {
                        "ea" => iv.offset_address,
                        "name" => iv.name.as_str(),
                        "type" => iv.type_encoding.as_str(),
                        "offset" => i64::from(iv.offset),
                    },
                );
                edge(&mut g, cid, id, EdgeLabel::HasIvar, Props::new());
                ivar_by_addr.insert(iv.offset_address, id);
            }
            if let Some(s) = model.superclass_of(ci) {
                edge(&mut g, cid, class_ids[s], EdgeLabel::HasSuperclass, Props::new());
            }
            if let Some(m) = model.isa_of(ci) {
                edge(&mut g, cid, class_ids[m], EdgeLabel::Isa, Props::new());
            }
            if !c.is_metaclass {
                let mut seen = BTreeSet::new();
                for r in &c.protocol_refs {
                    match model.protocol_at(*r) {
                        Some(p) if seen.insert(p) => edge(&mut g, cid, proto_ids[p], EdgeLabel::HasProtocol, Props::new()),
                        Some(_) => {}
                        None => warnings.push(format!("class {} adopts unknown protocol at {r:#x}", c.name)),
                    }
                }
            }
        }
        for (pi, p) in model.protocols.iter().enumerate() {
            for (list, optional) in [(&p.required_methods, false), (&p.optional_methods, true)] {
                for m in list {
                    let mid = node(
                        &mut g,
                        Label::Method,
                        props! {
                            "name" => m.selector.as_str(),
                            "protocol" => p.name.as_str(),
                            "optional" => optional,
                            "types" => m.type_encoding.as_str(),
                        },
                    );
                    edge(&mut g, proto_ids[pi], mid, EdgeLabel::HasMeth, Props::new());
                }
            }
            let mut seen = BTreeSet::new();
            for r in &p.inherited_protocol_refs {
                if let Some(q) = model.protocol_at(*r) {
                    if seen.insert(q) {
                        edge(&mut g, proto_ids[pi], proto_ids[q], EdgeLabel::HasProtocol, Props::new());
                    }
                }
            }
        }
    }

    // Cross references from instructions to graph entities at the referenced address.
    for body in bodies.values() {
        for i in body.instructions() {
            let Some(x) = i.xref else { continue };
            let target = fn_by_ea
                .get(&x)
                .or_else(|| class_by_addr.get(&x))
                .or_else(|| proto_by_addr.get(&x))
                .or_else(|| ivar_by_addr.get(&x))
                .or_else(|| inst_by_ea.get(&x));
            if let Some(t) = target {
                edge(&mut g, inst_by_ea[&i.ea], *t, EdgeLabel::Xref, Props::new());
            }
        }
    }

    // Calls: one edge per call site and target, plus deduplicated function-level edges.
    let mut fn_level: BTreeSet<(u64, NodeId, Props)> = BTreeSet::new();
    for cs in f.call_sites {
        let (Some(&site), true) = (inst_by_ea.get(&cs.site), fn_by_ea.contains_key(&cs.caller)) else {
            warnings.push(format!("call site {:#x} is outside every lifted function", cs.site));
            continue;
        };
        for t in &cs.targets {
            let dst = match t {
                CallTarget::Internal(a) => match fn_by_ea.get(a) {
                    Some(d) => *d,
                    None => {
                        warnings.push(format!("call at {:#x} targets {a:#x}, which is not a function start", cs.site));
                        continue;
                    }
                },
                CallTarget::External { name, .. } => ext_by_name[name],
                CallTarget::Unresolved => continue,
            };
            let p = site_props(t);
            edge(&mut g, site, dst, EdgeLabel::Calls, p.clone());
            fn_level.insert((cs.caller, dst, p));
        }
    }
    for (caller, dst, p) in fn_level {
        edge(&mut g, fn_by_ea[&caller], dst, EdgeLabel::Calls, p);
    }

    (g, warnings)
}
