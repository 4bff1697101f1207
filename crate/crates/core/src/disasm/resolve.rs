//! Backward value resolution along use-def chains, and message-send
//! devirtualization built on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::cfg::{annotate_calls, build_function, selector_at_slot, CallInfo, DisasmError, FunctionBody, MSGSEND_FAMILY};
use super::decode::{Kind, Location, Op, R};
use super::usedef::compute_use_def;
use crate::macho::{strip_pointer_tags, strip_underscore, MachoImage};
use crate::objc::ObjcModel;

/// Upper bound on the number of alternatives tracked for one value.
const MAX_VALUES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResolvedValue {
    /// A constant string: selector name, C string or CFString contents.
    ConstString(String),
    /// A class object, referenced through a class pointer.
    Class(String),
    /// The receiver the enclosing method was invoked on.
    SelfRef,
    /// The selector the enclosing method was invoked with.
    OwnSelector,
    /// The result of sending `selector` to `receiver`.
    Composed { receiver: Box<ResolvedValue>, selector: Box<ResolvedValue> },
    Unknown,
}

impl fmt::Display for ResolvedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResolvedValue::ConstString(s) => write!(f, "{s:?}"),
            ResolvedValue::Class(c) => write!(f, "class {c}"),
            ResolvedValue::SelfRef => f.write_str("self"),
            ResolvedValue::OwnSelector => f.write_str("_cmd"),
            ResolvedValue::Composed { receiver, selector } => match selector.as_ref() {
                ResolvedValue::ConstString(s) => write!(f, "[{receiver} {s}]"),
                other => write!(f, "[{receiver} {other}]"),
            },
            ResolvedValue::Unknown => f.write_str("?"),
        }
    }
}

/// Static receiver type of a message send.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReceiverType {
    ClassObject(String),
    Instance(String),
}

impl ReceiverType {
    pub fn class_name(&self) -> &str {
        match self {
            ReceiverType::ClassObject(c) | ReceiverType::Instance(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CallTarget {
    Internal(u64),
    /// An imported function; message sends carry what is known statically.
    External { name: String, selector: Option<String>, receiver: Option<String> },
    /// An indirect call through a register.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub caller: u64,
    pub site: u64,
    pub targets: Vec<CallTarget>,
}

/// Selectors whose result has the receiver's own type.
fn preserves_receiver(sel: &str) -> bool {
    sel.starts_with("init") || matches!(sel, "self" | "retain" | "autorelease" | "copy" | "mutableCopy")
}

/// Resolves values across the analysed function bodies of one image.
pub struct Resolver<'a> {
    pub image: &'a MachoImage,
    pub model: &'a ObjcModel,
    pub info: CallInfo,
    /// How many call levels a value is followed into callees.
    pub depth: usize,
    bodies: BTreeMap<u64, FunctionBody>,
}

/// Name for a function start: its symbol, or `sub_<hex>`.
fn function_name(symbols: &BTreeMap<u64, String>, entry: u64) -> String {
    symbols.get(&entry).cloned().unwrap_or_else(|| format!("sub_{entry:x}"))
}

/// Builds, annotates and computes use-def chains for every function range
/// of the image, splitting the work over `threads` workers.
pub fn analyse_functions(image: &MachoImage, info: &CallInfo, threads: usize) -> (BTreeMap<u64, FunctionBody>, Vec<String>) {
    let symbols: BTreeMap<u64, String> =
        image.code_symbols().into_iter().map(|(a, s)| (a, strip_underscore(&s.name).to_string())).collect();
    let ranges = image.function_ranges();
    let threads = threads.max(1).min(ranges.len().max(1));
    let chunk = ranges.len().div_ceil(threads).max(1);
    let results: Vec<Vec<Result<FunctionBody, DisasmError>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .chunks(chunk)
            .map(|part| {
                let symbols = &symbols;
                scope.spawn(move || {
                    part.iter()
                        .map(|&(start, end)| {
                            let mut body = build_function(image, start, end, &function_name(symbols, start))?;
                            annotate_calls(&mut body, info, Some(image));
                            compute_use_def(&mut body);
                            Ok(body)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("function analysis worker panicked")).collect()
    });
    let mut bodies = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(b) => {
                bodies.insert(b.entry_ea, b);
            }
            Err(e) => warnings.push(e.to_string()),
        }
    }
    (bodies, warnings)
}

type Visited = BTreeSet<(u64, u64, Location)>;

impl<'a> Resolver<'a> {
    /// Analyses every function of the image.
    pub fn new(image: &'a MachoImage, model: &'a ObjcModel, depth: usize) -> Self {
        let info = CallInfo::from_image(image);
        let (bodies, _) = analyse_functions(image, &info, 1);
        Resolver { image, model, info, depth, bodies }
    }

    pub fn with_bodies(
        image: &'a MachoImage,
        model: &'a ObjcModel,
        info: CallInfo,
        bodies: BTreeMap<u64, FunctionBody>,
        depth: usize,
    ) -> Self {
        Resolver { image, model, info, depth, bodies }
    }

    pub fn body(&self, entry: u64) -> Option<&FunctionBody> {
        self.bodies.get(&entry)
    }

    pub fn bodies(&self) -> &BTreeMap<u64, FunctionBody> {
        &self.bodies
    }

    pub fn into_bodies(self) -> BTreeMap<u64, FunctionBody> {
        self.bodies
    }

    /// Values `loc` may hold when read at `ea`.
    pub fn backtrace(&self, body: &FunctionBody, ea: u64, loc: Location) -> Vec<ResolvedValue> {
        let mut visited = Visited::new();
        let v = self.values(body, ea, loc, self.depth, &mut visited);
        if v.is_empty() {
            vec![ResolvedValue::Unknown]
        } else {
            v
        }
    }

    fn values(&self, body: &FunctionBody, ea: u64, loc: Location, depth: usize, seen: &mut Visited) -> Vec<ResolvedValue> {
        if !seen.insert((body.entry_ea, ea, loc)) {
            return Vec::new();
        }
        let mut out = BTreeSet::new();
        if body.param_reaches(ea, loc) {
            out.insert(match loc {
                Location::Reg(0) => ResolvedValue::SelfRef,
                Location::Reg(1) => ResolvedValue::OwnSelector,
                _ => ResolvedValue::Unknown,
            });
        }
        for d in body.defs_of(ea, loc) {
            out.extend(self.eval_def(body, d, loc, depth, seen));
            if out.len() >= MAX_VALUES {
                break;
            }
        }
        out.into_iter().take(MAX_VALUES).collect()
    }

    fn reg_values(&self, body: &FunctionBody, ea: u64, r: R, depth: usize, seen: &mut Visited) -> Vec<ResolvedValue> {
        match r.loc() {
            Some(l) if r != R::Zr => self.values(body, ea, l, depth, seen),
            _ => vec![ResolvedValue::Unknown],
        }
    }

    fn eval_def(&self, body: &FunctionBody, d: u64, loc: Location, depth: usize, seen: &mut Visited) -> Vec<ResolvedValue> {
        let Some(inst) = body.instruction(d) else { return vec![ResolvedValue::Unknown] };
        let stack_uses: Vec<Location> =
            inst.uses.iter().copied().filter(|l| matches!(l, Location::Stack(_))).collect();
        let stack_defs: Vec<Location> =
            inst.defs.iter().copied().filter(|l| matches!(l, Location::Stack(_))).collect();
        let one = |v: ResolvedValue| vec![v];
        match &inst.op {
            Op::MovReg { rm, .. } => self.reg_values(body, d, *rm, depth, seen),
            Op::Load { rt, .. } if rt.loc() == Some(loc) => {
                if let Some(slot) = stack_uses.first() {
                    return self.values(body, d, *slot, depth, seen);
                }
                match inst.xref {
                    Some(a) => match self.deref_slot(a) {
                        ResolvedValue::Unknown if !body.defs_of(d, Location::Mem(a)).is_empty() => {
                            self.values(body, d, Location::Mem(a), depth, seen)
                        }
                        v => one(v),
                    },
                    None => one(ResolvedValue::Unknown),
                }
            }
            Op::LoadLiteral { addr, .. } => one(self.deref_slot(*addr)),
            Op::LoadPair { rt, rt2, .. } if stack_uses.len() == 2 => {
                let slot = if rt.loc() == Some(loc) {
                    stack_uses[0]
                } else if rt2.loc() == Some(loc) {
                    stack_uses[1]
                } else {
                    return one(ResolvedValue::Unknown);
                };
                self.values(body, d, slot, depth, seen)
            }
            Op::Store { rt, .. } if matches!(loc, Location::Stack(_) | Location::Mem(_)) => {
                self.reg_values(body, d, *rt, depth, seen)
            }
            Op::StorePair { rt, rt2, .. } if matches!(loc, Location::Stack(_)) => {
                match stack_defs.iter().position(|l| *l == loc) {
                    Some(0) => self.reg_values(body, d, *rt, depth, seen),
                    Some(_) => self.reg_values(body, d, *rt2, depth, seen),
                    None => one(ResolvedValue::Unknown),
                }
            }
            Op::AddImm { .. } | Op::Adr { .. } if inst.xref.is_some() => one(self.deref_address(inst.xref.unwrap())),
            Op::Adr { addr, .. } => one(self.deref_address(*addr)),
            _ if inst.kind == Kind::Call && loc == Location::Reg(0) => self.call_result(body, d, depth, seen),
            _ => one(ResolvedValue::Unknown),
        }
    }

    /// Return value of the call at `site`.
    fn call_result(&self, body: &FunctionBody, site: u64, depth: usize, seen: &mut Visited) -> Vec<ResolvedValue> {
        let Some(Op::Bl { target }) = body.instruction(site).map(|i| i.op.clone()) else {
            return vec![ResolvedValue::Unknown];
        };
        if let Some(name) = self.info.stubs.get(&target) {
            if !MSGSEND_FAMILY.contains(&name.as_str()) {
                return vec![ResolvedValue::Unknown];
            }
            let receivers = self.values(body, site, Location::Reg(0), depth, seen);
            let selectors = self.values(body, site, Location::Reg(1), depth, seen);
            let mut out = Vec::new();
            for r in or_unknown(receivers) {
                for s in or_unknown(selectors.clone()) {
                    if out.len() < MAX_VALUES {
                        out.push(ResolvedValue::Composed { receiver: Box::new(r.clone()), selector: Box::new(s) });
                    }
                }
            }
            return out;
        }
        if depth == 0 {
            return vec![ResolvedValue::Unknown];
        }
        let Some(callee) = self.body(target) else { return vec![ResolvedValue::Unknown] };
        let mut out = BTreeSet::new();
        for ret in callee.instructions().filter(|i| matches!(i.op, Op::Ret { .. })) {
            for v in self.values(callee, ret.ea, Location::Reg(0), depth - 1, seen) {
                // The callee's own parameters are the caller's arguments.
                match v {
                    ResolvedValue::SelfRef => out.extend(self.values(body, site, Location::Reg(0), depth, seen)),
                    ResolvedValue::OwnSelector => out.extend(self.values(body, site, Location::Reg(1), depth, seen)),
                    v => {
                        out.insert(v);
                    }
                }
            }
        }
        if out.is_empty() {
            out.insert(ResolvedValue::Unknown);
        }
        out.into_iter().take(MAX_VALUES).collect()
    }

    /// Value loaded from the pointer slot at `slot`.
    pub fn deref_slot(&self, slot: u64) -> ResolvedValue {
        if let Some(sel) = selector_at_slot(self.image, slot) {
            return ResolvedValue::ConstString(sel);
        }
        if let Some(sym) = self.image.bind_at(slot) {
            return class_symbol(sym).map(ResolvedValue::Class).unwrap_or(ResolvedValue::Unknown);
        }
        match self.image.read_u64(slot).map(strip_pointer_tags) {
            Some(p) if p != 0 => self.deref_address(p),
            _ => ResolvedValue::Unknown,
        }
    }

    /// Value of the address `addr` itself.
    pub fn deref_address(&self, addr: u64) -> ResolvedValue {
        if let Some(c) = self.model.class_at(addr) {
            return ResolvedValue::Class(self.model.classes[c].name.clone());
        }
        let Some(s) = self.image.section_containing(addr) else { return ResolvedValue::Unknown };
        match s.section_name.as_str() {
            "__cfstring" => self
                .image
                .read_u64(addr + 16)
                .map(strip_pointer_tags)
                .and_then(|p| self.image.read_cstr(p))
                .map(ResolvedValue::ConstString)
                .unwrap_or(ResolvedValue::Unknown),
            "__cstring" | "__objc_methname" | "__objc_classname" | "__objc_methtype" => {
                self.image.read_cstr(addr).map(ResolvedValue::ConstString).unwrap_or(ResolvedValue::Unknown)
            }
            _ => ResolvedValue::Unknown,
        }
    }

    /// Static type of a resolved receiver inside the function at `entry`.
    pub fn receiver_type(&self, entry: u64, v: &ResolvedValue) -> Option<ReceiverType> {
        match v {
            ResolvedValue::Class(c) => Some(ReceiverType::ClassObject(c.clone())),
            ResolvedValue::SelfRef => {
                let (ci, _) = *self.model.methods_at(entry).first()?;
                let c = &self.model.classes[ci];
                Some(if c.is_metaclass {
                    ReceiverType::ClassObject(c.name.clone())
                } else {
                    ReceiverType::Instance(c.name.clone())
                })
            }
            ResolvedValue::Composed { receiver, selector } => {
                let sel = self.selector_name(entry, selector)?;
                match self.receiver_type(entry, receiver)? {
                    ReceiverType::ClassObject(c) if matches!(sel.as_str(), "class" | "self") => {
                        Some(ReceiverType::ClassObject(c))
                    }
                    // Class methods are factories by convention.
                    ReceiverType::ClassObject(c) => Some(ReceiverType::Instance(c)),
                    ReceiverType::Instance(c) if preserves_receiver(&sel) => Some(ReceiverType::Instance(c)),
                    ReceiverType::Instance(_) => None,
                }
            }
            _ => None,
        }
    }

    /// Selector string of a resolved value inside the function at `entry`.
    pub fn selector_name(&self, entry: u64, v: &ResolvedValue) -> Option<String> {
        match v {
            ResolvedValue::ConstString(s) => Some(s.clone()),
            ResolvedValue::OwnSelector => {
                let (ci, mi) = *self.model.methods_at(entry).first()?;
                Some(self.model.classes[ci].methods[mi].selector.clone())
            }
            _ => None,
        }
    }

    /// Possible targets of the call or tail call at `site`.
    pub fn devirtualize(&self, body: &FunctionBody, site: u64) -> Vec<CallTarget> {
        let Some(inst) = body.instruction(site) else { return Vec::new() };
        let target = match inst.op {
            Op::Bl { target } => target,
            Op::B { target } if !body.contains(target) => target,
            Op::Blr { .. } => return vec![CallTarget::Unresolved],
            _ => return Vec::new(),
        };
        let Some(name) = self.info.stubs.get(&target) else {
            return vec![CallTarget::Internal(target)];
        };
        if !MSGSEND_FAMILY.contains(&name.as_str()) {
            return vec![CallTarget::External { name: name.clone(), selector: None, receiver: None }];
        }
        let receivers = self.backtrace(body, site, Location::Reg(0));
        let selectors = self.backtrace(body, site, Location::Reg(1));
        let types: BTreeSet<Option<ReceiverType>> =
            receivers.iter().map(|r| self.receiver_type(body.entry_ea, r)).collect();
        let sels: BTreeSet<Option<String>> = selectors.iter().map(|s| self.selector_name(body.entry_ea, s)).collect();
        let super_send = name != "objc_msgSend";
        let mut out = BTreeSet::new();
        for t in &types {
            for s in &sels {
                let resolved = match (t, s) {
                    (Some(t), Some(s)) if !super_send => self.lookup(t, s),
                    _ => None,
                };
                out.insert(match resolved {
                    Some(a) => CallTarget::Internal(a),
                    None => CallTarget::External {
                        name: name.clone(),
                        selector: s.clone(),
                        receiver: t.as_ref().map(|t| t.class_name().to_string()),
                    },
                });
            }
        }
        out.into_iter().collect()
    }

    /// Implementation of `sel` for a receiver of type `t`, walking superclasses.
    pub fn lookup(&self, t: &ReceiverType, sel: &str) -> Option<u64> {
        let (name, meta) = match t {
            ReceiverType::ClassObject(c) => (c, true),
            ReceiverType::Instance(c) => (c, false),
        };
        let ci = self.model.class_named(name, meta)?;
        self.model.lookup_method(ci, sel)?.1.impl_address
    }

    /// Every call and tail call in a function with its targets.
    pub fn call_sites(&self, body: &FunctionBody) -> Vec<CallSite> {
        body.instructions()
            .filter(|i| i.kind == Kind::Call || matches!(i.op, Op::B { target } if !body.contains(target)))
            .map(|i| CallSite { caller: body.entry_ea, site: i.ea, targets: self.devirtualize(body, i.ea) })
            .filter(|c| !c.targets.is_empty())
            .collect()
    }
}

fn or_unknown(v: Vec<ResolvedValue>) -> Vec<ResolvedValue> {
    if v.is_empty() {
        vec![ResolvedValue::Unknown]
    } else {
        v
    }
}

/// Class name from an `_OBJC_CLASS_$_Name` style symbol.
pub fn class_symbol(sym: &str) -> Option<String> {
    let s = sym.strip_prefix('_').unwrap_or(sym);
    s.strip_prefix("OBJC_CLASS_$_")
        .or_else(|| s.strip_prefix("OBJC_METACLASS_$_"))
        .map(str::to_string)
}
