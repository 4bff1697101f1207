//! Readers for the on-disk runtime records (modern 64-bit ABI).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ClassLink, ObjcClass, ObjcError, ObjcIvar, ObjcMethod, ObjcProperty, ObjcProtocol, SelectorMap};
use crate::macho::{strip_pointer_tags, MachoImage};

const RO_META: u32 = 1;
const S_CSTRING_LITERALS: u32 = 0x2;
const METHOD_LIST_SMALL: u32 = 0x8000_0000;
const METHOD_LIST_DIRECT_SELECTORS: u32 = 0x4000_0000;
/// Sanity bound on list counts; anything larger is treated as corrupt.
const MAX_LIST: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcCategory {
    pub name: String,
    pub address: u64,
    pub target: ClassLink,
    /// Address of the category's class pointer slot.
    pub target_slot: u64,
    pub instance_methods: Vec<ObjcMethod>,
    pub class_methods: Vec<ObjcMethod>,
    pub protocol_refs: Vec<u64>,
}

/// Outcome of reading one pointer slot.
enum Slot {
    Nil,
    Local(u64),
    Bound(String),
    Dangling(u64),
}

fn read_slot(image: &MachoImage, slot: u64) -> Option<Slot> {
    if let Some(sym) = image.bind_at(slot) {
        return Some(Slot::Bound(sym.to_string()));
    }
    let v = image.read_pointer(slot)?;
    Some(match v {
        0 => Slot::Nil,
        v if image.is_mapped(v) => Slot::Local(v),
        v => Slot::Dangling(v),
    })
}

/// Class name and meta flag encoded in a bind symbol.
pub(crate) fn class_from_symbol(symbol: &str, slot: u64, meta_hint: bool) -> (String, bool) {
    if let Some(n) = symbol.strip_prefix("_OBJC_METACLASS_$_") {
        (n.to_string(), true)
    } else if let Some(n) = symbol.strip_prefix("_OBJC_CLASS_$_") {
        (n.to_string(), false)
    } else if symbol.is_empty() {
        (format!("external@{slot:x}"), meta_hint)
    } else {
        (symbol.trim_start_matches('_').to_string(), meta_hint)
    }
}

fn nonzero_ptr(image: &MachoImage, va: u64) -> Option<u64> {
    image.read_pointer(va).filter(|v| *v != 0)
}

fn string_at(image: &MachoImage, va: u64) -> Option<String> {
    image.read_cstr(strip_pointer_tags(va))
}

fn read_i32(image: &MachoImage, va: u64) -> Option<i64> {
    image.read_u32(va).map(|v| i64::from(v as i32))
}

fn rel(base: u64, off: i64) -> u64 {
    base.wrapping_add_signed(off)
}

/// Reads a method list in either the pointer or the relative format.
pub(crate) fn read_method_list(image: &MachoImage, at: u64, warnings: &mut Vec<String>) -> Vec<ObjcMethod> {
    let (Some(header), Some(count)) = (image.read_u32(at), image.read_u32(at + 4)) else {
        warnings.push(format!("method list at {at:#x} is unreadable"));
        return Vec::new();
    };
    let small = header & METHOD_LIST_SMALL != 0;
    let entsize = u64::from(header & 0xFFFC);
    let want = if small { 12 } else { 24 };
    if entsize < want || count > MAX_LIST {
        warnings.push(format!("method list at {at:#x} has entsize {entsize} count {count}"));
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..u64::from(count) {
        let e = at + 8 + i * entsize;
        let m = if small {
            (|| {
                let name_field = rel(e, read_i32(image, e)?);
                let selector = if header & METHOD_LIST_DIRECT_SELECTORS != 0 {
                    image.read_cstr(name_field)?
                } else {
                    string_at(image, image.read_pointer(name_field)?)?
                };
                let types = read_i32(image, e + 4)?;
                let type_encoding = if types == 0 { String::new() } else { image.read_cstr(rel(e + 4, types))? };
                let imp = read_i32(image, e + 8)?;
                let impl_address = (imp != 0).then(|| rel(e + 8, imp));
                Some(ObjcMethod { selector, type_encoding, impl_address })
            })()
        } else {
            (|| {
                let selector = string_at(image, image.read_pointer(e)?)?;
                let type_encoding = match nonzero_ptr(image, e + 8) {
                    Some(t) => string_at(image, t).unwrap_or_default(),
                    None => String::new(),
                };
                let impl_address = nonzero_ptr(image, e + 16);
                Some(ObjcMethod { selector, type_encoding, impl_address })
            })()
        };
        match m {
            Some(m) if !m.selector.is_empty() => out.push(m),
            _ => warnings.push(format!("method entry {i} of list {at:#x} is unreadable")),
        }
    }
    out
}

fn read_ivar_list(image: &MachoImage, at: u64, warnings: &mut Vec<String>) -> Vec<ObjcIvar> {
    let (Some(entsize), Some(count)) = (image.read_u32(at), image.read_u32(at + 4)) else {
        warnings.push(format!("ivar list at {at:#x} is unreadable"));
        return Vec::new();
    };
    let entsize = u64::from(entsize);
    if entsize < 32 || count > MAX_LIST {
        warnings.push(format!("ivar list at {at:#x} has entsize {entsize} count {count}"));
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..u64::from(count) {
        let e = at + 8 + i * entsize;
        let iv = (|| {
            let offset_address = image.read_pointer(e)?;
            let offset = if offset_address == 0 { 0 } else { image.read_u32(offset_address).unwrap_or(0) };
            let name = string_at(image, nonzero_ptr(image, e + 8)?)?;
            let type_encoding = nonzero_ptr(image, e + 16).and_then(|t| string_at(image, t)).unwrap_or_default();
            Some(ObjcIvar { name, type_encoding, offset, offset_address })
        })();
        match iv {
            Some(iv) => out.push(iv),
            None => warnings.push(format!("ivar entry {i} of list {at:#x} is unreadable")),
        }
    }
    out
}

fn read_property_list(image: &MachoImage, at: u64, warnings: &mut Vec<String>) -> Vec<ObjcProperty> {
    let (Some(entsize), Some(count)) = (image.read_u32(at), image.read_u32(at + 4)) else {
        warnings.push(format!("property list at {at:#x} is unreadable"));
        return Vec::new();
    };
    let entsize = u64::from(entsize);
    if entsize < 16 || count > MAX_LIST {
        warnings.push(format!("property list at {at:#x} has entsize {entsize} count {count}"));
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..u64::from(count) {
        let e = at + 8 + i * entsize;
        let p = (|| {
            let name = string_at(image, nonzero_ptr(image, e)?)?;
            let attributes = nonzero_ptr(image, e + 8).and_then(|a| string_at(image, a)).unwrap_or_default();
            Some(ObjcProperty { name, attributes })
        })();
        match p {
            Some(p) => out.push(p),
            None => warnings.push(format!("property entry {i} of list {at:#x} is unreadable")),
        }
    }
    out
}

/// Protocol lists carry a 64-bit count followed by pointers.
fn read_protocol_list(image: &MachoImage, at: u64, warnings: &mut Vec<String>) -> Vec<u64> {
    let Some(count) = image.read_u64(at) else {
        warnings.push(format!("protocol list at {at:#x} is unreadable"));
        return Vec::new();
    };
    if count > u64::from(MAX_LIST) {
        warnings.push(format!("protocol list at {at:#x} has count {count}"));
        return Vec::new();
    }
    (0..count).filter_map(|i| nonzero_ptr(image, at + 8 + 8 * i)).collect()
}

fn class_link(image: &MachoImage, slot: u64, meta_hint: bool, what: &'static str, malformed: &mut bool, warnings: &mut Vec<String>) -> ClassLink {
    match read_slot(image, slot) {
        None => {
            *malformed = true;
            warnings.push(format!("{what} slot {slot:#x} is unreadable"));
            ClassLink::Nil
        }
        Some(Slot::Nil) => ClassLink::Nil,
        Some(Slot::Local(a)) => ClassLink::Local(a),
        Some(Slot::Bound(sym)) => ClassLink::External(class_from_symbol(&sym, slot, meta_hint).0),
        Some(Slot::Dangling(to)) => {
            *malformed = true;
            warnings.push(ObjcError::DanglingReference { what, from: slot, to }.to_string());
            ClassLink::Nil
        }
    }
}

fn read_class(image: &MachoImage, address: u64, warnings: &mut Vec<String>) -> ObjcClass {
    let mut c = ObjcClass::placeholder(String::new(), address, false);
    c.is_external = false;
    let mut malformed = false;
    c.metaclass_ref = class_link(image, address, true, "isa", &mut malformed, warnings);
    c.superclass_ref = class_link(image, address + 8, false, "superclass", &mut malformed, warnings);
    let ro = image.read_pointer(address + 32).map(|d| d & !7).filter(|d| *d != 0 && image.is_mapped(*d));
    let Some(ro) = ro else {
        warnings.push(format!("class at {address:#x} has no readable class_ro"));
        c.name = format!("malformed@{address:x}");
        c.malformed = true;
        return c;
    };
    c.ro_flags = image.read_u32(ro).unwrap_or(0);
    c.is_metaclass = c.ro_flags & RO_META != 0;
    match nonzero_ptr(image, ro + 24).and_then(|n| string_at(image, n)) {
        Some(n) => c.name = n,
        None => {
            warnings.push(format!("class at {address:#x} has an unreadable name"));
            c.name = format!("malformed@{address:x}");
            malformed = true;
        }
    }
    if let Some(ml) = nonzero_ptr(image, ro + 32) {
        c.methods = read_method_list(image, ml, warnings);
    }
    if let Some(pl) = nonzero_ptr(image, ro + 40) {
        c.protocol_refs = read_protocol_list(image, pl, warnings);
    }
    if let Some(il) = nonzero_ptr(image, ro + 48) {
        c.ivars = read_ivar_list(image, il, warnings);
    }
    if let Some(pl) = nonzero_ptr(image, ro + 64) {
        c.properties = read_property_list(image, pl, warnings);
    }
    c.malformed = malformed;
    c
}

fn pointer_list(image: &MachoImage, section: &str) -> Vec<(u64, Option<u64>)> {
    let Some(s) = image.section_named(section) else {
        return Vec::new();
    };
    (0..s.size / 8).map(|i| (s.vm_addr + 8 * i, image.read_pointer(s.vm_addr + 8 * i))).collect()
}

/// Classes and meta-classes reachable from `__objc_classlist`, followed by
/// placeholders for external classes referenced through bound slots.
pub fn parse_classlist(image: &MachoImage, warnings: &mut Vec<String>) -> Vec<ObjcClass> {
    let mut out: Vec<ObjcClass> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<u64> = VecDeque::new();
    for (slot, target) in pointer_list(image, "__objc_classlist") {
        match target {
            Some(t) if t != 0 && image.is_mapped(t) => queue.push_back(t),
            Some(t) => {
                warnings.push(ObjcError::DanglingReference { what: "classlist entry", from: slot, to: t }.to_string());
                let mut c = ObjcClass::placeholder(format!("malformed@{t:x}"), t, false);
                c.is_external = false;
                c.malformed = true;
                if seen.insert(t) {
                    out.push(c);
                }
            }
            None => warnings.push(format!("classlist slot {slot:#x} is unreadable")),
        }
    }
    while let Some(a) = queue.pop_front() {
        if !seen.insert(a) {
            continue;
        }
        let c = read_class(image, a, warnings);
        if let ClassLink::Local(m) = c.metaclass_ref {
            queue.push_back(m);
        }
        if let ClassLink::Local(s) = c.superclass_ref {
            queue.push_back(s);
        }
        out.push(c);
    }

    // Placeholders, keyed by (name, meta); address is the lowest bound slot.
    let mut externals: BTreeMap<(String, bool), u64> = BTreeMap::new();
    for c in &out {
        for (slot, link) in [(c.address, &c.metaclass_ref), (c.address + 8, &c.superclass_ref)] {
            if let ClassLink::External(_) = link {
                let sym = image.bind_at(slot).unwrap_or("");
                let key = class_from_symbol(sym, slot, slot == c.address || c.is_metaclass);
                let e = externals.entry(key).or_insert(slot);
                *e = (*e).min(slot);
            }
        }
    }
    for ((name, meta), slot) in externals {
        out.push(ObjcClass::placeholder(name, slot, meta));
    }
    out
}

fn read_protocol(image: &MachoImage, at: u64, warnings: &mut Vec<String>) -> Option<ObjcProtocol> {
    let name = nonzero_ptr(image, at + 8).and_then(|n| string_at(image, n));
    let Some(name) = name else {
        warnings.push(format!("protocol at {at:#x} has an unreadable name"));
        return None;
    };
    let mut p = ObjcProtocol {
        name,
        address: at,
        required_methods: Vec::new(),
        optional_methods: Vec::new(),
        inherited_protocol_refs: Vec::new(),
    };
    let size = image.read_u32(at + 64).unwrap_or(0);
    if let Some(l) = nonzero_ptr(image, at + 16) {
        p.inherited_protocol_refs = read_protocol_list(image, l, warnings);
    }
    let methods = |field: u64, warnings: &mut Vec<String>| -> Vec<ObjcMethod> {
        match nonzero_ptr(image, at + field) {
            Some(l) if field < u64::from(size.max(48)) => read_method_list(image, l, warnings)
                .into_iter()
                .map(|m| ObjcMethod { impl_address: None, ..m })
                .collect(),
            _ => Vec::new(),
        }
    };
    p.required_methods = methods(24, warnings);
    p.required_methods.extend(methods(32, warnings));
    p.optional_methods = methods(40, warnings);
    p.optional_methods.extend(methods(48, warnings));
    Some(p)
}

/// Protocols from `__objc_protolist`, plus any reached through class
/// adoption lists or protocol inheritance. Ordered by address.
pub fn parse_protocols(image: &MachoImage, classes: &[ObjcClass], warnings: &mut Vec<String>) -> Vec<ObjcProtocol> {
    let mut queue: VecDeque<u64> = VecDeque::new();
    for (slot, target) in pointer_list(image, "__objc_protolist") {
        match target {
            Some(t) if t != 0 && image.is_mapped(t) => queue.push_back(t),
            Some(t) => warnings.push(ObjcError::DanglingReference { what: "protolist entry", from: slot, to: t }.to_string()),
            None => warnings.push(format!("protolist slot {slot:#x} is unreadable")),
        }
    }
    queue.extend(classes.iter().flat_map(|c| c.protocol_refs.iter().copied()));
    let mut out = BTreeMap::new();
    while let Some(a) = queue.pop_front() {
        if out.contains_key(&a) {
            continue;
        }
        if !image.is_mapped(a) {
            warnings.push(format!("protocol reference {a:#x} is unmapped"));
            continue;
        }
        if let Some(p) = read_protocol(image, a, warnings) {
            queue.extend(p.inherited_protocol_refs.iter().copied());
            out.insert(a, p);
        }
    }
    out.into_values().collect()
}

pub fn parse_categories(image: &MachoImage, warnings: &mut Vec<String>) -> Vec<ObjcCategory> {
    let mut out = Vec::new();
    for (slot, target) in pointer_list(image, "__objc_catlist") {
        let Some(at) = target.filter(|t| *t != 0 && image.is_mapped(*t)) else {
            warnings.push(format!("catlist slot {slot:#x} does not reference a mapped category"));
            continue;
        };
        let Some(name) = nonzero_ptr(image, at).and_then(|n| string_at(image, n)) else {
            warnings.push(format!("category at {at:#x} has an unreadable name"));
            continue;
        };
        let mut malformed = false;
        let target = class_link(image, at + 8, false, "category class", &mut malformed, warnings);
        let methods = |field: u64, warnings: &mut Vec<String>| match nonzero_ptr(image, at + field) {
            Some(l) => read_method_list(image, l, warnings),
            None => Vec::new(),
        };
        let instance_methods = methods(16, warnings);
        let class_methods = methods(24, warnings);
        let protocol_refs = match nonzero_ptr(image, at + 32) {
            Some(l) => read_protocol_list(image, l, warnings),
            None => Vec::new(),
        };
        out.push(ObjcCategory {
            name,
            address: at,
            target,
            target_slot: at + 8,
            instance_methods,
            class_methods,
            protocol_refs,
        });
    }
    out
}

/// Dereferences every `__objc_selrefs` slot into `__objc_methname`.
pub fn parse_selrefs(image: &MachoImage, warnings: &mut Vec<String>) -> SelectorMap {
    let mut map = SelectorMap::default();
    // Linkers may merge method names into `__TEXT,__cstring`.
    let methname = image
        .section_named("__objc_methname")
        .or_else(|| image.sections.iter().find(|s| s.flags & 0xFF == S_CSTRING_LITERALS));
    for (slot, target) in pointer_list(image, "__objc_selrefs") {
        let in_methname = |t: u64| methname.map(|m| m.contains(t)).unwrap_or(false);
        match target {
            Some(t) if in_methname(t) => match image.read_cstr(t) {
                Some(s) => {
                    map.by_name.entry(s.clone()).or_default().insert(slot);
                    map.by_selref_address.insert(slot, s);
                }
                None => warnings.push(format!("selref {slot:#x} string is unterminated")),
            },
            Some(t) => warnings.push(format!("selref {slot:#x} points outside __objc_methname ({t:#x})")),
            None => warnings.push(format!("selref slot {slot:#x} is unreadable")),
        }
    }
    map
}
