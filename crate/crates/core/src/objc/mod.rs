//! Objective-C runtime metadata: classes, meta-classes, protocols, categories
//! and selector references recovered from the `__objc_*` sections.

mod model;
mod parse;

pub use model::{build_hierarchy, ObjcModel, RootCheck};
pub use parse::{parse_categories, parse_classlist, parse_protocols, parse_selrefs, ObjcCategory};

use std::collections::{BTreeMap, BTreeSet};

use crate::macho::MachoImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ObjcError {
    #[error("{what} at {from:#x} points to unmapped address {to:#x}")]
    DanglingReference { what: &'static str, from: u64, to: u64 },
    #[error("superclass chain of {0} is cyclic; edge {0} -> {1} dropped")]
    CyclicSuperclassChain(String, String),
}

/// Where a class-record pointer leads.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLink {
    Nil,
    /// An in-image record at this address.
    Local(u64),
    /// A class provided by another image, named after its bind symbol.
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcMethod {
    pub selector: String,
    pub type_encoding: String,
    pub impl_address: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcIvar {
    pub name: String,
    pub type_encoding: String,
    pub offset: u32,
    /// Address of the ivar's offset word in `__objc_ivar`.
    pub offset_address: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcProperty {
    pub name: String,
    pub attributes: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcClass {
    pub name: String,
    /// Address of the class_t record; for external placeholders the lowest
    /// pointer slot bound to the class.
    pub address: u64,
    pub superclass_ref: ClassLink,
    pub metaclass_ref: ClassLink,
    pub methods: Vec<ObjcMethod>,
    pub ivars: Vec<ObjcIvar>,
    pub properties: Vec<ObjcProperty>,
    pub protocol_refs: Vec<u64>,
    pub is_metaclass: bool,
    pub is_external: bool,
    pub malformed: bool,
    /// class_ro flags (bit 0 meta, bit 1 root).
    pub ro_flags: u32,
}

impl ObjcClass {
    pub fn placeholder(name: String, address: u64, is_metaclass: bool) -> Self {
        ObjcClass {
            name,
            address,
            superclass_ref: ClassLink::Nil,
            metaclass_ref: ClassLink::Nil,
            methods: Vec::new(),
            ivars: Vec::new(),
            properties: Vec::new(),
            protocol_refs: Vec::new(),
            is_metaclass,
            is_external: true,
            malformed: false,
            ro_flags: 0,
        }
    }

    /// `-[Name sel]` or `+[Name sel]`.
    pub fn method_signature(&self, selector: &str) -> String {
        let sign = if self.is_metaclass { '+' } else { '-' };
        format!("{sign}[{} {selector}]", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjcProtocol {
    pub name: String,
    pub address: u64,
    pub required_methods: Vec<ObjcMethod>,
    pub optional_methods: Vec<ObjcMethod>,
    pub inherited_protocol_refs: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectorMap {
    pub by_selref_address: BTreeMap<u64, String>,
    pub by_name: BTreeMap<String, BTreeSet<u64>>,
}

impl SelectorMap {
    pub fn get(&self, slot: u64) -> Option<&str> {
        self.by_selref_address.get(&slot).map(String::as_str)
    }
}

/// Runs every metadata parser over an image and links the results.
pub fn analyze(image: &MachoImage) -> ObjcModel {
    let mut warnings = Vec::new();
    let classes = parse_classlist(image, &mut warnings);
    let protocols = parse_protocols(image, &classes, &mut warnings);
    let categories = parse_categories(image, &mut warnings);
    let selectors = parse_selrefs(image, &mut warnings);
    let mut model = build_hierarchy(classes, protocols, categories, selectors);
    warnings.append(&mut model.warnings);
    model.warnings = warnings;
    model
}
